//! Jacobi matrices and fields against direct integration of `J″ = A_ξ J`.

use nalgebra::{DMatrix, DVector};
use pinsim::jacobi::{det_identity_check, det_identity_sides, solve_cs_interval, CsSolver};
use pinsim::measures::sample_nu1p;
use pinsim::paths::{frame_field_slopes, roll};
use pinsim::{build_family, CurvatureModel, Partition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classical RK4 on `(J, J′)` with constant `A`, vector valued.
fn rk4_vec(a: &DMatrix<f64>, j: DVector<f64>, v: DVector<f64>, len: f64, steps: usize) -> (DVector<f64>, DVector<f64>) {
    let h = len / steps as f64;
    let (mut y, mut w) = (j, v);
    for _ in 0..steps {
        let f = |y: &DVector<f64>, w: &DVector<f64>| (w.clone(), a * y);
        let (a1, b1) = f(&y, &w);
        let (a2, b2) = f(&(&y + &a1 * (h / 2.0)), &(&w + &b1 * (h / 2.0)));
        let (a3, b3) = f(&(&y + &a2 * (h / 2.0)), &(&w + &b2 * (h / 2.0)));
        let (a4, b4) = f(&(&y + &a3 * h), &(&w + &b3 * h));
        y += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        w += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
    }
    (y, w)
}

#[test]
fn cosine_sine_closed_form_values() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let e2 = DVector::from_vec(vec![0.0, 1.0]);
    let iv = solve_cs_interval(&m, &e1, 1.0, CsSolver::ClosedForm).unwrap();
    let (c, s) = iv.eval(0.5);
    assert!((&c * &e2 - &e2 * 0.5f64.cosh()).norm() < 1e-15);
    assert!((&c * &e1 - &e1).norm() < 1e-15);
    assert!((&s * &e2 - &e2 * 0.5f64.sinh()).norm() < 1e-15);
    let rk = solve_cs_interval(&m, &e1, 1.0, CsSolver::Rk4 { substeps: 1000 }).unwrap();
    let (c2, s2) = rk.eval(0.5);
    assert!((c - c2).norm() < 1e-12 && (s - s2).norm() < 1e-12);

    let flat = CurvatureModel::flat(3);
    let iv = solve_cs_interval(&flat, &DVector::from_vec(vec![1.0, 2.0, 3.0]), 0.7, CsSolver::ClosedForm).unwrap();
    let (c, s) = iv.eval(0.7);
    assert_eq!(c, DMatrix::identity(3, 3));
    assert!((s - DMatrix::<f64>::identity(3, 3) * 0.7).norm() < 1e-15);
}

#[test]
fn one_interval_family_values() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(1).unwrap();
    let path = roll(&m, &m.origin(), p, vec![DVector::from_vec(vec![1.0, 0.0])]).unwrap();
    let fam = build_family(&m, &path).unwrap();
    let f = &fam.f[1][1];
    assert!((f[(0, 0)] - 1.0).abs() < 1e-15 && (f[(1, 1)] - 1f64.sinh()).abs() < 1e-14);
    assert!(f[(0, 1)].abs() < 1e-15);
    assert!((fam.normal_jacobian() - 1f64.sinh()).abs() < 1e-14);
    assert_eq!(fam.rho(), 1.0);
    assert_eq!(fam.f[0][0], DMatrix::identity(2, 2));
}

#[test]
fn two_interval_rho_value() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(2).unwrap();
    let inc = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.2, 0.3])];
    let path = roll(&m, &m.origin(), p, inc).unwrap();
    let fam = build_family(&m, &path).unwrap();
    // Velocity 2 e1 over length 1/2: S/Δ = diag(1, sinh(1)/1).
    assert!((fam.rho() - 1f64.sinh()).abs() < 1e-14);
    let rk = pinsim::jacobi::build_family_with(&m, &path, CsSolver::Rk4 { substeps: 200 }).unwrap();
    assert!((rk.rho() - fam.rho()).abs() < 1e-10);
}

#[test]
fn family_has_causal_structure() {
    let m = CurvatureModel::hyperbolic(3, 1.0).unwrap();
    let p = Partition::new(6).unwrap();
    let path = sample_nu1p(&m, p, 4, 0).unwrap();
    let fam = build_family(&m, &path).unwrap();
    for i in 1..=6 {
        for j in 0..i {
            assert_eq!(fam.f[i][j], DMatrix::zeros(3, 3), "f[{i}][{j}]");
        }
        for j in 0..=6 {
            assert_eq!(fam.f[0][j], DMatrix::identity(3, 3));
        }
    }
    // Interior evaluation agrees with knot values.
    for i in 1..=6 {
        for j in i..=6 {
            assert!((fam.f_at(i, p.knot(j)) - &fam.f[i][j]).norm() < 1e-13);
        }
    }
    let flat = CurvatureModel::flat(2);
    let fp = build_family(&flat, &sample_nu1p(&flat, p, 4, 0).unwrap()).unwrap();
    assert!((fp.k_end() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    assert_eq!(fp.normal_jacobian(), 1.0);
}

/// Broken Jacobi field with right slopes `k_i`, integrated interval by interval.
fn broken_jacobi_rk4(m: &CurvatureModel, increments: &[DVector<f64>], slopes: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = increments.len();
    let delta = 1.0 / n as f64;
    let mut j = DVector::zeros(m.dim);
    let mut out = vec![j.clone()];
    for i in 0..n {
        let a = m.jacobi_operator(&(&increments[i] * n as f64));
        let (y, _) = rk4_vec(&a, j, slopes[i].clone(), delta, 400);
        j = y;
        out.push(j.clone());
    }
    out
}

#[test]
fn jacobi_fields_match_direct_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &(d, kappa, n) in &[(2usize, 1.0, 2usize), (2, 1.0, 5), (3, 2.5, 4), (1, 1.0, 3)] {
        let m = CurvatureModel::hyperbolic(d, kappa).unwrap();
        let p = Partition::new(n).unwrap();
        let path = sample_nu1p(&m, p, 9, n as u64).unwrap();
        let fam = build_family(&m, &path).unwrap();
        let slopes: Vec<DVector<f64>> =
            (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect();
        let ours = fam.jacobi_from_slopes(&slopes).unwrap();
        let ode = broken_jacobi_rk4(&m, &path.increments, &slopes);
        for (a, b) in ours.iter().zip(&ode) {
            assert!((a - b).norm() < 1e-10, "d={d} n={n}: {a} vs {b}");
        }
        let back = fam.slopes_from_jacobi(&ours).unwrap();
        for (a, b) in back.iter().zip(&slopes) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}

#[test]
fn right_slopes_are_recovered_by_divided_differences() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(4).unwrap();
    let path = sample_nu1p(&m, p, 2, 1).unwrap();
    let fam = build_family(&m, &path).unwrap();
    let slopes: Vec<DVector<f64>> = (0..4).map(|i| DVector::from_vec(vec![1.0 - i as f64, 0.5 * i as f64])).collect();
    let h = 1e-4;
    for i in 0..4 {
        let s = p.knot(i);
        let j0 = fam.jacobi_at(&slopes, s);
        let j1 = fam.jacobi_at(&slopes, s + h);
        let j2 = fam.jacobi_at(&slopes, s + 2.0 * h);
        let deriv = (j1 * 4.0 - j0 * 3.0 - j2) / (2.0 * h);
        assert!((deriv - &slopes[i]).norm() < 1e-7, "knot {i}");
    }
    let zero = vec![DVector::zeros(2); 4];
    assert!(fam.jacobi_from_slopes(&zero).unwrap().iter().all(|v| v.norm() == 0.0));
    let flat = CurvatureModel::flat(2);
    let ff = build_family(&flat, &sample_nu1p(&flat, p, 2, 1).unwrap()).unwrap();
    let e1 = vec![DVector::from_vec(vec![1.0, 0.0]); 4];
    for (j, v) in ff.jacobi_from_slopes(&e1).unwrap().iter().enumerate() {
        assert!((v[0] - p.knot(j)).abs() < 1e-15 && v[1] == 0.0);
    }
}

#[test]
fn product_structure_matches_one_shot_integration() {
    let m = CurvatureModel::hyperbolic(3, 1.5).unwrap();
    let p = Partition::new(3).unwrap();
    let path = sample_nu1p(&m, p, 5, 2).unwrap();
    let fam = build_family(&m, &path).unwrap();
    // Column by column: start with slope e_a / Δ on interval 1, zero slope afterwards.
    for a in 0..3 {
        let mut slopes = vec![DVector::zeros(3); 3];
        slopes[0][a] = 3.0;
        let ode = broken_jacobi_rk4(&m, &path.increments, &slopes);
        for j in 1..=3 {
            assert!((fam.f[1][j].column(a) - &ode[j]).norm() < 1e-10);
        }
    }
    // Splitting one geodesic interval in two reproduces the addition formula.
    let xi = DVector::from_vec(vec![0.4, -1.2, 0.7]);
    let iv = solve_cs_interval(&m, &xi, 1.0, CsSolver::ClosedForm).unwrap();
    let (ca, sa) = iv.eval(0.3);
    let (cb, sb) = iv.eval(0.45);
    let (cab, sab) = iv.eval(0.75);
    let a = m.jacobi_operator(&xi);
    assert!((&cab - (&ca * &cb + &sa * &a * &sb)).norm() < 1e-12);
    assert!((&sab - (&sa * &cb + &ca * &sb)).norm() < 1e-12);
}

#[test]
fn frame_fields_follow_the_family() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(5).unwrap();
    let path = sample_nu1p(&m, p, 8, 3).unwrap();
    let fam = build_family(&m, &path).unwrap();
    for i in 1..=5 {
        for alpha in 0..2 {
            let vals = fam.jacobi_from_slopes(&frame_field_slopes(&p, 2, alpha, i)).unwrap();
            for j in 0..=5 {
                let expect = fam.f[i][j].column(alpha) / 5f64.sqrt();
                assert!((&vals[j] - expect).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn closed_form_and_rk4_agree_on_random_intervals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let m = CurvatureModel::hyperbolic(d, rng.random_range(0.01..4.0)).unwrap();
        let xi = DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
        let h = rng.random_range(0.01..1.0);
        let cf = solve_cs_interval(&m, &xi, h, CsSolver::ClosedForm).unwrap().eval(h);
        let rk = solve_cs_interval(&m, &xi, h, CsSolver::Rk4 { substeps: 1000 }).unwrap().eval(h);
        worst = worst.max((cf.0 - rk.0).amax()).max((cf.1 - rk.1).amax());
    }
    assert!(worst <= 1e-8, "worst discrepancy {worst:e}");
}

#[test]
fn determinant_identity_examples() {
    let zero = DMatrix::<f64>::zeros(2, 6);
    assert_eq!(det_identity_sides(&zero), (1.0, 1.0));
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -0.5]);
    let (l, r) = det_identity_sides(&a);
    assert!((l - 6.25).abs() < 1e-12 && (r - 6.25).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = DMatrix::from_fn(3, 12, |_, _| rng.random_range(-1.0..1.0));
    assert!(det_identity_check(&a));
}
