//! Volume change of the pinning map, checked against a finite-difference
//! Jacobian of the map in increment coordinates.

use nalgebra::{DMatrix, DVector};
use pinsim::jacobi::{build_family, volume_change_vx};
use pinsim::paths::{roll, sample_increments_n};
use pinsim::{BrokenGeodesic, CurvatureModel, Partition};

/// Body increments → full path ending at `x`.
fn pinned_path(m: &CurvatureModel, p: Partition, body: &[DVector<f64>], x: &DVector<f64>) -> BrokenGeodesic {
    let b = roll(m, &m.origin(), p, body.to_vec()).unwrap();
    let tip = m.log_map(b.endpoint(), x);
    let mut inc = body.to_vec();
    inc.push(tip);
    roll(m, &m.origin(), p, inc).unwrap()
}

/// Slope matrix of the tangent vectors obtained by perturbing each body coordinate.
fn slope_columns(m: &CurvatureModel, p: Partition, body: &[DVector<f64>], x: &DVector<f64>) -> DMatrix<f64> {
    let d = m.dim;
    let n = p.n();
    let base = pinned_path(m, p, body, x);
    let fam = build_family(m, &base).unwrap();
    let h = 1e-6;
    let cols = (n - 1) * d;
    let mut out = DMatrix::zeros(n * d, cols);
    for c in 0..cols {
        let mut plus = body.to_vec();
        let mut minus = body.to_vec();
        plus[c / d][c % d] += h;
        minus[c / d][c % d] -= h;
        let pp = pinned_path(m, p, &plus, x);
        let pm = pinned_path(m, p, &minus, x);
        let values: Vec<DVector<f64>> = (0..=n)
            .map(|j| {
                let w = (&pp.knots[j].point - &pm.knots[j].point) / (2.0 * h);
                m.to_frame(&base.knots[j], &w)
            })
            .collect();
        let slopes = fam.slopes_from_jacobi(&values).unwrap();
        for (i, k) in slopes.iter().enumerate() {
            for a in 0..d {
                out[(i * d + a, c)] = k[a];
            }
        }
    }
    out
}

fn fd_volume_change(m: &CurvatureModel, p: Partition, body: &[DVector<f64>], x: &DVector<f64>) -> f64 {
    let d = m.dim;
    let n = p.n();
    let full = slope_columns(m, p, body, x);
    let head = full.rows(0, (n - 1) * d).into_owned();
    let num = (full.transpose() * &full).determinant();
    let den = (head.transpose() * &head).determinant();
    (num / den).sqrt()
}

fn check(m: CurvatureModel, n: usize, seed: u64, x_coords: &[f64]) {
    let p = Partition::new(n).unwrap();
    let body = sample_increments_n(&p, m.dim, n - 1, seed, 0);
    let x = m.point_from_coords(&DVector::from_vec(x_coords.to_vec())).unwrap();
    let b = roll(&m, &m.origin(), p, body.clone()).unwrap();
    let formula = volume_change_vx(&m, &b, &x).unwrap().v_x;
    let fd = fd_volume_change(&m, p, &body, &x);
    assert!(((formula - fd) / fd).abs() < 1e-5, "n={n} seed={seed}: formula {formula} vs finite differences {fd}");
}

#[test]
fn flat_volume_change_matches_chart_jacobian() {
    check(CurvatureModel::flat(2), 2, 1, &[0.7, -0.2]);
    check(CurvatureModel::flat(2), 4, 2, &[1.5, 0.3]);
}

#[test]
fn hyperbolic_volume_change_matches_chart_jacobian() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    for seed in 0..4 {
        check(m, 2, seed, &[0.8, -0.4]);
        check(m, 3, seed, &[1.2, 0.5]);
    }
    let m3 = CurvatureModel::hyperbolic(3, 1.5).unwrap();
    check(m3, 4, 9, &[0.4, 0.9, -0.3]);
}

/// The alternative reading of the `F_P` sum (indices shifted down by one, so
/// that it starts at `f_{P,0} ≡ I`) disagrees with the chart Jacobian.
#[test]
fn shifted_index_reading_is_rejected() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let n = 3;
    let p = Partition::new(n).unwrap();
    let body = sample_increments_n(&p, 2, n - 1, 5, 0);
    let x = m.point_from_coords(&DVector::from_vec(vec![1.0, 0.2])).unwrap();
    let b = roll(&m, &m.origin(), p, body.clone()).unwrap();
    let geo = volume_change_vx(&m, &b, &x).unwrap();
    let fam = build_family(&m, &pinned_path(&m, p, &body, &x)).unwrap();
    let delta = p.delta();
    let mut f_alt = DMatrix::<f64>::zeros(2, 2);
    for i in 0..=(n - 2) {
        let f = &fam.f[i][n - 1];
        f_alt += f * f.transpose();
    }
    f_alt *= delta * delta;
    let alt = (DMatrix::<f64>::identity(2, 2) + &geo.l_x * f_alt * geo.l_x.transpose()).determinant().sqrt();
    let fd = fd_volume_change(&m, p, &body, &x);
    assert!(((geo.v_x - fd) / fd).abs() < 1e-5);
    assert!(((alt - fd) / fd).abs() > 1e-3, "alt {alt} fd {fd}");
}
