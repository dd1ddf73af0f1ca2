//! Lift, convergence and integration-by-parts diagnostics.

use nalgebra::DVector;
use pinsim::diagnostics::ibp::{chart_sample, ibp_sample, Chart};
use pinsim::diagnostics::*;
use pinsim::measures::{sample_nu1p, CylinderObservable};
use pinsim::{build_family, CurvatureModel, Partition};

fn first_coord_at_end(power: i32) -> CylinderObservable {
    CylinderObservable::new(format!("x^{power}"), vec![1.0], None, move |_, pts| pts[0][0].powi(power))
}

/// Flat line, two intervals, `f = σ(1)`, `g = σ(1)²`, `X ≡ 1`: both sides equal
/// `E[σ(1)²] = 1`, and per sample the chart field is `V = (1, 1)/√2`.
#[test]
fn flat_two_step_ibp_has_closed_form() {
    let m = CurvatureModel::flat(1);
    let p = Partition::new(2).unwrap();
    let field = VectorField::Ambient(DVector::from_vec(vec![1.0]));
    let chart = Chart { model: &m, partition: p, field: &field };
    let z = DVector::from_vec(vec![0.3, -1.1]);
    let v = chart.lifted_field(&z).unwrap();
    assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-9 && (v[1] - 0.5f64.sqrt()).abs() < 1e-9);
    assert!(chart.divergence(&z).unwrap().abs() < 1e-6);

    let f = first_coord_at_end(1);
    let g = first_coord_at_end(2);
    let s = ibp_sample(&chart, &z, &f, &g).unwrap();
    let x = (0.3 - 1.1) / 2f64.sqrt();
    assert!((s.lhs - x * x).abs() < 1e-8);
    assert!((s.rhs - x * (-2.0 * x + x * x * x)).abs() < 1e-6);
    assert!((s.chart_adjoint - s.path_adjoint).abs() < 1e-6);

    let r = ibp_check(&m, p, &f, &g, &field, 20_000, 4).unwrap();
    assert!((r.lhs_mean - 1.0).abs() < 3.0 * r.lhs_stderr, "{r:?}");
    assert!((r.rhs_mean - 1.0).abs() < 3.0 * r.rhs_stderr, "{r:?}");
    assert!(r.pass && r.skipped_ill_conditioned == 0);
}

/// With `f ≡ 1` the left side vanishes and the right side is `E[X̃g]`-free.
#[test]
fn constant_f_reduces_to_gaussian_adjoint() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(3).unwrap();
    let field = VectorField::standard(&m);
    let g = CylinderObservable::radial_at("g", 1.0, Some(1.0), |r| 1.0 / (1.0 + r * r));
    let r = ibp_check(&m, p, &CylinderObservable::one(), &g, &field, 2_000, 8).unwrap();
    assert_eq!(r.lhs_mean, 0.0);
    assert!(r.rhs_mean.abs() < 3.0 * r.rhs_stderr, "{r:?}");
}

#[test]
fn zero_field_gives_zero_lift_and_gap() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(6).unwrap();
    let path = sample_nu1p(&m, p, 1, 0).unwrap();
    let fam = build_family(&m, &path).unwrap();
    let lift = lift_field(&m, &path, &fam, &VectorField::Zero).unwrap();
    assert!(lift.values.iter().all(|v| v.norm() == 0.0));
    assert_eq!(adjoint_gap(&m, &path, &lift), 0.0);
}

#[test]
fn hyperbolic_lift_is_orthogonal_and_minimal() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let p = Partition::new(5).unwrap();
    for s in 0..20 {
        let path = sample_nu1p(&m, p, 3, s).unwrap();
        let fam = build_family(&m, &path).unwrap();
        let lift = lift_field(&m, &path, &fam, &VectorField::standard(&m)).unwrap();
        let r = lift_orthogonality(&fam, &lift).unwrap();
        assert!(r.endpoint <= 1e-10 && r.orthogonality <= 1e-8, "{r:?}");
        assert_eq!(r.null_dim, 8);
        assert!(lift_competitor_margin(&fam, &lift, 20, s).unwrap() >= -1e-10);
        // Slope list reproduces the Jacobi values.
        let back = fam.jacobi_from_slopes(&lift.slopes).unwrap();
        for (a, b) in back.iter().zip(&lift.values) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}

#[test]
fn flat_convergence_statistics_vanish() {
    let m = CurvatureModel::flat(2);
    let reps = convergence_suite(&m, &[2, 4, 8, 16], 5, &VectorField::standard(&m), 1, &Statistic::all()).unwrap();
    for r in reps {
        assert!(r.identically_zero && r.pass, "{}", summary_table(&[r.clone()]));
    }
}

#[test]
fn hyperbolic_statistics_decrease() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let reps = convergence_suite(&m, &[8, 16, 32, 64], 40, &VectorField::standard(&m), 2, &Statistic::all()).unwrap();
    let table = summary_table(&reps);
    for r in &reps {
        assert!(r.rows[3].q50 < r.rows[0].q50, "{table}");
    }
}

#[test]
fn report_csv_layout() {
    let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
    let reps = convergence_suite(&m, &[2, 3, 4, 5], 4, &VectorField::standard(&m), 2, &[Statistic::K]).unwrap();
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &reps[0]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "schema=1");
    assert_eq!(lines[1], "n,q05,q50,q95,mean,slope,pass");
    assert_eq!(lines.len(), 6);
    assert!(convergence_suite(&m, &[2, 3, 4], 4, &VectorField::Zero, 2, &[Statistic::K]).is_err());
}

#[test]
fn chart_samples_are_standardized_increments() {
    let p = Partition::new(4).unwrap();
    let z = chart_sample(&p, 2, 5, 3);
    assert_eq!(z.len(), 8);
}
