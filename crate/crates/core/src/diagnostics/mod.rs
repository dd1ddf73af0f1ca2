//! Empirical checks of the lifting construction and of the discrete-to-damped
//! convergence statements.

pub mod ibp;
pub mod props;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::damped::{ctilde_scalar, k_scalar, t_scalar};
use crate::error::{Error, Result};
use crate::geom::{CurvatureModel, FramePoint, ModelKind};
use crate::jacobi::{build_family, JacobiFamily};
use crate::linalg::{checked_solve, spectral_norm};
use crate::measures::sample_nu1p;
use crate::paths::{g1p_inner, BrokenGeodesic, Partition};
use crate::stats::{loglog_decay_rate, mean_stderr, quantile, sorted};

pub use ibp::{ibp_check, IbpReport};
pub use props::{property_sweep, PropertyReport};

/// A vector field on the manifold, evaluated in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorField {
    Zero,
    /// Tangential projection of a fixed ambient vector.
    Ambient(DVector<f64>),
}

impl VectorField {
    /// Default field used by the diagnostics: the projection of `(1, 0.5, 0, …)`.
    pub fn standard(model: &CurvatureModel) -> Self {
        let mut a = DVector::zeros(model.ambient_dim());
        a[0] = 1.0;
        if model.dim > 1 {
            a[1] = 0.5;
        }
        VectorField::Ambient(a)
    }

    /// `u^{-1} X(point)`.
    pub fn frame_coords(&self, model: &CurvatureModel, fp: &FramePoint) -> Result<DVector<f64>> {
        match self {
            VectorField::Zero => Ok(DVector::zeros(model.dim)),
            VectorField::Ambient(a) => {
                if a.len() != model.ambient_dim() {
                    return Err(Error::InvalidArgument(format!(
                        "ambient field needs {} components",
                        model.ambient_dim()
                    )));
                }
                Ok(model.to_frame(fp, &model.project_tangent(&fp.point, a)))
            }
        }
    }
}

/// The orthogonal lift of an endpoint vector `H` to the tangent space of `H_P`.
#[derive(Debug, Clone)]
pub struct Lift {
    pub target: DVector<f64>,
    /// `K_P(1)^{-1} H`.
    pub v: DVector<f64>,
    /// Slopes `k_i = f_{P,i+1}(1)ᵀ v`.
    pub slopes: Vec<DVector<f64>>,
    /// `J_P(s_j) = K_P(s_j) v`.
    pub values: Vec<DVector<f64>>,
}

/// Builds `J_P = K_P(·) K_P(1)^{-1} H` and its slope list.
pub fn lift_build(family: &JacobiFamily, target: &DVector<f64>) -> Result<Lift> {
    let n = family.n();
    let v = checked_solve(family.k_end(), target, "K_P(1)")?;
    let slopes = (0..n).map(|i| family.f[i + 1][n].transpose() * &v).collect();
    let values = family.k.iter().map(|k| k * &v).collect();
    Ok(Lift { target: target.clone(), v, slopes, values })
}

/// Lift of `u_1^{-1} X(σ(1))` along a full path.
pub fn lift_field(
    model: &CurvatureModel,
    path: &BrokenGeodesic,
    family: &JacobiFamily,
    field: &VectorField,
) -> Result<Lift> {
    let h = field.frame_coords(model, path.endpoint())?;
    lift_build(family, &h)
}

/// Residuals of the lift's defining properties.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LiftResiduals {
    /// `|J_P(1) - H|`.
    pub endpoint: f64,
    /// Largest `|⟨lift, z⟩| / ‖z‖` over an orthonormal basis `z` of the endpoint map's kernel.
    pub orthogonality: f64,
    /// Dimension of that kernel.
    pub null_dim: usize,
    /// `G¹_P` norm of the lift.
    pub lift_norm: f64,
}

fn stack(slopes: &[DVector<f64>]) -> DVector<f64> {
    let d = slopes.first().map_or(0, |s| s.len());
    let mut out = DVector::zeros(slopes.len() * d);
    for (i, s) in slopes.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(s);
    }
    out
}

fn unstack(v: &DVector<f64>, d: usize) -> Vec<DVector<f64>> {
    (0..v.len() / d).map(|i| v.rows(i * d, d).into_owned()).collect()
}

/// Orthonormal basis (Euclidean in stacked slopes, hence `G¹_P`-orthogonal) of
/// the kernel of the endpoint map, as columns.
pub fn endpoint_null_basis(family: &JacobiFamily) -> Result<DMatrix<f64>> {
    let l = family.endpoint_matrix();
    let m = l.ncols();
    let gram = &l * l.transpose();
    let gram_inv = crate::linalg::checked_inverse(&gram, "endpoint Gram matrix")?;
    let proj = DMatrix::<f64>::identity(m, m) - l.transpose() * gram_inv * &l;
    let eig = proj.symmetric_eigen();
    let cols: Vec<DVector<f64>> =
        (0..m).filter(|&i| eig.eigenvalues[i] > 0.5).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// Endpoint identity and orthogonality residuals of a lift.
pub fn lift_orthogonality(family: &JacobiFamily, lift: &Lift) -> Result<LiftResiduals> {
    let n = family.n();
    let p = family.partition;
    let endpoint = (&lift.values[n] - &lift.target).norm();
    let basis = endpoint_null_basis(family)?;
    let d = family.dim;
    let mut worst: f64 = 0.0;
    for c in 0..basis.ncols() {
        let z = unstack(&basis.column(c).into_owned(), d);
        let ip = g1p_inner(&p, &lift.slopes, &z)?;
        let zn = g1p_inner(&p, &z, &z)?.sqrt();
        worst = worst.max(ip.abs() / zn);
    }
    let lift_norm = g1p_inner(&p, &lift.slopes, &lift.slopes)?.sqrt();
    Ok(LiftResiduals { endpoint, orthogonality: worst, null_dim: basis.ncols(), lift_norm })
}

/// Smallest `‖competitor‖ - ‖lift‖` over random slope lists with the same endpoint.
pub fn lift_competitor_margin(family: &JacobiFamily, lift: &Lift, count: usize, seed: u64) -> Result<f64> {
    let basis = endpoint_null_basis(family)?;
    let p = family.partition;
    let d = family.dim;
    let base = stack(&lift.slopes);
    let lift_norm = g1p_inner(&p, &lift.slopes, &lift.slopes)?.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    for _ in 0..count {
        let coef = DVector::from_fn(basis.ncols(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let scale = {
            let u: f64 = StandardNormal.sample(&mut rng);
            u.abs() * base.norm().max(1.0) / coef.norm().max(1e-300)
        };
        let comp = unstack(&(&base + &basis * coef * scale), d);
        let e_lift = family.jacobi_from_slopes(&lift.slopes)?[p.n()].clone();
        let e_comp = family.jacobi_from_slopes(&comp)?[p.n()].clone();
        if (e_lift - e_comp).norm() > 1e-8 * (1.0 + lift.target.norm()) {
            return Err(Error::NonFinite("competitor left the endpoint fibre".into()));
        }
        let cn = g1p_inner(&p, &comp, &comp)?.sqrt();
        margin = margin.min(cn - lift_norm);
    }
    Ok(margin)
}

/// `sup_{1≤i≤j≤n} |f_{P,i}(s_j) - T̃_{s_j} T̃_{s_i}^{-1}|` (spectral norm).
pub fn f_statistic(model: &CurvatureModel, family: &JacobiFamily) -> f64 {
    let n = family.n();
    let c = model.ricci_constant();
    let p = family.partition;
    let d = family.dim;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut worst: f64 = 0.0;
    for i in 1..=n {
        for j in i..=n {
            let target = &eye * t_scalar(c, p.knot(j) - p.knot(i));
            worst = worst.max(spectral_norm(&(&family.f[i][j] - target)));
        }
    }
    worst
}

/// `sup_j |K̃_{s_j} - K_P(s_j)|`.
pub fn k_statistic(model: &CurvatureModel, family: &JacobiFamily) -> f64 {
    let c = model.ricci_constant();
    let p = family.partition;
    let d = family.dim;
    let eye = DMatrix::<f64>::identity(d, d);
    (0..=p.n()).map(|j| spectral_norm(&(&family.k[j] - &eye * k_scalar(c, p.knot(j))))).fold(0.0, f64::max)
}

/// `sup_j |J_P(s_j) - J̃_{s_j}|` with `J̃` driven by the same endpoint vector.
pub fn j_statistic(model: &CurvatureModel, family: &JacobiFamily, lift: &Lift) -> f64 {
    let c = model.ricci_constant();
    let p = family.partition;
    let k1 = k_scalar(c, 1.0);
    (0..=p.n()).map(|j| (&lift.values[j] - &lift.target * (k_scalar(c, p.knot(j)) / k1)).norm()).fold(0.0, f64::max)
}

/// `|Σ_i ⟨k_{i-1}, Δ_iβ⟩ - Σ_i ⟨C̃H, T̃_{s_{i-1}}^{-1} Δ_iβ⟩|`.
pub fn adjoint_gap(model: &CurvatureModel, path: &BrokenGeodesic, lift: &Lift) -> f64 {
    let c = model.ricci_constant();
    let p = path.partition;
    let ch = &lift.target * ctilde_scalar(c);
    let mut discrete = 0.0;
    let mut damped = 0.0;
    for (i, db) in path.increments.iter().enumerate() {
        discrete += lift.slopes[i].dot(db);
        damped += ch.dot(db) / t_scalar(c, p.knot(i));
    }
    (discrete - damped).abs()
}

/// Which convergence statistic to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    F,
    K,
    J,
    Adjoint,
}

impl Statistic {
    pub fn all() -> [Statistic; 4] {
        [Statistic::F, Statistic::K, Statistic::J, Statistic::Adjoint]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Statistic::F => "f",
            Statistic::K => "k",
            Statistic::J => "j",
            Statistic::Adjoint => "adjoint",
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" => Ok(Statistic::F),
            "k" => Ok(Statistic::K),
            "j" => Ok(Statistic::J),
            "adjoint" | "martingale" => Ok(Statistic::Adjoint),
            other => Err(Error::InvalidArgument(format!("unknown statistic '{other}'"))),
        }
    }
}

/// Per-n summary of a convergence statistic.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub statistic: Statistic,
    pub rows: Vec<ConvergenceRow>,
    /// Fitted decay rate of the medians, `-d log(q50) / d log(n)`.
    pub slope: f64,
    pub strictly_decreasing: bool,
    /// Every median is exactly zero (flat space).
    pub identically_zero: bool,
    pub pass: bool,
}

/// Minimum decay rate required of the `f` statistic.
pub const F_RATE_MIN: f64 = 0.4;

/// All four statistics for one path.
pub fn path_statistics(model: &CurvatureModel, path: &BrokenGeodesic, field: &VectorField) -> Result<[f64; 4]> {
    let family = build_family(model, path)?;
    let lift = lift_field(model, path, &family, field)?;
    Ok([
        f_statistic(model, &family),
        k_statistic(model, &family),
        j_statistic(model, &family, &lift),
        adjoint_gap(model, path, &lift),
    ])
}

/// Sample index used for path `i` at partition size `n`.
fn convergence_sample_id(n: usize, i: usize) -> u64 {
    ((n as u64) << 32) | i as u64
}

/// Runs the requested statistics over the `n` values with `samples` paths each.
pub fn convergence_suite(
    model: &CurvatureModel,
    n_values: &[usize],
    samples: usize,
    field: &VectorField,
    seed: u64,
    stats: &[Statistic],
) -> Result<Vec<ConvergenceReport>> {
    if n_values.len() < 4 || n_values.windows(2).any(|w| w[1] <= w[0]) || n_values[0] == 0 {
        return Err(Error::InvalidArgument("need at least four increasing n values".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples per n".into()));
    }
    let mut per_n: Vec<Vec<[f64; 4]>> = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let p = Partition::new(n)?;
        let vals = (0..samples)
            .into_par_iter()
            .map(|i| {
                let path = sample_nu1p(model, p, seed, convergence_sample_id(n, i))?;
                path_statistics(model, &path, field)
            })
            .collect::<Result<Vec<_>>>()?;
        per_n.push(vals);
    }
    Ok(stats
        .iter()
        .map(|&stat| {
            let idx = Statistic::all().iter().position(|s| *s == stat).unwrap();
            let rows: Vec<ConvergenceRow> = n_values
                .iter()
                .zip(&per_n)
                .map(|(&n, vals)| {
                    let xs: Vec<f64> = vals.iter().map(|v| v[idx]).collect();
                    summarize(n, &xs)
                })
                .collect();
            report(stat, rows)
        })
        .collect())
}

fn summarize(n: usize, xs: &[f64]) -> ConvergenceRow {
    let s = sorted(xs);
    ConvergenceRow {
        n,
        q05: quantile(&s, 0.05),
        q50: quantile(&s, 0.5),
        q95: quantile(&s, 0.95),
        mean: mean_stderr(xs).0,
    }
}

fn report(statistic: Statistic, rows: Vec<ConvergenceRow>) -> ConvergenceReport {
    let identically_zero = rows.iter().all(|r| r.q95 == 0.0 || r.q95.abs() < 1e-13);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].q50 < w[0].q50);
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let med: Vec<f64> = rows.iter().map(|r| r.q50).collect();
    let slope = if identically_zero || med.iter().any(|m| *m <= 0.0) { 0.0 } else { loglog_decay_rate(&ns, &med) };
    let pass = if identically_zero {
        true
    } else {
        match statistic {
            Statistic::F => strictly_decreasing && slope >= F_RATE_MIN,
            Statistic::K | Statistic::J => strictly_decreasing && rows.last().unwrap().q50 < rows[0].q50 / 4.0,
            Statistic::Adjoint => strictly_decreasing,
        }
    };
    ConvergenceReport { statistic, rows, slope, strictly_decreasing, identically_zero, pass }
}

/// Writes a report as CSV (`n,q05,q50,q95,mean,slope,pass`) after a `schema=1` line.
pub fn write_report_csv<W: Write>(mut out: W, report: &ConvergenceReport) -> Result<()> {
    writeln!(out, "schema=1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "q05", "q50", "q95", "mean", "slope", "pass"])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            format!("{:.12e}", r.q05),
            format!("{:.12e}", r.q50),
            format!("{:.12e}", r.q95),
            format!("{:.12e}", r.mean),
            format!("{:.6}", report.slope),
            report.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table of several reports.
pub fn summary_table(reports: &[ConvergenceReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "statistic {:<8} slope {:>7.3}  decreasing {:<5}  pass {}\n",
            r.statistic.name(),
            r.slope,
            r.strictly_decreasing,
            r.pass
        ));
        s.push_str("      n        q05        q50        q95       mean\n");
        for row in &r.rows {
            s.push_str(&format!(
                "{:>7} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}\n",
                row.n, row.q05, row.q50, row.q95, row.mean
            ));
        }
    }
    s
}

/// Whether the model has an exactly computable flat answer (all statistics zero).
pub fn is_flat(model: &CurvatureModel) -> bool {
    model.kind == ModelKind::Flat
}
