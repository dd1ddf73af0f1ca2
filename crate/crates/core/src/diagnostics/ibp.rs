//! Integration by parts for the lifted vector field, checked in the chart of
//! standardized Gaussian increments.
//!
//! The path measure is the pushforward of the standard Gaussian on `z ∈ R^{nd}`
//! under `z ↦ roll(z/√n)`. The lifted field pulls back to a chart field `V(z)`,
//! and Gaussian integration by parts gives
//! `E[(X̃f) g] = E[f (-V·∇g + g (z·V - div V))]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{lift_field, stack, Lift, VectorField};
use crate::error::{Error, Result};
use crate::geom::CurvatureModel;
use crate::jacobi::{build_family, JacobiFamily};
use crate::linalg::{checked_solve_cond, condition_number};
use crate::measures::CylinderObservable;
use crate::paths::{frame_field_slopes, roll, sample_increments, BrokenGeodesic, Partition};
use crate::stats::{mean_stderr, quantile, sorted};

/// Central-difference step in chart coordinates.
pub const FD_STEP: f64 = 1e-5;
/// Samples whose chart matrix is worse conditioned than this are skipped.
pub const COND_LIMIT: f64 = 1e10;

/// Outcome of the integration-by-parts check.
#[derive(Debug, Clone, Serialize)]
pub struct IbpReport {
    pub samples: usize,
    pub used: usize,
    pub skipped_ill_conditioned: usize,
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    pub rhs_mean: f64,
    pub rhs_stderr: f64,
    pub combined_stderr: f64,
    /// Standard error of the per-sample difference (same samples drive both sides).
    pub paired_stderr: f64,
    pub pass: bool,
    /// Median of `|(z·V - div V) - (Σ⟨k_{i-1}, Δ_iβ⟩ - div_{G¹})|` (reported, not gated).
    pub div_gap_median: f64,
    pub div_gap_mean: f64,
}

/// Per-sample values of the check.
#[derive(Debug, Clone, Copy)]
pub struct IbpSample {
    pub lhs: f64,
    pub rhs: f64,
    /// `z·V - div V`.
    pub chart_adjoint: f64,
    /// `Σ⟨k_{i-1}, Δ_iβ⟩ - div_{G¹}` with the divergence from frame-field derivatives.
    pub path_adjoint: f64,
}

/// The chart `z ↦ path` with helpers for tangent maps.
pub struct Chart<'a> {
    pub model: &'a CurvatureModel,
    pub partition: Partition,
    pub field: &'a VectorField,
}

struct ChartPoint {
    path: BrokenGeodesic,
    lift: Lift,
    /// Tangent map: column `c` holds the slopes produced by moving `z_c`.
    m: DMatrix<f64>,
}

impl<'a> Chart<'a> {
    fn dim(&self) -> usize {
        self.partition.n() * self.model.dim
    }

    pub fn path(&self, z: &DVector<f64>) -> Result<BrokenGeodesic> {
        let d = self.model.dim;
        let scale = 1.0 / (self.partition.n() as f64).sqrt();
        let inc = (0..self.partition.n()).map(|i| z.rows(i * d, d) * scale).collect();
        roll(self.model, &self.model.origin(), self.partition, inc)
    }

    /// Slopes (stacked) of the tangent vector obtained by moving `z` along `dir`.
    fn tangent_slopes(
        &self,
        base: &BrokenGeodesic,
        family: &JacobiFamily,
        z: &DVector<f64>,
        dir: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let h = FD_STEP;
        let plus = self.path(&(z + dir * h))?;
        let minus = self.path(&(z - dir * h))?;
        let values: Vec<DVector<f64>> = (0..=self.partition.n())
            .map(|j| {
                let w = (&plus.knots[j].point - &minus.knots[j].point) / (2.0 * h);
                self.model.to_frame(&base.knots[j], &w)
            })
            .collect();
        Ok(stack(&family.slopes_from_jacobi(&values)?))
    }

    fn point(&self, z: &DVector<f64>) -> Result<ChartPoint> {
        let path = self.path(z)?;
        let family = build_family(self.model, &path)?;
        let lift = lift_field(self.model, &path, &family, self.field)?;
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let mut e = DVector::zeros(dim);
            e[c] = 1.0;
            m.set_column(c, &self.tangent_slopes(&path, &family, z, &e)?);
        }
        Ok(ChartPoint { path, lift, m })
    }

    fn solve(&self, m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        checked_solve_cond(m, rhs, "chart tangent map", COND_LIMIT)
    }

    /// Chart representation `V(z)` of the lifted field.
    pub fn lifted_field(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let cp = self.point(z)?;
        self.solve(&cp.m, &stack(&cp.lift.slopes))
    }

    /// Condition number of the tangent map at `z`.
    pub fn condition(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(condition_number(&self.point(z)?.m))
    }

    /// Euclidean divergence of `V` by central differences.
    pub fn divergence(&self, z: &DVector<f64>) -> Result<f64> {
        let h = FD_STEP;
        let mut div = 0.0;
        for c in 0..self.dim() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            div += (self.lifted_field(&zp)?[c] - self.lifted_field(&zm)?[c]) / (2.0 * h);
        }
        Ok(div)
    }
}

fn eval_perturbed(
    model: &CurvatureModel,
    obs: &CylinderObservable,
    path: &BrokenGeodesic,
    values: &[DVector<f64>],
    eps: f64,
) -> Result<f64> {
    let idx = obs.knots(&path.partition)?;
    let pts: Vec<DVector<f64>> =
        idx.iter().map(|&j| model.exp_map(&path.knots[j], &(&values[j] * eps)).point).collect();
    let refs: Vec<&DVector<f64>> = pts.iter().collect();
    obs.eval_points(model, &refs)
}

/// Evaluates both sides of the identity at one chart point.
pub fn ibp_sample(
    chart: &Chart<'_>,
    z: &DVector<f64>,
    f: &CylinderObservable,
    g: &CylinderObservable,
) -> Result<IbpSample> {
    let model = chart.model;
    let p = chart.partition;
    let d = model.dim;
    let h = FD_STEP;
    let cp = chart.point(z)?;
    let v = chart.solve(&cp.m, &stack(&cp.lift.slopes))?;

    // Left side: derivative of f along the lifted field, moving each knot along
    // the Jacobi field value there.
    let df = (eval_perturbed(model, f, &cp.path, &cp.lift.values, h)?
        - eval_perturbed(model, f, &cp.path, &cp.lift.values, -h)?)
        / (2.0 * h);
    let f0 = f.eval(model, &cp.path)?;
    let g0 = g.eval(model, &cp.path)?;
    let lhs = df * g0;

    // Right side through the chart.
    let dg = (g.eval(model, &chart.path(&(z + &v * h))?)? - g.eval(model, &chart.path(&(z - &v * h))?)?) / (2.0 * h);
    let div = chart.divergence(z)?;
    let chart_adjoint = z.dot(&v) - div;
    let rhs = f0 * (-dg + g0 * chart_adjoint);

    // Path-space form: Σ⟨k_{i-1}, Δ_iβ⟩ minus the divergence taken along the
    // orthonormal frame fields.
    let stochastic: f64 = cp.lift.slopes.iter().zip(&cp.path.increments).map(|(k, db)| k.dot(db)).sum();
    let mut div_g1 = 0.0;
    let sqrt_delta = p.delta().sqrt();
    for j in 0..p.n() {
        for alpha in 0..d {
            let vh = chart.solve(&cp.m, &stack(&frame_field_slopes(&p, d, alpha, j + 1)))?;
            let kp = lift_at(chart, &(z + &vh * h))?;
            let km = lift_at(chart, &(z - &vh * h))?;
            div_g1 += (kp.slopes[j][alpha] - km.slopes[j][alpha]) / (2.0 * h) * sqrt_delta;
        }
    }
    Ok(IbpSample { lhs, rhs, chart_adjoint, path_adjoint: stochastic - div_g1 })
}

fn lift_at(chart: &Chart<'_>, z: &DVector<f64>) -> Result<Lift> {
    let path = chart.path(z)?;
    let family = build_family(chart.model, &path)?;
    lift_field(chart.model, &path, &family, chart.field)
}

/// Standardized increments of sample `sample`.
pub fn chart_sample(partition: &Partition, d: usize, seed: u64, sample: u64) -> DVector<f64> {
    let inc = sample_increments(partition, d, seed, sample);
    stack(&inc) * (partition.n() as f64).sqrt()
}

/// Runs the check over `samples` Gaussian chart points.
pub fn ibp_check(
    model: &CurvatureModel,
    partition: Partition,
    f: &CylinderObservable,
    g: &CylinderObservable,
    field: &VectorField,
    samples: usize,
    seed: u64,
) -> Result<IbpReport> {
    if partition.n() > 8 || model.dim > 2 {
        return Err(Error::InvalidArgument("integration-by-parts check supports n <= 8 and d <= 2".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    f.knots(&partition)?;
    g.knots(&partition)?;
    let chart = Chart { model, partition, field };
    let rows: Vec<Option<IbpSample>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let z = chart_sample(&partition, model.dim, seed, i);
            match ibp_sample(&chart, &z, f, g) {
                Ok(s) => Ok(Some(s)),
                Err(Error::IllConditioned { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<IbpSample> = rows.iter().flatten().copied().collect();
    if used.len() < 2 {
        return Err(Error::NonFinite("every integration-by-parts sample was ill-conditioned".into()));
    }
    let lhs: Vec<f64> = used.iter().map(|s| s.lhs).collect();
    let rhs: Vec<f64> = used.iter().map(|s| s.rhs).collect();
    let diff: Vec<f64> = used.iter().map(|s| s.lhs - s.rhs).collect();
    let gaps: Vec<f64> = used.iter().map(|s| (s.chart_adjoint - s.path_adjoint).abs()).collect();
    let (lhs_mean, lhs_stderr) = mean_stderr(&lhs);
    let (rhs_mean, rhs_stderr) = mean_stderr(&rhs);
    let (_, paired_stderr) = mean_stderr(&diff);
    let combined_stderr = lhs_stderr.hypot(rhs_stderr);
    Ok(IbpReport {
        samples,
        used: used.len(),
        skipped_ill_conditioned: samples - used.len(),
        lhs_mean,
        lhs_stderr,
        rhs_mean,
        rhs_stderr,
        combined_stderr,
        paired_stderr,
        pass: (lhs_mean - rhs_mean).abs() <= 3.0 * combined_stderr,
        div_gap_median: quantile(&sorted(&gaps), 0.5),
        div_gap_mean: mean_stderr(&gaps).0,
    })
}
