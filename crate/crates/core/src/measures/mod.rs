//! Sampling piecewise-geodesic Brownian paths and the weighted estimator for
//! pinned path integrals.
//!
//! A pinned sample draws the first `n-1` increments from the Gaussian law,
//! rolls them to a body path on `[0, τ]`, and closes the path with the geodesic
//! from `σ(τ)` to the target `x`. The importance weight is
//! `(2π)^{-d/2} e^{-(n/2) d²(σ(τ),x)} V_x / J_P`, so that the sample mean of
//! `w · f` estimates the unnormalized pinned integral (total mass `p_1(o,x)` in
//! the limit).

pub mod kernel;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::CurvatureModel;
use crate::jacobi::{interval_matrices, solve_cs_interval, terminal_f, volume_change_from_parts, CsSolver};
use crate::paths::{roll, sample_increments, sample_increments_n, BrokenGeodesic, Partition};
use crate::stats::weighted_mean_stderr;

pub use kernel::{
    heat_kernel_exact, heat_kernel_radial, pinned_fdd_oracle, radial_heat_oracle, radial_heat_solve, QuadratureValue,
    RadialGrid, RadialProfile,
};

/// A path of `ν¹_P`: rolled Gaussian increments.
pub fn sample_nu1p(model: &CurvatureModel, partition: Partition, seed: u64, sample: u64) -> Result<BrokenGeodesic> {
    let inc = sample_increments(&partition, model.dim, seed, sample);
    roll(model, &model.origin(), partition, inc)
}

/// Function of the path through its values at finitely many knot times.
#[derive(Clone)]
pub struct CylinderObservable {
    pub name: String,
    pub times: Vec<f64>,
    /// Declared bound on `|F|`, checked on every evaluation when present.
    pub bound: Option<f64>,
    func: Arc<dyn Fn(&CurvatureModel, &[&DVector<f64>]) -> f64 + Send + Sync>,
}

impl fmt::Debug for CylinderObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylinderObservable")
            .field("name", &self.name)
            .field("times", &self.times)
            .field("bound", &self.bound)
            .finish()
    }
}

impl CylinderObservable {
    pub fn new<F>(name: impl Into<String>, times: Vec<f64>, bound: Option<f64>, func: F) -> Self
    where
        F: Fn(&CurvatureModel, &[&DVector<f64>]) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), times, bound, func: Arc::new(func) }
    }

    /// The constant function 1 (pinned mass).
    pub fn one() -> Self {
        Self::new("one", vec![], Some(1.0), |_, _| 1.0)
    }

    /// `g(d(o, σ(s)))` for a radial profile `g`.
    pub fn radial_at<G>(name: impl Into<String>, s: f64, bound: Option<f64>, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, vec![s], bound, move |m, pts| {
            let o = m.origin().point;
            g(m.distance(&o, pts[0]))
        })
    }

    /// Knot indices of the evaluation times under `partition`.
    pub fn knots(&self, partition: &Partition) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&s| {
                partition.knot_index(s).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "observable '{}' evaluates at {s}, which is not a knot of the n = {} partition",
                        self.name,
                        partition.n()
                    ))
                })
            })
            .collect()
    }

    /// Evaluates on a path whose knots include all evaluation times.
    pub fn eval(&self, model: &CurvatureModel, path: &BrokenGeodesic) -> Result<f64> {
        let idx = self.knots(&path.partition)?;
        let pts: Vec<&DVector<f64>> = idx.iter().map(|&i| &path.knots[i].point).collect();
        let v = (self.func)(model, &pts);
        self.check_bound(v)
    }

    /// Evaluates at explicit points (one per evaluation time).
    pub fn eval_points(&self, model: &CurvatureModel, pts: &[&DVector<f64>]) -> Result<f64> {
        self.check_bound((self.func)(model, pts))
    }

    fn check_bound(&self, v: f64) -> Result<f64> {
        if let Some(b) = self.bound {
            if v.abs() > b * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "observable '{}' returned {v}, above its declared bound {b}",
                    self.name
                )));
            }
        }
        Ok(v)
    }
}

/// One pinned path with its importance weight.
#[derive(Debug, Clone)]
pub struct PinnedSample {
    /// Path on `[0, τ]` (n-1 segments).
    pub body: BrokenGeodesic,
    /// Tip vector `u(τ)^{-1} log_{σ(τ)} x`.
    pub tip: DVector<f64>,
    /// `ψ_x(body)`: body followed by the geodesic to `x`.
    pub full: BrokenGeodesic,
    pub v_x: f64,
    pub normal_jacobian: f64,
    pub log_weight: f64,
}

impl PinnedSample {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Draws body `sample` and forms the pinned path and weight.
pub fn pinned_sample(
    model: &CurvatureModel,
    partition: Partition,
    x: &DVector<f64>,
    seed: u64,
    sample: u64,
) -> Result<PinnedSample> {
    let n = partition.n();
    if n < 2 {
        return Err(Error::InvalidArgument("pinned sampling needs n >= 2".into()));
    }
    if !model.on_manifold(x, 1e-9) {
        return Err(Error::InvalidArgument("pinning target is not a point of the model".into()));
    }
    let d = model.dim;
    let inc = sample_increments_n(&partition, d, n - 1, seed, sample);
    let body = roll(model, &model.origin(), partition, inc)?;
    let (_, mut c, mut s) = interval_matrices(model, &partition, &body.increments, CsSolver::ClosedForm)?;
    let geo = volume_change_from_parts(model, partition, body.endpoint(), &c, &s, x)?;

    // Close the path and extend the interval matrices by the tip segment.
    let mut full = body.clone();
    full.increments.push(geo.tip.clone());
    full.knots.push(model.exp_map(body.endpoint(), &geo.tip));
    let delta = partition.delta();
    let tip_iv = solve_cs_interval(model, &(&geo.tip * n as f64), delta, CsSolver::ClosedForm)?;
    let (ct, st) = tip_iv.eval_scaled(delta);
    c.push(ct);
    s.push(st);
    let fs = terminal_f(&c, &s);
    let mut k1 = nalgebra::DMatrix::<f64>::zeros(d, d);
    for f in &fs {
        k1 += f * f.transpose();
    }
    k1 /= n as f64;
    let normal_jacobian = k1.determinant().max(0.0).sqrt();

    let tip2 = geo.tip.norm_squared();
    let log_weight = -(d as f64) / 2.0 * (2.0 * PI).ln() - 0.5 * n as f64 * tip2 + geo.v_x.ln() - normal_jacobian.ln();
    if !log_weight.is_finite() {
        return Err(Error::NonFinite(format!(
            "pinned weight for sample {sample} (seed {seed}): |tip|² = {tip2:e}, V_x = {:e}, J_P = {normal_jacobian:e}",
            geo.v_x
        )));
    }
    Ok(PinnedSample { body, tip: geo.tip, full, v_x: geo.v_x, normal_jacobian, log_weight })
}

/// Monte Carlo estimate of a pinned path integral.
#[derive(Debug, Clone, Serialize)]
pub struct PinnedEstimate {
    pub observable: String,
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
    pub log_weight_min: f64,
    pub log_weight_max: f64,
}

/// Estimates `∫ f dν¹_{P,x}` for each observable from the same pinned samples.
pub fn pinned_estimate_many(
    model: &CurvatureModel,
    partition: Partition,
    x: &DVector<f64>,
    observables: &[CylinderObservable],
    samples: usize,
    seed: u64,
) -> Result<Vec<PinnedEstimate>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    for obs in observables {
        obs.knots(&partition)?;
    }
    let rows: Vec<(f64, Vec<f64>)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let ps = pinned_sample(model, partition, x, seed, i)?;
            let vals = observables
                .iter()
                .map(|o| {
                    let v = o.eval(model, &ps.full)?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::NonFinite(format!("observable '{}' at sample {i}", o.name)))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((ps.log_weight, vals))
        })
        .collect::<Result<Vec<_>>>()?;
    let lw: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lw_min = lw.iter().cloned().fold(f64::INFINITY, f64::min);
    let lw_max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(observables
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let vals: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
            let (mean, stderr) = weighted_mean_stderr(&vals, &lw);
            PinnedEstimate {
                observable: o.name.clone(),
                samples,
                mean,
                stderr,
                log_weight_min: lw_min,
                log_weight_max: lw_max,
            }
        })
        .collect())
}

/// Estimates `∫ f dν¹_{P,x}` for one observable.
pub fn pinned_estimate(
    model: &CurvatureModel,
    partition: Partition,
    x: &DVector<f64>,
    observable: &CylinderObservable,
    samples: usize,
    seed: u64,
) -> Result<PinnedEstimate> {
    Ok(pinned_estimate_many(model, partition, x, std::slice::from_ref(observable), samples, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_weight_is_gaussian_density() {
        let m = CurvatureModel::flat(2);
        let p = Partition::new(4).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.5]);
        let ps = pinned_sample(&m, p, &x, 3, 0).unwrap();
        let tip2 = (&x - &ps.body.endpoint().point).norm_squared();
        let expect = (2.0 * PI).powi(-1) * (-2.0 * tip2).exp() * 4.0;
        assert!((ps.weight() - expect).abs() < 1e-14 * expect.max(1.0));
        assert!((ps.full.endpoint().point.clone() - &x).norm() < 1e-14);
    }

    #[test]
    fn estimator_validates_inputs() {
        let m = CurvatureModel::flat(1);
        let p = Partition::new(3).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        assert!(pinned_estimate(&m, p, &x, &CylinderObservable::one(), 1, 0).is_err());
        let mid = CylinderObservable::radial_at("r", 0.5, None, |r| r);
        assert!(pinned_estimate(&m, p, &x, &mid, 10, 0).is_err());
        assert!(pinned_estimate(&m, Partition::new(1).unwrap(), &x, &CylinderObservable::one(), 10, 0).is_err());
    }
}
