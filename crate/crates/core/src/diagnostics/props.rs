//! Samplewise bounds on the Jacobi matrices, Gram operator and pinning volume.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::CurvatureModel;
use crate::jacobi::{build_family, solve_cs_interval, volume_change_vx, vx_upper_bound, CsSolver, JacobiFamily};
use crate::linalg::{eigenvalue_moduli, min_sym_eigenvalue, spectral_norm};
use crate::measures::sample_nu1p;
use crate::paths::{gaussian_cell, roll, BrokenGeodesic, Partition};

/// Tolerance on `λ_min(K_P(1)) ≥ 1`.
pub const GRAM_TOL: f64 = 1e-10;
/// Tolerance on the determinant and eigenvalue lower bounds.
pub const DET_TOL: f64 = 1e-12;

/// Names of the checked properties, in report order.
pub const PROPERTY_NAMES: [&str; 9] = [
    "gram_min_eigenvalue",
    "normal_jacobian",
    "sine_determinant_product",
    "cosine_eigenvalues",
    "sine_eigenvalues",
    "cosine_norm",
    "sine_deviation",
    "cosine_deviation",
    "pinning_volume",
];

/// Violation count of one property over a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyCount {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    /// Smallest slack seen (negative means violated).
    pub worst_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub paths: usize,
    pub counts: Vec<PropertyCount>,
}

impl PropertyReport {
    pub fn violations(&self) -> usize {
        self.counts.iter().map(|c| c.violations).sum()
    }
}

#[derive(Clone)]
struct Tally {
    checked: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { checked: 0, violations: 0, worst: f64::INFINITY }
    }

    /// Records `slack ≥ 0` (with `slack` already including the tolerance).
    fn record(&mut self, slack: f64) {
        self.checked += 1;
        if !(slack >= 0.0) {
            self.violations += 1;
        }
        self.worst = self.worst.min(slack);
    }

    fn merge(mut self, o: &Tally) -> Self {
        self.checked += o.checked;
        self.violations += o.violations;
        self.worst = self.worst.min(o.worst);
        self
    }
}

/// Checks the per-interval cosine/sine bounds with curvature bound `N = κ`:
/// eigenvalue moduli `|λ(C)| ≥ 1`, `|λ(S(h))| ≥ h`, and
/// `|C(h)| ≤ cosh(√N|ξ|h)`, `|S(h) - hI| ≤ (N|ξ|²h³/6) e^{N|ξ|²h²/2}`,
/// `|C(h) - I| ≤ (N|ξ|²h²/2) e^{N|ξ|²h²/2}`.
fn interval_checks(model: &CurvatureModel, xi: &DVector<f64>, delta: f64, t: &mut [Tally]) -> Result<()> {
    let d = model.dim;
    let eye = DMatrix::<f64>::identity(d, d);
    let iv = solve_cs_interval(model, xi, delta, CsSolver::ClosedForm)?;
    let big_n = model.kappa;
    let x2 = xi.norm_squared();
    for frac in [1.0 / 3.0, 2.0 / 3.0, 1.0] {
        let h = delta * frac;
        let (c, s) = iv.eval(h);
        let lc = eigenvalue_moduli(&c).into_iter().fold(f64::INFINITY, f64::min);
        let ls = eigenvalue_moduli(&s).into_iter().fold(f64::INFINITY, f64::min);
        t[3].record(lc - 1.0 + DET_TOL);
        t[4].record(ls / h - 1.0 + DET_TOL);
        let a = big_n * x2 * h * h;
        let cn = (big_n.sqrt() * x2.sqrt() * h).cosh();
        t[5].record(cn * (1.0 + DET_TOL) - spectral_norm(&c));
        let sb = big_n * x2 * h.powi(3) / 6.0 * (a / 2.0).exp();
        t[6].record(sb * (1.0 + DET_TOL) + 1e-15 * h - spectral_norm(&(&s - &eye * h)));
        let cb = a / 2.0 * (a / 2.0).exp();
        t[7].record(cb * (1.0 + DET_TOL) + 1e-15 - spectral_norm(&(&c - &eye)));
    }
    Ok(())
}

fn family_checks(family: &JacobiFamily, t: &mut [Tally]) {
    t[0].record(min_sym_eigenvalue(family.k_end()) - 1.0 + GRAM_TOL);
    t[1].record(family.normal_jacobian() - 1.0 + DET_TOL);
    t[2].record(family.rho() - 1.0 + DET_TOL);
}

/// Pinning target for path `sample`: `exp_o(z)` with `z` standard Gaussian.
pub fn random_target(model: &CurvatureModel, seed: u64, sample: u64) -> DVector<f64> {
    let z = gaussian_cell(model.dim, 1.0, seed ^ 0x9e37_79b9_7f4a_7c15, sample, 0);
    model.exp_map(&model.origin(), &z).point
}

fn path_checks(model: &CurvatureModel, path: &BrokenGeodesic, x: &DVector<f64>) -> Result<Vec<Tally>> {
    let mut t = vec![Tally::new(); PROPERTY_NAMES.len()];
    let p = path.partition;
    let family = build_family(model, path)?;
    family_checks(&family, &mut t);
    for v in path.velocities() {
        interval_checks(model, &v, p.delta(), &mut t)?;
    }
    if p.n() >= 2 {
        let body_inc = path.increments[..p.n() - 1].to_vec();
        let body = roll(model, &model.origin(), p, body_inc)?;
        let vx = volume_change_vx(model, &body, x)?.v_x;
        let bound = vx_upper_bound(model, &body, x);
        t[8].record((vx - 1.0 + DET_TOL).min(bound * (1.0 + DET_TOL) - vx));
    }
    Ok(t)
}

/// Runs every property on `paths` sampled paths.
pub fn property_sweep(model: &CurvatureModel, partition: Partition, paths: usize, seed: u64) -> Result<PropertyReport> {
    if paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let tallies = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_nu1p(model, partition, seed, i)?;
            path_checks(model, &path, &random_target(model, seed, i))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tallies.iter().fold(vec![Tally::new(); PROPERTY_NAMES.len()], |acc, t| {
        acc.into_iter().zip(t).map(|(a, b)| a.merge(b)).collect()
    });
    Ok(PropertyReport {
        paths,
        counts: PROPERTY_NAMES
            .iter()
            .zip(total)
            .map(|(name, t)| PropertyCount { name, checked: t.checked, violations: t.violations, worst_slack: t.worst })
            .collect(),
    })
}

/// Checks on a single path, for callers that build their own paths.
pub fn path_property_violations(
    model: &CurvatureModel,
    path: &BrokenGeodesic,
    x: &DVector<f64>,
) -> Result<Vec<(&'static str, usize)>> {
    let t = path_checks(model, path, x)?;
    Ok(PROPERTY_NAMES.iter().zip(t).map(|(n, t)| (*n, t.violations)).collect())
}
