//! Heat kernels of `½Δ`: closed forms, a radial Crank–Nicolson solver, and the
//! one-interior-time path integral used as a reference for midpoint observables.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{CurvatureModel, ModelKind};
use crate::quad::composite;

/// Closed-form kernel `p_t(ρ)` as a function of geodesic distance.
///
/// Available for flat space in any dimension and for hyperbolic space with `d = 3`.
pub fn heat_kernel_radial(model: &CurvatureModel, t: f64, rho: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    let d = model.dim as f64;
    match model.kind {
        ModelKind::Flat => Ok((2.0 * PI * t).powf(-d / 2.0) * (-rho * rho / (2.0 * t)).exp()),
        ModelKind::Hyperbolic if model.dim == 3 => {
            let a = model.kappa.sqrt() * rho;
            let ratio = if a < 1e-8 { 1.0 } else { a / a.sinh() };
            Ok((2.0 * PI * t).powf(-1.5) * ratio * (-model.kappa * t / 2.0 - rho * rho / (2.0 * t)).exp())
        }
        ModelKind::Hyperbolic => Err(Error::InvalidModel(format!(
            "no closed-form hyperbolic kernel for d = {}; use the radial solver",
            model.dim
        ))),
    }
}

/// `p_t(x, y)` for two points of the model.
pub fn heat_kernel_exact(
    model: &CurvatureModel,
    t: f64,
    x: &nalgebra::DVector<f64>,
    y: &nalgebra::DVector<f64>,
) -> Result<f64> {
    heat_kernel_radial(model, t, model.distance(x, y))
}

/// Area of the unit sphere `S^{d-1}`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => sphere_area(d - 2) * 2.0 * PI / (d as f64 - 2.0),
    }
}

/// Radial volume density `A(r)` of geodesic polar coordinates.
fn radial_density(model: &CurvatureModel, r: f64) -> f64 {
    let d = model.dim as i32;
    match model.kind {
        ModelKind::Flat => r.powi(d - 1),
        ModelKind::Hyperbolic => {
            let k = model.kappa.sqrt();
            ((k * r).sinh() / k).powi(d - 1)
        }
    }
}

/// Grid settings for [`radial_heat_solve`].
#[derive(Debug, Clone, Copy)]
pub struct RadialGrid {
    pub rho_max: f64,
    pub cells: usize,
    /// Start time of the evolution (the kernel is approximated by a Gaussian there).
    pub t0: f64,
    pub dt: f64,
}

impl Default for RadialGrid {
    fn default() -> Self {
        Self { rho_max: 30.0, cells: 10_000, t0: 0.02, dt: 2e-4 }
    }
}

/// Cell-centred radial profile of a heat kernel.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub h: f64,
    pub values: Vec<f64>,
}

impl RadialProfile {
    /// Linear interpolation between cell centres (constant inside the first half cell).
    pub fn at(&self, rho: f64) -> f64 {
        let x = rho / self.h - 0.5;
        if x <= 0.0 {
            return self.values[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Solves `u_t = ½ A^{-1}(A u_ρ)_ρ` by finite volumes and Crank–Nicolson,
/// starting at `grid.t0` from a unit-mass Gaussian, up to time `t`.
pub fn radial_heat_solve(model: &CurvatureModel, t: f64, grid: RadialGrid) -> Result<RadialProfile> {
    if !(t > grid.t0 && grid.t0 > 0.0 && grid.dt > 0.0 && grid.cells >= 10 && grid.rho_max > 0.0) {
        return Err(Error::InvalidArgument("inconsistent radial solver settings".into()));
    }
    let m = grid.cells;
    let h = grid.rho_max / m as f64;
    // Cell volumes by Simpson's rule, face densities at the cell boundaries.
    let vol: Vec<f64> = (0..m)
        .map(|i| {
            let a = i as f64 * h;
            let b = a + h;
            h / 6.0 * (radial_density(model, a) + 4.0 * radial_density(model, 0.5 * (a + b)) + radial_density(model, b))
        })
        .collect();
    let face: Vec<f64> = (0..=m).map(|i| radial_density(model, i as f64 * h)).collect();
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut diag = vec![0.0; m];
    for i in 0..m {
        let left = if i == 0 { 0.0 } else { 0.5 * face[i] / (h * vol[i]) };
        let right = if i + 1 == m { 0.0 } else { 0.5 * face[i + 1] / (h * vol[i]) };
        lower[i] = left;
        upper[i] = right;
        diag[i] = -(left + right);
    }
    let d = model.dim as f64;
    let t0 = grid.t0;
    let mut u: Vec<f64> = (0..m)
        .map(|i| {
            let r = (i as f64 + 0.5) * h;
            (2.0 * PI * t0).powf(-d / 2.0) * (-r * r / (2.0 * t0)).exp()
        })
        .collect();
    let area = sphere_area(model.dim);
    let mass: f64 = u.iter().zip(&vol).map(|(a, b)| a * b).sum::<f64>() * area;
    u.iter_mut().for_each(|v| *v /= mass);

    let steps = ((t - t0) / grid.dt).ceil() as usize;
    let dt = (t - t0) / steps as f64;
    let half = 0.5 * dt;
    // Implicit side (I - dt/2 L) as a tridiagonal system.
    let a_lo: Vec<f64> = lower.iter().map(|l| -half * l).collect();
    let a_di: Vec<f64> = diag.iter().map(|x| 1.0 - half * x).collect();
    let a_up: Vec<f64> = upper.iter().map(|x| -half * x).collect();
    let mut rhs = vec![0.0; m];
    let mut cp = vec![0.0; m];
    for _ in 0..steps {
        for i in 0..m {
            let mut r = (1.0 + half * diag[i]) * u[i];
            if i > 0 {
                r += half * lower[i] * u[i - 1];
            }
            if i + 1 < m {
                r += half * upper[i] * u[i + 1];
            }
            rhs[i] = r;
        }
        // Thomas algorithm.
        cp[0] = a_up[0] / a_di[0];
        rhs[0] /= a_di[0];
        for i in 1..m {
            let denom = a_di[i] - a_lo[i] * cp[i - 1];
            cp[i] = a_up[i] / denom;
            rhs[i] = (rhs[i] - a_lo[i] * rhs[i - 1]) / denom;
        }
        u[m - 1] = rhs[m - 1];
        for i in (0..m - 1).rev() {
            u[i] = rhs[i] - cp[i] * u[i + 1];
        }
    }
    Ok(RadialProfile { h, values: u })
}

/// Kernel value from the radial solver, extrapolated in the start time
/// (`2 u(t0/2) - u(t0)`) to cancel the leading start-up error.
pub fn radial_heat_oracle(model: &CurvatureModel, t: f64, rho: f64, grid: RadialGrid) -> Result<f64> {
    let coarse = radial_heat_solve(model, t, grid)?.at(rho);
    let fine = radial_heat_solve(model, t, RadialGrid { t0: grid.t0 / 2.0, ..grid })?.at(rho);
    Ok(2.0 * fine - coarse)
}

/// Reference value with its quadrature error estimate.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// `∫ g(d(o,y)) p_{1/2}(o,y) p_{1/2}(y,x) dy` for `d(o,x) = rho`, reduced to a
/// two-dimensional integral over (distance from `o`, angle to the `o→x` axis).
///
/// Supported for `d ∈ {2, 3}` wherever [`heat_kernel_radial`] has a closed form.
pub fn pinned_fdd_oracle(model: &CurvatureModel, rho: f64, g: &dyn Fn(f64) -> f64) -> Result<QuadratureValue> {
    if !(model.dim == 2 || model.dim == 3) {
        return Err(Error::InvalidModel("midpoint oracle supports d = 2 or 3".into()));
    }
    heat_kernel_radial(model, 0.5, 0.0)?;
    let coarse = fdd_quadrature(model, rho, g, 24, 16)?;
    let fine = fdd_quadrature(model, rho, g, 48, 24)?;
    let err = (fine - coarse).abs();
    if err > 1e-4 || !fine.is_finite() {
        return Err(Error::Quadrature(format!("midpoint integral changed by {err:.3e} under refinement")));
    }
    Ok(QuadratureValue { value: fine, error_estimate: err })
}

fn fdd_quadrature(
    model: &CurvatureModel,
    rho: f64,
    g: &dyn Fn(f64) -> f64,
    panels: usize,
    order: usize,
) -> Result<f64> {
    let t = 0.5;
    let r_max = rho + 14.0;
    let k = model.kappa.sqrt();
    let dist = |r: f64, cos_theta: f64| -> f64 {
        match model.kind {
            ModelKind::Flat => (r * r + rho * rho - 2.0 * r * rho * cos_theta).max(0.0).sqrt(),
            ModelKind::Hyperbolic => {
                let c = (k * r).cosh() * (k * rho).cosh() - (k * r).sinh() * (k * rho).sinh() * cos_theta;
                c.max(1.0).acosh() / k
            }
        }
    };
    let kern = |r: f64| heat_kernel_radial(model, t, r).unwrap_or(f64::NAN);
    let d = model.dim;
    let value = composite(
        |r| {
            let radial = radial_density(model, r) * g(r) * kern(r);
            if radial == 0.0 {
                return 0.0;
            }
            let angular = if d == 3 {
                // dθ sinθ = du with u = cos θ over [-1, 1], times 2π.
                2.0 * PI * composite(|u| kern(dist(r, u)), -1.0, 1.0, panels / 2, order)
            } else {
                2.0 * composite(|th| kern(dist(r, th.cos())), 0.0, PI, panels / 2, order)
            };
            radial * angular
        },
        0.0,
        r_max,
        panels,
        order,
    );
    if !value.is_finite() {
        return Err(Error::Quadrature("non-finite midpoint integral".into()));
    }
    Ok(value)
}
