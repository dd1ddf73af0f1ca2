//! Damped transport and the associated Gram operator on the limiting path space.
//!
//! With the Ricci operator acting as the scalar `c = κ(d-1)` in a parallel frame,
//! the damped transport is the deterministic matrix `T_s = e^{cs/2} I`. It is the
//! limit of the Jacobi products `f_{P,i}(s_j) → T_{s_j} T_{s_i}^{-1}`, whose
//! singular values are all at least one, hence the growing exponential.
//! Everything below is evaluated exactly from scalar formulas.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::CurvatureModel;

/// `(1 - e^{-x})/x`, continuous at zero.
fn expm1_ratio(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Damped objects on a time grid in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct DampedTransport {
    pub dim: usize,
    /// Ricci constant `c = κ(d-1)`.
    pub ricci: f64,
    pub grid: Vec<f64>,
    pub t: Vec<DMatrix<f64>>,
    pub t_inv: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub ctilde: DMatrix<f64>,
}

impl DampedTransport {
    /// Builds the transport on an increasing grid starting at 0.
    pub fn new(model: &CurvatureModel, grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid must be increasing and start at 0".into()));
        }
        let d = model.dim;
        let c = model.ricci_constant();
        let eye = DMatrix::<f64>::identity(d, d);
        let t = grid.iter().map(|&s| &eye * t_scalar(c, s)).collect();
        let t_inv = grid.iter().map(|&s| &eye * (1.0 / t_scalar(c, s))).collect();
        let k = grid.iter().map(|&s| &eye * k_scalar(c, s)).collect();
        let ctilde = &eye * ctilde_scalar(c);
        Ok(Self { dim: d, ricci: c, grid, t, t_inv, k, ctilde })
    }

    /// Grid made of the knots `i/n` refined by `refine` points per interval.
    pub fn on_partition(model: &CurvatureModel, n: usize, refine: usize) -> Result<Self> {
        if n == 0 || refine == 0 {
            return Err(Error::InvalidArgument("n and refine must be positive".into()));
        }
        let m = n * refine;
        Self::new(model, (0..=m).map(|j| j as f64 / m as f64).collect())
    }

    /// `T_s` at any time.
    pub fn t_at(&self, s: f64) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * t_scalar(self.ricci, s)
    }

    /// `T_s^{-1}` at any time.
    pub fn t_inv_at(&self, s: f64) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * (1.0 / t_scalar(self.ricci, s))
    }

    /// `K̃_s = T_s [∫_0^s T_r^{-1} T_r^{-*} dr] T_1^*` at any time.
    pub fn k_at(&self, s: f64) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * k_scalar(self.ricci, s)
    }

    /// `J̃_s = K̃_s K̃_1^{-1} H`.
    pub fn j_at(&self, h: &DVector<f64>, s: f64) -> DVector<f64> {
        h * (k_scalar(self.ricci, s) / k_scalar(self.ricci, 1.0))
    }

    /// `J̃` on every grid point.
    pub fn damped_j(&self, h: &DVector<f64>) -> Vec<DVector<f64>> {
        self.grid.iter().map(|&s| self.j_at(h, s)).collect()
    }

    /// `C̃ = [∫_0^1 (T_r^* T_r)^{-1} dr]^{-1} T_1^{-1}`.
    pub fn ctilde(&self) -> &DMatrix<f64> {
        &self.ctilde
    }

    /// `Z_α` on the grid: the solution of `Z′ = ½ Ric Z + (T^{-1})^* e_α`, `Z(0) = 0`.
    pub fn z_alpha(&self, alpha: usize) -> Result<Vec<DVector<f64>>> {
        if alpha >= self.dim {
            return Err(Error::InvalidArgument(format!("alpha must be below d = {}, got {alpha}", self.dim)));
        }
        let c = self.ricci;
        Ok(self
            .grid
            .iter()
            .map(|&s| {
                let mut e = DVector::zeros(self.dim);
                e[alpha] = z_scalar(c, s);
                e
            })
            .collect())
    }
}

/// `e^{cs/2}`.
pub fn t_scalar(c: f64, s: f64) -> f64 {
    (0.5 * c * s).exp()
}

/// `e^{c(s+1)/2} ∫_0^s e^{-cr} dr`.
pub fn k_scalar(c: f64, s: f64) -> f64 {
    (0.5 * c * (s + 1.0)).exp() * s * expm1_ratio(c * s)
}

/// `[∫_0^1 e^{-cr} dr]^{-1} e^{-c/2}`.
pub fn ctilde_scalar(c: f64) -> f64 {
    (-0.5 * c).exp() / expm1_ratio(c)
}

/// `e^{cs/2} ∫_0^s e^{-cr} dr`.
pub fn z_scalar(c: f64, s: f64) -> f64 {
    (0.5 * c * s).exp() * s * expm1_ratio(c * s)
}
