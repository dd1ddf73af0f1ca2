//! Matrix solutions of the broken Jacobi equation along piecewise geodesics.
//!
//! On interval `i` the path has constant frame velocity `ξ_i = n Δ_iβ`, and the
//! curvature operator `A_ξ = R(ξ,·)ξ` is constant in the parallel frame. The
//! cosine/sine solutions `C_i`, `S_i` of `Y″ = A_ξ Y` are therefore available in
//! closed form; a fixed-step RK4 integrator is kept behind the same interface
//! for cross-validation.
//!
//! `f_{P,i}(s_j) = C_j ⋯ C_{i+1} S_i / Δ` for `j ≥ i` (zero before `s_{i-1}`,
//! `f_{P,0} ≡ I`), and `K_P(s_j) = (1/n) Σ_{i≤j} f_{P,i}(s_j) f_{P,i}(1)ᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{sinhc, CurvatureModel, FramePoint};
use crate::linalg::checked_inverse;
use crate::paths::{BrokenGeodesic, Partition};

/// How the per-interval cosine/sine matrices are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsSolver {
    ClosedForm,
    Rk4 { substeps: usize },
}

impl Default for CsSolver {
    fn default() -> Self {
        CsSolver::ClosedForm
    }
}

/// Cosine/sine solutions of `Y″ = A_ξ Y` on `[0, h]`.
#[derive(Debug, Clone)]
pub struct CsInterval {
    xi: DVector<f64>,
    kappa: f64,
    operator: DMatrix<f64>,
    h: f64,
    solver: CsSolver,
}

/// Validates inputs and returns the interval solver.
pub fn solve_cs_interval(model: &CurvatureModel, xi: &DVector<f64>, h: f64, solver: CsSolver) -> Result<CsInterval> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("interval length must be positive, got {h}")));
    }
    if xi.len() != model.dim || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("velocity must be a finite vector of length d".into()));
    }
    if let CsSolver::Rk4 { substeps } = solver {
        if substeps == 0 {
            return Err(Error::InvalidArgument("RK4 needs at least one substep".into()));
        }
    }
    Ok(CsInterval { xi: xi.clone(), kappa: model.kappa, operator: model.jacobi_operator(xi), h, solver })
}

impl CsInterval {
    pub fn length(&self) -> f64 {
        self.h
    }

    pub fn velocity(&self) -> &DVector<f64> {
        &self.xi
    }

    /// `(C(s), S(s))` for `0 ≤ s ≤ h`.
    pub fn eval(&self, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.solver {
            CsSolver::ClosedForm => self.closed_form(s),
            CsSolver::Rk4 { substeps } => self.rk4(s, substeps),
        }
    }

    /// `(C(s), S(s)/s)`; the second factor is `I` at `s = 0`.
    pub fn eval_scaled(&self, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.solver {
            CsSolver::ClosedForm => {
                let (c, sinh_ratio, proj, d) = self.spectral(s);
                let eye = DMatrix::<f64>::identity(d, d);
                let perp = &eye - &proj;
                (&proj + &perp * c, &proj + &perp * sinh_ratio)
            }
            CsSolver::Rk4 { substeps } => {
                let (c, sm) = self.rk4(s, substeps);
                if s == 0.0 {
                    let d = c.nrows();
                    (c, DMatrix::identity(d, d))
                } else {
                    (c, sm / s)
                }
            }
        }
    }

    /// Returns `cosh(ωs)`, `sinh(ωs)/(ωs)`, the projector onto `ξ`, and `d`.
    fn spectral(&self, s: f64) -> (f64, f64, DMatrix<f64>, usize) {
        let d = self.xi.len();
        let norm = self.xi.norm();
        let proj = if norm > 0.0 {
            let u = &self.xi / norm;
            &u * u.transpose()
        } else {
            DMatrix::zeros(d, d)
        };
        let x = self.kappa.sqrt() * norm * s;
        (x.cosh(), sinhc(x), proj, d)
    }

    fn closed_form(&self, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (c, sinh_ratio, proj, d) = self.spectral(s);
        let eye = DMatrix::<f64>::identity(d, d);
        let perp = &eye - &proj;
        let cm = &proj + &perp * c;
        let sm = (&proj + &perp * sinh_ratio) * s;
        (cm, sm)
    }

    fn rk4(&self, s: f64, substeps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.xi.len();
        let eye = DMatrix::<f64>::identity(d, d);
        let zero = DMatrix::<f64>::zeros(d, d);
        let c = rk4_second_order(&self.operator, eye.clone(), zero.clone(), s, substeps);
        let sm = rk4_second_order(&self.operator, zero, eye, s, substeps);
        (c, sm)
    }
}

/// Integrates `Y″ = A Y` from `(Y, Y′) = (y0, v0)` over `[0, s]` with fixed RK4 steps.
pub fn rk4_second_order(a: &DMatrix<f64>, y0: DMatrix<f64>, v0: DMatrix<f64>, s: f64, steps: usize) -> DMatrix<f64> {
    let mut y = y0;
    let mut v = v0;
    if s == 0.0 {
        return y;
    }
    let h = s / steps as f64;
    for _ in 0..steps {
        let k1y = v.clone();
        let k1v = a * &y;
        let y2 = &y + &k1y * (0.5 * h);
        let v2 = &v + &k1v * (0.5 * h);
        let k2y = v2.clone();
        let k2v = a * &y2;
        let y3 = &y + &k2y * (0.5 * h);
        let v3 = &v + &k2v * (0.5 * h);
        let k3y = v3.clone();
        let k3v = a * &y3;
        let y4 = &y + &k3y * h;
        let v4 = &v + &k3v * h;
        let k4y = v4;
        let k4v = a * &y4;
        y += (k1y + &k2y * 2.0 + &k3y * 2.0 + k4y) * (h / 6.0);
        v += (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (h / 6.0);
    }
    y
}

/// Right-endpoint matrices `C_i(Δ)` and `S_i(Δ)/Δ` for each segment of a path.
pub fn interval_matrices(
    model: &CurvatureModel,
    partition: &Partition,
    increments: &[DVector<f64>],
    solver: CsSolver,
) -> Result<(Vec<CsInterval>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let n = partition.n() as f64;
    let h = partition.delta();
    let mut ivs = Vec::with_capacity(increments.len());
    let mut cs = Vec::with_capacity(increments.len());
    let mut ss = Vec::with_capacity(increments.len());
    for inc in increments {
        let iv = solve_cs_interval(model, &(inc * n), h, solver)?;
        let (c, s) = iv.eval_scaled(h);
        ivs.push(iv);
        cs.push(c);
        ss.push(s);
    }
    Ok((ivs, cs, ss))
}

/// `f_{P,i}(s_m)` for `i = 1..=m`, where `m` is the number of segments.
///
/// Only right-endpoint values are formed (backward products), which is all the
/// pinned weights need.
pub fn terminal_f(c: &[DMatrix<f64>], s_over: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let m = c.len();
    let d = if m > 0 { c[0].nrows() } else { 0 };
    let mut out = vec![DMatrix::zeros(d, d); m];
    let mut g = DMatrix::<f64>::identity(d, d);
    for i in (1..=m).rev() {
        out[i - 1] = &g * &s_over[i - 1];
        g = &g * &c[i - 1];
    }
    out
}

/// Jacobi matrices along a full path (all `n` segments present).
#[derive(Debug, Clone)]
pub struct JacobiFamily {
    pub partition: Partition,
    pub dim: usize,
    intervals: Vec<CsInterval>,
    /// `C_i(Δ)`, index `i-1`.
    pub c: Vec<DMatrix<f64>>,
    /// `S_i(Δ)/Δ`, index `i-1`.
    pub s_over_delta: Vec<DMatrix<f64>>,
    /// `f[i][j] = f_{P,i}(s_j)` for `0 ≤ i, j ≤ n`.
    pub f: Vec<Vec<DMatrix<f64>>>,
    /// `K_P(s_j)` for `0 ≤ j ≤ n`.
    pub k: Vec<DMatrix<f64>>,
}

/// Builds the family with the closed-form solver.
pub fn build_family(model: &CurvatureModel, path: &BrokenGeodesic) -> Result<JacobiFamily> {
    build_family_with(model, path, CsSolver::ClosedForm)
}

pub fn build_family_with(model: &CurvatureModel, path: &BrokenGeodesic, solver: CsSolver) -> Result<JacobiFamily> {
    let partition = path.partition;
    let n = partition.n();
    if path.segments() != n {
        return Err(Error::InvalidArgument(format!(
            "family needs a full path with {n} segments, got {}",
            path.segments()
        )));
    }
    let d = model.dim;
    let (intervals, c, s_over_delta) = interval_matrices(model, &partition, &path.increments, solver)?;
    let zero = DMatrix::<f64>::zeros(d, d);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut f = vec![vec![zero.clone(); n + 1]; n + 1];
    f[0] = vec![eye; n + 1];
    for i in 1..=n {
        f[i][i] = s_over_delta[i - 1].clone();
        for j in (i + 1)..=n {
            f[i][j] = &c[j - 1] * &f[i][j - 1];
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut k = vec![zero; n + 1];
    for j in 1..=n {
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for i in 1..=j {
            acc += &f[i][j] * f[i][n].transpose();
        }
        k[j] = acc * inv_n;
    }
    Ok(JacobiFamily { partition, dim: d, intervals, c, s_over_delta, f, k })
}

impl JacobiFamily {
    pub fn n(&self) -> usize {
        self.partition.n()
    }

    /// `K_P(1)`.
    pub fn k_end(&self) -> &DMatrix<f64> {
        &self.k[self.n()]
    }

    /// `f_{P,i}(s)` at an arbitrary time.
    pub fn f_at(&self, i: usize, s: f64) -> DMatrix<f64> {
        let n = self.n();
        let d = self.dim;
        if i == 0 {
            return DMatrix::identity(d, d);
        }
        let delta = self.partition.delta();
        let s = s.clamp(0.0, 1.0);
        if s <= self.partition.knot(i - 1) {
            return DMatrix::zeros(d, d);
        }
        // Interval l with s ∈ (s_{l-1}, s_l].
        let l = ((s * n as f64).ceil() as usize).clamp(1, n);
        let local = s - self.partition.knot(l - 1);
        if l == i {
            let (_, sm) = self.intervals[i - 1].eval(local);
            sm / delta
        } else {
            let (cm, _) = self.intervals[l - 1].eval(local);
            cm * &self.f[i][l - 1]
        }
    }

    /// `J(s_j)` at every knot for slopes `k_0..k_{n-1}`.
    pub fn jacobi_from_slopes(&self, slopes: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.n();
        if slopes.len() != n {
            return Err(Error::InvalidArgument(format!("expected {n} slopes, got {}", slopes.len())));
        }
        let inv_n = 1.0 / n as f64;
        let mut out = Vec::with_capacity(n + 1);
        for l in 0..=n {
            let mut acc = DVector::zeros(self.dim);
            for (i, k) in slopes.iter().enumerate().take(l) {
                acc += &self.f[i + 1][l] * k;
            }
            out.push(acc * inv_n);
        }
        Ok(out)
    }

    /// `J(s)` at an arbitrary time.
    pub fn jacobi_at(&self, slopes: &[DVector<f64>], s: f64) -> DVector<f64> {
        let inv_n = 1.0 / self.n() as f64;
        let mut acc = DVector::zeros(self.dim);
        for (i, k) in slopes.iter().enumerate() {
            if s > self.partition.knot(i) {
                acc += self.f_at(i + 1, s) * k;
            }
        }
        acc * inv_n
    }

    /// Inverts [`Self::jacobi_from_slopes`]: knot values (with `J(0) = 0`) to slopes.
    pub fn slopes_from_jacobi(&self, values: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.n();
        if values.len() != n + 1 {
            return Err(Error::InvalidArgument(format!("expected {} knot values", n + 1)));
        }
        let nf = n as f64;
        let mut slopes: Vec<DVector<f64>> = Vec::with_capacity(n);
        for l in 1..=n {
            let mut rest = values[l].clone();
            for (i, k) in slopes.iter().enumerate() {
                rest -= &self.f[i + 1][l] * k / nf;
            }
            let inv = checked_inverse(&self.f[l][l], "slope recovery")?;
            slopes.push(inv * rest * nf);
        }
        Ok(slopes)
    }

    /// Endpoint map `L_1` as a `d × nd` matrix acting on stacked slopes.
    pub fn endpoint_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let d = self.dim;
        let mut m = DMatrix::zeros(d, n * d);
        for i in 0..n {
            m.view_mut((0, i * d), (d, d)).copy_from(&(&self.f[i + 1][n] / n as f64));
        }
        m
    }

    /// Normal Jacobian `J_P = √det K_P(1)`.
    pub fn normal_jacobian(&self) -> f64 {
        self.k_end().determinant().max(0.0).sqrt()
    }

    /// `ρ_P = Π_{i=1}^{n-1} det(S_i(Δ)/Δ)`.
    pub fn rho(&self) -> f64 {
        let n = self.n();
        self.s_over_delta[..n - 1].iter().map(|s| s.determinant()).product()
    }
}

/// `J_P` of a full path computed from right-endpoint values only.
pub fn normal_jacobian_of(model: &CurvatureModel, path: &BrokenGeodesic) -> Result<f64> {
    let (_, c, s) = interval_matrices(model, &path.partition, &path.increments, CsSolver::ClosedForm)?;
    let fs = terminal_f(&c, &s);
    Ok(gram_sqrt_det(&fs, 1.0 / path.partition.n() as f64, model.dim))
}

fn gram_sqrt_det(fs: &[DMatrix<f64>], scale: f64, d: usize) -> f64 {
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for f in fs {
        acc += f * f.transpose();
    }
    (acc * scale).determinant().max(0.0).sqrt()
}

/// Pieces of the volume change of the pinning map `ψ_x`.
#[derive(Debug, Clone)]
pub struct PinningGeometry {
    /// Tip vector `ξ_x = u(τ)^{-1} log_{σ(τ)} x`.
    pub tip: DVector<f64>,
    /// `L_x = C_x(Δ) S_x(Δ)^{-1}` along the tip geodesic.
    pub l_x: DMatrix<f64>,
    /// `F_P = Δ² Σ_{i=1}^{n-1} f_{P,i}(τ) f_{P,i}(τ)ᵀ`.
    pub f_p: DMatrix<f64>,
    /// `V_x = √det(I + L_x F_P L_xᵀ)`.
    pub v_x: f64,
}

/// Volume change `V_x` for a body path defined on `[0, τ]` (n-1 segments).
pub fn volume_change_vx(model: &CurvatureModel, body: &BrokenGeodesic, x: &DVector<f64>) -> Result<PinningGeometry> {
    let (_, c, s) = interval_matrices(model, &body.partition, &body.increments, CsSolver::ClosedForm)?;
    volume_change_from_parts(model, body.partition, body.endpoint(), &c, &s, x)
}

/// As [`volume_change_vx`] with the body's interval matrices supplied.
pub fn volume_change_from_parts(
    model: &CurvatureModel,
    partition: Partition,
    body_end: &FramePoint,
    c: &[DMatrix<f64>],
    s_over: &[DMatrix<f64>],
    x: &DVector<f64>,
) -> Result<PinningGeometry> {
    let n = partition.n();
    if c.len() + 1 != n {
        return Err(Error::InvalidArgument(format!("body must have n-1 = {} segments, got {}", n - 1, c.len())));
    }
    let d = model.dim;
    let tip = model.log_map(body_end, x);
    let delta = partition.delta();
    let iv = solve_cs_interval(model, &(&tip * n as f64), delta, CsSolver::ClosedForm)?;
    let (cx, sx_scaled) = iv.eval_scaled(delta);
    // L_x = C_x (Δ · S_x/Δ)^{-1}
    let l_x = cx * checked_inverse(&sx_scaled, "tip sine matrix")? / delta;
    let fs = terminal_f(c, s_over);
    let mut f_p = DMatrix::<f64>::zeros(d, d);
    for f in &fs {
        f_p += f * f.transpose();
    }
    f_p *= delta * delta;
    let m = DMatrix::<f64>::identity(d, d) + &l_x * &f_p * l_x.transpose();
    let v_x = m.determinant().max(0.0).sqrt();
    Ok(PinningGeometry { tip, l_x, f_p, v_x })
}

/// Upper bound on `V_x` from the curvature bound `N = κ`:
/// `Σ_k C(d,k) n^{k/2} e^{Nk d²(σ(τ),x)/2} Π_j e^{kN d²(σ(s_j),σ(s_{j+1}))}`.
pub fn vx_upper_bound(model: &CurvatureModel, body: &BrokenGeodesic, x: &DVector<f64>) -> f64 {
    let big_n = model.kappa;
    let n = body.partition.n() as f64;
    let d = model.dim;
    let tip2 = model.distance(&body.endpoint().point, x).powi(2);
    let seg2: f64 = body.increments.iter().map(|v| v.norm_squared()).sum();
    (0..=d)
        .map(|k| {
            let kf = k as f64;
            binomial(d, k) * n.powf(kf / 2.0) * (big_n * kf * tip2 / 2.0 + kf * big_n * seg2).exp()
        })
        .sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Both sides of `det(SᵀS) = det(I + A Aᵀ)` for `S = [I; A]`, `A: d × m`.
pub fn det_identity_sides(a: &DMatrix<f64>) -> (f64, f64) {
    let (d, m) = a.shape();
    let mut s = DMatrix::<f64>::zeros(m + d, m);
    s.view_mut((0, 0), (m, m)).fill_with_identity();
    s.view_mut((m, 0), (d, m)).copy_from(a);
    let lhs = (s.transpose() * &s).determinant();
    let rhs = (DMatrix::<f64>::identity(d, d) + a * a.transpose()).determinant();
    (lhs, rhs)
}

/// Whether the determinant identity holds to `1e-10` relative.
pub fn det_identity_check(a: &DMatrix<f64>) -> bool {
    let (lhs, rhs) = det_identity_sides(a);
    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::roll;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn flat_family_is_trivial() {
        let m = CurvatureModel::flat(2);
        let p = Partition::new(4).unwrap();
        let inc = vec![v(&[0.3, -0.1]), v(&[0.2, 0.5]), v(&[-0.4, 0.0]), v(&[0.1, 0.1])];
        let path = roll(&m, &m.origin(), p, inc).unwrap();
        let fam = build_family(&m, &path).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        for i in 1..=4 {
            for j in 0..=4 {
                let expect = if j >= i { eye.clone() } else { DMatrix::zeros(2, 2) };
                assert_relative_eq!(fam.f[i][j], expect, epsilon = 1e-15);
            }
        }
        assert_relative_eq!(fam.k_end(), &eye, epsilon = 1e-15);
        assert_relative_eq!(fam.normal_jacobian(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(fam.rho(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_interval_normal_jacobian() {
        let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
        let p = Partition::new(1).unwrap();
        let path = roll(&m, &m.origin(), p, vec![v(&[1.0, 0.0])]).unwrap();
        let fam = build_family(&m, &path).unwrap();
        assert_relative_eq!(fam.f[1][1][(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(fam.f[1][1][(1, 1)], 1f64.sinh(), epsilon = 1e-14);
        assert_relative_eq!(fam.normal_jacobian(), 1f64.sinh(), epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_interval_inputs() {
        let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
        assert!(solve_cs_interval(&m, &v(&[1.0, 0.0]), 0.0, CsSolver::ClosedForm).is_err());
        assert!(solve_cs_interval(&m, &v(&[f64::NAN, 0.0]), 1.0, CsSolver::ClosedForm).is_err());
        assert!(solve_cs_interval(&m, &v(&[1.0, 0.0]), 1.0, CsSolver::Rk4 { substeps: 0 }).is_err());
    }

    #[test]
    fn det_identity_small_cases() {
        let (l, r) = det_identity_sides(&DMatrix::zeros(2, 6));
        assert_relative_eq!(l, 1.0);
        assert_relative_eq!(r, 1.0);
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -0.5]);
        let (l, r) = det_identity_sides(&a);
        assert_relative_eq!(l, 1.0 + 1.0 + 4.0 + 0.25, epsilon = 1e-12);
        assert_relative_eq!(r, l, epsilon = 1e-12);
    }

    #[test]
    fn flat_vx_is_power_of_n() {
        let m = CurvatureModel::flat(2);
        let p = Partition::new(4).unwrap();
        let inc = vec![v(&[0.3, -0.1]), v(&[0.2, 0.5]), v(&[-0.4, 0.0])];
        let body = roll(&m, &m.origin(), p, inc).unwrap();
        let g = volume_change_vx(&m, &body, &v(&[1.0, -2.0])).unwrap();
        assert_relative_eq!(g.v_x, 4.0, epsilon = 1e-12);
    }
}
