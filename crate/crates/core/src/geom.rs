//! Model spaces of constant non-positive curvature.
//!
//! Flat space is `R^d` with the Euclidean metric. Hyperbolic space of sectional
//! curvature `-κ` is the upper sheet of the hyperboloid `⟨x,x⟩_M = -1/κ` in
//! Minkowski space `R^{d,1}`, with the time-like coordinate stored last.
//! Tangent vectors are handled in frame coordinates: a [`FramePoint`] carries
//! an orthonormal frame whose columns map `R^d` into the ambient tangent space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when renormalizing points and frames after each step.
pub const DRIFT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Flat,
    Hyperbolic,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flat" | "euclidean" => Ok(ModelKind::Flat),
            "hyperbolic" | "hyp" => Ok(ModelKind::Hyperbolic),
            other => Err(Error::InvalidModel(format!("unknown model kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Flat => write!(f, "flat"),
            ModelKind::Hyperbolic => write!(f, "hyperbolic"),
        }
    }
}

/// A constant-curvature space: flat, or hyperbolic with sectional curvature `-kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub kappa: f64,
}

/// A point together with an orthonormal tangent frame (ambient columns).
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint {
    pub point: DVector<f64>,
    pub frame: DMatrix<f64>,
}

/// `sinh(x)/x`, continuous at zero.
pub fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// `(cosh(x) - 1)/x²`, continuous at zero.
pub fn coshm(x: f64) -> f64 {
    let h = sinhc(0.5 * x);
    0.5 * h * h
}

impl CurvatureModel {
    pub fn new(kind: ModelKind, dim: usize, kappa: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        match kind {
            ModelKind::Flat => {
                if kappa != 0.0 {
                    return Err(Error::InvalidModel(format!("flat model requires kappa = 0, got {kappa}")));
                }
            }
            ModelKind::Hyperbolic => {
                if !(kappa.is_finite() && kappa > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "hyperbolic model requires finite kappa > 0, got {kappa}"
                    )));
                }
            }
        }
        Ok(Self { kind, dim, kappa })
    }

    pub fn flat(dim: usize) -> Self {
        Self::new(ModelKind::Flat, dim, 0.0).expect("valid flat model")
    }

    pub fn hyperbolic(dim: usize, kappa: f64) -> Result<Self> {
        Self::new(ModelKind::Hyperbolic, dim, kappa)
    }

    /// Number of ambient coordinates of a point.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ModelKind::Flat => self.dim,
            ModelKind::Hyperbolic => self.dim + 1,
        }
    }

    /// Ambient bilinear form: Euclidean for flat, Minkowski for hyperbolic.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut s = a.dot(b);
        if self.kind == ModelKind::Hyperbolic {
            let t = self.dim;
            s -= 2.0 * a[t] * b[t];
        }
        s
    }

    /// Base point `o` with the standard frame.
    pub fn origin(&self) -> FramePoint {
        let m = self.ambient_dim();
        let mut point = DVector::zeros(m);
        let mut frame = DMatrix::zeros(m, self.dim);
        for i in 0..self.dim {
            frame[(i, i)] = 1.0;
        }
        if self.kind == ModelKind::Hyperbolic {
            point[self.dim] = 1.0 / self.kappa.sqrt();
        }
        FramePoint { point, frame }
    }

    /// Point at geodesic distance `dist` from `o` in the frame direction `direction`.
    pub fn point_from_polar(&self, direction: &DVector<f64>, dist: f64) -> Result<DVector<f64>> {
        let norm = direction.norm();
        if direction.len() != self.dim || !(norm > 0.0) || !dist.is_finite() {
            return Err(Error::InvalidArgument(
                "direction must be a nonzero vector of length d and distance finite".into(),
            ));
        }
        Ok(self.exp_map(&self.origin(), &(direction * (dist / norm))).point)
    }

    /// Embeds frame coordinates at `o` (a point given in the standard chart).
    pub fn point_from_coords(&self, coords: &DVector<f64>) -> Result<DVector<f64>> {
        if coords.len() != self.dim {
            return Err(Error::InvalidArgument(format!("expected {} coordinates, got {}", self.dim, coords.len())));
        }
        Ok(self.exp_map(&self.origin(), coords).point)
    }

    /// Frame-coordinate curvature `R(a,b)c = -κ(⟨b,c⟩a - ⟨a,c⟩b)`.
    pub fn curvature_apply(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        (a * b.dot(c) - b * a.dot(c)) * (-self.kappa)
    }

    /// Matrix of `v ↦ R(ξ,v)ξ = κ(|ξ|²v - ⟨v,ξ⟩ξ)`.
    pub fn jacobi_operator(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        (DMatrix::identity(d, d) * xi.norm_squared() - xi * xi.transpose()) * self.kappa
    }

    /// `Ric(v) = Σ_i R(e_i, v) e_i = κ(d-1) v`.
    pub fn ricci_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v * self.ricci_constant()
    }

    /// The scalar `κ(d-1)` by which the Ricci operator acts.
    pub fn ricci_constant(&self) -> f64 {
        self.kappa * (self.dim as f64 - 1.0)
    }

    /// Ambient tangent vector `u v` for frame coordinates `v`.
    pub fn from_frame(&self, fp: &FramePoint, v: &DVector<f64>) -> DVector<f64> {
        &fp.frame * v
    }

    /// Frame coordinates `u^{-1} w` of an ambient tangent vector `w`.
    pub fn to_frame(&self, fp: &FramePoint, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = self.inner(&fp.frame.column(i).into_owned(), w);
        }
        out
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project_tangent(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            ModelKind::Flat => w.clone(),
            ModelKind::Hyperbolic => w + x * (self.kappa * self.inner(x, w)),
        }
    }

    /// Geodesic endpoint `exp_x(u v)` with the frame parallel-transported along the way.
    pub fn exp_map(&self, fp: &FramePoint, v: &DVector<f64>) -> FramePoint {
        match self.kind {
            ModelKind::Flat => FramePoint { point: &fp.point + &fp.frame * v, frame: fp.frame.clone() },
            ModelKind::Hyperbolic => {
                let t = v.norm();
                let theta = self.kappa.sqrt() * t;
                let w = &fp.frame * v;
                let point = &fp.point * theta.cosh() + &w * sinhc(theta);
                // Transport: e ↦ e + ⟨e,w⟩ (κ sinhc θ · x + κ coshm θ · w).
                let dir = &fp.point * (self.kappa * sinhc(theta)) + &w * (self.kappa * coshm(theta));
                let frame = &fp.frame + dir * v.transpose();
                let mut out = FramePoint { point, frame };
                self.renormalize(&mut out);
                out
            }
        }
    }

    /// Frame coordinates of `log_x(y)`.
    pub fn log_map(&self, fp: &FramePoint, y: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            ModelKind::Flat => fp.frame.transpose() * (y - &fp.point),
            ModelKind::Hyperbolic => {
                let (w, wnorm, dist) = self.log_parts(&fp.point, y);
                if wnorm == 0.0 {
                    return DVector::zeros(self.dim);
                }
                self.to_frame(fp, &w) * (dist / wnorm)
            }
        }
    }

    /// Tangent direction `y - αx` (unnormalized), its norm, and the distance.
    fn log_parts(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, f64, f64) {
        let k = self.kappa;
        let alpha = (-k * self.inner(x, y)).max(1.0);
        let w = y - x * alpha;
        let wnorm = self.inner(&w, &w).max(0.0).sqrt();
        let dist = if alpha < 2.0 { (k.sqrt() * wnorm).asinh() / k.sqrt() } else { alpha.acosh() / k.sqrt() };
        (w, wnorm, dist)
    }

    /// Geodesic distance between two points.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match self.kind {
            ModelKind::Flat => (x - y).norm(),
            ModelKind::Hyperbolic => self.log_parts(x, y).2,
        }
    }

    /// Pulls the point back onto the manifold and re-orthonormalizes the frame
    /// (Gram–Schmidt in the induced tangent metric).
    pub fn renormalize(&self, fp: &mut FramePoint) {
        if self.kind == ModelKind::Flat {
            return;
        }
        let k = self.kappa;
        let q = -k * self.inner(&fp.point, &fp.point);
        if q > 0.0 {
            fp.point /= q.sqrt();
        }
        let t = self.dim;
        if fp.point[t] < 0.0 {
            fp.point = -fp.point.clone();
        }
        for j in 0..self.dim {
            let mut c = fp.frame.column(j).into_owned();
            c = self.project_tangent(&fp.point, &c);
            for i in 0..j {
                let e = fp.frame.column(i).into_owned();
                let p = self.inner(&c, &e);
                c -= e * p;
            }
            let nrm = self.inner(&c, &c).max(0.0).sqrt();
            if nrm > 0.0 {
                c /= nrm;
            }
            fp.frame.set_column(j, &c);
        }
    }

    /// Largest violation of the manifold constraint and frame orthonormality/tangency.
    ///
    /// Residuals are relative to `1 + κ|y|²`, the size of the terms that cancel.
    pub fn frame_residual(&self, fp: &FramePoint) -> f64 {
        let scale = match self.kind {
            ModelKind::Flat => 1.0,
            ModelKind::Hyperbolic => 1.0 + self.kappa * fp.point.norm_squared(),
        };
        let mut worst: f64 = 0.0;
        if self.kind == ModelKind::Hyperbolic {
            let q = self.inner(&fp.point, &fp.point) + 1.0 / self.kappa;
            worst = worst.max((q * self.kappa).abs());
            if fp.point[self.dim] <= 0.0 {
                worst = f64::INFINITY;
            }
        }
        for i in 0..self.dim {
            let ei = fp.frame.column(i).into_owned();
            if self.kind == ModelKind::Hyperbolic {
                worst = worst.max(self.inner(&fp.point, &ei).abs() * self.kappa.sqrt());
            }
            for j in 0..self.dim {
                let ej = fp.frame.column(j).into_owned();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(&ei, &ej) - target).abs());
            }
        }
        worst / scale
    }

    /// Checks that `fp` is a valid frame point to within [`DRIFT_TOL`].
    pub fn validate(&self, fp: &FramePoint) -> Result<()> {
        if fp.point.len() != self.ambient_dim() || fp.frame.shape() != (self.ambient_dim(), self.dim) {
            return Err(Error::InvalidArgument("frame point has wrong shape".into()));
        }
        let r = self.frame_residual(fp);
        if r > DRIFT_TOL {
            return Err(Error::InvalidArgument(format!("frame point off the manifold (residual {r:.3e})")));
        }
        Ok(())
    }

    /// Whether `y` lies on the manifold to the given tolerance.
    pub fn on_manifold(&self, y: &DVector<f64>, tol: f64) -> bool {
        if y.len() != self.ambient_dim() || y.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self.kind {
            ModelKind::Flat => true,
            ModelKind::Hyperbolic => {
                y[self.dim] > 0.0
                    && (self.kappa * self.inner(y, y) + 1.0).abs() <= tol * (1.0 + y.norm_squared() * self.kappa)
            }
        }
    }

    /// Frame point at `y` whose frame is the transport of the frame at `o` along the geodesic.
    pub fn frame_at(&self, y: &DVector<f64>) -> FramePoint {
        let o = self.origin();
        let v = self.log_map(&o, y);
        let mut fp = self.exp_map(&o, &v);
        fp.point = y.clone();
        self.renormalize(&mut fp);
        fp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_exp_is_translation() {
        let m = CurvatureModel::flat(2);
        let fp = m.exp_map(&m.origin(), &DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(fp.point, DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(fp.frame, DMatrix::identity(2, 2));
    }

    #[test]
    fn hyperbolic_exp_unit_step() {
        let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
        let fp = m.exp_map(&m.origin(), &DVector::from_vec(vec![1.0, 0.0]));
        assert_relative_eq!(fp.point[0], 1f64.sinh(), epsilon = 1e-14);
        assert_relative_eq!(fp.point[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(fp.point[2], 1f64.cosh(), epsilon = 1e-14);
        let v = m.log_map(&m.origin(), &fp.point);
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(m.distance(&m.origin().point, &fp.point), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_step_is_identity() {
        let m = CurvatureModel::hyperbolic(3, 2.0).unwrap();
        let o = m.origin();
        let fp = m.exp_map(&o, &DVector::zeros(3));
        assert_relative_eq!((fp.point - &o.point).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((fp.frame - &o.frame).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn curvature_examples() {
        let m = CurvatureModel::hyperbolic(2, 1.0).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!((m.jacobi_operator(&e1) * &e2 - &e2).norm(), 0.0);
        assert_relative_eq!(m.curvature_apply(&e1, &e2, &e1), e2.clone());
        assert_relative_eq!(m.ricci_apply(&e2), e2);
        let f = CurvatureModel::flat(3);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(f.jacobi_operator(&x).norm(), 0.0);
        assert_eq!(f.ricci_apply(&x).norm(), 0.0);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(CurvatureModel::new(ModelKind::Flat, 2, 1.0).is_err());
        assert!(CurvatureModel::new(ModelKind::Hyperbolic, 2, 0.0).is_err());
        assert!(CurvatureModel::new(ModelKind::Hyperbolic, 0, 1.0).is_err());
    }

    #[test]
    fn small_helpers_are_continuous() {
        for &x in &[0.0, 1e-9, 9.9e-5, 1.01e-4, 9.9e-4, 1.01e-3, 0.5, 3.0] {
            let s = if x == 0.0 { 1.0 } else { f64::sinh(x) / x };
            assert_relative_eq!(sinhc(x), s, max_relative = 1e-12);
            if x > 1e-2 {
                assert_relative_eq!(coshm(x), (x.cosh() - 1.0) / (x * x), max_relative = 1e-10);
            }
        }
    }
}
