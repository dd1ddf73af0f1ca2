//! Piecewise-geodesic approximations to pinned Brownian motion on flat and
//! hyperbolic spaces: Jacobi matrix families, rolling maps, pinned importance
//! weights, damped transports, and convergence diagnostics.

pub mod cli;
pub mod damped;
pub mod diagnostics;
pub mod error;
pub mod geom;
pub mod jacobi;
pub mod linalg;
pub mod measures;
pub mod paths;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};
pub use geom::{CurvatureModel, FramePoint, ModelKind};
pub use jacobi::{build_family, CsSolver, JacobiFamily};
pub use paths::{BrokenGeodesic, Partition};
