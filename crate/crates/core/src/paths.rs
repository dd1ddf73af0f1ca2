//! Equally spaced partitions, Gaussian increments, and piecewise-geodesic paths.
//!
//! A path in `H_P(M)` is stored as its increments `Δ_iβ` (frame coordinates of
//! each geodesic segment) together with the knot frame points obtained by
//! rolling those increments from the base frame.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CurvatureModel, FramePoint};

/// Equally spaced partition `s_i = i/n` of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    n: usize,
}

impl Partition {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("partition needs at least one interval".into()));
        }
        Ok(Self { n })
    }

    /// Builds a partition from explicit knots, refusing anything not equally spaced.
    pub fn from_knots(knots: &[f64]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument("need at least two knots".into()));
        }
        let n = knots.len() - 1;
        for (i, &s) in knots.iter().enumerate() {
            if (s - i as f64 / n as f64).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "partition must be equally spaced on [0,1]; knot {i} is {s}"
                )));
            }
        }
        Self::new(n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Interval length `Δ = 1/n`.
    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn knot(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Last interior knot `τ = s_{n-1}`.
    pub fn tau(&self) -> f64 {
        self.knot(self.n - 1)
    }

    /// Knot index of time `s`, if `s` is a knot.
    pub fn knot_index(&self, s: f64) -> Option<usize> {
        let x = s * self.n as f64;
        let i = x.round();
        if (x - i).abs() < 1e-9 && i >= 0.0 && i <= self.n as f64 {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Generator for one `(seed, sample, interval)` cell.
///
/// The sample index selects the ChaCha stream and the interval index a
/// 2^32-word block inside it, so draws do not depend on evaluation order.
pub fn cell_rng(seed: u64, sample: u64, interval: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng.set_word_pos((interval as u128) << 32);
    rng
}

/// Standard normal vector of length `d` for one cell, scaled by `scale`.
pub fn gaussian_cell(d: usize, scale: f64, seed: u64, sample: u64, interval: u64) -> DVector<f64> {
    let mut rng = cell_rng(seed, sample, interval);
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// `count` i.i.d. `N(0, Δ I)` increments for sample `sample`.
pub fn sample_increments_n(partition: &Partition, d: usize, count: usize, seed: u64, sample: u64) -> Vec<DVector<f64>> {
    let scale = partition.delta().sqrt();
    (0..count).map(|i| gaussian_cell(d, scale, seed, sample, i as u64)).collect()
}

/// The `n` increments `Δ_iβ` of a piecewise-linear Brownian motion.
pub fn sample_increments(partition: &Partition, d: usize, seed: u64, sample: u64) -> Vec<DVector<f64>> {
    sample_increments_n(partition, d, partition.n(), seed, sample)
}

/// A piecewise geodesic: `knots[i+1] = exp(knots[i], increments[i])`.
///
/// `increments.len()` may be smaller than `n` for a path defined on `[0, s_m]`.
#[derive(Debug, Clone)]
pub struct BrokenGeodesic {
    pub partition: Partition,
    pub increments: Vec<DVector<f64>>,
    pub knots: Vec<FramePoint>,
}

impl BrokenGeodesic {
    /// Number of geodesic segments actually present.
    pub fn segments(&self) -> usize {
        self.increments.len()
    }

    pub fn endpoint(&self) -> &FramePoint {
        self.knots.last().expect("path has at least one knot")
    }

    /// Per-interval constant velocity `b′(s_{i-1}+) = Δ_iβ / Δ` in frame coordinates.
    pub fn velocities(&self) -> Vec<DVector<f64>> {
        let n = self.partition.n() as f64;
        self.increments.iter().map(|v| v * n).collect()
    }
}

/// Rolls frame-coordinate increments from `start` into a broken geodesic.
pub fn roll(
    model: &CurvatureModel,
    start: &FramePoint,
    partition: Partition,
    increments: Vec<DVector<f64>>,
) -> Result<BrokenGeodesic> {
    if increments.len() > partition.n() {
        return Err(Error::InvalidArgument(format!(
            "{} increments exceed the {} partition intervals",
            increments.len(),
            partition.n()
        )));
    }
    let mut knots = Vec::with_capacity(increments.len() + 1);
    knots.push(start.clone());
    for v in &increments {
        if v.len() != model.dim || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("increments must be finite vectors of length d".into()));
        }
        let next = model.exp_map(knots.last().unwrap(), v);
        knots.push(next);
    }
    Ok(BrokenGeodesic { partition, increments, knots })
}

/// Recovers the increments from the knot points and the initial frame alone.
pub fn anti_roll(model: &CurvatureModel, path: &BrokenGeodesic) -> Vec<DVector<f64>> {
    let mut fp = path.knots[0].clone();
    let mut out = Vec::with_capacity(path.segments());
    for knot in &path.knots[1..] {
        let v = model.log_map(&fp, &knot.point);
        fp = model.exp_map(&fp, &v);
        out.push(v);
    }
    out
}

/// Energy `∫|σ′|² ds = n Σ|Δ_iβ|²`.
pub fn energy(path: &BrokenGeodesic) -> f64 {
    let n = path.partition.n() as f64;
    n * path.increments.iter().map(|v| v.norm_squared()).sum::<f64>()
}

/// `G¹_P` inner product of two tangent vectors given by their slope lists.
pub fn g1p_inner(partition: &Partition, a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.len() != partition.n() || b.len() != partition.n() {
        return Err(Error::InvalidArgument("slope lists must have one entry per interval".into()));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.dot(y)).sum();
    Ok(s * partition.delta())
}

/// Slopes of the orthonormal frame field `h_{α,i}`: `e_α √n` on interval `i`, zero elsewhere.
pub fn frame_field_slopes(partition: &Partition, d: usize, alpha: usize, i: usize) -> Vec<DVector<f64>> {
    assert!(alpha < d && (1..=partition.n()).contains(&i));
    let mut out = vec![DVector::zeros(d); partition.n()];
    out[i - 1][alpha] = (partition.n() as f64).sqrt();
    out
}

/// Writes one CSV row per knot: `sample_id,i,s_i,point...,frame...,increment...`.
///
/// The increment columns of a row hold `Δ_{i+1}β` (empty on the last knot).
pub fn write_path_dump<W: Write>(writer: &mut csv::Writer<W>, sample_id: u64, path: &BrokenGeodesic) -> Result<()> {
    for (i, knot) in path.knots.iter().enumerate() {
        let mut row = vec![sample_id.to_string(), i.to_string(), format!("{:.17e}", path.partition.knot(i))];
        row.extend(knot.point.iter().map(|v| format!("{v:.17e}")));
        row.extend(knot.frame.iter().map(|v| format!("{v:.17e}")));
        match path.increments.get(i) {
            Some(inc) => row.extend(inc.iter().map(|v| format!("{v:.17e}"))),
            None => row.extend(std::iter::repeat_n(String::new(), knot.frame.ncols())),
        }
        writer.write_record(&row)?;
    }
    Ok(())
}

/// Header matching [`write_path_dump`].
pub fn path_dump_header(model: &CurvatureModel) -> Vec<String> {
    let m = model.ambient_dim();
    let d = model.dim;
    let mut h = vec!["sample_id".to_string(), "i".into(), "s_i".into()];
    h.extend((0..m).map(|k| format!("x{k}")));
    for c in 0..d {
        h.extend((0..m).map(|r| format!("u{r}_{c}")));
    }
    h.extend((0..d).map(|k| format!("db{k}")));
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_rejects_uneven_knots() {
        assert!(Partition::from_knots(&[0.0, 0.5, 1.0]).is_ok());
        assert!(Partition::from_knots(&[0.0, 0.3, 1.0]).is_err());
        assert!(Partition::new(0).is_err());
        let p = Partition::new(4).unwrap();
        assert_eq!(p.knot_index(0.5), Some(2));
        assert_eq!(p.knot_index(0.3), None);
        assert_eq!(p.tau(), 0.75);
    }

    #[test]
    fn rng_cells_are_stable() {
        let p = Partition::new(8).unwrap();
        let a = sample_increments(&p, 3, 42, 7);
        let b = sample_increments(&p, 3, 42, 7);
        assert_eq!(a, b);
        let c = sample_increments(&p, 3, 42, 8);
        assert_ne!(a, c);
        // Cell draws do not depend on how many intervals were requested.
        let short = sample_increments_n(&p, 3, 3, 42, 7);
        assert_eq!(&a[..3], &short[..]);
    }

    #[test]
    fn energy_examples() {
        let m = CurvatureModel::flat(2);
        let p = Partition::new(4).unwrap();
        let inc = vec![DVector::from_vec(vec![0.5, 0.0]); 4];
        let path = roll(&m, &m.origin(), p, inc).unwrap();
        assert!((energy(&path) - 4.0).abs() < 1e-14);
        let p1 = Partition::new(1).unwrap();
        let path = roll(&m, &m.origin(), p1, vec![DVector::from_vec(vec![3.0, 4.0])]).unwrap();
        assert!((energy(&path) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn g1p_examples() {
        let p = Partition::new(2).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let s = vec![e1.clone(), e1.clone()];
        assert!((g1p_inner(&p, &s, &s).unwrap() - 1.0).abs() < 1e-15);
        let z = vec![DVector::zeros(2); 2];
        assert_eq!(g1p_inner(&p, &z, &z).unwrap(), 0.0);
    }
}
