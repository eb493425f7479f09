//! Point containers, spatial search and the Gaussian affinity kernel.

mod io;
mod kdtree;

pub use io::{load_point_set, save_point_set, PointFormat};
pub use kdtree::NeighborIndex;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An ordered set of `N` points in `D` dimensions, stored row-major.
///
/// Point order is significant: when a set describes landmarks, the index
/// is the landmark identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    /// Builds a point set from flat row-major coordinates.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("point dimension must be at least 1".into()));
        }
        if coords.is_empty() {
            return Err(Error::EmptyInput("point set has no points".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Domain(format!(
                "{} coordinates do not divide into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("point {} has a non-finite coordinate", i / dim)));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::EmptyInput("point set has no points".into()))?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    /// Builds from an `N x D` matrix, one point per row.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut coords = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                coords.push(m[(i, j)]);
            }
        }
        Self::new(d, coords)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.coords)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false: a point set holds at least one point.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, b) in c.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|a| *a /= n);
        c
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for d in 0..self.dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        BoundingBox { lo, hi }
    }

    /// Length of the bounding-box diagonal, used as the characteristic size.
    pub fn diameter(&self) -> f64 {
        self.bounding_box().diagonal()
    }

    /// Points at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet { dim: self.dim, coords }
    }

    /// Appends the points of `other`.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        ensure_same_dim(self, other)?;
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(PointSet { dim: self.dim, coords })
    }

    pub fn scaled(&self, factor: f64) -> PointSet {
        PointSet { dim: self.dim, coords: self.coords.iter().map(|c| c * factor).collect() }
    }

    pub fn translated(&self, offset: &[f64]) -> PointSet {
        let mut out = self.clone();
        for p in out.coords.chunks_exact_mut(self.dim) {
            for (a, b) in p.iter_mut().zip(offset) {
                *a += b;
            }
        }
        out
    }

    /// Sum of squared norms of all points.
    pub fn sum_sq_norms(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum()
    }
}

pub(crate) fn ensure_same_dim(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(a: &PointSet, b: &PointSet) -> Result<()> {
    ensure_same_dim(a, b)?;
    if a.len() != b.len() {
        return Err(Error::CountMismatch { expected: a.len(), found: b.len() });
    }
    Ok(())
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Axis-aligned box given by per-axis minima and maxima.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Domain("bounding box with lo > hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extents(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    pub fn diagonal(&self) -> f64 {
        self.extents().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Grows every side by `margin` times its extent.
    pub fn expanded(&self, margin: f64) -> BoundingBox {
        let ext = self.extents();
        BoundingBox {
            lo: self.lo.iter().zip(&ext).map(|(l, e)| l - margin * e).collect(),
            hi: self.hi.iter().zip(&ext).map(|(h, e)| h + margin * e).collect(),
        }
    }
}

/// Minimum-variance unbiased estimate of the volume of the axis-aligned box
/// the points were drawn uniformly from.
///
/// Each axis range is corrected by `(N+1)/(N-1)`, so
/// `S = prod_d (hi_d - lo_d) * ((N+1)/(N-1))^D`.
pub fn volume_mvue(x: &PointSet) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData("volume estimate needs at least two points".into()));
    }
    let bbox = x.bounding_box();
    let factor = (n as f64 + 1.0) / (n as f64 - 1.0);
    let mut s = 1.0;
    for (axis, e) in bbox.extents().into_iter().enumerate() {
        if e <= 0.0 {
            return Err(Error::DegenerateExtent { axis });
        }
        s *= e * factor;
    }
    Ok(s)
}

/// `M x N` matrix with entries `exp(-|x_n - y_m|^2 / (2 sigma2))`.
pub fn gaussian_affinity(y: &PointSet, x: &PointSet, sigma2: f64) -> Result<DMatrix<f64>> {
    ensure_same_dim(y, x)?;
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let scale = -0.5 / sigma2;
    Ok(DMatrix::from_fn(y.len(), x.len(), |m, n| (scale * sq_dist(y.point(m), x.point(n))).exp()))
}

/// Volume of a `dim`-dimensional ball of the given radius.
pub fn ball_volume(dim: usize, radius: f64) -> f64 {
    // pi^(D/2) / Gamma(D/2 + 1), via the two-step recurrence V_D = 2 pi / D * V_{D-2}.
    let mut unit = if dim % 2 == 0 { 1.0 } else { 2.0 };
    let mut d = if dim % 2 == 0 { 2 } else { 3 };
    while d <= dim {
        unit *= 2.0 * std::f64::consts::PI / d as f64;
        d += 2;
    }
    unit * radius.powi(dim as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSet {
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(matches!(PointSet::new(2, vec![]), Err(Error::EmptyInput(_))));
        assert!(PointSet::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(PointSet::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn affinity_spot_values() {
        let y = PointSet::new(1, vec![0.0]).unwrap();
        let x = PointSet::new(1, vec![1.0]).unwrap();
        let k = gaussian_affinity(&y, &x, 0.5).unwrap();
        assert!((k[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(gaussian_affinity(&x, &x, 0.3).unwrap()[(0, 0)], 1.0);
        assert!(matches!(gaussian_affinity(&y, &x, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn affinity_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_set(&mut rng, 4, 3);
        let x = random_set(&mut rng, 3, 3);
        let k = gaussian_affinity(&y, &x, 0.7).unwrap();
        for m in 0..4 {
            for n in 0..3 {
                let mut r2 = 0.0;
                for d in 0..3 {
                    let diff = x.point(n)[d] - y.point(m)[d];
                    r2 += diff * diff;
                }
                assert!((k[(m, n)] - (-r2 / 1.4).exp()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn volume_spot_values() {
        let x = PointSet::new(1, vec![0.0, 0.5, 1.0]).unwrap();
        assert!((volume_mvue(&x).unwrap() - 2.0).abs() < 1e-15);
        let sq = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!((volume_mvue(&sq).unwrap() - 25.0 / 9.0).abs() < 1e-14);
        let flat = PointSet::from_rows(&[[0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(volume_mvue(&flat), Err(Error::DegenerateExtent { axis: 1 })));
    }

    #[test]
    fn volume_is_unbiased_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (2.0, 0.5);
        let reps = 10_000;
        let mut total = 0.0;
        for _ in 0..reps {
            let pts: Vec<[f64; 2]> = (0..20).map(|_| [rng.random_range(0.0..w), rng.random_range(0.0..h)]).collect();
            total += volume_mvue(&PointSet::from_rows(&pts).unwrap()).unwrap();
        }
        let mean = total / reps as f64;
        assert!((mean / (w * h) - 1.0).abs() < 0.01, "mean volume {mean}");
    }

    #[test]
    fn ball_volumes() {
        use std::f64::consts::PI;
        assert!((ball_volume(1, 2.0) - 4.0).abs() < 1e-14);
        assert!((ball_volume(2, 1.0) - PI).abs() < 1e-14);
        assert!((ball_volume(3, 1.0) - 4.0 / 3.0 * PI).abs() < 1e-14);
        assert!((ball_volume(4, 1.0) - PI * PI / 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn affinity_symmetric_and_monotone(seed in 0u64..1000, s2 in 0.01f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 5, 2);
            let b = random_set(&mut rng, 6, 2);
            let kab = gaussian_affinity(&a, &b, s2).unwrap();
            let kba = gaussian_affinity(&b, &a, s2).unwrap();
            prop_assert_eq!(kab.transpose(), kba);
            let mut pairs: Vec<(f64, f64)> = (0..5)
                .flat_map(|m| (0..6).map(move |n| (m, n)))
                .map(|(m, n)| (sq_dist(a.point(m), b.point(n)), kab[(m, n)]))
                .collect();
            pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
            for w in pairs.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
            prop_assert!(kab.iter().all(|&k| k > 0.0 && k <= 1.0));
        }

        #[test]
        fn volume_invariances(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_set(&mut rng, 12, 3);
            let v = volume_mvue(&x).unwrap();
            let mut idx: Vec<usize> = (0..12).collect();
            idx.reverse();
            idx.swap(2, 7);
            prop_assert!((volume_mvue(&x.subset(&idx)).unwrap() - v).abs() < 1e-12 * v);
            let moved = x.translated(&[3.0, -1.0, 0.25]);
            prop_assert!((volume_mvue(&moved).unwrap() - v).abs() < 1e-9 * v);
            let scaled = x.scaled(scale);
            prop_assert!((volume_mvue(&scaled).unwrap() - v * scale.powi(3)).abs() < 1e-9 * v * scale.powi(3));
        }
    }
}
