//! Similarity alignment of corresponding point sets and generalized
//! Procrustes mean shapes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_shape, PointSet};
use crate::linalg::thin_svd;

/// `p -> s * R * p + d` with `s > 0` and `R` a proper rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl SimilarityTransform {
    pub fn identity(dim: usize) -> Self {
        Self { scale: 1.0, rotation: DMatrix::identity(dim, dim), translation: DVector::zeros(dim) }
    }

    pub fn new(scale: f64, rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let d = translation.len();
        if rotation.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: rotation.nrows() });
        }
        if !(scale > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, rotation, translation })
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += self.rotation[(i, j)] * p[j];
                }
                self.scale * acc + self.translation[i]
            })
            .collect()
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * first.scale,
            rotation: &self.rotation * &first.rotation,
            translation: self.scale * (&self.rotation * &first.translation) + &self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        let translation = -(&rt * &self.translation) / self.scale;
        SimilarityTransform { scale: 1.0 / self.scale, rotation: rt, translation }
    }

    /// Max elementwise distance of the parameters, for comparisons in tests.
    pub fn max_param_diff(&self, other: &SimilarityTransform) -> f64 {
        let mut diff = (self.scale - other.scale).abs();
        diff = diff.max((&self.rotation - &other.rotation).amax());
        diff.max((&self.translation - &other.translation).amax())
    }
}

/// 2D rotation by `angle` radians.
pub fn rotation_2d(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// 3D rotation by `angle` about `axis` (Rodrigues' formula).
pub fn rotation_3d(axis: [f64; 3], angle: f64) -> DMatrix<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
        ],
    )
}

pub fn apply_transform(t: &SimilarityTransform, p: &PointSet) -> Result<PointSet> {
    if t.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: t.dim(), found: p.dim() });
    }
    let mut coords = Vec::with_capacity(p.as_slice().len());
    for q in p.iter() {
        coords.extend(t.apply_point(q));
    }
    PointSet::new(p.dim(), coords)
}

/// Whether the scale is estimated or frozen at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    #[default]
    Similarity,
    Rigid,
}

/// Second-order moments of a weighted correspondence between a source `A`
/// and a target `B`. Everything the closed-form similarity solve needs.
#[derive(Debug, Clone)]
pub struct AlignmentMoments {
    /// `sum_m w_m (b_m - mean_b)(a_m - mean_a)^T`.
    pub cross: DMatrix<f64>,
    /// `sum_m w_m |a_m - mean_a|^2`.
    pub source_var: f64,
    pub mean_source: DVector<f64>,
    pub mean_target: DVector<f64>,
}

/// Closed-form weighted similarity solve from moments. The rotation is
/// `Phi diag(1, .., 1, det(Phi Psi^T)) Psi^T` from the SVD of the cross
/// covariance, so reflections are never returned.
pub fn solve_similarity(moments: &AlignmentMoments, scale_mode: ScaleMode) -> Result<SimilarityTransform> {
    let d = moments.cross.nrows();
    if !(moments.source_var > 0.0) || !moments.source_var.is_finite() {
        return Err(Error::DegenerateConfiguration("source points have zero weighted spread".into()));
    }
    let svd = thin_svd(&moments.cross)?;
    let phi = svd.u;
    let psi_t = svd.v.transpose();
    let sv = &svd.s;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    // With rank < D-1 the rotation is not determined.
    if d >= 2 {
        let top = sv[order[0]];
        let second_smallest = sv[order[d - 2]];
        if !(top > 0.0) || second_smallest <= 1e-12 * top {
            return Err(Error::DegenerateConfiguration(
                "cross covariance rank below D-1; rotation is ambiguous".into(),
            ));
        }
    }
    let det = (&phi * &psi_t).determinant();
    let mut signs = DVector::from_element(d, 1.0);
    if det < 0.0 {
        signs[order[d - 1]] = -1.0;
    }
    let rotation = &phi * DMatrix::from_diagonal(&signs) * &psi_t;
    let scale = match scale_mode {
        ScaleMode::Similarity => {
            let trace: f64 = (0..d).map(|i| sv[i] * signs[i]).sum();
            trace / moments.source_var
        }
        ScaleMode::Rigid => 1.0,
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration(format!("non-positive scale estimate {scale:e}")));
    }
    let translation = &moments.mean_target - scale * (&rotation * &moments.mean_source);
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// Weighted least-squares similarity mapping `a` onto `b`: minimizes
/// `sum_m w_m |b_m - (s R a_m + d)|^2` over `s > 0`, proper `R` and `d`.
pub fn similarity_align(
    a: &PointSet,
    b: &PointSet,
    weights: Option<&[f64]>,
    scale_mode: ScaleMode,
) -> Result<SimilarityTransform> {
    ensure_same_shape(a, b)?;
    let m = a.len();
    let dim = a.dim();
    if let Some(w) = weights {
        if w.len() != m {
            return Err(Error::CountMismatch { expected: m, found: w.len() });
        }
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..m).map(weight).sum();
    if !(total > 0.0) {
        return Err(Error::Domain("weights sum to zero".into()));
    }
    let mut mean_a = DVector::zeros(dim);
    let mut mean_b = DVector::zeros(dim);
    for i in 0..m {
        let w = weight(i);
        for d in 0..dim {
            mean_a[d] += w * a.point(i)[d];
            mean_b[d] += w * b.point(i)[d];
        }
    }
    mean_a /= total;
    mean_b /= total;
    let mut cross = DMatrix::zeros(dim, dim);
    let mut source_var = 0.0;
    for i in 0..m {
        let w = weight(i);
        let pa = a.point(i);
        let pb = b.point(i);
        for r in 0..dim {
            let db = pb[r] - mean_b[r];
            for c in 0..dim {
                cross[(r, c)] += w * db * (pa[c] - mean_a[c]);
            }
            let da = pa[r] - mean_a[r];
            source_var += w * da * da;
        }
    }
    solve_similarity(&AlignmentMoments { cross, source_var, mean_source: mean_a, mean_target: mean_b }, scale_mode)
}

/// Weighted sum of squared residuals `sum_m w_m |b_m - T(a_m)|^2`.
pub fn alignment_residual(t: &SimilarityTransform, a: &PointSet, b: &PointSet, weights: Option<&[f64]>) -> f64 {
    (0..a.len())
        .map(|i| {
            let ta = t.apply_point(a.point(i));
            let r2: f64 = ta.iter().zip(b.point(i)).map(|(x, y)| (x - y) * (x - y)).sum();
            weights.map_or(1.0, |w| w[i]) * r2
        })
        .sum()
}

fn pointwise_mean(shapes: &[PointSet]) -> PointSet {
    let n = shapes.len() as f64;
    let mut coords = vec![0.0; shapes[0].as_slice().len()];
    for s in shapes {
        for (a, b) in coords.iter_mut().zip(s.as_slice()) {
            *a += b;
        }
    }
    coords.iter_mut().for_each(|c| *c /= n);
    PointSet::new(shapes[0].dim(), coords).expect("mean of valid shapes is valid")
}

/// Generalized Procrustes mean: starting from the raw pointwise average,
/// each sweep aligns every shape to the current mean and re-averages.
/// Returns the final mean and the shapes aligned to it.
pub fn mean_shape(shapes: &[PointSet], sweeps: usize, scale_mode: ScaleMode) -> Result<(PointSet, Vec<PointSet>)> {
    if shapes.len() < 2 {
        return Err(Error::InsufficientData(format!("mean shape needs at least 2 shapes, got {}", shapes.len())));
    }
    for s in &shapes[1..] {
        ensure_same_shape(&shapes[0], s)?;
    }
    let mut mean = pointwise_mean(shapes);
    let mut aligned = shapes.to_vec();
    for _ in 0..sweeps.max(1) {
        aligned = shapes
            .iter()
            .map(|s| {
                let t = similarity_align(s, &mean, None, scale_mode)?;
                apply_transform(&t, s)
            })
            .collect::<Result<Vec<_>>>()?;
        mean = pointwise_mean(&aligned);
    }
    Ok((mean, aligned))
}

/// Rescales the mean and every aligned shape by one factor so that the
/// mean's bounding box has unit volume. Returns the factor and the
/// rescaled sets.
pub fn normalize_mean_scale(mean: &PointSet, aligned: &[PointSet]) -> Result<(f64, PointSet, Vec<PointSet>)> {
    let bbox = mean.bounding_box();
    if let Some(axis) = bbox.extents().iter().position(|&e| !(e > 0.0)) {
        return Err(Error::DegenerateExtent { axis });
    }
    let factor = bbox.volume().powf(-1.0 / mean.dim() as f64);
    Ok((factor, mean.scaled(factor), aligned.iter().map(|s| s.scaled(factor)).collect()))
}
