//! PCA statistical shape models: training, synthesis and persistence.

mod io;

pub use io::{export_text, load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_shape, PointSet};
use crate::linalg::thin_svd;
use crate::procrustes::SimilarityTransform;

/// Components with `lambda_k < EIGEN_FLOOR * lambda_1` are discarded.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Mean shape `u` (length `M*D`, landmark-major), variation matrix `H`
/// (`M*D x K`) and eigenvalue spectrum `lambda_1 >= .. >= lambda_K > 0`.
///
/// The `D x K` block of `H` at rows `m*D..m*D+D` is `H_m`, the variation
/// of landmark `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mean: DVector<f64>,
    variations: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    landmarks: usize,
    dim: usize,
}

/// Outcome of [`train_pca`] besides the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub requested: usize,
    pub achieved: usize,
    /// Set when fewer components than requested survived the rank limit
    /// and the eigenvalue floor.
    pub clamped: bool,
    /// Variance that the kept components do not explain.
    pub discarded_energy: f64,
}

impl ShapeModel {
    pub fn new(mean: DVector<f64>, variations: DMatrix<f64>, eigenvalues: DVector<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || mean.len() % dim != 0 || mean.is_empty() {
            return Err(Error::Domain(format!(
                "mean of length {} is not a set of {dim}-dimensional landmarks",
                mean.len()
            )));
        }
        if variations.nrows() != mean.len() {
            return Err(Error::CountMismatch { expected: mean.len(), found: variations.nrows() });
        }
        if variations.ncols() != eigenvalues.len() {
            return Err(Error::CountMismatch { expected: variations.ncols(), found: eigenvalues.len() });
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Domain("eigenvalues must be positive and finite".into()));
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("eigenvalues must be non-increasing".into()));
        }
        if mean.iter().chain(variations.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("model has non-finite entries".into()));
        }
        Ok(Self { landmarks: mean.len() / dim, mean, variations, eigenvalues, dim })
    }

    pub fn landmarks(&self) -> usize {
        self.landmarks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn variations(&self) -> &DMatrix<f64> {
        &self.variations
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn mean_shape(&self) -> PointSet {
        PointSet::new(self.dim, self.mean.as_slice().to_vec()).expect("validated model")
    }

    /// The first `k` modes (all of them if `k >= K`).
    pub fn truncated(&self, k: usize) -> ShapeModel {
        let k = k.min(self.modes());
        ShapeModel {
            mean: self.mean.clone(),
            variations: self.variations.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, k).into_owned(),
            landmarks: self.landmarks,
            dim: self.dim,
        }
    }

    /// Sub-model on the given landmarks. The restricted columns of `H` are
    /// generally no longer orthonormal.
    pub fn select_landmarks(&self, indices: &[usize]) -> Result<ShapeModel> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("no landmarks selected".into()));
        }
        let d = self.dim;
        let rows: Vec<usize> = indices.iter().flat_map(|&m| (m * d)..(m * d + d)).collect();
        if rows.iter().any(|&r| r >= self.mean.len()) {
            return Err(Error::Domain("landmark index out of range".into()));
        }
        Ok(ShapeModel {
            mean: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.mean[r])),
            variations: self.variations.select_rows(rows.iter()),
            eigenvalues: self.eigenvalues.clone(),
            landmarks: indices.len(),
            dim: d,
        })
    }

    /// `u + H z` as a point set.
    pub fn deform(&self, z: &DVector<f64>) -> Result<PointSet> {
        if z.len() != self.modes() {
            return Err(Error::CountMismatch { expected: self.modes(), found: z.len() });
        }
        let v = &self.mean + &self.variations * z;
        PointSet::new(self.dim, v.as_slice().to_vec())
    }
}

/// PCA of aligned shapes through a thin SVD of the `M*D x B` centered data
/// matrix; the `M*D x M*D` covariance is never formed.
pub fn train_pca(aligned: &[PointSet], k: usize) -> Result<(ShapeModel, TrainReport)> {
    let b = aligned.len();
    if b < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 shapes, got {b}")));
    }
    if k == 0 {
        return Err(Error::Domain("requested component count must be positive".into()));
    }
    for s in &aligned[1..] {
        ensure_same_shape(&aligned[0], s)?;
    }
    let dim = aligned[0].dim();
    let md = aligned[0].as_slice().len();
    let mut mean = DVector::zeros(md);
    for s in aligned {
        mean += DVector::from_column_slice(s.as_slice());
    }
    mean /= b as f64;

    let mut centered = DMatrix::zeros(md, b);
    for (j, s) in aligned.iter().enumerate() {
        for (i, &c) in s.as_slice().iter().enumerate() {
            centered[(i, j)] = c - mean[i];
        }
    }

    let svd = thin_svd(&centered)?;
    let u = svd.u;
    let mut order: Vec<usize> = (0..svd.s.len()).collect();
    let sv = &svd.s;
    order.sort_by(|&a, &c| sv[c].total_cmp(&sv[a]));
    let lambdas: Vec<f64> = order.iter().map(|&i| sv[i] * sv[i] / (b - 1) as f64).collect();
    let total_energy: f64 = lambdas.iter().sum();
    let top = lambdas.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateConfiguration("all training shapes are identical".into()));
    }
    let usable = lambdas.iter().take_while(|&&l| l >= EIGEN_FLOOR * top).count().min(b - 1);
    let achieved = k.min(usable);

    let mut variations = DMatrix::zeros(md, achieved);
    for (col, &i) in order.iter().take(achieved).enumerate() {
        let mut h = u.column(i).into_owned();
        // Sign convention: largest-magnitude entry positive.
        if h[h.iamax()] < 0.0 {
            h.neg_mut();
        }
        variations.set_column(col, &h);
    }
    let eigenvalues = DVector::from_iterator(achieved, lambdas.iter().copied().take(achieved));
    let kept: f64 = eigenvalues.iter().sum();
    let model = ShapeModel::new(mean, variations, eigenvalues, dim)?;
    Ok((
        model,
        TrainReport { requested: k, achieved, clamped: achieved < k, discarded_energy: (total_energy - kept).max(0.0) },
    ))
}

/// `s R (u_m + H_m z) + d` for every landmark `m`.
pub fn synthesize(model: &ShapeModel, z: &DVector<f64>, t: &SimilarityTransform) -> Result<PointSet> {
    if t.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: t.dim() });
    }
    let local = model.deform(z)?;
    crate::procrustes::apply_transform(t, &local)
}

/// Maps the model into a rotated and scaled frame: every `D`-block of `u`
/// and of each column of `H` becomes `s R x`. Eigenvalues are unchanged.
pub fn transform_model_frame(model: &ShapeModel, scale: f64, rotation: &DMatrix<f64>) -> Result<ShapeModel> {
    let d = model.dim();
    if rotation.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: rotation.nrows() });
    }
    let sr = rotation * scale;
    let map_blocks = |src: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(src.nrows(), src.ncols());
        for m in 0..model.landmarks() {
            let block = src.rows(m * d, d);
            out.rows_mut(m * d, d).copy_from(&(&sr * block));
        }
        out
    };
    let mean_mat = DMatrix::from_column_slice(model.mean.len(), 1, model.mean.as_slice());
    let mean = map_blocks(&mean_mat).column(0).into_owned();
    let variations = map_blocks(&model.variations);
    Ok(ShapeModel { mean, variations, eigenvalues: model.eigenvalues.clone(), landmarks: model.landmarks, dim: d })
}
