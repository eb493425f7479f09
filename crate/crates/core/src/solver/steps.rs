//! Initialization and the three M-step updates. Each update is the exact
//! minimizer of the EM surrogate over its own block of parameters, with
//! the posterior summary held fixed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dim, PointSet};
use crate::posterior::PosteriorSummary;
use crate::procrustes::{solve_similarity, AlignmentMoments, ScaleMode, SimilarityTransform};
use crate::ssm::{transform_model_frame, ShapeModel};

/// Posterior mass at or below this means every target is an outlier.
pub const MIN_MASS: f64 = 1e-12;

const RIDGE_START: f64 = 1e-12;
const RIDGE_MAX: f64 = 1e-6;

/// `(M tr(X^T X) - 2 (1^T Y)(X^T 1) + N tr(Y^T Y)) / (N M D)`, the mean
/// squared pair distance per axis. Evaluated in `O(M + N)` on coordinates
/// centered at the target centroid.
pub fn initial_variance(y: &PointSet, x: &PointSet) -> Result<f64> {
    ensure_same_dim(y, x)?;
    let (m, n, dim) = (y.len() as f64, x.len() as f64, y.dim());
    let c = x.centroid();
    let moments = |p: &PointSet| {
        let mut sum = vec![0.0; dim];
        let mut sq = 0.0;
        for q in p.iter() {
            for ((s, v), o) in sum.iter_mut().zip(q).zip(&c) {
                let t = v - o;
                *s += t;
                sq += t * t;
            }
        }
        (sum, sq)
    };
    let (sx, qx) = moments(x);
    let (sy, qy) = moments(y);
    let cross: f64 = sx.iter().zip(&sy).map(|(a, b)| a * b).sum();
    Ok((m * qx - 2.0 * cross + n * qy) / (n * m * dim as f64))
}

fn check_mass(summary: &PosteriorSummary) -> Result<()> {
    if !(summary.np > MIN_MASS) {
        return Err(Error::AllOutliers(summary.np));
    }
    Ok(())
}

/// `(1 / N_P) sum_n (P^T 1)_n x_n`.
pub fn target_mean(x: &PointSet, summary: &PosteriorSummary) -> DVector<f64> {
    let mut acc = DVector::zeros(x.dim());
    for (w, p) in summary.pt1m.iter().zip(x.iter()) {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += w * b;
        }
    }
    acc / summary.np
}

/// `(1 / N_P) sum_m (P 1)_m y_m`.
pub fn source_mean(y: &PointSet, summary: &PosteriorSummary) -> DVector<f64> {
    let mut acc = DVector::zeros(y.dim());
    for (w, p) in summary.p1n.iter().zip(y.iter()) {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += w * b;
        }
    }
    acc / summary.np
}

/// Result of the shape and translation update.
#[derive(Debug, Clone)]
pub struct ShapeStep {
    pub z: DVector<f64>,
    /// `d = x_P - u_P - H_P z`.
    pub translation: DVector<f64>,
    /// `u + H z + d` per landmark.
    pub deformed: PointSet,
    pub x_p: DVector<f64>,
    pub y_p: DVector<f64>,
}

/// Minimizes `sum_mn p_mn |x_n - u_m - H_m z - d|^2 + reg z^T Lambda^-1 z`
/// over `z` and `d` in the frame of `frame`, through the `K x K` system
/// `{H^T P H - N_P H_P^T H_P + reg Lambda^-1} z = H^T (x_P - P u) - N_P H_P^T (x_P - u_P)`.
///
/// When the system is not positive definite a ridge is added, growing
/// tenfold from `1e-12` to `1e-6` of its mean diagonal.
pub fn mstep_shape(frame: &ShapeModel, summary: &PosteriorSummary, x: &PointSet, reg: f64) -> Result<ShapeStep> {
    let (m, dim, k) = (frame.landmarks(), frame.dim(), frame.modes());
    if summary.sources() != m || summary.dim != dim {
        return Err(Error::CountMismatch { expected: m, found: summary.sources() });
    }
    if !(reg >= 0.0) {
        return Err(Error::Domain(format!("regularization weight must be nonnegative, got {reg}")));
    }
    check_mass(summary)?;
    let np = summary.np;
    let u = frame.mean();
    let h = frame.variations();
    let x_p = target_mean(x, summary);

    let mut u_p = DVector::zeros(dim);
    let mut h_p = DMatrix::zeros(dim, k);
    let mut weighted_h = h.clone();
    let mut rhs_vec = DVector::zeros(m * dim);
    for i in 0..m {
        let p = summary.p1n[i].max(0.0);
        let sqrt_p = p.sqrt();
        for a in 0..dim {
            let r = i * dim + a;
            u_p[a] += p * u[r];
            for j in 0..k {
                h_p[(a, j)] += p * h[(r, j)];
            }
            weighted_h.row_mut(r).scale_mut(sqrt_p);
            rhs_vec[r] = summary.px[r] - p * u[r];
        }
    }
    u_p /= np;
    h_p /= np;

    let mut system = weighted_h.tr_mul(&weighted_h) - np * h_p.tr_mul(&h_p);
    let lambdas = frame.eigenvalues();
    for j in 0..k {
        system[(j, j)] += reg / lambdas[j];
    }
    let rhs = h.tr_mul(&rhs_vec) - np * h_p.tr_mul(&(&x_p - &u_p));

    let z = if k == 0 { DVector::zeros(0) } else { solve_spd(system, &rhs)? };
    let translation = &x_p - &u_p - &h_p * &z;

    let v = u + h * &z;
    let mut coords = v.as_slice().to_vec();
    for p in coords.chunks_exact_mut(dim) {
        for (c, t) in p.iter_mut().zip(translation.iter()) {
            *c += t;
        }
    }
    let deformed = PointSet::new(dim, coords)?;
    let y_p = source_mean(&deformed, summary);
    Ok(ShapeStep { z, translation, deformed, x_p, y_p })
}

fn solve_spd(system: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let k = system.nrows();
    let mean_diag = (system.trace() / k as f64).abs().max(f64::MIN_POSITIVE);
    if let Some(c) = system.clone().cholesky() {
        return Ok(c.solve(rhs));
    }
    let mut ridge = RIDGE_START * mean_diag;
    while ridge <= RIDGE_MAX * mean_diag * (1.0 + 1e-12) {
        let mut shifted = system.clone();
        for j in 0..k {
            shifted[(j, j)] += ridge;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok(c.solve(rhs));
        }
        ridge *= 10.0;
    }
    Err(Error::SingularSystem(format!(
        "shape system of size {k} not positive definite with ridge up to {:e}",
        RIDGE_MAX * mean_diag
    )))
}

/// Result of the location update.
#[derive(Debug, Clone)]
pub struct LocationStep {
    /// The similarity `(s, R, d)` applied to the current shape.
    pub increment: SimilarityTransform,
    /// The model with `u` and `H` mapped by `s R`.
    pub frame: ShapeModel,
    /// `s Y R^T + 1 d^T`.
    pub deformed: PointSet,
}

/// Minimizes `sum_mn p_mn |x_n - s R y_m - d|^2` over the similarity:
/// `A = sum_m (PX_m - p_m x_P)(y_m - y_P)^T`, `R` from the SVD of `A` with
/// the reflection removed, `s = tr(A^T R) / sum_m p_m |y_m - y_P|^2`,
/// `d = x_P - s R y_P`.
pub fn mstep_location(
    frame: &ShapeModel,
    deformed: &PointSet,
    x: &PointSet,
    summary: &PosteriorSummary,
) -> Result<LocationStep> {
    ensure_same_dim(deformed, x)?;
    if summary.sources() != deformed.len() {
        return Err(Error::CountMismatch { expected: deformed.len(), found: summary.sources() });
    }
    check_mass(summary)?;
    let dim = x.dim();
    let x_p = target_mean(x, summary);
    let y_p = source_mean(deformed, summary);
    let mut cross = DMatrix::zeros(dim, dim);
    let mut source_var = 0.0;
    for (m, y) in deformed.iter().enumerate() {
        let p = summary.p1n[m];
        let px = summary.px_row(m);
        for r in 0..dim {
            let t = px[r] - p * x_p[r];
            for c in 0..dim {
                cross[(r, c)] += t * (y[c] - y_p[c]);
            }
            let dy = y[r] - y_p[r];
            source_var += p * dy * dy;
        }
    }
    let increment = solve_similarity(
        &AlignmentMoments { cross, source_var, mean_source: y_p, mean_target: x_p },
        ScaleMode::Similarity,
    )?;
    let frame = transform_model_frame(frame, increment.scale, &increment.rotation)?;
    let deformed = crate::procrustes::apply_transform(&increment, deformed)?;
    Ok(LocationStep { increment, frame, deformed })
}

/// `{tr(X^T d(P^T 1) X) - 2 tr(Y^T P X) + tr(Y^T d(P 1) Y)} / (N_P D)`,
/// on coordinates centered at the target centroid, clamped below at
/// `floor`.
///
/// With `strict`, a raw value below `-1e-9` of the magnitude of its terms
/// is an internal-consistency error; approximate posteriors pass
/// `strict = false` and are clamped.
pub fn mstep_variance(x: &PointSet, y: &PointSet, summary: &PosteriorSummary, floor: f64, strict: bool) -> Result<f64> {
    ensure_same_dim(x, y)?;
    check_mass(summary)?;
    let dim = x.dim();
    let c = x.centroid();
    let mut tx = 0.0;
    for (w, p) in summary.pt1m.iter().zip(x.iter()) {
        tx += w * p.iter().zip(&c).map(|(a, o)| (a - o) * (a - o)).sum::<f64>();
    }
    let mut ty = 0.0;
    let mut cross = 0.0;
    for (m, p) in y.iter().enumerate() {
        let w = summary.p1n[m];
        let px = summary.px_row(m);
        for a in 0..dim {
            let yc = p[a] - c[a];
            ty += w * yc * yc;
            cross += yc * (px[a] - w * c[a]);
        }
    }
    let denom = summary.np * dim as f64;
    let raw = (tx - 2.0 * cross + ty) / denom;
    if !raw.is_finite() {
        return Err(Error::Consistency(format!("non-finite variance update {raw}")));
    }
    if strict && raw < -1e-9 * (tx + ty) / denom {
        return Err(Error::Consistency(format!("negative variance update {raw:e}")));
    }
    Ok(raw.max(floor))
}
