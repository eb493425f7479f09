//! Robust ICP baseline: alternating minimization of the scaled
//! Geman–McClure energy
//! `E = sum_mn g_mn |x_n - T(u_m)|^2 + mu (sqrt(g_mn) - 1)^2 + gamma z^T Lambda^-1 z`
//! over the weights `g` and the same shape-model transformation as the
//! EM solver. There is no variance, so the correspondence radius stays
//! fixed at the scale `mu`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dim, sq_dist, NeighborIndex, PointSet};
use crate::posterior::{EStepMode, PosteriorSummary};
use crate::procrustes::SimilarityTransform;
use crate::solver::{mstep_location, mstep_shape, tikhonov, Correspondence, ModeCounts, RegistrationResult};
use crate::ssm::ShapeModel;

/// Weights below this are dropped in the truncated evaluation.
pub const WEIGHT_CUTOFF: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmConfig {
    pub mu: f64,
    pub k_used: Option<usize>,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Dense weights while `M * N` does not exceed this; truncated beyond.
    pub dense_threshold: usize,
}

impl Default for GmConfig {
    fn default() -> Self {
        Self { mu: 1e-4, k_used: None, gamma: 0.0, tol: 1e-4, max_iters: 1000, dense_threshold: 1_000_000 }
    }
}

impl GmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Domain(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Domain("gamma must be nonnegative".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain("tol must be positive".into()));
        }
        Ok(())
    }
}

/// `(mu / (mu + r2))^2`, the minimizer in `g` of `g r2 + mu (sqrt(g) - 1)^2`.
#[inline]
pub fn gm_weight(residual2: f64, mu: f64) -> f64 {
    let t = mu / (mu + residual2);
    t * t
}

/// Geman–McClure loss `mu r2 / (mu + r2)`.
#[inline]
pub fn gm_rho(residual2: f64, mu: f64) -> f64 {
    mu * residual2 / (mu + residual2)
}

/// `sum_mn g_mn |x_n - y_m|^2 + mu (sqrt(g_mn) - 1)^2` for an explicit
/// `M x N` weight matrix.
pub fn gm_energy(x: &PointSet, y: &PointSet, mu: f64, weights: &DMatrix<f64>) -> Result<f64> {
    ensure_same_dim(x, y)?;
    if weights.shape() != (y.len(), x.len()) {
        return Err(Error::CountMismatch { expected: y.len() * x.len(), found: weights.len() });
    }
    let mut e = 0.0;
    for (m, ym) in y.iter().enumerate() {
        for (n, xn) in x.iter().enumerate() {
            let g = weights[(m, n)];
            let s = g.sqrt() - 1.0;
            e += g * sq_dist(xn, ym) + mu * s * s;
        }
    }
    Ok(e)
}

/// Weight products and the energy at the optimal weights.
struct WeightPass {
    summary: PosteriorSummary,
    energy: f64,
}

fn weight_pass(y: &PointSet, x: &PointSet, mu: f64, index: Option<&NeighborIndex>) -> WeightPass {
    let dim = y.dim();
    let rows: Vec<(Vec<(usize, f64)>, f64)> = match index {
        None => (0..y.len())
            .into_par_iter()
            .map(|m| {
                let ym = y.point(m);
                let mut rho = 0.0;
                let list = x
                    .iter()
                    .enumerate()
                    .map(|(n, xn)| {
                        let r2 = sq_dist(ym, xn);
                        rho += gm_rho(r2, mu);
                        (n, gm_weight(r2, mu))
                    })
                    .collect();
                (list, rho)
            })
            .collect(),
        Some(index) => {
            // Beyond the radius every pair's loss lies within 0.1% of mu.
            let radius = ((1.0 / WEIGHT_CUTOFF.sqrt() - 1.0) * mu).sqrt();
            (0..y.len())
                .into_par_iter()
                .map(|m| {
                    let mut list = Vec::new();
                    let mut rho = 0.0;
                    index.for_each_within(y.point(m), radius, |n, r2| {
                        rho += gm_rho(r2, mu) - mu;
                        list.push((n, gm_weight(r2, mu)));
                    });
                    list.sort_unstable_by_key(|&(n, _)| n);
                    (list, rho + mu * x.len() as f64)
                })
                .collect()
        }
    };
    let mut p1n = Vec::with_capacity(y.len());
    let mut px = Vec::with_capacity(y.len() * dim);
    let mut pt1m = vec![0.0; x.len()];
    let mut energy = 0.0;
    for (list, rho) in &rows {
        let mut s = 0.0;
        let mut acc = vec![0.0; dim];
        for &(n, g) in list {
            s += g;
            pt1m[n] += g;
            for (a, b) in acc.iter_mut().zip(x.point(n)) {
                *a += g * b;
            }
        }
        p1n.push(s);
        px.extend(acc);
        energy += rho;
    }
    let np = p1n.iter().sum();
    WeightPass { summary: PosteriorSummary { p1n, pt1m, px, dim, np, affinity_sums: Vec::new() }, energy }
}

/// Alternates the closed-form weight update with the shape and similarity
/// updates of the EM solver, `G` standing in for the posterior, until the
/// relative energy improvement falls below `tol`.
///
/// In the result, `nll_trace` holds the energy trace, `sigma2` the weighted
/// mean squared residual per axis, and each correspondence the source
/// with the largest weight and its share of the target's total weight.
pub fn gm_register(model: &ShapeModel, x: &PointSet, config: &GmConfig) -> Result<RegistrationResult> {
    config.validate()?;
    let model = match config.k_used {
        Some(k) => model.truncated(k),
        None => model.clone(),
    };
    let mut y = model.mean_shape();
    ensure_same_dim(&y, x)?;
    let eigenvalues = model.eigenvalues().clone();
    let dim = x.dim();
    let mode =
        if y.len().saturating_mul(x.len()) <= config.dense_threshold { EStepMode::Dense } else { EStepMode::Truncated };
    let index = (mode == EStepMode::Truncated).then(|| NeighborIndex::build(x));

    let mut frame = model.clone();
    let mut z = DVector::zeros(model.modes());
    let mut transform = SimilarityTransform::identity(dim);
    let mut trace = Vec::new();
    let mut modes = ModeCounts::default();
    let mut iterations = 0;
    let mut converged = false;

    let last = loop {
        let pass = weight_pass(&y, x, config.mu, index.as_ref());
        let energy = pass.energy + config.gamma * tikhonov(&z, &eigenvalues);
        trace.push(energy);
        if let Some(&prev) = trace.iter().rev().nth(1) {
            // The energy is nonnegative and typically far below one, so the
            // improvement is taken relative to it alone.
            if (prev - energy).abs() <= config.tol * prev.abs() {
                converged = true;
            }
        }
        if converged || iterations >= config.max_iters {
            break pass;
        }
        if !(pass.summary.np > 0.0) {
            return Err(Error::DegenerateConfiguration("all matching weights vanished".into()));
        }
        match mode {
            EStepMode::Dense => modes.dense += 1,
            _ => modes.truncated += 1,
        }
        let a = mstep_shape(&frame, &pass.summary, x, config.gamma)?;
        let b = mstep_location(&frame, &a.deformed, x, &pass.summary)?;
        let inc = &b.increment;
        transform = SimilarityTransform {
            scale: inc.scale * transform.scale,
            rotation: &inc.rotation * &transform.rotation,
            translation: inc.scale * (&inc.rotation * &a.translation) + &inc.translation,
        };
        z = a.z;
        frame = b.frame;
        y = b.deformed;
        iterations += 1;
        if !y.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { iteration: iterations, what: "shape after update".into() });
        }
    };

    let s = &last.summary;
    let mut weighted_r2 = 0.0;
    for (m, ym) in y.iter().enumerate() {
        let px = s.px_row(m);
        let mut cross = 0.0;
        let mut yy = 0.0;
        for a in 0..dim {
            cross += ym[a] * px[a];
            yy += ym[a] * ym[a];
        }
        weighted_r2 += -2.0 * cross + s.p1n[m] * yy;
    }
    for (w, xn) in s.pt1m.iter().zip(x.iter()) {
        weighted_r2 += w * xn.iter().map(|v| v * v).sum::<f64>();
    }
    let sigma2 = if s.np > 0.0 { (weighted_r2 / (s.np * dim as f64)).max(0.0) } else { f64::NAN };

    let y_index = NeighborIndex::build(&y);
    let correspondence = (0..x.len())
        .map(|n| {
            let (best, d2) = y_index.nearest(x.point(n));
            let g = gm_weight(d2, config.mu);
            let total = s.pt1m[n].max(g);
            Correspondence { source: best, probability: if total > 0.0 { (g / total).min(1.0) } else { 0.0 } }
        })
        .collect();

    Ok(RegistrationResult {
        deformed: y,
        correspondence,
        transform,
        z,
        sigma2,
        iterations,
        converged,
        nll_trace: trace,
        gamma_trace: vec![config.gamma; iterations],
        modes,
    })
}
