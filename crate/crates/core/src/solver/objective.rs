use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{ensure_same_dim, sq_dist, NeighborIndex, PointSet};
use crate::posterior::{MixtureSettings, PosteriorSummary};

/// Dense evaluation while `M * N` does not exceed this.
const DENSE_LIMIT: usize = 1_000_000;
/// Truncation radius of the sparse evaluation, in units of `sigma`.
const NLL_CUTOFF: f64 = 8.0;

/// `z^T Lambda^-1 z`.
pub fn tikhonov(z: &DVector<f64>, eigenvalues: &DVector<f64>) -> f64 {
    z.iter().zip(eigenvalues.iter()).map(|(a, l)| a * a / l).sum()
}

/// Log of the Gaussian part's normalizer, `log((1 - omega) / M) - D/2 log(2 pi sigma2)`.
fn log_component_scale(settings: &MixtureSettings, m: usize, dim: usize) -> f64 {
    (1.0 - settings.omega).ln()
        - (m as f64).ln()
        - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * settings.sigma2).ln()
}

/// `log(exp(a) + exp(b))` for `a` possibly `-inf`.
fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `-log p(x_n)` from squared distances to sources, by log-sum-exp.
fn point_nll<I: Iterator<Item = f64> + Clone>(d2: I, log_outlier: f64, log_scale: f64, sigma2: f64) -> f64 {
    let max_e = d2.clone().map(|v| -v / (2.0 * sigma2)).fold(f64::NEG_INFINITY, f64::max);
    let log_gauss = if max_e == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        let s: f64 = d2.map(|v| (-v / (2.0 * sigma2) - max_e).exp()).sum();
        log_scale + max_e + s.ln()
    };
    -log_add(log_outlier, log_gauss)
}

/// Negative log-likelihood of the mixture plus `gamma z^T Lambda^-1 z`:
/// `-sum_n log[omega / S + (1 - omega) / M sum_m N(x_n | y_m, sigma2)]`.
///
/// Dense when `M * N <= 1e6`; otherwise the Gaussian sum is taken over
/// sources within `8 sigma` of each target (the nearest source when none is).
pub fn penalized_nll(
    x: &PointSet,
    y: &PointSet,
    settings: &MixtureSettings,
    gamma: f64,
    z: &DVector<f64>,
    eigenvalues: &DVector<f64>,
) -> Result<f64> {
    ensure_same_dim(x, y)?;
    settings.validate()?;
    let log_outlier = if settings.omega > 0.0 { (settings.omega / settings.volume).ln() } else { f64::NEG_INFINITY };
    let log_scale = log_component_scale(settings, y.len(), y.dim());
    let s2 = settings.sigma2;
    let per_point: Vec<f64> = if y.len().saturating_mul(x.len()) <= DENSE_LIMIT {
        x.iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|xn| point_nll(y.iter().map(|ym| sq_dist(ym, xn)), log_outlier, log_scale, s2))
            .collect()
    } else {
        let index = NeighborIndex::build(y);
        let radius = NLL_CUTOFF * s2.sqrt();
        (0..x.len())
            .into_par_iter()
            .map(|n| {
                let xn = x.point(n);
                let mut d2 = Vec::new();
                index.for_each_within(xn, radius, |_, d| d2.push(d));
                if d2.is_empty() {
                    d2.push(index.nearest(xn).1);
                }
                d2.sort_unstable_by(f64::total_cmp);
                point_nll(d2.into_iter(), log_outlier, log_scale, s2)
            })
            .collect()
    };
    Ok(per_point.iter().sum::<f64>() + gamma * tikhonov(z, eigenvalues))
}

/// Data part of the negative log-likelihood from the affinity sums an
/// E-step already produced. Targets whose sum underflowed with `omega = 0`
/// are re-evaluated exactly against `y`.
pub(crate) fn nll_from_summary(
    x: &PointSet,
    y: &PointSet,
    settings: &MixtureSettings,
    summary: &PosteriorSummary,
) -> f64 {
    let log_outlier = if settings.omega > 0.0 { (settings.omega / settings.volume).ln() } else { f64::NEG_INFINITY };
    let log_scale = log_component_scale(settings, y.len(), y.dim());
    summary
        .affinity_sums
        .iter()
        .enumerate()
        .map(|(n, &a)| {
            if a > 1e-290 || log_outlier > f64::NEG_INFINITY {
                let log_gauss = if a > 0.0 { log_scale + a.ln() } else { f64::NEG_INFINITY };
                -log_add(log_outlier, log_gauss)
            } else {
                let xn = x.point(n);
                point_nll(y.iter().map(|ym| sq_dist(ym, xn)), log_outlier, log_scale, settings.sigma2)
            }
        })
        .sum()
}
