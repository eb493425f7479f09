use rayon::prelude::*;

use super::{outlier_constant, MixtureSettings, PosteriorSummary};
use crate::error::Result;
use crate::geometry::{ensure_same_dim, sq_dist, PointSet};

/// Exact products from every affinity `k_mn`, in two passes so that no
/// `M x N` matrix is stored: column sums give `q`, then each source row
/// accumulates `sum_n k_mn q_n` and `sum_n k_mn q_n x_n`.
///
/// Each output entry is a sequential sum in index order, so results do
/// not depend on the thread count.
pub fn posterior_dense(y: &PointSet, x: &PointSet, settings: &MixtureSettings) -> Result<PosteriorSummary> {
    ensure_same_dim(y, x)?;
    let dim = y.dim();
    let c = outlier_constant(settings, y.len(), dim)?;
    let scale = -0.5 / settings.sigma2;

    let col_sums: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|n| {
            let xn = x.point(n);
            y.iter().map(|ym| (scale * sq_dist(ym, xn)).exp()).sum()
        })
        .collect();
    let (q, pt1m) = PosteriorSummary::weights_from_column_sums(&col_sums, c);

    let rows: Vec<(f64, Vec<f64>)> = (0..y.len())
        .into_par_iter()
        .map(|m| {
            let ym = y.point(m);
            let mut p = 0.0;
            let mut px = vec![0.0; dim];
            for (n, xn) in x.iter().enumerate() {
                if q[n] == 0.0 {
                    continue;
                }
                let w = (scale * sq_dist(ym, xn)).exp() * q[n];
                p += w;
                for (a, b) in px.iter_mut().zip(xn) {
                    *a += w * b;
                }
            }
            (p, px)
        })
        .collect();

    let mut p1n = Vec::with_capacity(y.len());
    let mut px = Vec::with_capacity(y.len() * dim);
    for (p, row) in rows {
        p1n.push(p);
        px.extend(row);
    }
    let np = p1n.iter().sum();
    Ok(PosteriorSummary { p1n, pt1m, px, dim, np, affinity_sums: col_sums })
}
