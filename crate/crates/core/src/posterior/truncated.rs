use rayon::prelude::*;

use super::{outlier_constant, MixtureSettings, PosteriorSummary};
use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dim, NeighborIndex, PointSet};

/// E-step products with every affinity beyond `cutoff_mult * sigma` set to
/// zero. `index` must be built over `x`. Neighbor lists are gathered in
/// parallel; every accumulation runs in a fixed order.
pub fn posterior_truncated(
    y: &PointSet,
    x: &PointSet,
    settings: &MixtureSettings,
    index: &NeighborIndex,
    cutoff_mult: f64,
) -> Result<PosteriorSummary> {
    ensure_same_dim(y, x)?;
    if index.len() != x.len() || index.dim() != x.dim() {
        return Err(Error::Domain("neighbor index was built for a different target set".into()));
    }
    if !(cutoff_mult > 0.0) {
        return Err(Error::Domain(format!("cutoff multiple must be positive, got {cutoff_mult}")));
    }
    let dim = y.dim();
    let c = outlier_constant(settings, y.len(), dim)?;
    let scale = -0.5 / settings.sigma2;
    let radius = cutoff_mult * settings.sigma2.sqrt();

    let neighbors: Vec<Vec<(usize, f64)>> = (0..y.len())
        .into_par_iter()
        .map(|m| {
            let mut list = Vec::new();
            index.for_each_within(y.point(m), radius, |n, d2| list.push((n, (scale * d2).exp())));
            list.sort_unstable_by_key(|&(n, _)| n);
            list
        })
        .collect();

    let mut col_sums = vec![0.0; x.len()];
    for list in &neighbors {
        for &(n, k) in list {
            col_sums[n] += k;
        }
    }
    let (q, pt1m) = PosteriorSummary::weights_from_column_sums(&col_sums, c);

    let rows: Vec<(f64, Vec<f64>)> = neighbors
        .par_iter()
        .map(|list| {
            let mut p = 0.0;
            let mut px = vec![0.0; dim];
            for &(n, k) in list {
                let w = k * q[n];
                p += w;
                for (a, b) in px.iter_mut().zip(x.point(n)) {
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
