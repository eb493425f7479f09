use crate::error::Result;
use crate::geometry::{ensure_same_shape, sq_dist, NeighborIndex, PointSet};

/// Fraction of landmarks whose nearest true point (ties to the smallest
/// index) is their own counterpart.
pub fn accuracy(deformed: &PointSet, x_true: &PointSet) -> Result<f64> {
    ensure_same_shape(deformed, x_true)?;
    let index = NeighborIndex::build(x_true);
    let correct = deformed.iter().enumerate().filter(|(m, p)| index.nearest(p).0 == *m).count();
    Ok(correct as f64 / deformed.len() as f64)
}

/// `max_m |deformed_m - x_true_m|`.
pub fn max_point_error(deformed: &PointSet, x_true: &PointSet) -> Result<f64> {
    ensure_same_shape(deformed, x_true)?;
    Ok(deformed.iter().zip(x_true.iter()).map(|(a, b)| sq_dist(a, b)).fold(0.0, f64::max).sqrt())
}

/// Whether every landmark lies strictly within `threshold` of its truth.
pub fn success(deformed: &PointSet, x_true: &PointSet, threshold: f64) -> Result<bool> {
    let e = max_point_error(deformed, x_true)?;
    Ok(if threshold > 0.0 { e < threshold } else { e == 0.0 })
}
