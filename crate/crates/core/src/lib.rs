//! Point set registration driven by a statistical shape model.
//!
//! A PCA shape model is trained from corresponding landmark shapes
//! ([`ssm`], [`procrustes`]); its mean shape is then registered to an
//! unstructured target set by a Gaussian-mixture EM solver ([`solver`])
//! whose E-step ([`posterior`]) runs densely, with a Nyström low-rank
//! kernel, or truncated through a KD-tree. [`gmicp`] is a robust-ICP
//! baseline sharing the same transformation model, and [`harness`]
//! generates synthetic corpora, corruptions and evaluation grids.

pub mod error;
pub mod geometry;
pub mod gmicp;
pub mod harness;
mod linalg;
pub mod posterior;
pub mod procrustes;
pub mod solver;
pub mod ssm;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, NeighborIndex, PointSet};
pub use procrustes::SimilarityTransform;
pub use ssm::ShapeModel;

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}
