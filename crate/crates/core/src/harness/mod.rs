//! Synthetic experiments: generated corpora, target corruptions, matching
//! metrics, pose success grids and runtime scaling.

mod bench;
mod corpus;
mod corrupt;
mod grid;
mod metrics;

use std::time::Instant;

use rayon::prelude::*;

pub use bench::{bench_scaling, loglog_slope, BenchRow, BenchSpec};
pub use corpus::{
    cloud_model, cloud_shapes, contour_model, contour_shapes, sample_ground_truth, surface_model, surface_shapes,
    train_model, GroundTruth, TargetRanges, TRAIN_SWEEPS,
};
pub use corrupt::{corrupt, corrupt_with_truth, outlier_count, Corruption, CorruptionSpec};
pub use grid::{success_grid, GridCell, GridSpec, SuccessGrid};
pub use metrics::{accuracy, max_point_error, success};

use crate::error::Result;
use crate::geometry::PointSet;
use crate::gmicp::{gm_register, GmConfig};
use crate::solver::{em_register, DldConfig, ModeCounts, RegistrationResult};
use crate::ssm::ShapeModel;

/// SplitMix64 finalizer over `base` and `index`, for per-trial seeds.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A registration method with its configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Dld(DldConfig),
    GmIcp(GmConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dld(_) => "dld",
            Method::GmIcp(_) => "gm-icp",
        }
    }

    pub fn register(&self, model: &ShapeModel, x: &PointSet) -> Result<RegistrationResult> {
        match self {
            Method::Dld(c) => em_register(model, x, c),
            Method::GmIcp(c) => gm_register(model, x, c),
        }
    }

    /// The same method with its sampling seed replaced (GM-ICP has none).
    pub fn reseeded(&self, seed: u64) -> Method {
        match self {
            Method::Dld(c) => Method::Dld(DldConfig { seed, ..c.clone() }),
            Method::GmIcp(c) => Method::GmIcp(c.clone()),
        }
    }
}

/// Outcome of registering one corrupted target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialRecord {
    pub spec: CorruptionSpec,
    pub method: String,
    pub accuracy: f64,
    pub success: bool,
    pub max_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_secs: f64,
    pub modes: ModeCounts,
    /// Set when registration failed; the trial then counts as a miss.
    pub error: Option<String>,
}

/// Corrupts `x_true`, registers the model to it, and scores the deformed
/// mean shape against `x_true` carried along by the rigid stages.
/// Registration errors are recorded, not returned; corruption errors are
/// returned.
pub fn run_trial(
    model: &ShapeModel,
    x_true: &PointSet,
    spec: &CorruptionSpec,
    method: &Method,
    threshold: f64,
) -> Result<TrialRecord> {
    let (x, truth) = corrupt_with_truth(x_true, spec)?;
    let start = Instant::now();
    let outcome = method.register(model, &x);
    let wall_secs = start.elapsed().as_secs_f64();
    let mut record = TrialRecord {
        spec: spec.clone(),
        method: method.name().into(),
        accuracy: 0.0,
        success: false,
        max_error: f64::INFINITY,
        iterations: 0,
        converged: false,
        wall_secs,
        modes: ModeCounts::default(),
        error: None,
    };
    match outcome {
        Ok(r) => {
            record.accuracy = accuracy(&r.deformed, &truth)?;
            record.max_error = max_point_error(&r.deformed, &truth)?;
            record.success = success(&r.deformed, &truth, threshold)?;
            record.iterations = r.iterations;
            record.converged = r.converged;
            record.modes = r.modes;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    Ok(record)
}

/// [`run_trial`] over many `(truth, spec)` pairs in parallel; the output
/// keeps the input order. The method is reseeded per trial from the
/// corruption seed.
pub fn run_trials(
    model: &ShapeModel,
    trials: &[(PointSet, CorruptionSpec)],
    method: &Method,
    threshold: f64,
) -> Result<Vec<TrialRecord>> {
    trials
        .par_iter()
        .map(|(truth, spec)| run_trial(model, truth, spec, &method.reseeded(spec.seed), threshold))
        .collect()
}

/// Mean accuracy over records.
pub fn mean_accuracy(records: &[TrialRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64
}
