use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, PointSet};
use crate::procrustes::{apply_transform, rotation_2d, rotation_3d, SimilarityTransform};

use super::mix_seed;

/// One modification of a target point set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    /// Every point emitted `copies` times with isotropic Gaussian offsets.
    Replicate {
        copies: usize,
        noise: f64,
    },
    /// Every point dropped independently with probability `rate`.
    Delete {
        rate: f64,
    },
    /// Uniform points on `bbox` (the target's own box when `None`). With
    /// `snr` the inlier/outlier count ratio, `ceil(N / snr)` are appended;
    /// `inverted` reads `snr` as outlier/inlier instead.
    Outliers {
        snr: f64,
        bbox: Option<BoundingBox>,
        #[serde(default)]
        inverted: bool,
    },
    /// Rotation about the set's centroid; `axis` is required in 3D.
    Rotate {
        angle: f64,
        axis: Option<[f64; 3]>,
    },
    Translate {
        offset: Vec<f64>,
    },
    /// Stages applied in order, each with its own derived seed.
    Compose {
        stages: Vec<Corruption>,
    },
}

/// A corruption and the seed driving its randomness.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorruptionSpec {
    pub corruption: Corruption,
    pub seed: u64,
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        match self {
            Corruption::Replicate { copies, noise } => {
                if *copies < 1 {
                    return Err(Error::Domain("replication needs at least one copy".into()));
                }
                if !(*noise >= 0.0) || !noise.is_finite() {
                    return Err(Error::Domain(format!(
                        "replication noise must be finite and nonnegative, got {noise}"
                    )));
                }
            }
            Corruption::Delete { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Domain(format!("deletion rate must lie in [0, 1], got {rate}")));
                }
            }
            Corruption::Outliers { snr, .. } => {
                if !(*snr > 0.0) || !snr.is_finite() {
                    return Err(Error::Domain(format!("snr must be positive, got {snr}")));
                }
            }
            Corruption::Rotate { angle, axis } => {
                if !angle.is_finite() {
                    return Err(Error::Domain("rotation angle must be finite".into()));
                }
                if let Some(a) = axis {
                    if !(a.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                        return Err(Error::Domain("rotation axis must be nonzero".into()));
                    }
                }
            }
            Corruption::Translate { offset } => {
                if offset.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("translation must be finite".into()));
                }
            }
            Corruption::Compose { stages } => stages.iter().try_for_each(Corruption::validate)?,
        }
        Ok(())
    }

    /// Whether the output depends on the seed.
    pub fn is_stochastic(&self) -> bool {
        match self {
            Corruption::Replicate { noise, .. } => *noise > 0.0,
            Corruption::Delete { rate } => *rate > 0.0,
            Corruption::Outliers { .. } => true,
            Corruption::Rotate { .. } | Corruption::Translate { .. } => false,
            Corruption::Compose { stages } => stages.iter().any(Corruption::is_stochastic),
        }
    }
}

/// Number of outliers appended to `n` inliers.
pub fn outlier_count(n: usize, snr: f64, inverted: bool) -> usize {
    let c = if inverted { n as f64 * snr } else { n as f64 / snr };
    c.ceil() as usize
}

/// Applies `spec` to `x`. Deterministic given the spec.
pub fn corrupt(x: &PointSet, spec: &CorruptionSpec) -> Result<PointSet> {
    Ok(corrupt_with_truth(x, spec)?.0)
}

/// [`corrupt`], also returning `x` moved by the rigid stages alone. Each
/// rigid stage is fixed on the corrupted set as it stands at that stage and
/// applied to both, so the second set is the ground truth to score against.
pub fn corrupt_with_truth(x: &PointSet, spec: &CorruptionSpec) -> Result<(PointSet, PointSet)> {
    spec.corruption.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput("nothing to corrupt".into()));
    }
    apply(x, x.clone(), &spec.corruption, spec.seed)
}

fn apply(x: &PointSet, truth: PointSet, c: &Corruption, seed: u64) -> Result<(PointSet, PointSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.dim();
    match c {
        Corruption::Replicate { copies, noise } => {
            let normal = Normal::new(0.0, *noise).map_err(|e| Error::Domain(e.to_string()))?;
            let mut coords = Vec::with_capacity(x.as_slice().len() * copies);
            for p in x.iter() {
                for _ in 0..*copies {
                    coords.extend(p.iter().map(|v| v + normal.sample(&mut rng)));
                }
            }
            Ok((PointSet::new(d, coords)?, truth))
        }
        Corruption::Delete { rate } => {
            let mut keep: Vec<usize> = (0..x.len()).filter(|_| rng.random::<f64>() >= *rate).collect();
            if keep.is_empty() {
                keep.push(rng.random_range(0..x.len()));
            }
            Ok((x.subset(&keep), truth))
        }
        Corruption::Outliers { snr, bbox, inverted } => {
            let bbox = bbox.clone().unwrap_or_else(|| x.bounding_box());
            if bbox.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: bbox.dim() });
            }
            let count = outlier_count(x.len(), *snr, *inverted);
            let (lo, hi) = (&bbox.lo, &bbox.hi);
            let mut coords = x.as_slice().to_vec();
            coords.reserve(count * d);
            for _ in 0..count {
                for k in 0..d {
                    let u: f64 = rng.random();
                    coords.push(lo[k] + u * (hi[k] - lo[k]));
                }
            }
            Ok((PointSet::new(d, coords)?, truth))
        }
        Corruption::Rotate { angle, axis } => {
            let rotation = match (d, axis) {
                (2, _) => rotation_2d(*angle),
                (3, Some(a)) => rotation_3d(*a, *angle),
                (3, None) => return Err(Error::Domain("3D rotation needs an axis".into())),
                _ => return Err(Error::Domain(format!("rotation is defined for 2D and 3D only, got {d}D"))),
            };
            let c = nalgebra::DVector::from_vec(x.centroid());
            let translation = &c - &rotation * &c;
            let t = SimilarityTransform::new(1.0, rotation, translation)?;
            Ok((apply_transform(&t, x)?, apply_transform(&t, &truth)?))
        }
        Corruption::Translate { offset } => {
            if offset.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: offset.len() });
            }
            Ok((x.translated(offset), truth.translated(offset)))
        }
        Corruption::Compose { stages } => {
            let (mut cur, mut truth) = (x.clone(), truth);
            for (i, s) in stages.iter().enumerate() {
                (cur, truth) = apply(&cur, truth, s, mix_seed(seed, i as u64))?;
            }
            Ok((cur, truth))
        }
    }
}
