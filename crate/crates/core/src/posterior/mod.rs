//! E-step engines. Every M-step update depends on the posterior matrix
//! `P = (p_mn)` only through `P 1_N`, `P^T 1_M` and `P X`; these are
//! computed here without materializing `P`.

mod dense;
mod nystrom;
mod truncated;

pub use dense::posterior_dense;
pub use nystrom::{nystrom_build, posterior_nystrom, NystromFactor};
pub use truncated::posterior_truncated;

use crate::error::{Error, Result};
use crate::geometry::ball_volume;

/// Denominators below this are treated as zero mass.
pub(crate) const DENOM_FLOOR: f64 = 1e-300;

/// Parameters of the mixture: Gaussian components of common variance
/// `sigma2` centered on the source points, plus a uniform outlier
/// component of weight `omega` over a region of volume `volume`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSettings {
    pub omega: f64,
    pub volume: f64,
    pub sigma2: f64,
}

impl MixtureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.omega) {
            return Err(Error::Domain(format!("omega must lie in [0, 1), got {}", self.omega)));
        }
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(Error::Domain(format!("outlier volume must be positive, got {}", self.volume)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }
}

/// `c = (2 pi sigma2)^(D/2) * omega / (1 - omega) * M / S`.
pub fn outlier_constant(settings: &MixtureSettings, m: usize, dim: usize) -> Result<f64> {
    settings.validate()?;
    let MixtureSettings { omega, volume, sigma2 } = *settings;
    Ok((2.0 * std::f64::consts::PI * sigma2).powf(dim as f64 / 2.0) * omega / (1.0 - omega) * m as f64 / volume)
}

/// E-step products: `p1n = P 1_N` (length M), `pt1m = P^T 1_M` (length N),
/// `px = P X` (M x D, row-major) and `np = 1^T P 1_N`. `affinity_sums`
/// holds `sum_m exp(-|x_n - y_m|^2 / 2 sigma2)` per target, as evaluated by
/// the engine; the solver monitors the likelihood through it.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub p1n: Vec<f64>,
    pub pt1m: Vec<f64>,
    pub px: Vec<f64>,
    pub dim: usize,
    pub np: f64,
    pub affinity_sums: Vec<f64>,
}

impl PosteriorSummary {
    #[inline]
    pub fn px_row(&self, m: usize) -> &[f64] {
        &self.px[m * self.dim..(m + 1) * self.dim]
    }

    pub fn sources(&self) -> usize {
        self.p1n.len()
    }

    pub fn targets(&self) -> usize {
        self.pt1m.len()
    }

    pub fn is_finite(&self) -> bool {
        self.np.is_finite() && self.p1n.iter().chain(&self.pt1m).chain(&self.px).all(|v| v.is_finite())
    }

    /// Builds `q` and `P^T 1_M` from column sums of the affinity matrix.
    pub(crate) fn weights_from_column_sums(col_sums: &[f64], c: f64) -> (Vec<f64>, Vec<f64>) {
        let mut q = Vec::with_capacity(col_sums.len());
        let mut pt1m = Vec::with_capacity(col_sums.len());
        for &s in col_sums {
            let s = s.max(0.0);
            let denom = s + c;
            if denom > DENOM_FLOOR {
                let qn = 1.0 / denom;
                q.push(qn);
                pt1m.push((s * qn).min(1.0));
            } else {
                q.push(0.0);
                pt1m.push(0.0);
            }
        }
        (q, pt1m)
    }
}

/// How the E-step products are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EStepMode {
    Dense,
    Nystrom,
    Truncated,
}

impl std::fmt::Display for EStepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EStepMode::Dense => "dense",
            EStepMode::Nystrom => "nystrom",
            EStepMode::Truncated => "truncated",
        })
    }
}

/// Thresholds of the mode switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeRule {
    /// Dense evaluation while `M * N` does not exceed this.
    pub dense_threshold: usize,
    /// Truncation radius in units of `sigma`.
    pub cutoff_mult: f64,
    /// Nyström sample count `L`.
    pub samples: usize,
}

impl Default for ModeRule {
    fn default() -> Self {
        Self { dense_threshold: 1_000_000, cutoff_mult: 5.0, samples: 500 }
    }
}

/// Expected number of targets within the truncation radius of a source,
/// assuming the `n` targets fill volume `volume` uniformly.
pub fn expected_neighbors(n: usize, sigma2: f64, volume: f64, dim: usize, cutoff_mult: f64) -> f64 {
    n as f64 * ball_volume(dim, cutoff_mult * sigma2.sqrt()) / volume
}

/// Dense when `M * N` is small, truncated when the Gaussian is narrow
/// enough that the expected neighbor count is at most `L`, Nyström otherwise.
pub fn select_mode(m: usize, n: usize, sigma2: f64, volume: f64, dim: usize, rule: &ModeRule) -> EStepMode {
    if m.saturating_mul(n) <= rule.dense_threshold {
        EStepMode::Dense
    } else if expected_neighbors(n, sigma2, volume, dim, rule.cutoff_mult) <= rule.samples as f64 {
        EStepMode::Truncated
    } else {
        EStepMode::Nystrom
    }
}
