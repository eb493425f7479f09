use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::posterior::EStepMode;
use crate::solver::{em_register_with, DldConfig, ModeCounts, ModePolicy};
use crate::ssm::ShapeModel;

use super::mix_seed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub modes: Vec<ModePolicy>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sizes: vec![1250, 2500, 5000, 10000],
            modes: vec![ModePolicy::Dense, ModePolicy::Nystrom],
            repetitions: 1,
            seed: 0,
        }
    }
}

/// Timing of one registration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub mode: ModePolicy,
    pub repetition: usize,
    pub total_secs: f64,
    pub per_iter_secs: f64,
    /// Mean duration of the updates whose E-step was Nyström.
    pub nystrom_iter_secs: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub modes: ModeCounts,
}

/// For each size and repetition, samples `size` landmarks of the model and
/// `size` target points without replacement, independently, and times one
/// registration per mode policy on that same pair. Runs sequentially so
/// timings do not compete.
pub fn bench_scaling(model: &ShapeModel, x: &PointSet, spec: &BenchSpec, config: &DldConfig) -> Result<Vec<BenchRow>> {
    let available = model.landmarks().min(x.len());
    if let Some(&s) = spec.sizes.iter().find(|&&s| s == 0 || s > available) {
        return Err(Error::Domain(format!("benchmark size {s} outside 1..={available}")));
    }
    let mut rows = Vec::new();
    for (i, &size) in spec.sizes.iter().enumerate() {
        for rep in 0..spec.repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, (i * spec.repetitions + rep) as u64));
            let mut src = sample(&mut rng, model.landmarks(), size).into_vec();
            src.sort_unstable();
            let mut tgt = sample(&mut rng, x.len(), size).into_vec();
            tgt.sort_unstable();
            let sub_model = model.select_landmarks(&src)?;
            let sub_x = x.subset(&tgt);
            for &mode in &spec.modes {
                let cfg = DldConfig { mode, ..config.clone() };
                let start = Instant::now();
                let mut mark = start;
                let (mut nys_secs, mut nys_count) = (0.0, 0usize);
                let r = em_register_with(&sub_model, &sub_x, &cfg, |s, _| {
                    let now = Instant::now();
                    if s.last_mode == Some(EStepMode::Nystrom) {
                        nys_secs += (now - mark).as_secs_f64();
                        nys_count += 1;
                    }
                    mark = now;
                })?;
                let total = start.elapsed().as_secs_f64();
                rows.push(BenchRow {
                    size,
                    mode,
                    repetition: rep,
                    total_secs: total,
                    per_iter_secs: total / r.iterations.max(1) as f64,
                    nystrom_iter_secs: (nys_count > 0).then(|| nys_secs / nys_count as f64),
                    iterations: r.iterations,
                    converged: r.converged,
                    modes: r.modes,
                });
            }
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::CountMismatch { expected: xs.len(), found: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("a slope needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("log-log fit needs distinct sizes".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::surface_model;

    #[test]
    fn slope_of_power_law_is_exponent() {
        let xs = [1250.0, 2500.0, 5000.0, 10000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3e-6 * x.powf(1.3)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.3).abs() < 1e-12);
        assert!(loglog_slope(&xs[..1], &ys[..1]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn smallest_size_gives_well_formed_rows() {
        let model = surface_model(600, 5, 31).unwrap();
        let x = model.mean_shape();
        let spec = BenchSpec { sizes: vec![200, 400], repetitions: 1, ..BenchSpec::default() };
        let config = DldConfig { nystrom_samples: 100, max_iters: 30, ..DldConfig::default() };
        let rows = bench_scaling(&model, &x, &spec, &config).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.total_secs > 0.0 && r.per_iter_secs > 0.0);
            assert!(r.iterations > 0);
        }
        assert_eq!(rows[0].mode, ModePolicy::Dense);
        assert_eq!(rows[0].modes.nystrom + rows[0].modes.truncated, 0);
        assert_eq!(rows[0].nystrom_iter_secs, None);
        assert_eq!(rows[1].modes.dense, 0);
        assert_eq!(rows[1].nystrom_iter_secs.is_some(), rows[1].modes.nystrom > 0);
        assert!(bench_scaling(&model, &x, &BenchSpec { sizes: vec![601], ..spec }, &config).is_err());
    }
}
