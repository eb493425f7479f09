//! EM registration of a shape model's mean shape to a target point set.
//!
//! Each iteration runs the E-step (dense, Nyström or truncated), then
//! three M-steps in order: (a) shape weights and translation in the
//! current model frame, (b) the similarity, folded into the frame, and
//! (c) the residual variance.

mod objective;
mod steps;

pub use objective::{penalized_nll, tikhonov};
pub use steps::{
    initial_variance, mstep_location, mstep_shape, mstep_variance, source_mean, target_mean, LocationStep, ShapeStep,
    MIN_MASS,
};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dim, sq_dist, volume_mvue, NeighborIndex, PointSet};
use crate::posterior::{
    expected_neighbors, nystrom_build, posterior_dense, posterior_nystrom, posterior_truncated, select_mode, EStepMode,
    MixtureSettings, ModeRule, PosteriorSummary,
};
use crate::procrustes::SimilarityTransform;
use crate::ssm::ShapeModel;

/// Volume used when the target has zero extent along some axis.
pub const VOLUME_FLOOR: f64 = 1e-12;

/// How `gamma` enters the shape system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaScaling {
    /// `gamma` as is. Relative to the data term the penalty then grows as
    /// `sigma2` shrinks, which keeps early iterations close to the mean shape.
    #[default]
    Literal,
    /// `2 sigma2 gamma`: the exact minimizer of the surrogate penalized by a
    /// fixed `gamma`, so the penalized likelihood decreases monotonically.
    Variance,
}

/// Which E-step engines the solver may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    /// [`select_mode`] every iteration.
    #[default]
    Auto,
    Dense,
    /// Nyström, or truncated once the Gaussian is narrow enough; never dense.
    Nystrom,
    Truncated,
}

impl std::str::FromStr for ModePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "dense" => Ok(Self::Dense),
            "nystrom" => Ok(Self::Nystrom),
            "truncated" => Ok(Self::Truncated),
            other => Err(Error::Domain(format!("unknown E-step mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModePolicy::Auto => "auto",
            ModePolicy::Dense => "dense",
            ModePolicy::Nystrom => "nystrom",
            ModePolicy::Truncated => "truncated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DldConfig {
    pub omega: f64,
    pub gamma: f64,
    /// Value taken once the relative improvement first drops below
    /// `gamma_trigger * tol`.
    pub gamma_final: f64,
    pub gamma_trigger: f64,
    pub gamma_scaling: GammaScaling,
    /// Number of shape variations used; `None` keeps all of them.
    pub k_used: Option<usize>,
    pub nystrom_samples: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Defaults to `1e-8 * diameter(X)^2`.
    pub sigma2_floor: Option<f64>,
    pub cutoff_mult: f64,
    pub dense_threshold: usize,
    pub mode: ModePolicy,
    pub seed: u64,
    /// Draw new Nyström samples every E-step; otherwise reuse the first draw.
    pub resample_each_step: bool,
}

impl Default for DldConfig {
    fn default() -> Self {
        Self {
            omega: 0.01,
            gamma: 1e-3,
            gamma_final: 0.0,
            gamma_trigger: 10.0,
            gamma_scaling: GammaScaling::Literal,
            k_used: None,
            nystrom_samples: 500,
            tol: 1e-4,
            max_iters: 1000,
            sigma2_floor: None,
            cutoff_mult: 5.0,
            dense_threshold: 1_000_000,
            mode: ModePolicy::Auto,
            seed: 0,
            resample_each_step: true,
        }
    }
}

impl DldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(what.to_string()));
        if !(0.0..1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1)");
        }
        if !(self.gamma >= 0.0) || !(self.gamma_final >= 0.0) {
            return bad("gamma values must be nonnegative");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.gamma_trigger >= 1.0) {
            return bad("gamma trigger must be at least 1");
        }
        if self.nystrom_samples == 0 {
            return bad("Nyström sample count must be positive");
        }
        if !(self.cutoff_mult > 0.0) {
            return bad("cutoff multiple must be positive");
        }
        if let Some(f) = self.sigma2_floor {
            if !(f > 0.0) {
                return bad("sigma2 floor must be positive");
            }
        }
        Ok(())
    }

    fn rule(&self) -> ModeRule {
        ModeRule { dense_threshold: self.dense_threshold, cutoff_mult: self.cutoff_mult, samples: self.nystrom_samples }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaPhase {
    Initial,
    Final,
}

/// One-way switch of `gamma` from its initial to its final value.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSchedule {
    initial: f64,
    final_value: f64,
    threshold: f64,
    phase: GammaPhase,
    switched_at: Option<usize>,
}

impl GammaSchedule {
    pub fn new(config: &DldConfig) -> Self {
        Self {
            initial: config.gamma,
            final_value: config.gamma_final,
            threshold: config.gamma_trigger * config.tol,
            phase: GammaPhase::Initial,
            switched_at: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self.phase {
            GammaPhase::Initial => self.initial,
            GammaPhase::Final => self.final_value,
        }
    }

    pub fn phase(&self) -> GammaPhase {
        self.phase
    }

    pub fn switched_at(&self) -> Option<usize> {
        self.switched_at
    }

    /// Feeds the relative improvement observed at `step`; returns `true`
    /// when this call switched the phase. Equal initial and final values
    /// never switch.
    pub fn observe(&mut self, step: usize, improvement: f64) -> bool {
        if self.phase == GammaPhase::Initial && self.initial != self.final_value && improvement < self.threshold {
            self.phase = GammaPhase::Final;
            self.switched_at = Some(step);
            return true;
        }
        false
    }
}

/// `|prev - cur| / (|prev| + 1)`.
pub fn relative_improvement(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / (prev.abs() + 1.0)
}

/// Current parameters. Invariant: `deformed = frame.deform(z) + translation`
/// where the translation is `transform.translation`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub z: DVector<f64>,
    /// Cumulative similarity from the original model frame.
    pub transform: SimilarityTransform,
    pub sigma2: f64,
    pub deformed: PointSet,
    /// The model with `u` and `H` carried into the current rotated and
    /// scaled frame.
    pub frame: ShapeModel,
    pub iter: usize,
    pub nll: f64,
    pub gamma_phase: GammaPhase,
    /// E-step engine of the most recent update.
    pub last_mode: Option<EStepMode>,
}

impl SolverState {
    /// Largest deviation of `deformed` from the frame reconstruction.
    pub fn frame_residual(&self) -> f64 {
        let rebuilt =
            self.frame.deform(&self.z).expect("z matches the frame").translated(self.transform.translation.as_slice());
        rebuilt.as_slice().iter().zip(self.deformed.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Mean shape at identity, `z = 0`, and the pair-averaged initial variance.
/// Also returns the outlier volume `S`.
pub fn initialize(model: &ShapeModel, x: &PointSet, config: &DldConfig) -> Result<(SolverState, f64)> {
    let y = model.mean_shape();
    ensure_same_dim(&y, x)?;
    config.validate()?;
    let volume = match volume_mvue(x) {
        Ok(s) => s,
        Err(Error::DegenerateExtent { .. }) | Err(Error::InsufficientData(_)) => {
            let n = x.len() as f64;
            let factor = if x.len() > 1 { (n + 1.0) / (n - 1.0) } else { 1.0 };
            let raw: f64 = x.bounding_box().extents().iter().map(|e| e * factor).product();
            raw.max(VOLUME_FLOOR)
        }
        Err(e) => return Err(e),
    };
    let mut sigma2 = initial_variance(&y, x)?;
    if !(sigma2 > 0.0) {
        sigma2 = sigma2_floor(x, config);
    }
    let dim = x.dim();
    Ok((
        SolverState {
            z: DVector::zeros(model.modes()),
            transform: SimilarityTransform::identity(dim),
            sigma2,
            deformed: y,
            frame: model.clone(),
            iter: 0,
            nll: f64::NAN,
            gamma_phase: GammaPhase::Initial,
            last_mode: None,
        },
        volume,
    ))
}

fn sigma2_floor(x: &PointSet, config: &DldConfig) -> f64 {
    config.sigma2_floor.unwrap_or_else(|| {
        let d = x.diameter();
        (1e-8 * d * d).max(f64::MIN_POSITIVE)
    })
}

/// Per-target match: the source with the largest posterior and that posterior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Correspondence {
    pub source: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModeCounts {
    pub dense: usize,
    pub nystrom: usize,
    pub truncated: usize,
}

impl ModeCounts {
    fn record(&mut self, mode: EStepMode) {
        match mode {
            EStepMode::Dense => self.dense += 1,
            EStepMode::Nystrom => self.nystrom += 1,
            EStepMode::Truncated => self.truncated += 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub deformed: PointSet,
    /// One entry per target point.
    pub correspondence: Vec<Correspondence>,
    pub transform: SimilarityTransform,
    pub z: DVector<f64>,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after 0, 1, .., `iterations` updates.
    pub nll_trace: Vec<f64>,
    /// `gamma` applied in each iteration.
    pub gamma_trace: Vec<f64>,
    pub modes: ModeCounts,
}

/// E-step dispatch with the state that persists across iterations.
struct EStep<'a> {
    x: &'a PointSet,
    index: Option<NeighborIndex>,
    rng: ChaCha8Rng,
    seed: u64,
    config: &'a DldConfig,
    volume: f64,
}

impl<'a> EStep<'a> {
    fn mode(&self, m: usize, sigma2: f64) -> EStepMode {
        let (n, dim) = (self.x.len(), self.x.dim());
        let rule = self.config.rule();
        match self.config.mode {
            ModePolicy::Auto => select_mode(m, n, sigma2, self.volume, dim, &rule),
            ModePolicy::Dense => EStepMode::Dense,
            ModePolicy::Truncated => EStepMode::Truncated,
            ModePolicy::Nystrom => {
                if expected_neighbors(n, sigma2, self.volume, dim, rule.cutoff_mult) <= rule.samples as f64 {
                    EStepMode::Truncated
                } else {
                    EStepMode::Nystrom
                }
            }
        }
    }

    fn run(&mut self, y: &PointSet, settings: &MixtureSettings, mode: EStepMode) -> Result<PosteriorSummary> {
        match mode {
            EStepMode::Dense => posterior_dense(y, self.x, settings),
            EStepMode::Truncated => {
                let index = self.index.get_or_insert_with(|| NeighborIndex::build(self.x));
                posterior_truncated(y, self.x, settings, index, self.config.cutoff_mult)
            }
            EStepMode::Nystrom => {
                let l = self.config.nystrom_samples.min(y.len() + self.x.len());
                if !self.config.resample_each_step {
                    self.rng = ChaCha8Rng::seed_from_u64(self.seed);
                }
                let factor = nystrom_build(y, self.x, settings.sigma2, l, &mut self.rng)?;
                posterior_nystrom(&factor, y, self.x, settings)
            }
        }
    }
}

/// [`em_register_with`] without an observer.
pub fn em_register(model: &ShapeModel, x: &PointSet, config: &DldConfig) -> Result<RegistrationResult> {
    em_register_with(model, x, config, |_, _| {})
}

/// Runs EM until the relative improvement of the objective falls below
/// `tol` (never in the iteration that switched `gamma`) or `max_iters`
/// updates were made. `observe` sees the state after every update with
/// the posterior it was computed from.
pub fn em_register_with<F>(
    model: &ShapeModel,
    x: &PointSet,
    config: &DldConfig,
    mut observe: F,
) -> Result<RegistrationResult>
where
    F: FnMut(&SolverState, &PosteriorSummary),
{
    let model = match config.k_used {
        Some(k) => model.truncated(k),
        None => model.clone(),
    };
    let (mut state, volume) = initialize(&model, x, config)?;
    let floor = sigma2_floor(x, config);
    state.sigma2 = state.sigma2.max(floor);
    let eigenvalues = model.eigenvalues().clone();
    let mut estep =
        EStep { x, index: None, rng: ChaCha8Rng::seed_from_u64(config.seed), seed: config.seed, config, volume };
    let mut schedule = GammaSchedule::new(config);
    let mut nll_trace = Vec::new();
    let mut gamma_trace = Vec::new();
    let mut modes = ModeCounts::default();
    let mut converged = false;
    // gamma of the update that produced the current parameters.
    let mut gamma_of_state = schedule.gamma();

    loop {
        let settings = MixtureSettings { omega: config.omega, volume, sigma2: state.sigma2 };
        let mode = estep.mode(state.deformed.len(), state.sigma2);
        let summary = estep.run(&state.deformed, &settings, mode)?;
        if !summary.is_finite() {
            return Err(Error::NonFinite { iteration: state.iter, what: "posterior summary".into() });
        }
        let nll = objective::nll_from_summary(x, &state.deformed, &settings, &summary)
            + gamma_of_state * tikhonov(&state.z, &eigenvalues);
        state.nll = nll;
        nll_trace.push(nll);

        if let Some(&prev) = nll_trace.iter().rev().nth(1) {
            let improvement = relative_improvement(prev, nll);
            let switched = schedule.observe(state.iter, improvement);
            if !switched && improvement < config.tol {
                converged = true;
            }
        }
        state.gamma_phase = schedule.phase();
        if converged || state.iter >= config.max_iters {
            break;
        }
        modes.record(mode);

        let gamma = schedule.gamma();
        let reg = match config.gamma_scaling {
            GammaScaling::Variance => 2.0 * state.sigma2 * gamma,
            GammaScaling::Literal => gamma,
        };
        let a = mstep_shape(&state.frame, &summary, x, reg)?;
        let b = mstep_location(&state.frame, &a.deformed, x, &summary)?;
        let inc = &b.increment;
        let sigma2 = mstep_variance(x, &b.deformed, &summary, floor, mode == EStepMode::Dense)?;

        state.transform = SimilarityTransform {
            scale: inc.scale * state.transform.scale,
            rotation: &inc.rotation * &state.transform.rotation,
            translation: inc.scale * (&inc.rotation * &a.translation) + &inc.translation,
        };
        state.z = a.z;
        state.frame = b.frame;
        state.deformed = b.deformed;
        state.sigma2 = sigma2;
        state.iter += 1;
        state.last_mode = Some(mode);
        gamma_of_state = gamma;
        gamma_trace.push(gamma);

        if !state.sigma2.is_finite()
            || !state.z.iter().all(|v| v.is_finite())
            || !state.deformed.as_slice().iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite { iteration: state.iter, what: "parameters after M-step".into() });
        }
        debug_assert!(
            state.frame_residual() <= 1e-9 * (1.0 + state.deformed.diameter()),
            "frame drifted by {}",
            state.frame_residual()
        );
        observe(&state, &summary);
    }

    let settings = MixtureSettings { omega: config.omega, volume, sigma2: state.sigma2 };
    let correspondence = correspondences(&state.deformed, x, &settings, config)?;
    Ok(RegistrationResult {
        deformed: state.deformed,
        correspondence,
        transform: state.transform,
        z: state.z,
        sigma2: state.sigma2,
        iterations: state.iter,
        converged,
        nll_trace,
        gamma_trace,
        modes,
    })
}

/// For each target, `argmax_m p_mn` (ties to the smallest `m`) and its
/// posterior, densely when `M * N` is within the dense threshold and
/// through a KD-tree over the sources otherwise.
pub fn correspondences(
    y: &PointSet,
    x: &PointSet,
    settings: &MixtureSettings,
    config: &DldConfig,
) -> Result<Vec<Correspondence>> {
    use rayon::prelude::*;
    let c = crate::posterior::outlier_constant(settings, y.len(), y.dim())?;
    let scale = -0.5 / settings.sigma2;
    let finish = |best: usize, d2_best: f64, sum: f64| {
        let k = (scale * d2_best).exp();
        let denom = sum + c;
        let p = if denom > 0.0 { (k / denom).clamp(0.0, 1.0) } else { 0.0 };
        Correspondence { source: best, probability: p }
    };
    if y.len().saturating_mul(x.len()) <= config.dense_threshold {
        Ok((0..x.len())
            .into_par_iter()
            .map(|n| {
                let xn = x.point(n);
                let (mut best, mut d2_best, mut sum) = (0usize, f64::INFINITY, 0.0);
                for (m, ym) in y.iter().enumerate() {
                    let d2 = sq_dist(ym, xn);
                    sum += (scale * d2).exp();
                    if d2 < d2_best {
                        best = m;
                        d2_best = d2;
                    }
                }
                finish(best, d2_best, sum)
            })
            .collect())
    } else {
        let index = NeighborIndex::build(y);
        let radius = config.cutoff_mult * settings.sigma2.sqrt();
        Ok((0..x.len())
            .into_par_iter()
            .map(|n| {
                let xn = x.point(n);
                let (best, d2_best) = index.nearest(xn);
                let mut terms = Vec::new();
                index.for_each_within(xn, radius, |m, d2| terms.push((m, (scale * d2).exp())));
                terms.sort_unstable_by_key(|&(m, _)| m);
                let sum: f64 = terms.iter().map(|t| t.1).sum();
                finish(best, d2_best, sum.max((scale * d2_best).exp()))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procrustes::{apply_transform, rotation_2d};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn smooth_model(rng: &mut ChaCha8Rng, m: usize, k: usize) -> ShapeModel {
        // Closed asymmetric curve with smooth orthonormal variations.
        let mean: Vec<f64> = (0..m)
            .flat_map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                let r = 0.5 + 0.15 * (2.0 * t).cos() + 0.1 * (3.0 * t + 0.4).sin();
                [r * t.cos(), 0.8 * r * t.sin()]
            })
            .collect();
        let g = DMatrix::from_fn(2 * m, k, |row, j| {
            let t = 2.0 * std::f64::consts::PI * (row / 2) as f64 / m as f64;
            let f = ((j + 2) as f64 * t + (row % 2) as f64 * 1.3 + j as f64).sin();
            f + 0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        let h = g.qr().q().columns(0, k).into_owned();
        let lambdas = DVector::from_fn(k, |i, _| 0.01 / (1.0 + i as f64).powi(2));
        ShapeModel::new(DVector::from_vec(mean), h, lambdas, 2).unwrap()
    }

    #[test]
    fn schedule_switches_once() {
        let config = DldConfig { tol: 1e-4, ..DldConfig::default() };
        let mut s = GammaSchedule::new(&config);
        assert!(!s.observe(1, 1.0));
        assert!(!s.observe(2, 0.5));
        assert!(s.observe(3, 10.0 * 1e-4 * 0.9));
        assert_eq!(s.switched_at(), Some(3));
        assert_eq!(s.gamma(), 0.0);
        assert!(!s.observe(4, 0.0));
        assert!(!s.observe(5, 1.0));
        assert_eq!(s.phase(), GammaPhase::Final);
    }

    #[test]
    fn equal_gammas_never_switch() {
        let config = DldConfig { gamma: 0.2, gamma_final: 0.2, ..DldConfig::default() };
        let mut s = GammaSchedule::new(&config);
        for step in 0..5 {
            assert!(!s.observe(step, 0.0));
            assert_eq!(s.gamma(), 0.2);
        }
    }

    #[test]
    fn self_registration_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let model = smooth_model(&mut rng, 60, 5);
        let x = model.mean_shape();
        let config = DldConfig { omega: 0.0, ..DldConfig::default() };
        let r = em_register(&model, &x, &config).unwrap();
        assert!(r.z.norm() < 1e-3, "|z| = {}", r.z.norm());
        assert!(r.transform.max_param_diff(&SimilarityTransform::identity(2)) < 1e-4);
        let d = x.diameter();
        assert!(r.sigma2 <= 1e-8 * d * d * (1.0 + 1e-9), "sigma2 = {}", r.sigma2);
        assert_eq!(r.nll_trace.len(), r.iterations + 1);
        assert!(r.correspondence.iter().enumerate().all(|(n, c)| c.source == n));
    }

    #[test]
    fn generative_target_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let model = smooth_model(&mut rng, 80, 4);
        let z = DVector::from_fn(4, |i, _| 1.5 * model.eigenvalues()[i].sqrt() * if i % 2 == 0 { 1.0 } else { -1.0 });
        let t = SimilarityTransform::new(1.3, rotation_2d(0.5), DVector::from_vec(vec![0.2, -0.1])).unwrap();
        let x = apply_transform(&t, &model.deform(&z).unwrap()).unwrap();
        let r = em_register(&model, &x, &DldConfig::default()).unwrap();
        let err = r.deformed.iter().zip(x.iter()).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        assert!(err < 1e-3 * x.diameter(), "max error {err}");
        assert!(r.converged);
    }

    #[test]
    fn trace_shows_one_gamma_change_and_frames_stay_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let model = smooth_model(&mut rng, 50, 4);
        let z = DVector::from_fn(4, |i, _| model.eigenvalues()[i].sqrt());
        let t = SimilarityTransform::new(0.8, rotation_2d(-0.3), DVector::from_vec(vec![0.05, 0.1])).unwrap();
        let x = apply_transform(&t, &model.deform(&z).unwrap()).unwrap();
        let config = DldConfig { gamma: 0.5, gamma_final: 0.0, ..DldConfig::default() };
        let mut worst: f64 = 0.0;
        let r = em_register_with(&model, &x, &config, |s, _| worst = worst.max(s.frame_residual())).unwrap();
        assert!(worst < 1e-9, "frame residual {worst}");
        let changes = r.gamma_trace.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1, "{:?}", r.gamma_trace);
        assert_eq!(r.nll_trace.len(), r.iterations + 1);
    }

    #[test]
    fn dense_objective_never_increases_with_fixed_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        for trial in 0..10 {
            let model = smooth_model(&mut rng, 40, 3);
            let z = DVector::from_fn(3, |_, _| rng.random_range(-0.1..0.1));
            let t = SimilarityTransform::new(1.0, rotation_2d(rng.random_range(-0.6..0.6)), DVector::zeros(2)).unwrap();
            let mut x = apply_transform(&t, &model.deform(&z).unwrap()).unwrap();
            let noise: Vec<f64> =
                x.as_slice().iter().map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
            x = PointSet::new(2, noise).unwrap();
            let config = DldConfig {
                gamma: 0.05,
                gamma_final: 0.05,
                gamma_scaling: GammaScaling::Variance,
                mode: ModePolicy::Dense,
                omega: 0.1,
                ..DldConfig::default()
            };
            let r = em_register(&model, &x, &config).unwrap();
            for w in r.nll_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "trial {trial}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn approximate_modes_register_a_larger_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let model = smooth_model(&mut rng, 1200, 4);
        let z = DVector::from_fn(4, |i, _| model.eigenvalues()[i].sqrt());
        let t = SimilarityTransform::new(1.1, rotation_2d(0.3), DVector::from_vec(vec![0.1, 0.0])).unwrap();
        let x = apply_transform(&t, &model.deform(&z).unwrap()).unwrap();
        let config = DldConfig { mode: ModePolicy::Nystrom, max_iters: 300, ..DldConfig::default() };
        let r = em_register(&model, &x, &config).unwrap();
        assert_eq!(r.modes.dense, 0);
        assert!(r.modes.nystrom > 0);
        let err = r.deformed.iter().zip(x.iter()).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        assert!(err < 1e-2 * x.diameter(), "max error {err}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let model = smooth_model(&mut rng, 10, 2);
        let x = PointSet::new(3, vec![0.0; 30]).unwrap();
        assert!(matches!(em_register(&model, &x, &DldConfig::default()), Err(Error::DimensionMismatch { .. })));
    }
}
