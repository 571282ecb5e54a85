use serde::{Deserialize, Serialize};

use super::detect::{
    Detected, Detection, Resolution, Thresholds, detect_t1, detect_t1_first, detect_t1_spectral, detect_t2,
    detect_t2_spectral,
};
use crate::bounds::{BoundInputs, BoundsReport, ConditionConstants, DEFAULT_DELTA};
use crate::error::{Error, Result, contract};
use crate::neural::{RANDOM_FEATURE_OUTPUT_VARIANCE, train_full, train_random_features};
use crate::numkit::{RngStream, streams};
use crate::problem::{
    DEFAULT_TEST_SIZE, ProblemInstance, Teacher, make_gaussian_instance, make_random_relu_instance,
    make_raw_instance,
};
use crate::ridge::{Engine, EvalSchedule, SpectralState, TrainConfig, Trajectory, train};

/// Horizon when no finite explicit t₂ bound is available.
pub const FALLBACK_HORIZON: u64 = 1_000_000;
/// The default horizon is this multiple of the explicit Gaussian t₂ lower bound.
pub const HORIZON_BOUND_MULTIPLE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Linear student on Gaussian features, zero teacher.
    RidgeZero,
    /// Linear student on Gaussian features, unit-norm linear teacher.
    RidgeRealizable,
    /// Output layer of a two-layer ReLU net over frozen random hidden weights.
    RandomRelu,
    /// Both layers of a two-layer ReLU net.
    FullRelu,
}

impl ExperimentKind {
    pub fn is_linear(self) -> bool {
        !matches!(self, ExperimentKind::FullRelu)
    }

    pub fn needs_input_dim(self) -> bool {
        matches!(self, ExperimentKind::RandomRelu | ExperimentKind::FullRelu)
    }
}

/// Teacher override for the ReLU experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherChoice {
    Zero,
    ReluNeuron,
}

fn default_threshold() -> f64 {
    0.01
}

fn default_engine() -> Engine {
    Engine::Spectral
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// One experimental setting; the seed is supplied per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Training samples.
    pub n: usize,
    /// Feature dimension, or hidden width for the ReLU networks.
    pub m: usize,
    /// Input dimension of the ReLU networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub step_size: f64,
    pub weight_decay: f64,
    /// ν²: init variance of `θ` for ridge, hidden-weight scale for the ReLU networks.
    pub init_variance: f64,
    /// Defaults to a multiple of the explicit t₂ lower bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub schedule: EvalSchedule,
    #[serde(default = "default_threshold")]
    pub train_threshold: f64,
    #[serde(default = "default_threshold")]
    pub pop_threshold: f64,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    /// Monte Carlo test inputs for the ReLU experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TeacherChoice>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl ExperimentSpec {
    /// Defaults shared by every kind: η = 1, ν² = 1, c = ε = 0.01, spectral engine.
    pub fn new(kind: ExperimentKind, n: usize, m: usize, weight_decay: f64) -> Self {
        Self {
            kind,
            n,
            m,
            input_dim: None,
            step_size: 1.0,
            weight_decay,
            init_variance: 1.0,
            max_steps: None,
            schedule: EvalSchedule::default(),
            train_threshold: default_threshold(),
            pop_threshold: default_threshold(),
            engine: default_engine(),
            test_size: None,
            teacher: None,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.train_threshold, self.pop_threshold)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return contract(format!(
                "n and m must be at least 1, got n = {}, m = {}",
                self.n, self.m
            ));
        }
        if self.kind.needs_input_dim() {
            match self.input_dim {
                Some(d) if d > 0 => {}
                _ => return contract(format!("{:?} experiments need input_dim >= 1", self.kind)),
            }
        } else if self.input_dim.is_some() {
            return contract("input_dim only applies to the ReLU experiments");
        }
        if self.teacher.is_some() && !self.kind.needs_input_dim() {
            return contract("teacher override only applies to the ReLU experiments");
        }
        if self.test_size == Some(0) {
            return contract("test_size must be at least 1");
        }
        if self.max_steps == Some(0) {
            return contract("max_steps must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return contract(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        self.thresholds()?;
        self.train_config(1, 0)?;
        Ok(())
    }

    pub fn train_config(&self, max_steps: u64, seed: u64) -> Result<TrainConfig> {
        TrainConfig::new(
            self.step_size,
            self.weight_decay,
            self.init_variance,
            max_steps,
            seed,
        )?
        .with_schedule(self.schedule)
    }

    fn teacher_choice(&self) -> TeacherChoice {
        self.teacher.unwrap_or(match self.kind {
            ExperimentKind::RandomRelu => TeacherChoice::ReluNeuron,
            _ => TeacherChoice::Zero,
        })
    }

    /// Draws the training instance for one run.
    pub fn instance(&self, seed: u64) -> Result<ProblemInstance> {
        self.validate()?;
        let mut data = RngStream::new(seed, streams::DATA);
        let mut teacher_rng = RngStream::new(seed, streams::TEACHER);
        let test_size = self.test_size.unwrap_or(DEFAULT_TEST_SIZE);
        let relu_teacher = |rng: &mut RngStream, d| match self.teacher_choice() {
            TeacherChoice::Zero => Ok(Teacher::Zero),
            TeacherChoice::ReluNeuron => Teacher::random_relu_neuron(rng, d),
        };
        match self.kind {
            ExperimentKind::RidgeZero => make_gaussian_instance(&mut data, self.n, self.m, Teacher::Zero),
            ExperimentKind::RidgeRealizable => {
                let teacher = Teacher::random_unit_linear(&mut teacher_rng, self.m)?;
                make_gaussian_instance(&mut data, self.n, self.m, teacher)
            }
            ExperimentKind::RandomRelu => {
                let d = self.input_dim.expect("validated");
                let teacher = relu_teacher(&mut teacher_rng, d)?;
                make_random_relu_instance(
                    &mut data,
                    d,
                    self.m,
                    self.n,
                    self.init_variance,
                    teacher,
                    test_size,
                )
            }
            ExperimentKind::FullRelu => {
                let d = self.input_dim.expect("validated");
                let teacher = relu_teacher(&mut teacher_rng, d)?;
                make_raw_instance(&mut data, d, self.n, teacher, test_size)
            }
        }
    }

    /// ν² of the trained parameters' initialization; the random-feature output layer starts at N(0, 1).
    fn param_init_variance(&self) -> f64 {
        match self.kind {
            ExperimentKind::RandomRelu => RANDOM_FEATURE_OUTPUT_VARIANCE,
            _ => self.init_variance,
        }
    }
}

/// Result of one (setting, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrokReport {
    pub seed: u64,
    pub experiment: ExperimentSpec,
    pub horizon: u64,
    pub t1: Detection,
    pub t1_resolution: Resolution,
    pub t2: Detection,
    pub t2_resolution: Resolution,
    /// First step with training loss below ε, for contrast with the max-definition of t₁.
    pub t1_first: Detection,
    pub gap: Option<i64>,
    /// Set when both times resolved and t₂ < t₁.
    pub gap_negative: bool,
    /// Detected t₁ against the explicit Gaussian bound (else the general one); `None` without a bound.
    pub t1_upper_holds: Option<bool>,
    /// Detected t₂ against the explicit Gaussian bound (else the general one). A censored t₂ certifies
    /// it one-sidedly when the horizon is at least the bound.
    pub t2_lower_holds: Option<bool>,
    /// Where the run diverged; its times are then unavailable.
    pub divergence: Option<DivergenceNote>,
    pub bounds: Option<BoundsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceNote {
    pub step: u64,
    pub quantity: String,
}

impl GrokReport {
    /// t₁ bound used for compliance: the explicit Gaussian one when it applies.
    pub fn t1_bound(&self) -> Option<f64> {
        let b = self.bounds.as_ref()?;
        b.t1_upper_gaussian.or(b.t1_upper_b)
    }

    pub fn t2_bound(&self) -> Option<f64> {
        let b = self.bounds.as_ref()?;
        b.t2_lower_gaussian.or(b.t2_lower)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: GrokReport,
    /// Empty when the run diverged.
    pub trajectory: Trajectory,
}

/// `HORIZON_BOUND_MULTIPLE` × the explicit Gaussian t₂ bound when finite and positive, else the fallback.
pub fn default_horizon(bounds: Option<&BoundsReport>) -> u64 {
    match bounds.and_then(|b| b.t2_lower_gaussian) {
        Some(t) if t.is_finite() && t > 0.0 => (HORIZON_BOUND_MULTIPLE * t).ceil() as u64,
        _ => FALLBACK_HORIZON,
    }
}

fn measure_bounds(spec: &ExperimentSpec, instance: &ProblemInstance, theta0: &[f64]) -> Result<BoundsReport> {
    let mut inputs = BoundInputs::measure(
        instance,
        spec.step_size,
        spec.weight_decay,
        spec.param_init_variance(),
        theta0,
        spec.train_threshold,
        spec.pop_threshold,
    )?;
    inputs.delta = spec.delta;
    BoundsReport::compute(
        &inputs,
        &ConditionConstants::default(),
        instance.feature_map.is_gaussian(),
    )
}

/// Bounds for the instance and initialization that `run_cell` would use at this seed.
pub fn bounds_report(spec: &ExperimentSpec, seed: u64) -> Result<BoundsReport> {
    spec.validate()?;
    if !spec.kind.is_linear() {
        return contract("bounds need a linear student (ridge-zero, ridge-realizable or random-relu)");
    }
    let instance = spec.instance(seed)?;
    let init = TrainConfig {
        init_variance: spec.param_init_variance(),
        ..spec.train_config(1, seed)?
    };
    measure_bounds(spec, &instance, &init.init_params(instance.m())?)
}

/// Trains one seeded run of `spec` and detects t₁ and t₂.
pub fn run_cell(spec: &ExperimentSpec, seed: u64) -> Result<RunOutcome> {
    spec.validate()?;
    let thresholds = spec.thresholds()?;
    let instance = spec.instance(seed)?;
    let probe = spec.train_config(1, seed)?;

    let (theta0, bounds) = if spec.kind.is_linear() {
        let init = TrainConfig {
            init_variance: spec.param_init_variance(),
            ..probe
        };
        let theta0 = init.init_params(instance.m())?;
        let bounds = measure_bounds(spec, &instance, &theta0)?;
        (Some(theta0), Some(bounds))
    } else {
        (None, None)
    };
    // Keep the explicit bound even when ηλ is too large for it, so the horizon rule is uniform.
    let horizon = spec.max_steps.unwrap_or_else(|| default_horizon(bounds.as_ref()));
    let cfg = spec.train_config(horizon, seed)?;

    let trained = match spec.kind {
        ExperimentKind::RidgeZero | ExperimentKind::RidgeRealizable => train(&instance, &cfg, spec.engine),
        ExperimentKind::RandomRelu => train_random_features(&instance, &cfg, spec.engine),
        ExperimentKind::FullRelu => train_full(&instance, spec.m, &cfg),
    };
    let trajectory = match trained {
        Ok(t) => t,
        Err(Error::Divergence { step, quantity, .. }) => {
            let unavailable = Detection::Unavailable;
            let report = GrokReport {
                seed,
                experiment: spec.clone(),
                horizon,
                t1: unavailable,
                t1_resolution: Resolution::Step,
                t2: unavailable,
                t2_resolution: Resolution::Step,
                t1_first: unavailable,
                gap: None,
                gap_negative: false,
                t1_upper_holds: None,
                t2_lower_holds: None,
                divergence: Some(DivergenceNote {
                    step,
                    quantity: quantity.to_string(),
                }),
                bounds,
            };
            return Ok(RunOutcome {
                report,
                trajectory: Trajectory::default(),
            });
        }
        Err(e) => return Err(e),
    };

    let spectral = match (&theta0, spec.engine) {
        (Some(theta0), Engine::Spectral) => Some(SpectralState::new(
            &instance,
            spec.step_size,
            spec.weight_decay,
            theta0,
        )?),
        _ => None,
    };
    let (t1, t2) = match &spectral {
        Some(state) => {
            let t1 = match detect_t1_spectral(state, thresholds.train, horizon) {
                Ok(d) => d,
                Err(Error::Precondition(_)) => detect_t1(&trajectory, thresholds.train)?,
                Err(e) => return Err(e),
            };
            (
                t1,
                detect_t2_spectral(state, thresholds.pop, &cfg.schedule.steps(horizon))?,
            )
        }
        None => (
            detect_t1(&trajectory, thresholds.train)?,
            detect_t2(&trajectory, thresholds.pop)?,
        ),
    };
    let t1_first = detect_t1_first(&trajectory, thresholds.train)?;
    Ok(RunOutcome {
        report: assemble(spec, seed, horizon, t1, t2, t1_first.detection, bounds),
        trajectory,
    })
}

fn assemble(
    spec: &ExperimentSpec,
    seed: u64,
    horizon: u64,
    t1: Detected,
    t2: Detected,
    t1_first: Detection,
    bounds: Option<BoundsReport>,
) -> GrokReport {
    let gap = match (t1.detection.step(), t2.detection.step()) {
        (Some(a), Some(b)) => Some(b as i64 - a as i64),
        _ => None,
    };
    let mut report = GrokReport {
        seed,
        experiment: spec.clone(),
        horizon,
        t1: t1.detection,
        t1_resolution: t1.resolution,
        t2: t2.detection,
        t2_resolution: t2.resolution,
        t1_first,
        gap,
        gap_negative: gap.is_some_and(|g| g < 0),
        t1_upper_holds: None,
        t2_lower_holds: None,
        divergence: None,
        bounds,
    };
    report.t1_upper_holds = report.t1_bound().and_then(|bound| match report.t1 {
        Detection::Resolved { step } => Some(step as f64 <= bound),
        Detection::NeverAbove => Some(true),
        Detection::Censored { horizon } => (horizon as f64 > bound).then_some(false),
        Detection::Unavailable => None,
    });
    report.t2_lower_holds = report.t2_bound().and_then(|bound| match report.t2 {
        Detection::Resolved { step } => Some(step as f64 >= bound),
        Detection::Censored { horizon } => (horizon as f64 >= bound).then_some(true),
        _ => None,
    });
    report
}
