//! Closed-form bounds on training/population losses and on the overfitting and generalization times.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result, contract};
use crate::numkit::{DEFAULT_RANK_TOL, Mat, RngStream, norm, norm_sq};
use crate::problem::ProblemInstance;
use crate::ridge::RowSpace;

/// `b²` that holds with high probability for Gaussian features `N(0, I_m/m)`.
pub const GAUSSIAN_FEATURE_BOUND_SQ: f64 = 1.5;
/// Largest `ηλ` for which `ln(1 − ηλ) ≥ −1.01ηλ`, required by the Gaussian time bounds.
pub const GAUSSIAN_MAX_DECAY_PER_STEP: f64 = 0.01;
pub const DEFAULT_DELTA: f64 = 0.05;

/// Every quantity the bounds depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub step_size: f64,
    pub weight_decay: f64,
    pub init_variance: f64,
    /// ε, applied to the training loss.
    pub train_threshold: f64,
    /// c, applied to the population loss.
    pub pop_threshold: f64,
    /// `L = (1/n) Σ ‖φ(x_i)‖²`.
    pub feature_norm: f64,
    /// `b ≥ ‖φ(x)‖`.
    pub feature_bound: f64,
    pub teacher_norm: f64,
    pub init_norm: f64,
    /// `λ⁺_min(ΦᵀΦ)`.
    pub gram_min_positive: f64,
    /// `λ_min(Σ)` when known.
    pub cov_min: Option<f64>,
    /// Failure probability; only gates precondition flags.
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return contract("bounds need n >= 1 and m >= 1");
        }
        if !(self.train_threshold > 0.0) {
            return contract("train threshold must be positive");
        }
        if !(self.pop_threshold >= self.train_threshold) {
            return contract("population threshold must be at least the train threshold");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return contract("delta must lie in (0, 1)");
        }
        let nonneg = [
            self.feature_norm,
            self.feature_bound,
            self.teacher_norm,
            self.init_norm,
            self.gram_min_positive,
            self.init_variance,
            self.weight_decay,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || self.cov_min.is_some_and(|v| !(v >= 0.0)) {
            return contract("norms, eigenvalues and hyperparameters must be >= 0");
        }
        if !(self.step_size > 0.0) {
            return contract("step size must be positive");
        }
        Ok(())
    }

    /// Measures the empirical quantities of a linear instance for the given run.
    pub fn measure(
        instance: &ProblemInstance,
        step_size: f64,
        weight_decay: f64,
        init_variance: f64,
        theta0: &[f64],
        train_threshold: f64,
        pop_threshold: f64,
    ) -> Result<Self> {
        let space = RowSpace::new(&instance.features, DEFAULT_RANK_TOL)?;
        let inputs = Self {
            n: instance.n(),
            m: instance.m(),
            step_size,
            weight_decay,
            init_variance,
            train_threshold,
            pop_threshold,
            feature_norm: instance.feature_norm,
            feature_bound: instance.feature_bound,
            teacher_norm: instance.teacher.norm(),
            init_norm: norm(theta0),
            gram_min_positive: space.min_positive_gram_eigenvalue().unwrap_or(0.0),
            cov_min: instance.cov.lambda_min(),
            delta: DEFAULT_DELTA,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

/// Zero-teacher envelopes at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroTeacherBounds {
    /// Upper bound on `L_n(θ⁽ᵗ⁾)`.
    pub train_upper: f64,
    /// High-probability lower bound on `L(θ⁽ᵗ⁾)`; zero when `m ≤ n`.
    pub pop_lower: f64,
    /// Upper bound on `‖θ⁽ᵗ⁾‖₂`.
    pub norm_upper: f64,
    /// Set when `m ≤ n`, where the population floor carries no information.
    pub degenerate: bool,
}

/// Per-step contraction of the training-loss envelope, `1 − ηλ⁺_min/n − ηλ`.
fn train_rate(inp: &BoundInputs) -> f64 {
    1.0 - inp.step_size * inp.gram_min_positive / inp.n as f64 - inp.step_size * inp.weight_decay
}

fn decay_rate(inp: &BoundInputs) -> f64 {
    1.0 - inp.step_size * inp.weight_decay
}

fn excess_width(inp: &BoundInputs) -> f64 {
    inp.m as f64 - inp.n as f64
}

pub fn zero_teacher_bounds(inp: &BoundInputs, t: u64) -> Result<ZeroTeacherBounds> {
    inp.validate()?;
    let cov_min = inp
        .cov_min
        .ok_or_else(|| Error::Contract("the population floor needs λ_min(Σ)".into()))?;
    let k = crate::ridge::pow_step(decay_rate(inp), t);
    let r = crate::ridge::pow_step(train_rate(inp), t);
    let degenerate = inp.m <= inp.n;
    let pop_lower = if degenerate {
        0.0
    } else {
        cov_min * k * k * excess_width(inp) * inp.init_variance / 2.0
    };
    Ok(ZeroTeacherBounds {
        train_upper: inp.feature_norm / 2.0 * r * r * inp.init_norm * inp.init_norm,
        pop_lower,
        norm_upper: k.abs() * inp.init_norm,
        degenerate,
    })
}

/// Multipliers standing in for the unstated constants of the asymptotic conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionConstants {
    pub sample: f64,
    pub width: f64,
    /// The universal constant of the Rademacher-based generalization argument.
    pub generalization: f64,
}

impl Default for ConditionConstants {
    fn default() -> Self {
        Self {
            sample: 1.0,
            width: 1.0,
            generalization: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preconditions {
    pub sample_size_required: f64,
    pub sample_size_ok: bool,
    /// Required `m − n`; absent when `λ_min(Σ)` is unknown.
    pub width_required: Option<f64>,
    pub width_ok: Option<bool>,
    pub weight_decay_limit: f64,
    pub weight_decay_ok: bool,
    /// `η ≤ 2/(L + 2λ)`, assumed by the zero-teacher envelopes.
    pub step_size_ok_envelopes: bool,
    /// `η < 1/(λ + λ⁺_min/n)`, assumed by the time bounds.
    pub step_size_ok_times: bool,
    /// The sample and width conditions use placeholder constants.
    pub constants_heuristic: bool,
}

/// `x / ν²` with `0/0 = 0` and `x/0 = ∞`.
fn over_variance(x: f64, nu2: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if nu2 == 0.0 {
        f64::INFINITY
    } else {
        x / nu2
    }
}

fn sample_size_required(inp: &BoundInputs, feature_bound: f64, constant: f64) -> f64 {
    let b4 = feature_bound.powi(4);
    constant * b4 * inp.teacher_norm.powi(4) / inp.train_threshold.powi(2) * (1.0 / inp.delta).ln()
}

pub fn preconditions(inp: &BoundInputs, constants: &ConditionConstants) -> Result<Preconditions> {
    inp.validate()?;
    let sample_size_required = sample_size_required(inp, inp.feature_bound, constants.sample);
    let width_required = inp.cov_min.map(|cov_min| {
        let c = inp.pop_threshold;
        let terms = [
            (1.0 / inp.delta).ln(),
            over_variance(inp.teacher_norm.powi(2), inp.init_variance),
            if cov_min > 0.0 {
                over_variance(c * c / (cov_min * cov_min), inp.init_variance)
            } else {
                f64::INFINITY
            },
        ];
        constants.width * terms.iter().cloned().fold(0.0, f64::max)
    });
    let width_ok = width_required.map(|req| inp.m > inp.n && excess_width(inp) >= req);
    let eps = inp.train_threshold;
    let s = inp.teacher_norm;
    let weight_decay_limit = if s == 0.0 {
        f64::INFINITY
    } else {
        (2.0 * eps / (3.0 * s * s)).min((inp.feature_norm * eps).sqrt() / (6f64.sqrt() * s))
    };
    let eta = inp.step_size;
    let lambda = inp.weight_decay;
    Ok(Preconditions {
        sample_size_required,
        sample_size_ok: inp.n as f64 >= sample_size_required,
        width_required,
        width_ok,
        weight_decay_limit,
        weight_decay_ok: lambda <= weight_decay_limit,
        step_size_ok_envelopes: eta <= 2.0 / (inp.feature_norm + 2.0 * lambda),
        step_size_ok_times: eta < 1.0 / (lambda + inp.gram_min_positive / inp.n as f64),
        constants_heuristic: true,
    })
}

/// A time bound with its vacuity flag (log argument ≤ 1, reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeBound {
    #[serde(serialize_with = "serialize_f64")]
    pub value: f64,
    pub vacuous: bool,
}

impl TimeBound {
    /// `ln(arg) / denom`, clamped to 0 with the vacuous flag when `arg ≤ 1`.
    fn log_ratio(arg: f64, denom: f64) -> Self {
        if !(arg > 1.0) {
            return Self {
                value: 0.0,
                vacuous: true,
            };
        }
        let value = if denom == 0.0 {
            f64::INFINITY
        } else {
            arg.ln() / denom
        };
        Self {
            value,
            vacuous: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrokkingTimeBounds {
    /// Upper bound on t₁ with `6b²` in the logarithm.
    pub t1_upper: TimeBound,
    /// The same bound with `6L` in place of `6b²`.
    pub t1_upper_feature_norm: TimeBound,
    /// Lower bound on t₂; absent when `λ_min(Σ)` is unknown.
    pub t2_lower: Option<TimeBound>,
}

fn t1_upper_with(inp: &BoundInputs, scale_sq: f64) -> TimeBound {
    let arg = 6.0 * scale_sq * inp.init_norm * inp.init_norm / inp.train_threshold;
    TimeBound::log_ratio(arg, 2.0 * inp.step_size * inp.gram_min_positive / inp.n as f64)
}

/// Log argument of the t₂ lower bound, `((m − n)ν²/2)(√(c/λ_min(Σ)) + ‖θ*‖)⁻²`.
fn t2_log_arg(inp: &BoundInputs, cov_min: f64) -> f64 {
    if inp.m <= inp.n || cov_min <= 0.0 {
        return 0.0;
    }
    let denom = (inp.pop_threshold / cov_min).sqrt() + inp.teacher_norm;
    excess_width(inp) * inp.init_variance / 2.0 / (denom * denom)
}

pub fn grokking_time_bounds(inp: &BoundInputs) -> Result<GrokkingTimeBounds> {
    inp.validate()?;
    if !(inp.gram_min_positive > 0.0) {
        return Err(Error::Precondition(
            "the t1 bound is undefined without a positive eigenvalue of ΦᵀΦ".into(),
        ));
    }
    let t2_lower = inp.cov_min.map(|cov_min| {
        TimeBound::log_ratio(t2_log_arg(inp, cov_min), 4.0 * inp.step_size * inp.weight_decay)
    });
    Ok(GrokkingTimeBounds {
        t1_upper: t1_upper_with(inp, inp.feature_bound * inp.feature_bound),
        t1_upper_feature_norm: t1_upper_with(inp, inp.feature_norm),
        t2_lower,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTimeBounds {
    pub t1_upper: TimeBound,
    pub t2_lower: TimeBound,
    /// The general t₂ bound with the sharper `2.02ηλ` denominator; `t2_lower` never exceeds it.
    pub t2_lower_sharpened: Option<TimeBound>,
}

/// Explicit bounds for Gaussian features `N(0, I_m/m)`; needs `ηλ ≤ 0.01`.
pub fn gaussian_time_bounds(inp: &BoundInputs) -> Result<GaussianTimeBounds> {
    inp.validate()?;
    let decay = inp.step_size * inp.weight_decay;
    if decay > GAUSSIAN_MAX_DECAY_PER_STEP {
        return Err(Error::Precondition(format!(
            "Gaussian time bounds need ηλ <= {GAUSSIAN_MAX_DECAY_PER_STEP}, got {decay}"
        )));
    }
    if !(inp.gram_min_positive > 0.0) {
        return Err(Error::Precondition(
            "the t1 bound is undefined without a positive eigenvalue of ΦᵀΦ".into(),
        ));
    }
    let (n, m) = (inp.n as f64, inp.m as f64);
    let eps = inp.train_threshold;
    let t2_arg = if inp.m > inp.n {
        (m - n) * inp.init_variance / (8.0 * m * eps)
    } else {
        0.0
    };
    Ok(GaussianTimeBounds {
        t1_upper: TimeBound::log_ratio(
            14.0 * m * inp.init_variance / eps,
            2.0 * inp.step_size * inp.gram_min_positive / n,
        ),
        t2_lower: TimeBound::log_ratio(t2_arg, 2.02 * decay),
        t2_lower_sharpened: inp
            .cov_min
            .map(|cov_min| TimeBound::log_ratio(t2_log_arg(inp, cov_min), 2.02 * decay)),
    })
}

/// Steps after which the training loss stays below ε, or `None` when the rate is not in (0, 1).
pub fn train_threshold_time(inp: &BoundInputs) -> Result<Option<f64>> {
    inp.validate()?;
    let rate = train_rate(inp);
    if !(rate > 0.0 && rate < 1.0) {
        return Ok(None);
    }
    let arg = inp.train_threshold / (6.0 * inp.feature_norm * inp.init_norm * inp.init_norm);
    if !(arg < 1.0) {
        return Ok(Some(0.0));
    }
    Ok(Some(0.5 * arg.ln() / rate.ln()))
}

/// Steps during which the population loss provably stays at least c (`None` without `λ_min(Σ)`).
pub fn pop_threshold_time(inp: &BoundInputs) -> Result<Option<f64>> {
    inp.validate()?;
    let Some(cov_min) = inp.cov_min else {
        return Ok(None);
    };
    let rate = decay_rate(inp);
    if inp.m <= inp.n || cov_min <= 0.0 || inp.init_variance == 0.0 || !(rate > 0.0) {
        return Ok(Some(0.0));
    }
    let arg = (2.0 / (excess_width(inp) * inp.init_variance)).sqrt()
        * ((inp.pop_threshold / cov_min).sqrt() + inp.teacher_norm);
    if !(arg < 1.0) {
        return Ok(Some(0.0));
    }
    if rate >= 1.0 {
        return Ok(Some(f64::INFINITY));
    }
    Ok(Some(arg.ln() / rate.ln()))
}

/// Sample size after which the ridge minimizer generalizes to within ε of twice its training loss.
pub fn generalization_sample_required(inp: &BoundInputs, constant: f64) -> Result<f64> {
    inp.validate()?;
    let base = inp.feature_bound.powi(4) * inp.teacher_norm.powi(4) / inp.train_threshold.powi(2);
    Ok((4.0 * constant * constant * base).max(2048.0 * base * (4.0 / inp.delta).ln()))
}

/// `B √(L/n)`.
pub fn rademacher_bound(radius: f64, feature_norm: f64, n: usize) -> Result<f64> {
    if !(radius >= 0.0) || !(feature_norm >= 0.0) || n == 0 {
        return contract("Rademacher bound needs B >= 0, L >= 0 and n >= 1");
    }
    Ok(radius * (feature_norm / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Monte Carlo mean of `(B/n)‖Σ σ_i φ(x_i)‖₂`, the exact supremum over the ball of radius B.
pub fn rademacher_estimate(
    rng: &mut RngStream,
    features: &Mat,
    radius: f64,
    trials: usize,
) -> Result<RademacherEstimate> {
    if !(radius >= 0.0) || trials == 0 || features.rows() == 0 {
        return contract("Rademacher estimate needs B >= 0, trials >= 1 and n >= 1");
    }
    let n = features.rows();
    let mut sum = vec![0.0; features.cols()];
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        sum.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            crate::numkit::axpy(rng.rademacher(), features.row(i), &mut sum);
        }
        values.push(radius / n as f64 * norm_sq(&sum).sqrt());
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        mean,
        std_error: (var / trials as f64).sqrt(),
        trials,
    })
}

/// Asymptotic `λ⁺_min(ΦᵀΦ)` for Gaussian features: `(n/m)(√(m/n) − 1)²`.
pub fn marchenko_pastur_reference(n: usize, m: usize) -> Result<f64> {
    if n == 0 || m < n {
        return contract(format!("reference value needs m >= n >= 1, got n = {n}, m = {m}"));
    }
    let ratio = m as f64 / n as f64;
    Ok((ratio.sqrt() - 1.0).powi(2) / ratio)
}

/// Serializes infinities as the strings `"inf"` / `"-inf"` and NaN as null.
pub fn serialize_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_nan() {
        s.serialize_none()
    } else if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

pub fn serialize_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => serialize_f64(x, s),
        None => s.serialize_none(),
    }
}

/// Every bound for one instance and run, flattened for JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub n: usize,
    pub m: usize,
    pub step_size: f64,
    pub weight_decay: f64,
    pub init_variance: f64,
    pub train_threshold: f64,
    pub pop_threshold: f64,
    pub delta: f64,
    pub feature_norm: f64,
    pub feature_bound: f64,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub feature_bound_high_prob: Option<f64>,
    pub teacher_norm: f64,
    pub init_norm: f64,
    pub gram_min_positive: f64,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub cov_min: Option<f64>,

    // Zero-teacher envelopes: value(t) = initial · rate^t.
    pub train_envelope_initial: f64,
    pub train_envelope_rate: f64,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub pop_floor_initial: Option<f64>,
    pub pop_floor_rate: f64,
    pub pop_floor_degenerate: bool,
    pub norm_envelope_initial: f64,
    pub norm_envelope_rate: f64,

    pub step_size_ok_envelopes: bool,
    pub step_size_ok_times: bool,
    pub sample_size_required: f64,
    pub sample_size_ok: bool,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub sample_size_required_high_prob: Option<f64>,
    pub sample_size_ok_high_prob: Option<bool>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub width_required: Option<f64>,
    pub width_ok: Option<bool>,
    #[serde(serialize_with = "serialize_f64")]
    pub weight_decay_limit: f64,
    pub weight_decay_ok: bool,
    pub constants_heuristic: bool,
    pub sample_constant: f64,
    pub width_constant: f64,
    pub generalization_constant: f64,

    #[serde(serialize_with = "serialize_opt_f64")]
    pub t1_upper_b: Option<f64>,
    pub t1_upper_b_vacuous: bool,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t1_upper_b_high_prob: Option<f64>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t1_upper_l: Option<f64>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t2_lower: Option<f64>,
    pub t2_lower_vacuous: bool,
    pub gaussian_bounds_applicable: bool,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t1_upper_gaussian: Option<f64>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t2_lower_gaussian: Option<f64>,
    pub t2_lower_gaussian_vacuous: bool,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub t2_lower_sharpened: Option<f64>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub train_threshold_time: Option<f64>,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub pop_threshold_time: Option<f64>,
    pub generalization_sample_required: f64,
    pub generalization_sample_ok: bool,
    #[serde(serialize_with = "serialize_opt_f64")]
    pub marchenko_pastur_reference: Option<f64>,
}

impl BoundsReport {
    /// `gaussian` marks features drawn from `N(0, I_m/m)`, enabling the explicit bounds
    /// and the high-probability feature bound `b² = 3/2`.
    pub fn compute(inp: &BoundInputs, constants: &ConditionConstants, gaussian: bool) -> Result<Self> {
        inp.validate()?;
        let pre = preconditions(inp, constants)?;
        let times = grokking_time_bounds(inp).ok();
        let high_prob_b = gaussian.then(|| GAUSSIAN_FEATURE_BOUND_SQ.sqrt());
        let gauss = if gaussian {
            gaussian_time_bounds(inp).ok()
        } else {
            None
        };
        let sample_hp = high_prob_b.map(|b| sample_size_required(inp, b, constants.sample));
        let generalization_sample_required = generalization_sample_required(inp, constants.generalization)?;
        let zero_t0 = inp.cov_min.map(|_| zero_teacher_bounds(inp, 0)).transpose()?;
        Ok(Self {
            n: inp.n,
            m: inp.m,
            step_size: inp.step_size,
            weight_decay: inp.weight_decay,
            init_variance: inp.init_variance,
            train_threshold: inp.train_threshold,
            pop_threshold: inp.pop_threshold,
            delta: inp.delta,
            feature_norm: inp.feature_norm,
            feature_bound: inp.feature_bound,
            feature_bound_high_prob: high_prob_b,
            teacher_norm: inp.teacher_norm,
            init_norm: inp.init_norm,
            gram_min_positive: inp.gram_min_positive,
            cov_min: inp.cov_min,
            train_envelope_initial: inp.feature_norm / 2.0 * inp.init_norm * inp.init_norm,
            train_envelope_rate: train_rate(inp).powi(2),
            pop_floor_initial: zero_t0.map(|z| z.pop_lower),
            pop_floor_rate: decay_rate(inp).powi(2),
            pop_floor_degenerate: inp.m <= inp.n,
            norm_envelope_initial: inp.init_norm,
            norm_envelope_rate: decay_rate(inp).abs(),
            step_size_ok_envelopes: pre.step_size_ok_envelopes,
            step_size_ok_times: pre.step_size_ok_times,
            sample_size_required: pre.sample_size_required,
            sample_size_ok: pre.sample_size_ok,
            sample_size_required_high_prob: sample_hp,
            sample_size_ok_high_prob: sample_hp.map(|req| inp.n as f64 >= req),
            width_required: pre.width_required,
            width_ok: pre.width_ok,
            weight_decay_limit: pre.weight_decay_limit,
            weight_decay_ok: pre.weight_decay_ok,
            constants_heuristic: pre.constants_heuristic,
            sample_constant: constants.sample,
            width_constant: constants.width,
            generalization_constant: constants.generalization,
            t1_upper_b: times.map(|t| t.t1_upper.value),
            t1_upper_b_vacuous: times.is_none_or(|t| t.t1_upper.vacuous),
            t1_upper_b_high_prob: times
                .and(high_prob_b)
                .map(|_| t1_upper_with(inp, GAUSSIAN_FEATURE_BOUND_SQ).value),
            t1_upper_l: times.map(|t| t.t1_upper_feature_norm.value),
            t2_lower: times.and_then(|t| t.t2_lower).map(|b| b.value),
            t2_lower_vacuous: times.and_then(|t| t.t2_lower).is_none_or(|b| b.vacuous),
            gaussian_bounds_applicable: gauss.is_some(),
            t1_upper_gaussian: gauss.map(|g| g.t1_upper.value),
            t2_lower_gaussian: gauss.map(|g| g.t2_lower.value),
            t2_lower_gaussian_vacuous: gauss.is_some_and(|g| g.t2_lower.vacuous),
            t2_lower_sharpened: gauss.and_then(|g| g.t2_lower_sharpened).map(|b| b.value),
            train_threshold_time: train_threshold_time(inp)?,
            pop_threshold_time: pop_threshold_time(inp)?,
            generalization_sample_required,
            generalization_sample_ok: inp.n as f64 >= generalization_sample_required,
            marchenko_pastur_reference: if gaussian {
                marchenko_pastur_reference(inp.n, inp.m).ok()
            } else {
                None
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> BoundInputs {
        BoundInputs {
            n: 100,
            m: 1000,
            step_size: 1.0,
            weight_decay: 1e-4,
            init_variance: 1.0,
            train_threshold: 0.01,
            pop_threshold: 0.01,
            feature_norm: 1.0,
            feature_bound: 1.2,
            teacher_norm: 1.0,
            init_norm: 1000f64.sqrt(),
            gram_min_positive: 0.47,
            cov_min: Some(1e-3),
            delta: 0.05,
        }
    }

    #[test]
    fn zero_teacher_at_zero_steps() {
        let inp = defaults();
        let b = zero_teacher_bounds(&inp, 0).unwrap();
        assert_eq!(b.train_upper, 0.5 * 1000.0);
        assert!((b.pop_lower - 0.45).abs() < 1e-15);
        assert_eq!(b.norm_upper, inp.init_norm);
    }

    #[test]
    fn zero_teacher_hand_value() {
        let inp = BoundInputs {
            n: 10,
            gram_min_positive: 1.0,
            weight_decay: 0.01,
            init_norm: 2.0,
            ..defaults()
        };
        let b = zero_teacher_bounds(&inp, 1).unwrap();
        assert!((b.train_upper - 2.0 * 0.89f64.powi(2)).abs() < 1e-12);
        assert!((b.train_upper - 1.5842).abs() < 1e-12);
    }

    #[test]
    fn degenerate_width() {
        let inp = BoundInputs { m: 100, ..defaults() };
        let b = zero_teacher_bounds(&inp, 0).unwrap();
        assert!(b.degenerate && b.pop_lower == 0.0);
        let p = preconditions(&inp, &ConditionConstants::default()).unwrap();
        assert_eq!(p.width_ok, Some(false));
    }

    #[test]
    fn weight_decay_limit_plug_in() {
        let p = preconditions(&defaults(), &ConditionConstants::default()).unwrap();
        assert!((p.weight_decay_limit - 0.02 / 3.0).abs() < 1e-15);
        let zero = BoundInputs {
            weight_decay: 0.0,
            ..defaults()
        };
        assert!(
            preconditions(&zero, &ConditionConstants::default())
                .unwrap()
                .weight_decay_ok
        );
    }

    #[test]
    fn gaussian_defaults() {
        let g = gaussian_time_bounds(&defaults()).unwrap();
        let expect = 11.25f64.ln() / 2.02e-4;
        assert!((g.t2_lower.value - expect).abs() < 1e-9 * expect);
        assert!((g.t2_lower.value - 1.198e4).abs() < 5.0);
    }

    #[test]
    fn gaussian_unit_argument_and_variance_increment() {
        // (m − n)ν² = 8mε.
        let inp = BoundInputs {
            init_variance: 8.0 * 1000.0 * 0.01 / 900.0,
            ..defaults()
        };
        let g = gaussian_time_bounds(&inp).unwrap();
        assert!(g.t2_lower.value.abs() < 1e-6);
        let base = gaussian_time_bounds(&defaults()).unwrap().t2_lower.value;
        let more = gaussian_time_bounds(&BoundInputs {
            init_variance: 100.0,
            ..defaults()
        })
        .unwrap()
        .t2_lower
        .value;
        assert!((more - base - 100f64.ln() / 2.02e-4).abs() < 1e-6);
        assert!(((more - base) - 2.28e4).abs() < 20.0);
    }

    #[test]
    fn gaussian_needs_small_decay() {
        let inp = BoundInputs {
            weight_decay: 0.02,
            ..defaults()
        };
        assert!(matches!(gaussian_time_bounds(&inp), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_decay_gives_infinite_t2() {
        let inp = BoundInputs {
            weight_decay: 0.0,
            ..defaults()
        };
        let t = grokking_time_bounds(&inp).unwrap();
        assert_eq!(t.t2_lower.unwrap().value, f64::INFINITY);
        let json = serde_json::to_string(
            &BoundsReport::compute(&inp, &ConditionConstants::default(), true).unwrap(),
        )
        .unwrap();
        assert!(json.contains("\"t2_lower\":\"inf\""));
        assert!(json.contains("\"t2_lower_gaussian\":\"inf\""));
    }

    #[test]
    fn missing_gram_eigenvalue_is_an_error() {
        let inp = BoundInputs {
            gram_min_positive: 0.0,
            ..defaults()
        };
        assert!(grokking_time_bounds(&inp).is_err());
    }

    #[test]
    fn doubling_variance_adds_log_two() {
        let base = defaults();
        let doubled = BoundInputs {
            init_variance: 2.0,
            init_norm: base.init_norm * 2f64.sqrt(),
            ..base
        };
        let a = grokking_time_bounds(&base).unwrap();
        let b = grokking_time_bounds(&doubled).unwrap();
        let d1 = b.t1_upper.value - a.t1_upper.value;
        let d2 = b.t2_lower.unwrap().value - a.t2_lower.unwrap().value;
        let ln2 = 2f64.ln();
        assert!((d1 - 100.0 * ln2 / (2.0 * 0.47)).abs() < 1e-9);
        assert!((d2 - ln2 / 4e-4).abs() < 1e-6);
    }

    #[test]
    fn sharpened_bound_relation() {
        let inp = defaults();
        let g = gaussian_time_bounds(&inp).unwrap();
        let t = grokking_time_bounds(&inp).unwrap();
        let sharp = g.t2_lower_sharpened.unwrap().value;
        assert!((sharp - t.t2_lower.unwrap().value * 4.0 / 2.02).abs() < 1e-9 * sharp);
        assert!(g.t2_lower.value <= sharp);
    }

    #[test]
    fn reference_values() {
        assert!((marchenko_pastur_reference(100, 1000).unwrap() - 0.4675).abs() < 1e-4);
        assert_eq!(marchenko_pastur_reference(7, 7).unwrap(), 0.0);
        assert!(marchenko_pastur_reference(10, 5).is_err());
        assert!(marchenko_pastur_reference(1, 1_000_000_000).unwrap() > 0.99);
    }

    #[test]
    fn rademacher_equality_and_zero() {
        let phi = Mat::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut rng = RngStream::new(0, 6);
        let est = rademacher_estimate(&mut rng, &phi, 2.0, 100).unwrap();
        assert_eq!(est.mean, 2.0);
        assert_eq!(rademacher_bound(2.0, 1.0, 1).unwrap(), 2.0);
        assert_eq!(rademacher_estimate(&mut rng, &phi, 0.0, 10).unwrap().mean, 0.0);
        assert_eq!(rademacher_bound(0.0, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn threshold_times() {
        let inp = defaults();
        let t = train_threshold_time(&inp).unwrap().unwrap();
        let rate = 1.0 - 0.0047 - 1e-4;
        let expect = 0.5 * (0.01f64 / 6000.0).ln() / f64::ln(rate);
        assert!((t - expect).abs() < 1e-9 * expect);
        let p = pop_threshold_time(&inp).unwrap().unwrap();
        let arg = (2.0 / 900.0f64).sqrt() * ((10.0f64).sqrt() + 1.0);
        assert!((p - arg.ln() / (1.0 - 1e-4f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let inp = BoundInputs {
            pop_threshold: 0.001,
            ..defaults()
        };
        assert!(inp.validate().is_err());
    }
}
