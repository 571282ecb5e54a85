use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, contract};
use crate::ridge::{SpectralState, Trajectory};

/// ε for the training loss and c ≥ ε for the population loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub train: f64,
    pub pop: f64,
}

impl Thresholds {
    pub fn new(train: f64, pop: f64) -> Result<Self> {
        let t = Self { train, pop };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0) || !self.train.is_finite() {
            return contract(format!("train threshold must be positive, got {}", self.train));
        }
        if !(self.pop >= self.train) || !self.pop.is_finite() {
            return contract(format!(
                "population threshold {} must be at least the train threshold {}",
                self.pop, self.train
            ));
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            train: 0.01,
            pop: 0.01,
        }
    }
}

/// Outcome of a threshold-crossing search over steps `0..=horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Detection {
    Resolved {
        step: u64,
    },
    /// The training loss was below ε at every step, so t₁ is undefined.
    NeverAbove,
    /// The event did not happen by the horizon; the time is at least `horizon`.
    Censored {
        horizon: u64,
    },
    /// The run diverged before it could be observed.
    Unavailable,
}

impl Detection {
    pub fn step(&self) -> Option<u64> {
        match self {
            Detection::Resolved { step } => Some(*step),
            _ => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Detection::Censored { .. })
    }
}

/// Granularity at which a detected step is certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    /// The exact step.
    Step,
    /// Between two consecutive evaluated steps.
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detected {
    pub detection: Detection,
    pub resolution: Resolution,
}

impl Detected {
    fn exact(detection: Detection) -> Self {
        Self {
            detection,
            resolution: Resolution::Step,
        }
    }
}

/// `max{t : L_n ≥ ε}` over a sequence of (step, loss) pairs in increasing step order.
fn last_at_or_above(samples: impl Iterator<Item = (u64, f64)>, eps: f64, horizon: u64) -> Detection {
    let mut last = None;
    for (t, loss) in samples {
        if loss >= eps {
            last = Some(t);
        }
    }
    match last {
        None => Detection::NeverAbove,
        Some(t) if t == horizon => Detection::Censored { horizon },
        Some(step) => Detection::Resolved { step },
    }
}

/// t₁ from a recorded trajectory, exact when per-step training losses were kept.
pub fn detect_t1(traj: &Trajectory, eps: f64) -> Result<Detected> {
    if !(eps > 0.0) {
        return contract("train threshold must be positive");
    }
    let horizon = traj
        .last()
        .ok_or_else(|| Error::Contract("empty trajectory".into()))?
        .step;
    if let Some(losses) = &traj.step_train_loss {
        let detection = last_at_or_above(
            losses.iter().enumerate().map(|(t, l)| (t as u64, *l)),
            eps,
            horizon,
        );
        return Ok(Detected::exact(detection));
    }
    let detection = last_at_or_above(traj.points.iter().map(|p| (p.step, p.train_loss)), eps, horizon);
    Ok(Detected {
        detection,
        resolution: bracket_resolution(traj, detection, 1),
    })
}

/// First step with training loss below ε; a diagnostic next to the max-definition of t₁.
pub fn detect_t1_first(traj: &Trajectory, eps: f64) -> Result<Detected> {
    if !(eps > 0.0) {
        return contract("train threshold must be positive");
    }
    let horizon = traj
        .last()
        .ok_or_else(|| Error::Contract("empty trajectory".into()))?
        .step;
    if let Some(losses) = &traj.step_train_loss {
        let detection = match losses.iter().position(|l| *l < eps) {
            Some(t) => Detection::Resolved { step: t as u64 },
            None => Detection::Censored { horizon },
        };
        return Ok(Detected::exact(detection));
    }
    let detection = match traj.points.iter().find(|p| p.train_loss < eps) {
        Some(p) => Detection::Resolved { step: p.step },
        None => Detection::Censored { horizon },
    };
    Ok(Detected {
        detection,
        resolution: bracket_resolution(traj, detection, 0),
    })
}

/// `min{t : L ≤ c}` from a recorded trajectory, certified at evaluation resolution.
pub fn detect_t2(traj: &Trajectory, c: f64) -> Result<Detected> {
    if !(c > 0.0) {
        return contract("population threshold must be positive");
    }
    let horizon = traj
        .last()
        .ok_or_else(|| Error::Contract("empty trajectory".into()))?
        .step;
    let detection = match traj.points.iter().find(|p| p.pop_loss <= c) {
        Some(p) => Detection::Resolved { step: p.step },
        None => Detection::Censored { horizon },
    };
    Ok(Detected {
        detection,
        resolution: bracket_resolution(traj, detection, 0),
    })
}

/// Exact when the neighbouring evaluated step (next for t₁, previous for t₂) is adjacent.
fn bracket_resolution(traj: &Trajectory, detection: Detection, direction: i8) -> Resolution {
    let Detection::Resolved { step } = detection else {
        return Resolution::Step;
    };
    let idx = traj
        .points
        .binary_search_by_key(&step, |p| p.step)
        .expect("detected step comes from the trajectory");
    let adjacent = if direction > 0 {
        traj.points.get(idx + 1).is_none_or(|p| p.step == step + 1)
    } else {
        idx == 0 && step == 0 || idx > 0 && traj.points[idx - 1].step + 1 == step
    };
    if adjacent {
        Resolution::Step
    } else {
        Resolution::Evaluation
    }
}

/// Largest `t ∈ [lo, hi]` with `pred(t)` for a predicate that holds on a prefix, given `pred(lo)`.
fn last_true(mut lo: u64, mut hi: u64, pred: impl Fn(u64) -> bool) -> u64 {
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Exact t₁ on the closed-form iterate.
///
/// Bisection runs on a nonincreasing envelope of the training loss, which pins a step after which
/// the loss is certainly below ε; a downward scan from there finds the last step at or above ε.
pub fn detect_t1_spectral(state: &SpectralState, eps: f64, horizon: u64) -> Result<Detected> {
    if !(eps > 0.0) {
        return contract("train threshold must be positive");
    }
    if state.contraction_factors().iter().any(|r| r.abs() > 1.0) {
        return Err(Error::Precondition(
            "training-loss envelope needs every mode to contract; use the trajectory detector".into(),
        ));
    }
    if state.train_loss(horizon) >= eps {
        return Ok(Detected::exact(Detection::Censored { horizon }));
    }
    if state.train_loss_envelope(0) < eps {
        return Ok(Detected::exact(Detection::NeverAbove));
    }
    let cutoff = last_true(0, horizon, |t| state.train_loss_envelope(t) >= eps);
    let detection = (0..=cutoff)
        .rev()
        .find(|&t| state.train_loss(t) >= eps)
        .map_or(Detection::NeverAbove, |step| Detection::Resolved { step });
    Ok(Detected::exact(detection))
}

/// Points probed to check that the population loss is monotone on a bracket before bisecting.
const MONOTONE_PROBES: u64 = 16;
/// Widest non-monotone bracket that is scanned step by step.
const MAX_BRACKET_SCAN: u64 = 1_000_000;

/// t₂ on the closed-form iterate: the first sampled step at or below c brackets the crossing,
/// which is then located exactly by bisection (on a bracket checked to be monotone) or by scanning.
pub fn detect_t2_spectral(state: &SpectralState, c: f64, samples: &[u64]) -> Result<Detected> {
    if !(c > 0.0) {
        return contract("population threshold must be positive");
    }
    let (&first, &horizon) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return contract("empty step schedule"),
    };
    if first != 0 || samples.windows(2).any(|w| w[0] >= w[1]) {
        return contract("step schedule must start at 0 and increase strictly");
    }
    let Some(k) = samples.iter().position(|&t| state.pop_loss(t) <= c) else {
        return Ok(Detected::exact(Detection::Censored { horizon }));
    };
    if k == 0 {
        return Ok(Detected::exact(Detection::Resolved { step: 0 }));
    }
    let (lo, hi) = (samples[k - 1], samples[k]);
    let width = hi - lo;
    let probes: Vec<f64> = (0..=MONOTONE_PROBES)
        .map(|j| state.pop_loss(lo + width * j / MONOTONE_PROBES))
        .collect();
    let monotone = probes.windows(2).all(|w| w[1] <= w[0]);
    if monotone {
        // Last step above c in [lo, hi − 1], so the crossing is the step after it.
        let step = last_true(lo, hi - 1, |t| state.pop_loss(t) > c) + 1;
        return Ok(Detected::exact(Detection::Resolved { step }));
    }
    if width <= MAX_BRACKET_SCAN {
        let step = (lo + 1..=hi)
            .find(|&t| state.pop_loss(t) <= c)
            .expect("the bracket end is at or below c");
        return Ok(Detected::exact(Detection::Resolved { step }));
    }
    Ok(Detected {
        detection: Detection::Resolved { step: hi },
        resolution: Resolution::Evaluation,
    })
}
