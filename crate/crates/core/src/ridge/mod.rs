//! Full-batch GD on the ridge objective, by explicit iteration or spectral fast-forward.

mod spectral;
mod trajectory;

pub(crate) use spectral::pow_step;
pub use spectral::{RowSpace, SpectralState, decompose};
pub use trajectory::{CSV_HEADER, DIVERGENCE_LIMIT, Trajectory, TrajectoryPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, contract};
use crate::numkit::{DEFAULT_RANK_TOL, Mat, RngStream, norm, norm_sq, solve_spd, streams, sym_eig};
use crate::problem::ProblemInstance;

/// Which steps of a run are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvalSchedule {
    EveryStep,
    /// Every step up to `dense_until`, then geometrically spaced by `ratio`.
    DenseThenLog {
        dense_until: u64,
        ratio: f64,
    },
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule::DenseThenLog {
            dense_until: 1000,
            ratio: 1.02,
        }
    }
}

impl EvalSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            EvalSchedule::DenseThenLog { ratio, .. } if !(*ratio > 1.0) || !ratio.is_finite() => {
                contract(format!("log schedule ratio must exceed 1, got {ratio}"))
            }
            _ => Ok(()),
        }
    }

    /// Strictly increasing evaluation steps from 0 to `max_steps` inclusive.
    pub fn steps(&self, max_steps: u64) -> Vec<u64> {
        match *self {
            EvalSchedule::EveryStep => (0..=max_steps).collect(),
            EvalSchedule::DenseThenLog { dense_until, ratio } => {
                let mut out: Vec<u64> = (0..=dense_until.min(max_steps)).collect();
                let mut cur = *out.last().expect("schedule starts at 0");
                while cur < max_steps {
                    let grown = (cur as f64 * ratio).ceil() as u64;
                    cur = grown.max(cur + 1).min(max_steps);
                    out.push(cur);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Naive,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// η
    pub step_size: f64,
    /// λ
    pub weight_decay: f64,
    /// ν², variance of each coordinate of `θ⁽⁰⁾`.
    pub init_variance: f64,
    pub max_steps: u64,
    pub schedule: EvalSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(
        step_size: f64,
        weight_decay: f64,
        init_variance: f64,
        max_steps: u64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            step_size,
            weight_decay,
            init_variance,
            max_steps,
            schedule: EvalSchedule::default(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_schedule(mut self, schedule: EvalSchedule) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return contract(format!("step size must be positive, got {}", self.step_size));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return contract(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.init_variance >= 0.0) || !self.init_variance.is_finite() {
            return contract(format!("init variance must be >= 0, got {}", self.init_variance));
        }
        if self.max_steps == 0 {
            return contract("max_steps must be at least 1");
        }
        self.schedule.validate()
    }

    /// `θ⁽⁰⁾ ~ N(0, ν² I_m)` from the run's init stream.
    pub fn init_params(&self, m: usize) -> Result<Vec<f64>> {
        RngStream::new(self.seed, streams::INIT).gaussian_vec(m, 0.0, self.init_variance)
    }
}

/// Scratch buffers reused across GD steps.
struct GdWorkspace {
    resid: Vec<f64>,
    grad: Vec<f64>,
}

impl GdWorkspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            resid: vec![0.0; n],
            grad: vec![0.0; m],
        }
    }
}

/// Residual `Φθ − y` into the workspace; returns `L_n(θ)`.
fn residual_into(theta: &[f64], phi: &Mat, labels: &[f64], ws: &mut GdWorkspace) -> f64 {
    for (i, r) in ws.resid.iter_mut().enumerate() {
        *r = crate::numkit::dot(phi.row(i), theta) - labels[i];
    }
    norm_sq(&ws.resid) / (2.0 * labels.len() as f64)
}

/// Applies one step using the residual already in the workspace.
fn apply_step(theta: &mut [f64], phi: &Mat, eta: f64, lambda: f64, ws: &mut GdWorkspace) {
    ws.grad.iter_mut().for_each(|g| *g = 0.0);
    for (i, r) in ws.resid.iter().enumerate() {
        crate::numkit::axpy(*r, phi.row(i), &mut ws.grad);
    }
    let scale = eta / phi.rows() as f64;
    for (th, g) in theta.iter_mut().zip(&ws.grad) {
        *th = *th - scale * g - eta * lambda * *th;
    }
}

/// One GD step `θ − (η/n)Φᵀ(Φθ − y) − ηλθ`.
pub fn gd_step(theta: &[f64], instance: &ProblemInstance, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if theta.len() != instance.m() {
        return contract(format!(
            "parameter length {} does not match m = {}",
            theta.len(),
            instance.m()
        ));
    }
    let mut ws = GdWorkspace::new(instance.n(), instance.m());
    let mut next = theta.to_vec();
    residual_into(&next, &instance.features, &instance.labels, &mut ws);
    apply_step(
        &mut next,
        &instance.features,
        cfg.step_size,
        cfg.weight_decay,
        &mut ws,
    );
    Ok(next)
}

/// Runs `steps` GD iterations from `theta0` and returns the final iterate.
pub fn run_gd(instance: &ProblemInstance, cfg: &TrainConfig, theta0: &[f64], steps: u64) -> Result<Vec<f64>> {
    if theta0.len() != instance.m() {
        return contract("initial parameters do not match the feature dimension");
    }
    let mut ws = GdWorkspace::new(instance.n(), instance.m());
    let mut theta = theta0.to_vec();
    for t in 0..steps {
        let loss = residual_into(&theta, &instance.features, &instance.labels, &mut ws);
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                step: t,
                quantity: "train_loss",
                value: loss,
            });
        }
        apply_step(
            &mut theta,
            &instance.features,
            cfg.step_size,
            cfg.weight_decay,
            &mut ws,
        );
    }
    Ok(theta)
}

/// Solves `(ΦᵀΦ/n + λI) θ = Φᵀy/n`.
pub fn closed_form_minimizer(instance: &ProblemInstance, weight_decay: f64) -> Result<Vec<f64>> {
    if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
        return contract("weight decay must be >= 0");
    }
    let (n, m) = (instance.n(), instance.m());
    let phi = &instance.features;
    let inv_n = 1.0 / n as f64;
    if weight_decay > 0.0 && n <= m {
        // Push-through identity: θ = Φᵀ (ΦΦᵀ/n + λI)⁻¹ y/n, an n×n solve.
        let mut k = phi.gram_rows().scale(inv_n);
        for i in 0..n {
            k.set(i, i, k.get(i, i) + weight_decay);
        }
        let rhs: Vec<f64> = instance.labels.iter().map(|y| y * inv_n).collect();
        let z = solve_spd(&k, &rhs)?;
        return Ok(phi.matvec_t(&z));
    }
    if weight_decay == 0.0 && n < m {
        return Err(Error::Precondition(
            "λ = 0 with more features than samples: the minimizer is not unique".into(),
        ));
    }
    let mut a = phi.gram_cols().scale(inv_n);
    if weight_decay == 0.0 {
        let eig = sym_eig(&a)?;
        let top = eig.max_value().unwrap_or(0.0);
        if !(eig.values[0] > DEFAULT_RANK_TOL * top) {
            return Err(Error::Precondition(
                "λ = 0 with rank-deficient features: the minimizer is not unique".into(),
            ));
        }
    }
    for i in 0..m {
        a.set(i, i, a.get(i, i) + weight_decay);
    }
    let rhs: Vec<f64> = phi.matvec_t(&instance.labels).iter().map(|v| v * inv_n).collect();
    solve_spd(&a, &rhs)
}

/// Logs when η leaves the ranges assumed by the zero-teacher bounds or the grokking-time bounds.
fn warn_step_size(instance: &ProblemInstance, cfg: &TrainConfig, space: &RowSpace) {
    let (eta, lambda) = (cfg.step_size, cfg.weight_decay);
    let limit_bounds = 2.0 / (instance.feature_norm + 2.0 * lambda);
    if eta > limit_bounds {
        log::warn!("step size {eta} exceeds 2/(L + 2λ) = {limit_bounds}");
    }
    if let Some(mu_min) = space.eigenvalues().first() {
        let limit_times = 1.0 / (lambda + mu_min);
        if eta >= limit_times {
            log::warn!("step size {eta} is not below 1/(λ + λ⁺_min/n) = {limit_times}");
        }
    }
    if eta * (lambda + space.max_eigenvalue()) >= 2.0 {
        log::warn!("step size {eta} makes the largest mode expand; expect divergence");
    }
}

/// Trains from `θ⁽⁰⁾ ~ N(0, ν² I)` drawn from the config's seed.
pub fn train(instance: &ProblemInstance, cfg: &TrainConfig, engine: Engine) -> Result<Trajectory> {
    cfg.validate()?;
    let theta0 = cfg.init_params(instance.m())?;
    train_from(instance, cfg, engine, &theta0)
}

/// Trains from a caller-supplied initial point.
pub fn train_from(
    instance: &ProblemInstance,
    cfg: &TrainConfig,
    engine: Engine,
    theta0: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    if theta0.len() != instance.m() {
        return contract("initial parameters do not match the feature dimension");
    }
    let space = RowSpace::new(&instance.features, DEFAULT_RANK_TOL)?;
    warn_step_size(instance, cfg, &space);
    let steps = cfg.schedule.steps(cfg.max_steps);
    match engine {
        Engine::Spectral => {
            let state = SpectralState::with_space(instance, space, cfg.step_size, cfg.weight_decay, theta0)?;
            let mut points = Vec::with_capacity(steps.len());
            for t in steps {
                let p = state.evaluate(t);
                p.check()?;
                points.push(p);
            }
            Ok(Trajectory {
                points,
                step_train_loss: None,
            })
        }
        Engine::Naive => train_naive(instance, cfg, &space, theta0, &steps),
    }
}

fn train_naive(
    instance: &ProblemInstance,
    cfg: &TrainConfig,
    space: &RowSpace,
    theta0: &[f64],
    steps: &[u64],
) -> Result<Trajectory> {
    let mut ws = GdWorkspace::new(instance.n(), instance.m());
    let mut theta = theta0.to_vec();
    let mut points = Vec::with_capacity(steps.len());
    let mut per_step = Vec::with_capacity(cfg.max_steps as usize + 1);
    let mut next_eval = steps.iter().peekable();
    for t in 0..=cfg.max_steps {
        let train_loss = residual_into(&theta, &instance.features, &instance.labels, &mut ws);
        per_step.push(train_loss);
        if next_eval.peek() == Some(&&t) {
            next_eval.next();
            let (_, perp) = space.split(&theta);
            let p = TrajectoryPoint {
                step: t,
                train_loss,
                pop_loss: instance.linear_population_loss(&theta)?,
                param_norm: norm(&theta),
                perp_norm: Some(norm(&perp)),
            };
            p.check()?;
            points.push(p);
        } else if !train_loss.is_finite() || train_loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                step: t,
                quantity: "train_loss",
                value: train_loss,
            });
        }
        if t == cfg.max_steps {
            break;
        }
        apply_step(
            &mut theta,
            &instance.features,
            cfg.step_size,
            cfg.weight_decay,
            &mut ws,
        );
    }
    Ok(Trajectory {
        points,
        step_train_loss: Some(per_step),
    })
}
