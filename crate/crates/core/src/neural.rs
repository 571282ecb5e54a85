//! Two-layer ReLU networks `N(x) = Σ_j a_j max(0, ⟨w_j, x⟩)` trained by full-batch GD.

use crate::error::{Error, Result, contract};
use crate::numkit::{Mat, RngStream, gemm, norm_sq, streams};
use crate::problem::{FeatureMap, PopulationCov, Predictor, ProblemInstance, Teacher};
use crate::ridge::{self, DIVERGENCE_LIMIT, Engine, TrainConfig, Trajectory, TrajectoryPoint};

/// Variance of the output weights when only the output layer is trained.
pub const RANDOM_FEATURE_OUTPUT_VARIANCE: f64 = 1.0;
const PREDICT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// Hidden weights, one neuron per row (m × d).
    pub hidden: Mat,
    /// Output weights (length m).
    pub output: Vec<f64>,
}

impl TwoLayerNet {
    pub fn new(hidden: Mat, output: Vec<f64>) -> Result<Self> {
        if hidden.rows() != output.len() {
            return contract("hidden rows and output weights differ in count");
        }
        if !hidden.all_finite() || output.iter().any(|v| !v.is_finite()) {
            return contract("network parameters must be finite");
        }
        Ok(Self { hidden, output })
    }

    pub fn width(&self) -> usize {
        self.output.len()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.cols()
    }

    pub fn param_norm(&self) -> f64 {
        (self.hidden.frobenius_sq() + norm_sq(&self.output)).sqrt()
    }

    /// Predictions for a batch of inputs (one per row).
    pub fn predict(&self, inputs: &Mat) -> Vec<f64> {
        assert_eq!(inputs.cols(), self.input_dim(), "input dimension mismatch");
        let (d, m) = (self.input_dim(), self.width());
        let mut out = Vec::with_capacity(inputs.rows());
        let mut z = vec![0.0; PREDICT_CHUNK * m];
        let mut start = 0;
        while start < inputs.rows() {
            let rows = (inputs.rows() - start).min(PREDICT_CHUNK);
            let x = &inputs.as_slice()[start * d..(start + rows) * d];
            gemm(
                rows,
                d,
                m,
                1.0,
                (x, d, 1),
                (self.hidden.as_slice(), 1, d),
                0.0,
                &mut z,
            );
            for i in 0..rows {
                let zi = &z[i * m..(i + 1) * m];
                out.push(zi.iter().zip(&self.output).map(|(v, a)| v.max(0.0) * a).sum());
            }
            start += rows;
        }
        out
    }
}

/// `a_j ~ N(0, 1/m)` and `w_j ~ N(0, (ν²/d) I_d)`, hidden layer drawn first.
pub fn init_full(rng: &mut RngStream, d: usize, m: usize, nu2: f64) -> Result<TwoLayerNet> {
    if d == 0 || m == 0 {
        return contract("network needs d >= 1 and m >= 1");
    }
    if !(nu2 >= 0.0) {
        return contract(format!("ν² must be >= 0, got {nu2}"));
    }
    let hidden = Mat::from_vec(m, d, rng.gaussian_vec(m * d, 0.0, nu2 / d as f64)?)?;
    let output = rng.gaussian_vec(m, 0.0, 1.0 / m as f64)?;
    TwoLayerNet::new(hidden, output)
}

/// Buffers for one forward/backward pass over the training batch.
struct Workspace {
    pre: Vec<f64>,
    back: Vec<f64>,
    resid: Vec<f64>,
    grad_hidden: Vec<f64>,
    grad_output: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, d: usize, m: usize) -> Self {
        Self {
            pre: vec![0.0; n * m],
            back: vec![0.0; n * m],
            resid: vec![0.0; n],
            grad_hidden: vec![0.0; m * d],
            grad_output: vec![0.0; m],
        }
    }

    /// Pre-activations and residuals; returns `L_n`.
    fn forward(&mut self, net: &TwoLayerNet, x: &Mat, y: &[f64]) -> f64 {
        let (n, d, m) = (x.rows(), x.cols(), net.width());
        gemm(
            n,
            d,
            m,
            1.0,
            (x.as_slice(), d, 1),
            (net.hidden.as_slice(), 1, d),
            0.0,
            &mut self.pre,
        );
        for i in 0..n {
            let zi = &self.pre[i * m..(i + 1) * m];
            let pred: f64 = zi.iter().zip(&net.output).map(|(v, a)| v.max(0.0) * a).sum();
            self.resid[i] = pred - y[i];
        }
        norm_sq(&self.resid) / (2.0 * n as f64)
    }

    /// Unnormalized data gradients `Σ_i r_i σ(z_ij)` and `Σ_i r_i a_j 1{z_ij > 0} x_i`.
    fn backward(&mut self, net: &TwoLayerNet, x: &Mat) {
        let (n, d, m) = (x.rows(), x.cols(), net.width());
        self.grad_output.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let r = self.resid[i];
            let zi = &self.pre[i * m..(i + 1) * m];
            let bi = &mut self.back[i * m..(i + 1) * m];
            for j in 0..m {
                let active = zi[j] > 0.0;
                self.grad_output[j] += r * if active { zi[j] } else { 0.0 };
                bi[j] = if active { r * net.output[j] } else { 0.0 };
            }
        }
        gemm(
            m,
            n,
            d,
            1.0,
            (&self.back, 1, m),
            (x.as_slice(), d, 1),
            0.0,
            &mut self.grad_hidden,
        );
    }

    fn gradients_finite(&self) -> bool {
        self.grad_hidden
            .iter()
            .chain(&self.grad_output)
            .all(|v| v.is_finite())
    }

    fn apply(&self, net: &mut TwoLayerNet, n: usize, eta: f64, lambda: f64) {
        let scale = eta / n as f64;
        for (w, g) in net.hidden.as_mut_slice().iter_mut().zip(&self.grad_hidden) {
            *w = *w - scale * g - eta * lambda * *w;
        }
        for (a, g) in net.output.iter_mut().zip(&self.grad_output) {
            *a = *a - scale * g - eta * lambda * *a;
        }
    }
}

fn check_batch(net: &TwoLayerNet, x: &Mat, y: &[f64]) -> Result<()> {
    if x.cols() != net.input_dim() || x.rows() != y.len() || x.rows() == 0 {
        return contract("batch shape does not match the network");
    }
    Ok(())
}

/// Ridge objective `L_n(θ) + (λ/2)‖θ‖²` over both layers.
pub fn objective(net: &TwoLayerNet, x: &Mat, y: &[f64], lambda: f64) -> Result<f64> {
    check_batch(net, x, y)?;
    let mut ws = Workspace::new(x.rows(), x.cols(), net.width());
    let loss = ws.forward(net, x, y);
    Ok(loss + 0.5 * lambda * net.param_norm().powi(2))
}

/// Gradient of [`objective`] as `(hidden, output)`; the ReLU derivative at 0 is taken as 0.
pub fn full_gradient(net: &TwoLayerNet, x: &Mat, y: &[f64], lambda: f64) -> Result<(Mat, Vec<f64>)> {
    check_batch(net, x, y)?;
    let n = x.rows();
    let mut ws = Workspace::new(n, x.cols(), net.width());
    ws.forward(net, x, y);
    ws.backward(net, x);
    let inv_n = 1.0 / n as f64;
    let hidden: Vec<f64> = ws
        .grad_hidden
        .iter()
        .zip(net.hidden.as_slice())
        .map(|(g, w)| g * inv_n + lambda * w)
        .collect();
    let output = ws
        .grad_output
        .iter()
        .zip(&net.output)
        .map(|(g, a)| g * inv_n + lambda * a)
        .collect();
    Ok((Mat::from_vec(net.width(), net.input_dim(), hidden)?, output))
}

/// One GD step on both layers with weight decay.
pub fn full_gd_step(net: &TwoLayerNet, x: &Mat, y: &[f64], eta: f64, lambda: f64) -> Result<TwoLayerNet> {
    check_batch(net, x, y)?;
    let mut ws = Workspace::new(x.rows(), x.cols(), net.width());
    let mut next = net.clone();
    ws.forward(net, x, y);
    ws.backward(net, x);
    if !ws.gradients_finite() {
        return Err(Error::Divergence {
            step: 0,
            quantity: "gradient",
            value: f64::NAN,
        });
    }
    ws.apply(&mut next, x.rows(), eta, lambda);
    Ok(next)
}

fn check_raw_instance(instance: &ProblemInstance) -> Result<()> {
    if !matches!(instance.feature_map, FeatureMap::Identity { .. }) {
        return contract("full-network training needs an instance over raw inputs");
    }
    if matches!(instance.teacher, Teacher::LinearRealizable(_)) {
        return contract("full-network training takes a zero or ReLU-neuron teacher");
    }
    if !matches!(instance.cov, PopulationCov::MonteCarlo(_)) {
        return contract("full-network training needs a Monte Carlo population loss");
    }
    Ok(())
}

/// Trains both layers of a width-`m` network from `init_full` on the run's init stream.
pub fn train_full(instance: &ProblemInstance, width: usize, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_raw_instance(instance)?;
    let d = instance.inputs.cols();
    let net = init_full(
        &mut RngStream::new(cfg.seed, streams::INIT),
        d,
        width,
        cfg.init_variance,
    )?;
    train_full_from(instance, cfg, net)
}

/// Trains from a given network; `perp_norm` is left empty.
pub fn train_full_from(
    instance: &ProblemInstance,
    cfg: &TrainConfig,
    mut net: TwoLayerNet,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_raw_instance(instance)?;
    let x = &instance.inputs;
    let y = &instance.labels;
    check_batch(&net, x, y)?;
    let n = x.rows();
    let steps = cfg.schedule.steps(cfg.max_steps);
    let mut next_eval = steps.iter().peekable();
    let mut ws = Workspace::new(n, x.cols(), net.width());
    let mut points = Vec::with_capacity(steps.len());
    let mut per_step = Vec::with_capacity(cfg.max_steps as usize + 1);
    for t in 0..=cfg.max_steps {
        let train_loss = ws.forward(&net, x, y);
        per_step.push(train_loss);
        if next_eval.peek() == Some(&&t) {
            next_eval.next();
            let predict = |inputs: &Mat| net.predict(inputs);
            let p = TrajectoryPoint {
                step: t,
                train_loss,
                pop_loss: instance.cov.population_loss(Predictor::Network(&predict))?,
                param_norm: net.param_norm(),
                perp_norm: None,
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
        ws.backward(&net, x);
        if !ws.gradients_finite() {
            return Err(Error::Divergence {
                step: t,
                quantity: "gradient",
                value: f64::NAN,
            });
        }
        ws.apply(&mut net, n, cfg.step_size, cfg.weight_decay);
    }
    Ok(Trajectory {
        points,
        step_train_loss: Some(per_step),
    })
}

/// Output-layer training on frozen random ReLU features, which is ridge regression on `Φ`.
/// The output weights start from `N(0, 1)` whatever `cfg.init_variance` says.
pub fn train_random_features(
    instance: &ProblemInstance,
    cfg: &TrainConfig,
    engine: Engine,
) -> Result<Trajectory> {
    if !matches!(instance.feature_map, FeatureMap::RandomRelu { .. }) {
        return contract("random-feature training needs an instance built with a random ReLU map");
    }
    let cfg = TrainConfig {
        init_variance: RANDOM_FEATURE_OUTPUT_VARIANCE,
        ..*cfg
    };
    ridge::train(instance, &cfg, engine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_random_relu_instance, make_raw_instance};

    /// Straight loops over samples and units, independent of the GEMM path.
    fn oracle_step(net: &TwoLayerNet, x: &Mat, y: &[f64], eta: f64, lambda: f64) -> TwoLayerNet {
        let (n, d, m) = (x.rows(), x.cols(), net.width());
        let mut z = vec![vec![0.0; m]; n];
        let mut r = vec![0.0; n];
        for i in 0..n {
            for j in 0..m {
                z[i][j] = (0..d).map(|k| net.hidden.get(j, k) * x.get(i, k)).sum();
            }
            r[i] = (0..m).map(|j| net.output[j] * z[i][j].max(0.0)).sum::<f64>() - y[i];
        }
        let mut out = net.clone();
        for j in 0..m {
            let ga: f64 = (0..n).map(|i| r[i] * z[i][j].max(0.0)).sum::<f64>() / n as f64;
            out.output[j] = net.output[j] - eta * ga - eta * lambda * net.output[j];
            for k in 0..d {
                let gw: f64 = (0..n)
                    .filter(|&i| z[i][j] > 0.0)
                    .map(|i| r[i] * net.output[j] * x.get(i, k))
                    .sum::<f64>()
                    / n as f64;
                let w = net.hidden.get(j, k);
                out.hidden.set(j, k, w - eta * gw - eta * lambda * w);
            }
        }
        out
    }

    #[test]
    fn zero_hidden_means_zero_network() {
        let mut rng = RngStream::new(1, streams::INIT);
        let net = init_full(&mut rng, 4, 6, 0.0).unwrap();
        assert!(net.hidden.as_slice().iter().all(|v| *v == 0.0));
        let x = Mat::from_vec(3, 4, RngStream::new(2, 1).gaussian_vec(12, 0.0, 1.0).unwrap()).unwrap();
        assert!(net.predict(&x).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_variance_is_one_over_width() {
        let m = 10_000;
        let net = init_full(&mut RngStream::new(3, streams::INIT), 2, m, 1.0).unwrap();
        let var = norm_sq(&net.output) / m as f64;
        assert!((var * m as f64 - 1.0).abs() < 0.2, "{var}");
        let again = init_full(&mut RngStream::new(3, streams::INIT), 2, m, 1.0).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn step_matches_loop_oracle() {
        for seed in 0..5 {
            let mut rng = RngStream::new(seed, 7);
            let net = init_full(&mut rng, 5, 9, 1.0).unwrap();
            let x = Mat::from_vec(4, 5, rng.gaussian_vec(20, 0.0, 1.0).unwrap()).unwrap();
            let y = rng.gaussian_vec(4, 0.0, 1.0).unwrap();
            let a = full_gd_step(&net, &x, &y, 1e-4, 0.05).unwrap();
            let b = oracle_step(&net, &x, &y, 1e-4, 0.05);
            for (u, v) in a.hidden.as_slice().iter().zip(b.hidden.as_slice()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
            for (u, v) in a.output.iter().zip(&b.output) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn inactive_rows_only_decay() {
        let hidden = Mat::from_rows(&[vec![-1.0, -1.0], vec![1.0, 0.5]]).unwrap();
        let net = TwoLayerNet::new(hidden, vec![0.3, -0.7]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.1]]).unwrap();
        let next = full_gd_step(&net, &x, &[1.0, -1.0], 0.1, 0.2).unwrap();
        assert_eq!(next.hidden.row(0), &[-0.98, -0.98]);
    }

    #[test]
    fn zero_residual_fixed_point() {
        let mut rng = RngStream::new(4, 7);
        let net = init_full(&mut rng, 3, 5, 1.0).unwrap();
        let x = Mat::from_vec(6, 3, rng.gaussian_vec(18, 0.0, 1.0).unwrap()).unwrap();
        let y = net.predict(&x);
        let next = full_gd_step(&net, &x, &y, 0.5, 0.0).unwrap();
        assert_eq!(next, net);
    }

    #[test]
    fn zero_teacher_zero_init_stays_zero() {
        let mut rng = RngStream::new(5, streams::DATA);
        let inst = make_raw_instance(&mut rng, 4, 6, Teacher::Zero, 50).unwrap();
        let cfg = TrainConfig::new(1e-2, 0.1, 0.0, 50, 5).unwrap();
        let tr = train_full(&inst, 8, &cfg).unwrap();
        assert!(tr.points.iter().all(|p| p.train_loss == 0.0 && p.pop_loss == 0.0));
        assert!(tr.points.iter().all(|p| p.perp_norm.is_none()));
    }

    #[test]
    fn random_features_is_ridge_on_materialized_features() {
        let mut rng = RngStream::new(6, streams::DATA);
        let inst = make_random_relu_instance(&mut rng, 5, 40, 12, 1.0, Teacher::Zero, 200).unwrap();
        let cfg = TrainConfig::new(1.0, 1e-3, 7.0, 300, 6).unwrap();
        let a = train_random_features(&inst, &cfg, Engine::Naive).unwrap();
        let mut plain =
            ProblemInstance::from_features(inst.features.clone(), Teacher::Zero, inst.cov.clone()).unwrap();
        plain.labels = inst.labels.clone();
        let ridge_cfg = TrainConfig {
            init_variance: 1.0,
            ..cfg
        };
        let b = ridge::train(&plain, &ridge_cfg, Engine::Naive).unwrap();
        assert_eq!(a, b);
        let theta0 = ridge_cfg.init_params(40).unwrap();
        let sq = norm_sq(&theta0);
        assert!((20.0..=60.0).contains(&sq));
    }
}
