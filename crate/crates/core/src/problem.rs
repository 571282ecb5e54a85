//! Teachers, feature maps, datasets and population-covariance descriptors.

use std::io::Write;
use std::path::Path;

use crate::error::{Result, contract};
use crate::numkit::{Mat, RngStream, derive_seed, dot, norm, norm_sq, sym_eig};

/// Tag mixed into a stream id to obtain the disjoint test-set stream.
const TEST_STREAM_TAG: u64 = 0x7e57;
/// Largest test feature matrix (entries) kept in memory; larger sets recompute features in chunks.
const MATERIALIZE_LIMIT: usize = 1 << 25;
const CHUNK_ROWS: usize = 256;
/// Default Monte Carlo test-set size for nonlinear settings.
pub const DEFAULT_TEST_SIZE: usize = 10_000;

/// Target function `N*`.
#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    Zero,
    /// `N*(x) = ⟨θ*, φ(x)⟩` in the student's own features.
    LinearRealizable(Vec<f64>),
    /// `N*(x) = max(0, ⟨w*, x⟩)` on raw inputs, with `‖w*‖ = 1`.
    ReluNeuron(Vec<f64>),
}

impl Teacher {
    pub fn linear(theta_star: Vec<f64>) -> Result<Self> {
        if theta_star.iter().any(|v| !v.is_finite()) {
            return contract("teacher parameters must be finite");
        }
        Ok(Self::LinearRealizable(theta_star))
    }

    /// Unit-norm linear teacher drawn uniformly from the sphere of ℝ^m.
    pub fn random_unit_linear(rng: &mut RngStream, m: usize) -> Result<Self> {
        Ok(Self::LinearRealizable(rng.unit_sphere(m)?))
    }

    pub fn relu_neuron(w: Vec<f64>) -> Result<Self> {
        let nrm = norm(&w);
        if (nrm - 1.0).abs() > 1e-12 {
            return contract(format!("ReLU teacher weights need unit norm, got {nrm}"));
        }
        Ok(Self::ReluNeuron(w))
    }

    pub fn random_relu_neuron(rng: &mut RngStream, d: usize) -> Result<Self> {
        Ok(Self::ReluNeuron(rng.unit_sphere(d)?))
    }

    /// `‖θ*‖₂` (zero for the zero teacher, `‖w*‖₂` for a neuron).
    pub fn norm(&self) -> f64 {
        match self {
            Teacher::Zero => 0.0,
            Teacher::LinearRealizable(t) | Teacher::ReluNeuron(t) => norm(t),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Teacher::Zero | Teacher::LinearRealizable(_))
    }

    /// Linear teacher parameters in feature space (zeros for the zero teacher).
    pub fn theta_star(&self, m: usize) -> Option<Vec<f64>> {
        match self {
            Teacher::Zero => Some(vec![0.0; m]),
            Teacher::LinearRealizable(t) => Some(t.clone()),
            Teacher::ReluNeuron(_) => None,
        }
    }

    /// Label for one sample given both its raw input and its feature vector.
    fn label(&self, input: &[f64], features: &[f64]) -> f64 {
        match self {
            Teacher::Zero => 0.0,
            Teacher::LinearRealizable(t) => dot(t, features),
            Teacher::ReluNeuron(w) => dot(w, input).max(0.0),
        }
    }
}

/// Feature map `φ: ℝ^d → ℝ^m`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `φ(x) = x` on caller-supplied inputs.
    Identity { dim: usize },
    /// `φ(x) = x` with `x ~ N(0, I_m / m)`.
    GaussianIid { dim: usize },
    /// `φ_j(x) = max(0, ⟨w_j, x⟩)` with frozen hidden weights (rows of an m×d matrix).
    RandomRelu { hidden: Mat },
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } | FeatureMap::GaussianIid { dim } => *dim,
            FeatureMap::RandomRelu { hidden } => hidden.cols(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } | FeatureMap::GaussianIid { dim } => *dim,
            FeatureMap::RandomRelu { hidden } => hidden.rows(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, FeatureMap::GaussianIid { .. })
    }

    /// Feature matrix for a batch of inputs (one per row).
    pub fn apply(&self, inputs: &Mat) -> Mat {
        match self {
            FeatureMap::Identity { .. } | FeatureMap::GaussianIid { .. } => inputs.clone(),
            FeatureMap::RandomRelu { hidden } => {
                let mut z = inputs.matmul_nt(hidden);
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                z
            }
        }
    }
}

/// Population covariance `Σ = E[φ(x) φ(x)ᵀ]` when known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    ScaledIdentity { dim: usize, scale: f64 },
    Dense(Mat),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::ScaledIdentity { dim, .. } => *dim,
            Covariance::Dense(s) => s.rows(),
        }
    }

    /// `vᵀ Σ v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        match self {
            Covariance::ScaledIdentity { scale, .. } => scale * norm_sq(v),
            Covariance::Dense(s) => dot(v, &s.matvec(v)),
        }
    }

    pub fn lambda_min(&self) -> Result<f64> {
        match self {
            Covariance::ScaledIdentity { scale, .. } => Ok(*scale),
            Covariance::Dense(s) => Ok(sym_eig(s)?.values[0]),
        }
    }
}

/// Frozen held-out sample used to estimate the population loss.
#[derive(Debug, Clone)]
pub struct TestSet {
    inputs: Mat,
    targets: Vec<f64>,
    map: FeatureMap,
    features: Option<Mat>,
}

impl TestSet {
    pub fn new(inputs: Mat, targets: Vec<f64>, map: FeatureMap) -> Result<Self> {
        if inputs.rows() != targets.len() || inputs.cols() != map.input_dim() {
            return contract("test inputs, targets and feature map disagree in shape");
        }
        if inputs.rows() == 0 {
            return contract("test set must not be empty");
        }
        let features = match &map {
            FeatureMap::RandomRelu { hidden } if inputs.rows() * hidden.rows() <= MATERIALIZE_LIMIT => {
                Some(map.apply(&inputs))
            }
            _ => None,
        };
        Ok(Self {
            inputs,
            targets,
            map,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Calls `f(first_row, features)` on consecutive row blocks of the test feature matrix.
    fn for_feature_chunks(&self, mut f: impl FnMut(usize, &Mat)) {
        if let Some(feat) = &self.features {
            return f(0, feat);
        }
        match &self.map {
            FeatureMap::Identity { .. } | FeatureMap::GaussianIid { .. } => f(0, &self.inputs),
            FeatureMap::RandomRelu { .. } => {
                let d = self.inputs.cols();
                let mut start = 0;
                while start < self.len() {
                    let end = (start + CHUNK_ROWS).min(self.len());
                    let block = Mat::from_raw(
                        end - start,
                        d,
                        self.inputs.as_slice()[start * d..end * d].to_vec(),
                    );
                    f(start, &self.map.apply(&block));
                    start = end;
                }
            }
        }
    }

    /// Test-set predictions `Ψ θ` for several linear parameter vectors at once.
    pub fn linear_predictions(&self, thetas: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.len()]; thetas.len()];
        self.for_feature_chunks(|start, feat| {
            for i in 0..feat.rows() {
                let row = feat.row(i);
                for (k, th) in thetas.iter().enumerate() {
                    out[k][start + i] = dot(row, th);
                }
            }
        });
        out
    }

    /// Mean squared error of predictions against the stored targets.
    pub fn mse(&self, predictions: &[f64]) -> f64 {
        predictions
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / self.len() as f64
    }
}

/// How the population loss is obtained.
#[derive(Debug, Clone)]
pub enum PopulationCov {
    /// Exact quadratic form `(θ − θ*)ᵀ Σ (θ − θ*)`.
    Analytic { sigma: Covariance, lambda_min: f64 },
    /// Mean squared error over a frozen test set.
    MonteCarlo(TestSet),
}

/// Student whose population loss is requested.
pub enum Predictor<'a> {
    /// `θ − θ*` for a linear student whose teacher lives in the same features.
    LinearGap(&'a [f64]),
    /// A linear student `θ` scored against the teacher labels of the test set.
    Linear(&'a [f64]),
    /// An arbitrary model evaluated on a batch of raw inputs (one per row).
    Network(&'a dyn Fn(&Mat) -> Vec<f64>),
}

impl PopulationCov {
    pub fn analytic(sigma: Covariance) -> Result<Self> {
        let lambda_min = sigma.lambda_min()?;
        if lambda_min < -1e-12 {
            return contract("population covariance must be positive semidefinite");
        }
        Ok(Self::Analytic {
            sigma,
            lambda_min: lambda_min.max(0.0),
        })
    }

    /// `λ_min(Σ)` when known analytically.
    pub fn lambda_min(&self) -> Option<f64> {
        match self {
            PopulationCov::Analytic { lambda_min, .. } => Some(*lambda_min),
            PopulationCov::MonteCarlo(_) => None,
        }
    }

    pub fn population_loss(&self, predictor: Predictor<'_>) -> Result<f64> {
        match (self, predictor) {
            (PopulationCov::Analytic { sigma, .. }, Predictor::LinearGap(gap)) => {
                if gap.len() != sigma.dim() {
                    return contract("gap vector does not match the covariance dimension");
                }
                Ok(sigma.quadratic_form(gap))
            }
            (PopulationCov::Analytic { .. }, _) => {
                contract("analytic population loss needs the linear gap θ − θ* of a linear student")
            }
            (PopulationCov::MonteCarlo(test), Predictor::LinearGap(gap)) => {
                let p = test.linear_predictions(&[gap]);
                Ok(p[0].iter().map(|v| v * v).sum::<f64>() / test.len() as f64)
            }
            (PopulationCov::MonteCarlo(test), Predictor::Linear(theta)) => {
                let p = test.linear_predictions(&[theta]);
                Ok(test.mse(&p[0]))
            }
            (PopulationCov::MonteCarlo(test), Predictor::Network(f)) => {
                let pred = f(test.inputs());
                if pred.len() != test.len() {
                    return contract("network returned the wrong number of predictions");
                }
                Ok(test.mse(&pred))
            }
        }
    }
}

/// A training set together with everything needed to score a student on it.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    /// `Φ ∈ ℝ^{n×m}`, one feature vector per row.
    pub features: Mat,
    /// Raw inputs (one per row); equal to `features` for identity maps.
    pub inputs: Mat,
    pub labels: Vec<f64>,
    pub teacher: Teacher,
    pub cov: PopulationCov,
    pub feature_map: FeatureMap,
    /// `L = ‖Φ‖²_F / n`.
    pub feature_norm: f64,
    /// `max_i ‖φ(x_i)‖₂`.
    pub feature_bound: f64,
}

impl ProblemInstance {
    /// Instance over caller-supplied features with the identity map.
    pub fn from_features(features: Mat, teacher: Teacher, cov: PopulationCov) -> Result<Self> {
        let dim = features.cols();
        Self::assemble(
            features.clone(),
            features,
            teacher,
            cov,
            FeatureMap::Identity { dim },
        )
    }

    fn assemble(
        inputs: Mat,
        features: Mat,
        teacher: Teacher,
        cov: PopulationCov,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let (n, m) = (features.rows(), features.cols());
        if n == 0 || m == 0 {
            return contract("instance needs n >= 1 and m >= 1");
        }
        match &teacher {
            Teacher::LinearRealizable(t) if t.len() != m => {
                return contract(format!("linear teacher has length {}, expected m = {m}", t.len()));
            }
            Teacher::ReluNeuron(w) if w.len() != inputs.cols() => {
                return contract(format!(
                    "ReLU teacher has length {}, expected d = {}",
                    w.len(),
                    inputs.cols()
                ));
            }
            _ => {}
        }
        if let PopulationCov::Analytic { sigma, .. } = &cov
            && sigma.dim() != m
        {
            return contract("population covariance dimension differs from m");
        }
        let labels: Vec<f64> = (0..n)
            .map(|i| teacher.label(inputs.row(i), features.row(i)))
            .collect();
        let row_norms: Vec<f64> = (0..n).map(|i| norm_sq(features.row(i))).collect();
        let feature_norm = row_norms.iter().sum::<f64>() / n as f64;
        let feature_bound = row_norms.iter().cloned().fold(0.0, f64::max).sqrt();
        Ok(Self {
            features,
            inputs,
            labels,
            teacher,
            cov,
            feature_map,
            feature_norm,
            feature_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn m(&self) -> usize {
        self.features.cols()
    }

    /// `θ*` when the teacher is linear in the student's features.
    pub fn theta_star(&self) -> Option<Vec<f64>> {
        match &self.feature_map {
            FeatureMap::RandomRelu { .. } if !matches!(self.teacher, Teacher::Zero) => None,
            _ => self.teacher.theta_star(self.m()),
        }
    }

    /// `L_n(θ) = 1/(2n) ‖Φθ − y‖²`.
    pub fn train_loss(&self, theta: &[f64]) -> f64 {
        let pred = self.features.matvec(theta);
        pred.iter()
            .zip(&self.labels)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / (2.0 * self.n() as f64)
    }

    /// `L(θ)` for a linear student, analytic when possible.
    pub fn linear_population_loss(&self, theta: &[f64]) -> Result<f64> {
        match (&self.cov, self.theta_star()) {
            (PopulationCov::Analytic { .. }, Some(star)) => {
                let gap: Vec<f64> = theta.iter().zip(&star).map(|(a, b)| a - b).collect();
                self.cov.population_loss(Predictor::LinearGap(&gap))
            }
            (PopulationCov::Analytic { .. }, None) => {
                contract("analytic population loss needs a teacher linear in the features")
            }
            (PopulationCov::MonteCarlo(_), _) => self.cov.population_loss(Predictor::Linear(theta)),
        }
    }

    /// Writes the feature matrix and labels as two CSV files with header rows.
    pub fn write_csv(&self, features_path: &Path, labels_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(features_path)?);
        let header: Vec<String> = (1..=self.m()).map(|j| format!("phi_{j}")).collect();
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.n() {
            let row: Vec<String> = self.features.row(i).iter().map(|v| fmt_f64(*v)).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        let mut g = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
        writeln!(g, "y")?;
        for y in &self.labels {
            writeln!(g, "{}", fmt_f64(*y))?;
        }
        g.flush()?;
        Ok(())
    }
}

/// Float formatting with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn test_stream(rng: &RngStream) -> RngStream {
    RngStream::new(rng.seed(), derive_seed(rng.stream(), &[TEST_STREAM_TAG]))
}

/// Gaussian features `φ(x_i) ~ N(0, I_m / m)` with the analytic covariance `Σ = I_m / m`.
pub fn make_gaussian_instance(
    rng: &mut RngStream,
    n: usize,
    m: usize,
    teacher: Teacher,
) -> Result<ProblemInstance> {
    if n == 0 || m == 0 {
        return contract("make_gaussian_instance needs n >= 1 and m >= 1");
    }
    if matches!(teacher, Teacher::ReluNeuron(_)) {
        return contract("Gaussian features take a zero or linear teacher");
    }
    let data = rng.gaussian_vec(n * m, 0.0, 1.0 / m as f64)?;
    let phi = Mat::from_vec(n, m, data)?;
    let cov = PopulationCov::Analytic {
        sigma: Covariance::ScaledIdentity {
            dim: m,
            scale: 1.0 / m as f64,
        },
        lambda_min: 1.0 / m as f64,
    };
    ProblemInstance::assemble(phi.clone(), phi, teacher, cov, FeatureMap::GaussianIid { dim: m })
}

/// Random ReLU features with hidden weights `w_j ~ N(0, ν²/(d m) I_d)`, inputs `x ~ N(0, I_d)`
/// and a Monte Carlo population loss over `n_test` fresh inputs.
pub fn make_random_relu_instance(
    rng: &mut RngStream,
    d: usize,
    m: usize,
    n: usize,
    nu2: f64,
    teacher: Teacher,
    n_test: usize,
) -> Result<ProblemInstance> {
    if d == 0 || m == 0 || n == 0 || n_test == 0 {
        return contract("make_random_relu_instance needs d, m, n, n_test >= 1");
    }
    if matches!(teacher, Teacher::LinearRealizable(_)) {
        return contract("random ReLU features take a zero or ReLU-neuron teacher");
    }
    let hidden = Mat::from_vec(m, d, rng.gaussian_vec(m * d, 0.0, nu2 / (d * m) as f64)?)?;
    let map = FeatureMap::RandomRelu { hidden };
    let inputs = Mat::from_vec(n, d, rng.gaussian_vec(n * d, 0.0, 1.0)?)?;
    let features = map.apply(&inputs);
    let test = raw_test_set(rng, d, n_test, &teacher, map.clone())?;
    ProblemInstance::assemble(inputs, features, teacher, PopulationCov::MonteCarlo(test), map)
}

/// Raw Gaussian inputs `x ~ N(0, I_d)` for networks that learn their own features.
pub fn make_raw_instance(
    rng: &mut RngStream,
    d: usize,
    n: usize,
    teacher: Teacher,
    n_test: usize,
) -> Result<ProblemInstance> {
    if d == 0 || n == 0 || n_test == 0 {
        return contract("make_raw_instance needs d, n, n_test >= 1");
    }
    if matches!(teacher, Teacher::LinearRealizable(_)) {
        return contract("raw-input instances take a zero or ReLU-neuron teacher");
    }
    let inputs = Mat::from_vec(n, d, rng.gaussian_vec(n * d, 0.0, 1.0)?)?;
    let map = FeatureMap::Identity { dim: d };
    let test = raw_test_set(rng, d, n_test, &teacher, map.clone())?;
    ProblemInstance::assemble(
        inputs.clone(),
        inputs,
        teacher,
        PopulationCov::MonteCarlo(test),
        map,
    )
}

fn raw_test_set(
    rng: &RngStream,
    d: usize,
    n_test: usize,
    teacher: &Teacher,
    map: FeatureMap,
) -> Result<TestSet> {
    if let Teacher::ReluNeuron(w) = teacher
        && w.len() != d
    {
        return contract(format!("ReLU teacher has length {}, expected d = {d}", w.len()));
    }
    let mut trng = test_stream(rng);
    let inputs = Mat::from_vec(n_test, d, trng.gaussian_vec(n_test * d, 0.0, 1.0)?)?;
    let targets = (0..n_test).map(|i| teacher.label(inputs.row(i), &[])).collect();
    TestSet::new(inputs, targets, map)
}

/// Monte Carlo test set of Gaussian features `N(0, I_m / m)`, for cross-checking the analytic loss.
pub fn gaussian_test_set(rng: &RngStream, m: usize, n_test: usize, teacher: &Teacher) -> Result<TestSet> {
    let mut trng = test_stream(rng);
    let inputs = Mat::from_vec(n_test, m, trng.gaussian_vec(n_test * m, 0.0, 1.0 / m as f64)?)?;
    let targets = (0..n_test)
        .map(|i| teacher.label(inputs.row(i), inputs.row(i)))
        .collect();
    TestSet::new(inputs, targets, FeatureMap::GaussianIid { dim: m })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_instance_feature_norm_concentrates() {
        for seed in 0..50 {
            let mut rng = RngStream::new(seed, 1);
            let inst = make_gaussian_instance(&mut rng, 100, 1000, Teacher::Zero).unwrap();
            assert!(
                (0.9..=1.1).contains(&inst.feature_norm),
                "seed {seed}: L = {}",
                inst.feature_norm
            );
        }
    }

    #[test]
    fn gaussian_feature_bound_mostly_below_three_halves() {
        let ok = (0..50)
            .filter(|&seed| {
                let mut rng = RngStream::new(seed, 1);
                let inst = make_gaussian_instance(&mut rng, 100, 1000, Teacher::Zero).unwrap();
                inst.feature_bound.powi(2) <= 1.5
            })
            .count();
        assert!(ok >= 45, "{ok}/50");
    }

    #[test]
    fn zero_teacher_gives_zero_labels() {
        let mut rng = RngStream::new(1, 1);
        let inst = make_gaussian_instance(&mut rng, 10, 20, Teacher::Zero).unwrap();
        assert!(inst.labels.iter().all(|y| *y == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = RngStream::new(1, 1);
        let bad = Teacher::linear(vec![1.0; 3]).unwrap();
        assert!(make_gaussian_instance(&mut rng, 10, 20, bad).is_err());
        assert!(Teacher::relu_neuron(vec![1.0, 1.0]).is_err());
        let w = Teacher::relu_neuron(vec![1.0, 0.0]).unwrap();
        assert!(make_random_relu_instance(&mut rng, 3, 5, 4, 1.0, w, 10).is_err());
    }

    #[test]
    fn realizable_labels_give_zero_train_loss_at_teacher() {
        let mut rng = RngStream::new(3, 1);
        let t = Teacher::random_unit_linear(&mut rng, 30).unwrap();
        let inst = make_gaussian_instance(&mut rng, 12, 30, t).unwrap();
        let star = inst.theta_star().unwrap();
        assert_eq!(inst.train_loss(&star), 0.0);
        assert_eq!(inst.linear_population_loss(&star).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_features() {
        let a = make_gaussian_instance(&mut RngStream::new(9, 1), 5, 7, Teacher::Zero).unwrap();
        let b = make_gaussian_instance(&mut RngStream::new(9, 1), 5, 7, Teacher::Zero).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn random_relu_degenerate_and_nonnegative() {
        let mut rng = RngStream::new(4, 1);
        let w = Teacher::random_relu_neuron(&mut RngStream::new(4, 9), 6).unwrap();
        let inst = make_random_relu_instance(&mut rng, 6, 20, 8, 0.0, w.clone(), 50).unwrap();
        assert!(inst.features.as_slice().iter().all(|v| *v == 0.0));
        // Labels come from the teacher on raw inputs, untouched by ν².
        let expect: Vec<f64> = (0..8)
            .map(|i| {
                dot(
                    inst.inputs.row(i),
                    match &w {
                        Teacher::ReluNeuron(v) => v,
                        _ => unreachable!(),
                    },
                )
                .max(0.0)
            })
            .collect();
        assert_eq!(inst.labels, expect);

        let inst = make_random_relu_instance(&mut rng, 100, 10_000, 100, 1.0, Teacher::Zero, 10).unwrap();
        assert!(inst.features.as_slice().iter().all(|v| *v >= 0.0));
        assert!(inst.labels.iter().all(|y| *y == 0.0));
    }

    #[test]
    fn population_loss_examples() {
        let cov = PopulationCov::analytic(Covariance::Dense(Mat::identity(2))).unwrap();
        assert_eq!(
            cov.population_loss(Predictor::LinearGap(&[1.0, 0.0])).unwrap(),
            1.0
        );
        assert_eq!(
            cov.population_loss(Predictor::LinearGap(&[0.0, 0.0])).unwrap(),
            0.0
        );
        let m = 50;
        let cov = PopulationCov::analytic(Covariance::ScaledIdentity {
            dim: m,
            scale: 1.0 / m as f64,
        })
        .unwrap();
        // ‖θ − θ*‖² = m.
        let gap = vec![1.0; m];
        assert!((cov.population_loss(Predictor::LinearGap(&gap)).unwrap() - 1.0).abs() < 1e-15);
        let f = |x: &Mat| vec![0.0; x.rows()];
        assert!(cov.population_loss(Predictor::Network(&f)).is_err());
        assert!(cov.population_loss(Predictor::Linear(&gap)).is_err());
    }

    #[test]
    fn monte_carlo_matches_analytic_for_gaussian_features() {
        let m = 40;
        for seed in 0..10 {
            let rng = RngStream::new(seed, 1);
            let test = gaussian_test_set(&rng, m, 100_000, &Teacher::Zero).unwrap();
            let mc = PopulationCov::MonteCarlo(test);
            let mut g = RngStream::new(seed, 5);
            let gap = g.unit_sphere(m).unwrap();
            let exact = 1.0 / m as f64;
            let est = mc.population_loss(Predictor::LinearGap(&gap)).unwrap();
            assert!(
                ((est - exact) / exact).abs() < 0.05,
                "seed {seed}: {est} vs {exact}"
            );
        }
    }

    #[test]
    fn lazy_and_materialized_test_features_agree() {
        let mut rng = RngStream::new(2, 1);
        let hidden = Mat::from_vec(30, 4, rng.gaussian_vec(120, 0.0, 1.0).unwrap()).unwrap();
        let map = FeatureMap::RandomRelu { hidden };
        let inputs = Mat::from_vec(600, 4, rng.gaussian_vec(2400, 0.0, 1.0).unwrap()).unwrap();
        let set = TestSet::new(inputs.clone(), vec![0.0; 600], map.clone()).unwrap();
        assert!(set.features.is_some());
        let mut lazy = set.clone();
        lazy.features = None;
        let theta = rng.gaussian_vec(30, 0.0, 1.0).unwrap();
        let a = set.linear_predictions(&[&theta]);
        let b = lazy.linear_predictions(&[&theta]);
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn csv_dump_has_headers() {
        let dir = std::env::temp_dir().join(format!("ridgegrok-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let phi = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let cov = PopulationCov::analytic(Covariance::Dense(Mat::identity(2))).unwrap();
        let inst =
            ProblemInstance::from_features(phi, Teacher::linear(vec![1.0, 0.0]).unwrap(), cov).unwrap();
        let (fp, lp) = (dir.join("phi.csv"), dir.join("y.csv"));
        inst.write_csv(&fp, &lp).unwrap();
        let fs = std::fs::read_to_string(&fp).unwrap();
        let ls = std::fs::read_to_string(&lp).unwrap();
        assert!(fs.starts_with("phi_1,phi_2\n"));
        assert_eq!(ls.lines().next(), Some("y"));
        assert_eq!(ls.lines().nth(2).unwrap().parse::<f64>().unwrap(), 3.0);
        std::fs::remove_dir_all(&dir).ok();
    }
}
