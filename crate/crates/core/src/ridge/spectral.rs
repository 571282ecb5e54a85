//! Exact evaluation of the GD iterate at arbitrary steps.
//!
//! With `A = ΦᵀΦ/n = Σ μ_i v_i v_iᵀ` and `b = Φᵀy/n`, the iterate splits into a
//! row-space part whose coordinates contract by `ρ_i = 1 − η(μ_i + λ)` toward
//! `γ_i = ⟨v_i, b⟩/(μ_i + λ)` and a perpendicular part that shrinks by
//! `κ = 1 − ηλ` per step:
//!
//! ```text
//! θ(t) = Σ_i (γ_i + ρ_i^t c_i) v_i + κ^t p₀
//! ```
//!
//! Losses are expanded in these coordinates so that no large terms cancel.

use crate::error::{Result, contract};
use crate::numkit::{DEFAULT_RANK_TOL, Mat, axpy, dot, norm_sq, sym_eig};
use crate::problem::{Covariance, PopulationCov, ProblemInstance};

use super::trajectory::TrajectoryPoint;

/// Orthonormal basis of the row space of `Φ` with the eigenvalues of `ΦᵀΦ/n`.
#[derive(Debug, Clone)]
pub struct RowSpace {
    /// One basis vector per row (r × m).
    basis: Mat,
    /// Eigenvalues `μ_i > 0` of `ΦᵀΦ/n`, matching the rows of `basis`.
    eigenvalues: Vec<f64>,
    n: usize,
}

impl RowSpace {
    /// Eigenvalues below `rank_tol · μ_max` are treated as zero.
    pub fn new(features: &Mat, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return contract("rank tolerance must lie in (0, 1)");
        }
        let (n, m) = (features.rows(), features.cols());
        let inv_n = 1.0 / n as f64;
        if n <= m {
            // Eigenpairs of the small Gram ΦΦᵀ/n lift to the row space: v = Φᵀu / √(n s).
            let eig = sym_eig(&features.gram_rows().scale(inv_n))?;
            let keep = kept_indices(&eig.values, rank_tol);
            let mut lift = Mat::zeros(keep.len(), n);
            for (k, &i) in keep.iter().enumerate() {
                let u = eig.vector(i);
                let s = 1.0 / (n as f64 * eig.values[i]).sqrt();
                lift.row_mut(k)
                    .iter_mut()
                    .zip(&u)
                    .for_each(|(dst, ui)| *dst = ui * s);
            }
            let basis = lift.matmul(features);
            let eigenvalues = keep.iter().map(|&i| eig.values[i]).collect();
            Ok(Self {
                basis,
                eigenvalues,
                n,
            })
        } else {
            let eig = sym_eig(&features.gram_cols().scale(inv_n))?;
            let keep = kept_indices(&eig.values, rank_tol);
            let mut basis = Mat::zeros(keep.len(), m);
            for (k, &i) in keep.iter().enumerate() {
                basis.row_mut(k).copy_from_slice(&eig.vector(i));
            }
            let eigenvalues = keep.iter().map(|&i| eig.values[i]).collect();
            Ok(Self {
                basis,
                eigenvalues,
                n,
            })
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// Eigenvalues of `ΦᵀΦ/n` on the row space, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    /// `λ⁺_min(ΦᵀΦ)`, i.e. `n` times the smallest kept eigenvalue.
    pub fn min_positive_gram_eigenvalue(&self) -> Option<f64> {
        self.eigenvalues.first().map(|mu| mu * self.n as f64)
    }

    /// Largest eigenvalue of `ΦᵀΦ/n` (zero when `Φ = 0`).
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Coordinates `⟨v_i, θ⟩`.
    pub fn coords(&self, theta: &[f64]) -> Vec<f64> {
        self.basis.matvec(theta)
    }

    /// `Σ_i x_i v_i`.
    pub fn lift(&self, coords: &[f64]) -> Vec<f64> {
        self.basis.matvec_t(coords)
    }

    /// `(θ_∥, θ_⊥)` with `θ_∥` in the row space and `θ_⊥ = θ − θ_∥`.
    pub fn split(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let par = self.lift(&self.coords(theta));
        let perp = theta.iter().zip(&par).map(|(a, b)| a - b).collect();
        (par, perp)
    }
}

fn kept_indices(values: &[f64], rank_tol: f64) -> Vec<usize> {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    (0..values.len())
        .filter(|&i| values[i] > rank_tol * top)
        .collect()
}

/// Splits `θ` into its components in and orthogonal to the row space of the instance's features.
pub fn decompose(theta: &[f64], instance: &ProblemInstance) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.len() != instance.m() {
        return contract("parameter vector does not match the feature dimension");
    }
    Ok(RowSpace::new(&instance.features, DEFAULT_RANK_TOL)?.split(theta))
}

/// `base^t` for a step count, exact-sign for negative bases.
pub(crate) fn pow_step(base: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else {
        base.powf(t as f64)
    }
}

#[derive(Debug, Clone)]
enum PopEval {
    /// `Σ = s·I`: `s(Σ(β_i + ρ_i^t c_i)² + ‖q‖² + 2κ^t⟨q, p₀⟩ + κ^{2t}‖p₀‖²)`.
    ScaledIdentity {
        scale: f64,
        beta: Vec<f64>,
        q_sq: f64,
        q_dot_p0: f64,
    },
    /// Gram of `[v_1 … v_r, q, p₀]` under `Σ`.
    Dense { beta: Vec<f64>, gram: Mat },
    /// Test predictions of `θ_a`, of each mode and of `p₀`.
    MonteCarlo {
        residual: Vec<f64>,
        modes: Mat,
        perp: Vec<f64>,
    },
}

/// Closed-form GD trajectory of a linear student.
#[derive(Debug, Clone)]
pub struct SpectralState {
    space: RowSpace,
    step_size: f64,
    weight_decay: f64,
    /// Row-space coordinates of the fixed point (`θ*_λ` when `λ > 0`).
    anchor: Vec<f64>,
    /// Initial offset from the fixed point, per mode.
    offset: Vec<f64>,
    rho: Vec<f64>,
    kappa: f64,
    perp0: Vec<f64>,
    perp0_sq: f64,
    /// `‖Φ v_i‖²`.
    mode_weight: Vec<f64>,
    /// Training residual at the fixed point, per mode.
    alpha: Vec<f64>,
    resid_perp_sq: f64,
    pop: PopEval,
}

impl SpectralState {
    pub fn new(
        instance: &ProblemInstance,
        step_size: f64,
        weight_decay: f64,
        theta0: &[f64],
    ) -> Result<Self> {
        let space = RowSpace::new(&instance.features, DEFAULT_RANK_TOL)?;
        Self::with_space(instance, space, step_size, weight_decay, theta0)
    }

    pub fn with_space(
        instance: &ProblemInstance,
        space: RowSpace,
        step_size: f64,
        weight_decay: f64,
        theta0: &[f64],
    ) -> Result<Self> {
        let (n, m) = (instance.n(), instance.m());
        if theta0.len() != m || space.dim() != m {
            return contract("initial parameters do not match the feature dimension");
        }
        if !(step_size > 0.0) || !(weight_decay >= 0.0) {
            return contract("spectral state needs η > 0 and λ >= 0");
        }
        let phi = &instance.features;
        let inv_n = 1.0 / n as f64;
        let b: Vec<f64> = phi.matvec_t(&instance.labels).iter().map(|v| v * inv_n).collect();
        let b_coords = space.coords(&b);
        let anchor: Vec<f64> = b_coords
            .iter()
            .zip(&space.eigenvalues)
            .map(|(bi, mu)| bi / (mu + weight_decay))
            .collect();
        let theta_a = space.lift(&anchor);
        let init_coords = space.coords(theta0);
        let offset: Vec<f64> = init_coords.iter().zip(&anchor).map(|(x, g)| x - g).collect();
        let perp0: Vec<f64> = {
            let par = space.lift(&init_coords);
            theta0.iter().zip(&par).map(|(a, b)| a - b).collect()
        };
        let rho = space
            .eigenvalues
            .iter()
            .map(|mu| 1.0 - step_size * (mu + weight_decay))
            .collect();
        let kappa = 1.0 - step_size * weight_decay;

        // Training residual r₀ = Φθ_a − y expanded over the orthogonal columns w_i = Φ v_i.
        let w = phi.matmul_nt(&space.basis);
        let r0: Vec<f64> = phi
            .matvec(&theta_a)
            .iter()
            .zip(&instance.labels)
            .map(|(p, y)| p - y)
            .collect();
        let mut mode_weight = vec![0.0; space.rank()];
        let mut alpha = vec![0.0; space.rank()];
        let mut resid_perp = r0.clone();
        for i in 0..space.rank() {
            let wi = w.column(i);
            mode_weight[i] = norm_sq(&wi);
            alpha[i] = dot(&r0, &wi) / mode_weight[i];
            axpy(-alpha[i], &wi, &mut resid_perp);
        }

        let pop = match (&instance.cov, instance.theta_star()) {
            (PopulationCov::Analytic { sigma, .. }, Some(star)) => {
                let d0: Vec<f64> = theta_a.iter().zip(&star).map(|(a, s)| a - s).collect();
                let beta = space.coords(&d0);
                let q: Vec<f64> = {
                    let par = space.lift(&beta);
                    d0.iter().zip(&par).map(|(a, b)| a - b).collect()
                };
                match sigma {
                    Covariance::ScaledIdentity { scale, .. } => PopEval::ScaledIdentity {
                        scale: *scale,
                        beta,
                        q_sq: norm_sq(&q),
                        q_dot_p0: dot(&q, &perp0),
                    },
                    Covariance::Dense(s) => {
                        let r = space.rank();
                        let mut frame = Mat::zeros(r + 2, m);
                        for i in 0..r {
                            frame.row_mut(i).copy_from_slice(space.basis.row(i));
                        }
                        frame.row_mut(r).copy_from_slice(&q);
                        frame.row_mut(r + 1).copy_from_slice(&perp0);
                        let gram = frame.matmul(s).matmul_nt(&frame);
                        PopEval::Dense { beta, gram }
                    }
                }
            }
            (PopulationCov::Analytic { .. }, None) => {
                return contract("analytic population loss needs a teacher linear in the features");
            }
            (PopulationCov::MonteCarlo(test), _) => {
                let mut vectors: Vec<&[f64]> = vec![&theta_a, &perp0];
                for i in 0..space.rank() {
                    vectors.push(space.basis.row(i));
                }
                let mut preds = test.linear_predictions(&vectors);
                let mode_preds = preds.split_off(2);
                let perp = preds.pop().expect("two leading prediction vectors");
                let residual = preds
                    .pop()
                    .expect("anchor predictions")
                    .iter()
                    .zip(test.targets())
                    .map(|(p, y)| p - y)
                    .collect();
                let modes = Mat::from_raw(
                    space.rank(),
                    test.len(),
                    mode_preds.into_iter().flatten().collect(),
                );
                PopEval::MonteCarlo {
                    residual,
                    modes,
                    perp,
                }
            }
        };

        Ok(Self {
            perp0_sq: norm_sq(&perp0),
            resid_perp_sq: norm_sq(&resid_perp),
            space,
            step_size,
            weight_decay,
            anchor,
            offset,
            rho,
            kappa,
            perp0,
            mode_weight,
            alpha,
            pop,
        })
    }

    pub fn row_space(&self) -> &RowSpace {
        &self.space
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    /// Per-mode contraction factors `1 − η(μ_i + λ)`.
    pub fn contraction_factors(&self) -> &[f64] {
        &self.rho
    }

    /// Largest `|ρ_i|` together with `|1 − ηλ|`; below one the iteration converges.
    pub fn max_contraction(&self) -> f64 {
        self.rho.iter().fold(self.kappa.abs(), |acc, r| acc.max(r.abs()))
    }

    fn decayed_offsets(&self, t: u64) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.offset)
            .map(|(r, c)| pow_step(*r, t) * c)
            .collect()
    }

    fn train_from_offsets(&self, off: &[f64]) -> f64 {
        let modes: f64 = (0..off.len())
            .map(|i| {
                let e = self.alpha[i] + off[i];
                self.mode_weight[i] * e * e
            })
            .sum();
        (modes + self.resid_perp_sq) / (2.0 * self.space.n as f64)
    }

    fn pop_from_offsets(&self, off: &[f64], kt: f64) -> f64 {
        match &self.pop {
            PopEval::ScaledIdentity {
                scale,
                beta,
                q_sq,
                q_dot_p0,
            } => {
                let modes: f64 = beta.iter().zip(off).map(|(b, o)| (b + o) * (b + o)).sum();
                let perp = q_sq + 2.0 * kt * q_dot_p0 + kt * kt * self.perp0_sq;
                (scale * (modes + perp)).max(0.0)
            }
            PopEval::Dense { beta, gram } => {
                let mut x: Vec<f64> = beta.iter().zip(off).map(|(b, o)| b + o).collect();
                x.push(1.0);
                x.push(kt);
                dot(&x, &gram.matvec(&x)).max(0.0)
            }
            PopEval::MonteCarlo {
                residual,
                modes,
                perp,
            } => {
                let mut pred = modes.matvec_t(off);
                for (j, p) in pred.iter_mut().enumerate() {
                    *p += residual[j] + kt * perp[j];
                }
                norm_sq(&pred) / pred.len() as f64
            }
        }
    }

    /// `L_n(θ⁽ᵗ⁾)`.
    pub fn train_loss(&self, t: u64) -> f64 {
        self.train_from_offsets(&self.decayed_offsets(t))
    }

    /// `L(θ⁽ᵗ⁾)`.
    pub fn pop_loss(&self, t: u64) -> f64 {
        self.pop_from_offsets(&self.decayed_offsets(t), pow_step(self.kappa, t))
    }

    /// Nonincreasing upper bound on `L_n(θ⁽ˢ⁾)` for every `s ≥ t` when all `|ρ_i| ≤ 1`.
    pub fn train_loss_envelope(&self, t: u64) -> f64 {
        let modes: f64 = (0..self.rho.len())
            .map(|i| {
                let e = self.alpha[i].abs() + self.offset[i].abs() * pow_step(self.rho[i].abs(), t);
                self.mode_weight[i] * e * e
            })
            .sum();
        (modes + self.resid_perp_sq) / (2.0 * self.space.n as f64)
    }

    /// Training loss at the fixed point, the limit of `L_n(θ⁽ᵗ⁾)` for a contracting iteration.
    pub fn train_loss_limit(&self) -> f64 {
        self.train_from_offsets(&vec![0.0; self.rho.len()])
    }

    /// Losses and norms of the exact iterate at step `t`.
    pub fn evaluate(&self, t: u64) -> TrajectoryPoint {
        let off = self.decayed_offsets(t);
        let kt = pow_step(self.kappa, t);
        let par_sq: f64 = self.anchor.iter().zip(&off).map(|(g, o)| (g + o) * (g + o)).sum();
        TrajectoryPoint {
            step: t,
            train_loss: self.train_from_offsets(&off),
            pop_loss: self.pop_from_offsets(&off, kt),
            param_norm: (par_sq + kt * kt * self.perp0_sq).sqrt(),
            perp_norm: Some(kt.abs() * self.perp0_sq.sqrt()),
        }
    }

    /// The iterate `θ⁽ᵗ⁾` itself.
    pub fn params_at(&self, t: u64) -> Vec<f64> {
        let coords: Vec<f64> = self
            .anchor
            .iter()
            .zip(self.decayed_offsets(t))
            .map(|(g, o)| g + o)
            .collect();
        let mut theta = self.space.lift(&coords);
        axpy(pow_step(self.kappa, t), &self.perp0, &mut theta);
        theta
    }

    /// Row-space part of the fixed point, `θ*_λ` when `λ > 0`.
    pub fn fixed_point(&self) -> Vec<f64> {
        self.space.lift(&self.anchor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use crate::problem::{Teacher, make_gaussian_instance};

    #[test]
    fn axis_aligned_projection() {
        let phi = Mat::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let rs = RowSpace::new(&phi, DEFAULT_RANK_TOL).unwrap();
        let (par, perp) = rs.split(&[1.0, 2.0, 3.0]);
        for (a, b) in par.iter().zip([1.0, 0.0, 0.0]) {
            assert!((a.abs() - b).abs() < 1e-15);
        }
        for (a, b) in perp.iter().zip([0.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn split_is_orthogonal_and_kills_features() {
        for (n, m) in [(7, 12), (12, 7), (9, 9)] {
            let mut rng = RngStream::new(n as u64 * 31 + m as u64, 1);
            let phi = Mat::from_vec(n, m, rng.gaussian_vec(n * m, 0.0, 1.0).unwrap()).unwrap();
            let theta = rng.gaussian_vec(m, 0.0, 1.0).unwrap();
            let rs = RowSpace::new(&phi, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(rs.rank(), n.min(m));
            let (par, perp) = rs.split(&theta);
            let t2 = norm_sq(&theta);
            assert!(dot(&par, &perp).abs() <= 1e-10 * t2);
            let killed = phi.matvec(&perp);
            assert!(killed.iter().all(|v| v.abs() <= 1e-10 * t2.sqrt() * 10.0));
            for (k, (a, b)) in par.iter().zip(&perp).enumerate() {
                assert!((a + b - theta[k]).abs() <= 1e-15 * (1.0 + theta[k].abs()));
            }
        }
    }

    #[test]
    fn row_space_matches_eigen_of_small_gram() {
        let mut rng = RngStream::new(5, 1);
        let phi = Mat::from_vec(4, 9, rng.gaussian_vec(36, 0.0, 1.0).unwrap()).unwrap();
        let rs = RowSpace::new(&phi, DEFAULT_RANK_TOL).unwrap();
        // Each v_i is a unit eigenvector of ΦᵀΦ/4 with eigenvalue μ_i.
        let a = phi.gram_cols().scale(0.25);
        for i in 0..rs.rank() {
            let v = rs.basis().row(i);
            assert!((norm_sq(v) - 1.0).abs() < 1e-12);
            let av = a.matvec(v);
            for (x, y) in av.iter().zip(v) {
                assert!((x - rs.eigenvalues()[i] * y).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn t_zero_matches_initial_point() {
        let mut rng = RngStream::new(8, 1);
        let teacher = Teacher::random_unit_linear(&mut RngStream::new(8, 4), 30).unwrap();
        let inst = make_gaussian_instance(&mut rng, 10, 30, teacher).unwrap();
        let theta0 = RngStream::new(8, 2).gaussian_vec(30, 0.0, 1.0).unwrap();
        let st = SpectralState::new(&inst, 1.0, 1e-2, &theta0).unwrap();
        let p = st.evaluate(0);
        let direct_train = inst.train_loss(&theta0);
        let direct_pop = inst.linear_population_loss(&theta0).unwrap();
        assert!((p.train_loss - direct_train).abs() <= 1e-12 * direct_train);
        assert!((p.pop_loss - direct_pop).abs() <= 1e-12 * direct_pop);
        assert!((p.param_norm - norm_sq(&theta0).sqrt()).abs() < 1e-12);
        let back = st.params_at(0);
        for (a, b) in back.iter().zip(&theta0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn null_space_frozen_without_decay() {
        let mut rng = RngStream::new(2, 1);
        let inst = make_gaussian_instance(&mut rng, 5, 20, Teacher::Zero).unwrap();
        let theta0 = RngStream::new(2, 2).gaussian_vec(20, 0.0, 1.0).unwrap();
        let st = SpectralState::new(&inst, 1.0, 0.0, &theta0).unwrap();
        let (_, perp0) = st.row_space().split(&theta0);
        let (_, perp_t) = st.row_space().split(&st.params_at(123_456));
        for (a, b) in perp0.iter().zip(&perp_t) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(st.evaluate(0).perp_norm, st.evaluate(10_000).perp_norm);
    }

    #[test]
    fn envelope_dominates_and_decreases() {
        let mut rng = RngStream::new(3, 1);
        let teacher = Teacher::random_unit_linear(&mut RngStream::new(3, 4), 40).unwrap();
        let inst = make_gaussian_instance(&mut rng, 15, 40, teacher).unwrap();
        let theta0 = RngStream::new(3, 2).gaussian_vec(40, 0.0, 1.0).unwrap();
        let st = SpectralState::new(&inst, 1.0, 1e-3, &theta0).unwrap();
        let mut prev = f64::INFINITY;
        for t in (0..5000).step_by(7) {
            let u = st.train_loss_envelope(t);
            assert!(u >= st.train_loss(t) * (1.0 - 1e-12));
            assert!(u <= prev);
            prev = u;
        }
        assert!(st.train_loss_limit() <= st.train_loss(5000) * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn dense_and_scaled_identity_agree() {
        let mut rng = RngStream::new(6, 1);
        let teacher = Teacher::random_unit_linear(&mut RngStream::new(6, 4), 25).unwrap();
        let inst = make_gaussian_instance(&mut rng, 8, 25, teacher).unwrap();
        let mut dense = inst.clone();
        dense.cov = PopulationCov::analytic(Covariance::Dense(Mat::identity(25).scale(1.0 / 25.0))).unwrap();
        let theta0 = RngStream::new(6, 2).gaussian_vec(25, 0.0, 1.0).unwrap();
        let a = SpectralState::new(&inst, 1.0, 1e-2, &theta0).unwrap();
        let b = SpectralState::new(&dense, 1.0, 1e-2, &theta0).unwrap();
        for t in [0, 1, 10, 100, 1000] {
            let (x, y) = (a.pop_loss(t), b.pop_loss(t));
            assert!((x - y).abs() <= 1e-12 * x.max(1e-300), "t={t}: {x} vs {y}");
        }
    }
}
