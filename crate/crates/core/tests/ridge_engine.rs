use proptest::prelude::*;
use ridgegrok_core::numkit::{Mat, RngStream, norm, streams};
use ridgegrok_core::problem::{ProblemInstance, Teacher, make_gaussian_instance};
use ridgegrok_core::ridge::{
    Engine, EvalSchedule, SpectralState, TrainConfig, closed_form_minimizer, decompose, gd_step, run_gd,
    train,
};

/// Dense solve by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn realizable(seed: u64, n: usize, m: usize) -> ProblemInstance {
    let teacher = Teacher::random_unit_linear(&mut RngStream::new(seed, streams::TEACHER), m).unwrap();
    make_gaussian_instance(&mut RngStream::new(seed, streams::DATA), n, m, teacher).unwrap()
}

fn zero_teacher(seed: u64, n: usize, m: usize) -> ProblemInstance {
    make_gaussian_instance(&mut RngStream::new(seed, streams::DATA), n, m, Teacher::Zero).unwrap()
}

#[test]
fn minimizer_matches_elimination_oracle() {
    for seed in 0..5 {
        let inst = realizable(seed, 5, 8);
        let lambda = 0.05;
        let (n, m) = (5usize, 8usize);
        let mut a = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..n {
            let row = inst.features.row(i);
            for j in 0..m {
                rhs[j] += row[j] * inst.labels[i] / n as f64;
                for k in 0..m {
                    a[j][k] += row[j] * row[k] / n as f64;
                }
            }
        }
        for (j, r) in a.iter_mut().enumerate() {
            r[j] += lambda;
        }
        let oracle = gauss_solve(a.clone(), rhs.clone());
        let theta = closed_form_minimizer(&inst, lambda).unwrap();
        for (x, y) in theta.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-10 * norm(&oracle));
        }
        let resid: Vec<f64> = (0..m)
            .map(|j| (0..m).map(|k| a[j][k] * theta[k]).sum::<f64>() - rhs[j])
            .collect();
        assert!(norm(&resid) <= 1e-10 * norm(&rhs));
    }
}

#[test]
fn minimizer_is_gd_fixed_point() {
    let inst = realizable(11, 3, 5);
    let cfg = TrainConfig::new(1.0, 0.1, 1.0, 1, 0).unwrap();
    let star = closed_form_minimizer(&inst, 0.1).unwrap();
    let next = gd_step(&star, &inst, &cfg).unwrap();
    for (a, b) in next.iter().zip(&star) {
        assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
    }
}

#[test]
fn shrinkage_is_monotone_in_decay() {
    let inst = realizable(12, 6, 10);
    let norms: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|l| norm(&closed_form_minimizer(&inst, *l).unwrap()))
        .collect();
    assert!(norms[0] > norms[1] && norms[1] > norms[2]);
}

#[test]
fn naive_and_spectral_agree() {
    for seed in 0..3 {
        let inst = realizable(seed, 50, 200);
        let cfg = TrainConfig::new(1.0, 1e-3, 1.0, 10_000, seed)
            .unwrap()
            .with_schedule(EvalSchedule::EveryStep)
            .unwrap();
        let a = train(&inst, &cfg, Engine::Naive).unwrap();
        let b = train(&inst, &cfg, Engine::Spectral).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.step, q.step);
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs());
            assert!(rel(p.train_loss, q.train_loss) <= 1e-6, "step {}", p.step);
            assert!(rel(p.pop_loss, q.pop_loss) <= 1e-6, "step {}", p.step);
            assert!(rel(p.param_norm, q.param_norm) <= 1e-6);
        }
    }
}

#[test]
fn perpendicular_part_decays_geometrically() {
    let inst = zero_teacher(3, 50, 500);
    let cfg = TrainConfig::new(1.0, 1e-4, 1.0, 10_000, 3).unwrap();
    let theta0 = cfg.init_params(500).unwrap();
    let theta = run_gd(&inst, &cfg, &theta0, 10_000).unwrap();
    let (_, perp0) = decompose(&theta0, &inst).unwrap();
    let (_, perp) = decompose(&theta, &inst).unwrap();
    let k = (1.0f64 - 1e-4).powi(10_000);
    let err: f64 = perp
        .iter()
        .zip(&perp0)
        .map(|(a, b)| (a - k * b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(err <= 1e-8 * norm(&perp0), "err {err}");
}

#[test]
fn gd_converges_to_minimizer() {
    let inst = realizable(21, 20, 50);
    let lambda: f64 = 1e-2;
    let steps = 10 * (1.0 / lambda).ceil() as u64;
    let star = closed_form_minimizer(&inst, lambda).unwrap();
    let dist = |theta: &[f64]| {
        let gap: Vec<f64> = theta.iter().zip(&star).map(|(a, b)| a - b).collect();
        norm(&gap)
    };

    // From zero the iterate stays in the row space, where every mode contracts faster than 1 − ηλ.
    let cold = TrainConfig::new(1.0, lambda, 0.0, 1, 21).unwrap();
    let theta = run_gd(&inst, &cold, &cold.init_params(50).unwrap(), steps).unwrap();
    assert!(dist(&theta) <= 1e-6 * norm(&star));

    // A random start keeps a perpendicular part that shrinks only by (1 − ηλ)^t.
    let warm = TrainConfig::new(1.0, lambda, 1.0, 1, 21).unwrap();
    let theta0 = warm.init_params(50).unwrap();
    let theta = run_gd(&inst, &warm, &theta0, steps).unwrap();
    let (_, perp0) = decompose(&theta0, &inst).unwrap();
    let predicted = (1.0 - lambda).powi(steps as i32) * norm(&perp0);
    assert!((dist(&theta) - predicted).abs() <= 1e-3 * predicted);
    let theta = run_gd(&inst, &warm, &theta0, 2 * steps).unwrap();
    assert!(dist(&theta) <= 1e-6 * norm(&star));
}

#[test]
fn spectral_fixed_point_is_ridge_minimizer() {
    let inst = realizable(22, 15, 40);
    let theta0 = RngStream::new(22, streams::INIT)
        .gaussian_vec(40, 0.0, 1.0)
        .unwrap();
    let st = SpectralState::new(&inst, 1.0, 0.02, &theta0).unwrap();
    let star = closed_form_minimizer(&inst, 0.02).unwrap();
    for (a, b) in st.fixed_point().iter().zip(&star) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn spectral_iterate_matches_naive_iterate() {
    let inst = realizable(23, 10, 25);
    let cfg = TrainConfig::new(1.0, 1e-3, 1.0, 1, 23).unwrap();
    let theta0 = cfg.init_params(25).unwrap();
    let st = SpectralState::new(&inst, 1.0, 1e-3, &theta0).unwrap();
    let naive = run_gd(&inst, &cfg, &theta0, 777).unwrap();
    for (a, b) in st.params_at(777).iter().zip(&naive) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn decompose_examples() {
    let cov = ridgegrok_core::problem::PopulationCov::analytic(ridgegrok_core::problem::Covariance::Dense(
        Mat::identity(3),
    ))
    .unwrap();
    let inst = ProblemInstance::from_features(
        Mat::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap(),
        Teacher::Zero,
        cov,
    )
    .unwrap();
    let (par, perp) = decompose(&[1.0, 2.0, 3.0], &inst).unwrap();
    assert!((par[0] - 1.0).abs() < 1e-15 && par[1].abs() < 1e-15 && par[2].abs() < 1e-15);
    assert_eq!(perp[1..], [2.0, 3.0]);
    let (par, perp) = decompose(&[4.0, 0.0, 0.0], &inst).unwrap();
    assert!(perp.iter().all(|v| v.abs() < 1e-15));
    assert!((par[0] - 4.0).abs() < 1e-15);
}

#[test]
fn zero_teacher_bounds_hold_along_trajectory() {
    // Norm contraction and the training-loss envelope are deterministic inequalities.
    for seed in 0..5 {
        let inst = zero_teacher(seed, 40, 400);
        let (eta, lambda) = (1.0, 1e-3);
        let cfg = TrainConfig::new(eta, lambda, 1.0, 20_000, seed).unwrap();
        let theta0 = cfg.init_params(400).unwrap();
        let st = SpectralState::new(&inst, eta, lambda, &theta0).unwrap();
        let mu_min = st.row_space().eigenvalues()[0];
        let n0 = norm(&theta0);
        for t in cfg.schedule.steps(cfg.max_steps) {
            let p = st.evaluate(t);
            let k = (1.0 - eta * lambda).powi(t as i32);
            assert!(p.param_norm <= k * n0 * (1.0 + 1e-9));
            let r = (1.0 - eta * mu_min - eta * lambda).powi(2 * t as i32);
            let bound = inst.feature_norm / 2.0 * r * n0 * n0;
            assert!(p.train_loss <= bound * (1.0 + 1e-9) + 1e-300, "seed {seed} t {t}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_is_orthogonal(seed in 0u64..10_000, n in 1usize..12, m in 1usize..16) {
        let inst = zero_teacher(seed, n, m);
        let theta = RngStream::new(seed, 99).gaussian_vec(m, 0.0, 1.0).unwrap();
        let (par, perp) = decompose(&theta, &inst).unwrap();
        let t2: f64 = theta.iter().map(|v| v * v).sum();
        let ip: f64 = par.iter().zip(&perp).map(|(a, b)| a * b).sum();
        prop_assert!(ip.abs() <= 1e-10 * t2.max(1e-300));
        let killed = inst.features.matvec(&perp);
        prop_assert!(norm(&killed) <= 1e-10 * t2.sqrt().max(1e-300));
    }

    #[test]
    fn spectral_train_loss_never_negative(seed in 0u64..10_000, t in 0u64..1_000_000) {
        let inst = realizable(seed, 6, 9);
        let theta0 = RngStream::new(seed, streams::INIT).gaussian_vec(9, 0.0, 1.0).unwrap();
        let st = SpectralState::new(&inst, 1.0, 1e-3, &theta0).unwrap();
        let p = st.evaluate(t);
        prop_assert!(p.train_loss >= 0.0 && p.pop_loss >= 0.0);
        prop_assert!(p.perp_norm.unwrap() <= p.param_norm * (1.0 + 1e-12));
    }
}
