//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::linalg::Mat;
use crate::error::{Error, Result, contract};

/// Relative asymmetry tolerated on input.
const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 80;

/// Eigenpairs of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: Mat,
}

impl SymEig {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Eigenvector `k` as an owned column.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for (j, lam) in self.values.iter().enumerate() {
                let v = scaled.get(i, j) * lam;
                scaled.set(i, j, v);
            }
        }
        scaled.matmul_nt(&self.vectors)
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Rotations are applied in a fixed row-by-row order, so the result is a
/// deterministic function of the input bits.
pub fn sym_eig(a: &Mat) -> Result<SymEig> {
    if !a.is_square() {
        return contract(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        ));
    }
    let n = a.rows();
    let scale = a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return contract(format!("sym_eig input is not symmetric at ({i}, {j})"));
            }
        }
    }
    if !a.all_finite() {
        return contract("sym_eig input has non-finite entries");
    }

    let mut w = a.as_slice().to_vec();
    let mut v = Mat::identity(n);
    let vs = v.as_mut_slice();
    let frob: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = (1e-14 * frob).powi(2);

    let mut converged = n <= 1 || frob == 0.0;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[p * n + q] * w[p * n + q];
            }
        }
        if 2.0 * off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                // Negligible against both diagonal entries: zero it without rotating.
                if apq.abs() < f64::EPSILON * 1e-3 * (app.abs().min(aqq.abs())) {
                    w[p * n + q] = 0.0;
                    w[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                w[p * n + p] = app - t * apq;
                w[q * n + q] = aqq + t * apq;
                w[p * n + q] = 0.0;
                w[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = w[k * n + p];
                    let akq = w[k * n + q];
                    let nkp = akp - s * (akq + tau * akp);
                    let nkq = akq + s * (akp - tau * akq);
                    w[k * n + p] = nkp;
                    w[p * n + k] = nkp;
                    w[k * n + q] = nkq;
                    w[q * n + k] = nkq;
                }
                for k in 0..n {
                    let vkp = vs[k * n + p];
                    let vkq = vs[k * n + q];
                    vs[k * n + p] = vkp - s * (vkq + tau * vkp);
                    vs[k * n + q] = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }
    if !converged {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[p * n + q] * w[p * n + q];
            }
        }
        if 2.0 * off > target * 1e6 {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge for a {n}x{n} matrix after {MAX_SWEEPS} sweeps"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[i * n + i].total_cmp(&w[j * n + j]));
    let values: Vec<f64> = order.iter().map(|&i| w[i * n + i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, new_j, v.get(k, old_j));
        }
    }
    Ok(SymEig { values, vectors })
}

/// Smallest eigenvalue strictly above `rank_tol · λ_max`.
///
/// Returns `Ok(None)` when no eigenvalue qualifies (the all-zero spectrum).
pub fn smallest_positive_eigenvalue(eig: &SymEig, rank_tol: f64) -> Result<Option<f64>> {
    smallest_positive(&eig.values, rank_tol)
}

fn smallest_positive(values: &[f64], rank_tol: f64) -> Result<Option<f64>> {
    if values.is_empty() {
        return contract("empty spectrum");
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return contract(format!("rank_tol must lie in (0, 1), got {rank_tol}"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(None);
    }
    let cut = rank_tol * max;
    Ok(values.iter().copied().filter(|&v| v > cut).min_by(f64::total_cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    fn orthonormality_error(q: &Mat) -> f64 {
        let g = q.matmul_tn(q);
        let mut e: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                e = e.max((g.get(i, j) - want).abs());
            }
        }
        e
    }

    fn reconstruction_error(a: &Mat, eig: &SymEig) -> f64 {
        let r = eig.reconstruct();
        a.as_slice()
            .iter()
            .zip(r.as_slice())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn random_symmetric(seed: u64, n: usize) -> Mat {
        let mut rng = RngStream::new(seed, 7);
        let g = rng.gaussian_vec(n * n, 0.0, 1.0).unwrap();
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, 0.5 * (g[i * n + j] + g[j * n + i]));
            }
        }
        a
    }

    /// Roots of the characteristic polynomial of a symmetric 2×2 matrix.
    fn eig2_oracle(a: f64, b: f64, d: f64) -> (f64, f64) {
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean - rad, mean + rad)
    }

    #[test]
    fn diagonal_matrix() {
        let eig = sym_eig(&Mat::diag(&[1.0, 4.0, 0.0]).unwrap()).unwrap();
        assert_eq!(eig.values, vec![0.0, 1.0, 4.0]);
    }

    #[test]
    fn identity_matrix() {
        let eig = sym_eig(&Mat::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
        assert!(orthonormality_error(&eig.vectors) <= 1e-10);
    }

    #[test]
    fn two_by_two_matches_characteristic_polynomial() {
        let (lo, hi) = eig2_oracle(2.0, 1.0, 2.0);
        assert_eq!((lo, hi), (1.0, 3.0));
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert!((eig.values[0] - lo).abs() < 1e-14);
        assert!((eig.values[1] - hi).abs() < 1e-14);
        for seed in 0..50 {
            let a = random_symmetric(seed, 2);
            let (lo, hi) = eig2_oracle(a.get(0, 0), a.get(0, 1), a.get(1, 1));
            let eig = sym_eig(&a).unwrap();
            assert!((eig.values[0] - lo).abs() < 1e-13, "seed {seed}");
            assert!((eig.values[1] - hi).abs() < 1e-13, "seed {seed}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let rect = Mat::zeros(2, 3);
        assert!(matches!(sym_eig(&rect), Err(Error::Contract(_))));
        let asym = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(Error::Contract(_))));
    }

    #[test]
    fn random_five_by_five_reconstruct() {
        for seed in 0..100 {
            let a = random_symmetric(seed, 5);
            let eig = sym_eig(&a).unwrap();
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            assert!(orthonormality_error(&eig.vectors) <= 1e-10, "seed {seed}");
            assert!(
                reconstruction_error(&a, &eig) <= 1e-8 * a.max_abs(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn larger_gram_matrix_is_accurate() {
        let mut rng = RngStream::new(3, 0);
        let x = Mat::from_vec(40, 60, rng.gaussian_vec(2400, 0.0, 1.0).unwrap()).unwrap();
        let g = x.gram_rows();
        let eig = sym_eig(&g).unwrap();
        assert!(orthonormality_error(&eig.vectors) <= 1e-10);
        assert!(reconstruction_error(&g, &eig) <= 1e-8 * g.max_abs());
    }

    #[test]
    fn deterministic() {
        let a = random_symmetric(11, 8);
        let e1 = sym_eig(&a).unwrap();
        let e2 = sym_eig(&a).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.vectors, e2.vectors);
    }

    #[test]
    fn smallest_positive_examples() {
        let eig = sym_eig(&Mat::diag(&[1.0, 4.0, 0.0]).unwrap()).unwrap();
        assert_eq!(smallest_positive_eigenvalue(&eig, 1e-10).unwrap(), Some(1.0));
        assert_eq!(smallest_positive(&[1e-14, 2.0], 1e-10).unwrap(), Some(2.0));
        assert_eq!(smallest_positive(&[0.0, 0.0], 1e-10).unwrap(), None);
        assert!(smallest_positive(&[], 1e-10).is_err());
        assert!(smallest_positive(&[1.0], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn smallest_positive_ignores_sub_threshold_noise(
            vals in proptest::collection::vec(0.1f64..10.0, 1..8),
            zeros in 0usize..5,
            noise in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let tol = 1e-10;
            let mut spectrum = vals.clone();
            spectrum.extend(std::iter::repeat_n(0.0, zeros));
            let base = smallest_positive(&spectrum, tol).unwrap();
            let lmax = spectrum.iter().cloned().fold(0.0, f64::max);
            let mag = tol * lmax / 10.0;
            let perturbed: Vec<f64> = spectrum
                .iter()
                .enumerate()
                .map(|(i, v)| if *v == 0.0 { noise[i % noise.len()].abs() * mag } else { *v })
                .collect();
            let got = smallest_positive(&perturbed, tol).unwrap();
            prop_assert_eq!(base, got);
        }
    }
}
