//! Learnable transport cost between feature dimensions.
//!
//! Each of the `n` feature dimensions carries a low-rank embedding row; the
//! cost of moving mass between dimensions i and j is the squared Euclidean
//! distance between their rows. The matrix is symmetric with a zero diagonal,
//! and its gradient with respect to the rows is available for training.

use rand_chacha::ChaCha8Rng;

use crate::nn::Scalar;

/// Rank of the per-dimension embedding rows.
pub const COST_EMBED_DIM: usize = 16;

#[derive(Clone, Debug)]
pub struct CostGenerator<S> {
    pub n: usize,
    pub d: usize,
    /// (n, d) row-major embedding rows.
    pub e: Vec<S>,
    pub ge: Vec<S>,
}

impl<S: Scalar> CostGenerator<S> {
    pub fn new(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut e = vec![S::ZERO; n * d];
        crate::nn::init_normal(&mut e, 1.0 / (d as f64).sqrt(), rng);
        CostGenerator {
            n,
            d,
            ge: vec![S::ZERO; e.len()],
            e,
        }
    }

    /// Row-major n x n cost matrix C_ij = ||e_i - e_j||^2 in f64.
    pub fn build_cost(&self) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let rows: Vec<f64> = self.e.iter().map(|v| v.to_f64()).collect();
        let mut c = vec![0.0f64; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut dist = 0.0;
                for k in 0..d {
                    let diff = rows[i * d + k] - rows[j * d + k];
                    dist += diff * diff;
                }
                c[i * n + j] = dist;
                c[j * n + i] = dist;
            }
        }
        c
    }

    /// Accumulate embedding gradients from a cost-matrix gradient:
    /// dE_i += sum_j (dC_ij + dC_ji) * 2 (e_i - e_j).
    pub fn backward(&mut self, dc: &[f64]) {
        let (n, d) = (self.n, self.d);
        assert_eq!(dc.len(), n * n);
        let rows: Vec<f64> = self.e.iter().map(|v| v.to_f64()).collect();
        let mut grad = vec![0.0f64; n * d];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 2.0 * (dc[i * n + j] + dc[j * n + i]);
                if w == 0.0 {
                    continue;
                }
                for k in 0..d {
                    grad[i * d + k] += w * (rows[i * d + k] - rows[j * d + k]);
                }
            }
        }
        for (g, add) in self.ge.iter_mut().zip(&grad) {
            *g = *g + S::from_f64(*add);
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        f(&format!("{prefix}.e"), &mut self.e, &mut self.ge);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_rows_give_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut gen = CostGenerator::<f64>::new(5, 3, &mut rng);
        for i in 0..5 {
            for k in 0..3 {
                gen.e[i * 3 + k] = [0.3, -0.2, 0.9][k];
            }
        }
        assert!(gen.build_cost().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_rows_give_constant_two_off_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let mut gen = CostGenerator::<f64>::new(4, 4, &mut rng);
        gen.e.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..4 {
            gen.e[i * 4 + i] = 1.0;
        }
        let c = gen.build_cost();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 2.0 };
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn random_rows_match_pairwise_distance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let gen = CostGenerator::<f64>::new(7, 16, &mut rng);
        let c = gen.build_cost();
        for i in 0..7 {
            for j in 0..7 {
                let want: f64 = (0..16)
                    .map(|k| {
                        let d = gen.e[i * 16 + k] - gen.e[j * 16 + k];
                        d * d
                    })
                    .sum();
                assert!((c[i * 7 + j] - want).abs() < 1e-9);
                assert!((c[i * 7 + j] - c[j * 7 + i]).abs() < 1e-12, "symmetry");
            }
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let gen = CostGenerator::<f64>::new(4, 3, &mut rng);
        // loss = sum_ij W_ij C_ij with a fixed weight pattern
        let w: Vec<f64> = (0..16).map(|i| ((i % 5) as f64 - 2.0) * 0.3).collect();
        let loss = |g: &CostGenerator<f64>| -> f64 {
            g.build_cost().iter().zip(&w).map(|(c, wi)| c * wi).sum()
        };
        let mut trained = gen.clone();
        trained.backward(&w);
        let h = 1e-5;
        for idx in 0..gen.e.len() {
            let mut up = gen.clone();
            up.e[idx] += h;
            let mut down = gen.clone();
            down.e[idx] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!(
                (fd - trained.ge[idx]).abs() < 1e-6,
                "e[{idx}]: analytic {} vs fd {fd}",
                trained.ge[idx]
            );
        }
    }
}
