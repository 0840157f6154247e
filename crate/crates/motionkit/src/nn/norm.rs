//! Batch normalization over NCHW feature maps.
//!
//! Training mode normalizes with the current batch's population statistics
//! and blends them into running estimates (`running = (1 - momentum) *
//! running + momentum * batch`); evaluation mode and branch fusion use the
//! running estimates. Variance is the population (biased) form in both
//! places.

use super::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d<S> {
    pub ch: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub ggamma: Vec<S>,
    pub gbeta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

/// Batch statistics captured by the training forward pass for backward.
pub struct BnCtx<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(ch: usize) -> Self {
        BatchNorm2d {
            ch,
            gamma: vec![S::ONE; ch],
            beta: vec![S::ZERO; ch],
            ggamma: vec![S::ZERO; ch],
            gbeta: vec![S::ZERO; ch],
            running_mean: vec![S::ZERO; ch],
            running_var: vec![S::ONE; ch],
        }
    }

    fn batch_stats(&self, x: &Tensor<S>) -> (Vec<S>, Vec<S>) {
        let [n, c, h, w] = x.nchw();
        assert_eq!(c, self.ch);
        let plane = h * w;
        let m = S::from_f64((n * plane) as f64);
        let mut mean = vec![S::ZERO; c];
        let mut var = vec![S::ZERO; c];
        for ch in 0..c {
            let mut sum = S::ZERO;
            for s in 0..n {
                for &v in &x.data[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                    sum += v;
                }
            }
            mean[ch] = sum / m;
        }
        for ch in 0..c {
            let mu = mean[ch];
            let mut sum = S::ZERO;
            for s in 0..n {
                for &v in &x.data[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                    let d = v - mu;
                    sum += d * d;
                }
            }
            var[ch] = sum / m;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<S>, mean: &[S], var: &[S]) -> Tensor<S> {
        let [n, c, _, _] = x.nchw();
        let plane = x.numel() / (n * c);
        let eps = S::from_f64(BN_EPS);
        let mut out = Tensor::zeros(&x.dims);
        for s in 0..n {
            for ch in 0..c {
                let scale = self.gamma[ch] / (var[ch] + eps).sqrt();
                let shift = self.beta[ch] - mean[ch] * scale;
                let src = &x.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                let dst = &mut out.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v * scale + shift;
                }
            }
        }
        out
    }

    pub fn forward_train(&mut self, x: &Tensor<S>) -> (Tensor<S>, BnCtx<S>) {
        let (mean, var) = self.batch_stats(x);
        let mom = S::from_f64(BN_MOMENTUM);
        let keep = S::ONE - mom;
        for ch in 0..self.ch {
            self.running_mean[ch] = keep * self.running_mean[ch] + mom * mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + mom * var[ch];
        }
        let out = self.normalize(x, &mean, &var);
        (out, BnCtx { mean, var })
    }

    pub fn forward_eval(&self, x: &Tensor<S>) -> Tensor<S> {
        self.normalize(x, &self.running_mean, &self.running_var)
    }

    pub fn backward(&mut self, x: &Tensor<S>, ctx: &BnCtx<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.nchw();
        let plane = h * w;
        let m = S::from_f64((n * plane) as f64);
        let eps = S::from_f64(BN_EPS);
        let mut dx = Tensor::zeros(&x.dims);
        for ch in 0..c {
            let mu = ctx.mean[ch];
            let inv_std = S::ONE / (ctx.var[ch] + eps).sqrt();
            let gamma = self.gamma[ch];
            // channel-wise reductions in one fixed-order pass
            let mut sum_dy = S::ZERO;
            let mut sum_dy_xhat = S::ZERO;
            for s in 0..n {
                let xs = &x.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                let dys = &dy.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for (&xv, &dyv) in xs.iter().zip(dys) {
                    sum_dy += dyv;
                    sum_dy_xhat += dyv * (xv - mu) * inv_std;
                }
            }
            self.gbeta[ch] += sum_dy;
            self.ggamma[ch] += sum_dy_xhat;
            // dx = (gamma * inv_std / m) * (m * dy - sum_dy - xhat * sum_dy_xhat)
            let k = gamma * inv_std / m;
            for s in 0..n {
                let xs = &x.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                let dys = &dy.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                let dxs = &mut dx.data[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for i in 0..plane {
                    let xhat = (xs[i] - mu) * inv_std;
                    dxs[i] = k * (m * dys[i] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn visit(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        f(&format!("{prefix}.gamma"), &mut self.gamma, &mut self.ggamma);
        f(&format!("{prefix}.beta"), &mut self.beta, &mut self.gbeta);
    }

    /// Non-trainable state that still belongs in checkpoints.
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::assert_matches_fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(
            dims,
            (0..dims.iter().product())
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
        )
    }

    #[test]
    fn training_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = rand_tensor(&[4, 3, 5, 5], &mut rng);
        let (y, _) = bn.forward_train(&x);
        let plane = 25;
        for ch in 0..3 {
            let mut vals = Vec::new();
            for s in 0..4 {
                vals.extend_from_slice(&y.data[(s * 3 + ch) * plane..(s * 3 + ch + 1) * plane]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-3); // off by var/(var+eps)
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 3.0, 5.0, 7.0]);
        // batch mean 4, biased variance 5
        bn.forward_train(&x);
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.5)).abs() < 1e-12);
        bn.forward_train(&x);
        assert!((bn.running_mean[0] - (0.9 * 0.4 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        bn.gamma[0] = 3.0;
        bn.beta[0] = -1.0;
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, 4.0]);
        let y = bn.forward_eval(&x);
        // (2-2)/2 * 3 - 1 = -1 ; (4-2)/2 * 3 - 1 = 2 (up to eps)
        assert!((y.data[0] + 1.0).abs() < 1e-5);
        assert!((y.data[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![0.2, -0.4];
        let x = rand_tensor(&[3, 2, 2, 4], &mut rng);
        let lw: Vec<f64> = (0..x.numel()).map(|i| ((i % 9) as f64 - 4.0) * 0.1).collect();

        let (y, ctx) = bn.clone().forward_train(&x);
        let dy = Tensor::from_vec(&y.dims, lw.clone());
        let mut bn_b = bn.clone();
        let dx = bn_b.backward(&x, &ctx, &dy);

        let loss = |b: &BatchNorm2d<f64>, xin: &Tensor<f64>| -> f64 {
            let mut bb = b.clone();
            let (y, _) = bb.forward_train(xin);
            y.data.iter().zip(&lw).map(|(o, l)| o * l).sum()
        };

        let mut g = bn.gamma.clone();
        assert_matches_fd(
            &mut g,
            &bn_b.ggamma,
            |p| {
                let mut probe = bn.clone();
                probe.gamma.copy_from_slice(p);
                loss(&probe, &x)
            },
            1e-3,
        );
        let mut be = bn.beta.clone();
        assert_matches_fd(
            &mut be,
            &bn_b.gbeta,
            |p| {
                let mut probe = bn.clone();
                probe.beta.copy_from_slice(p);
                loss(&probe, &x)
            },
            1e-3,
        );
        let mut xv = x.data.clone();
        let dims = x.dims.clone();
        assert_matches_fd(
            &mut xv,
            &dx.data,
            |p| loss(&bn, &Tensor::from_vec(&dims, p.to_vec())),
            1e-3,
        );
    }
}
