//! Reparameterizable convolution block.
//!
//! Training runs three parallel branches: 3x3 conv + batch norm, 1x1 conv +
//! batch norm, and (when shapes permit: equal channel counts at stride 1) a
//! batch-norm-only identity. Their sum passes through ReLU. For inference the
//! whole block folds into a single biased 3x3 convolution: each batch norm
//! collapses into the preceding convolution's weights, the 1x1 kernel embeds
//! at the center tap, and the identity becomes a Dirac kernel.

use rand_chacha::ChaCha8Rng;

use super::conv::Conv2d;
use super::norm::{BatchNorm2d, BnCtx, BN_EPS};
use super::ops::{relu, relu_backward};
use super::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct RepBlock<S> {
    pub conv3: Conv2d<S>,
    pub bn3: BatchNorm2d<S>,
    pub conv1: Conv2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub bn_id: Option<BatchNorm2d<S>>,
    pub stride: usize,
}

pub struct RepCtx<S> {
    x3: Tensor<S>,
    bn3: BnCtx<S>,
    x1: Tensor<S>,
    bn1: BnCtx<S>,
    id: Option<BnCtx<S>>,
    y: Tensor<S>,
}

impl<S: Scalar> RepBlock<S> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let bn_id = (in_ch == out_ch && stride == 1).then(|| BatchNorm2d::new(out_ch));
        RepBlock {
            conv3: Conv2d::new(in_ch, out_ch, 3, stride, 1, false, rng),
            bn3: BatchNorm2d::new(out_ch),
            conv1: Conv2d::new(in_ch, out_ch, 1, stride, 0, false, rng),
            bn1: BatchNorm2d::new(out_ch),
            bn_id,
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.conv3.out_hw(h, w)
    }

    pub fn forward_train(&mut self, x: &Tensor<S>) -> (Tensor<S>, RepCtx<S>) {
        let x3 = self.conv3.forward(x);
        let (b3, bn3ctx) = self.bn3.forward_train(&x3);
        let x1 = self.conv1.forward(x);
        let (b1, bn1ctx) = self.bn1.forward_train(&x1);
        let mut sum = b3;
        for (s, v) in sum.data.iter_mut().zip(&b1.data) {
            *s += *v;
        }
        let idctx = match &mut self.bn_id {
            Some(bn) => {
                let (bid, ctx) = bn.forward_train(x);
                for (s, v) in sum.data.iter_mut().zip(&bid.data) {
                    *s += *v;
                }
                Some(ctx)
            }
            None => None,
        };
        let y = relu(&sum);
        let ctx = RepCtx {
            x3,
            bn3: bn3ctx,
            x1,
            bn1: bn1ctx,
            id: idctx,
            y: y.clone(),
        };
        (y, ctx)
    }

    pub fn forward_eval(&self, x: &Tensor<S>) -> Tensor<S> {
        let mut sum = self.bn3.forward_eval(&self.conv3.forward(x));
        let b1 = self.bn1.forward_eval(&self.conv1.forward(x));
        for (s, v) in sum.data.iter_mut().zip(&b1.data) {
            *s += *v;
        }
        if let Some(bn) = &self.bn_id {
            let bid = bn.forward_eval(x);
            for (s, v) in sum.data.iter_mut().zip(&bid.data) {
                *s += *v;
            }
        }
        relu(&sum)
    }

    pub fn backward(&mut self, x: &Tensor<S>, ctx: &RepCtx<S>, dy: &Tensor<S>) -> Tensor<S> {
        let dsum = relu_backward(&ctx.y, dy);
        let d3 = self.bn3.backward(&ctx.x3, &ctx.bn3, &dsum);
        let mut dx = self.conv3.backward(x, &d3);
        let d1 = self.bn1.backward(&ctx.x1, &ctx.bn1, &dsum);
        let dx1 = self.conv1.backward(x, &d1);
        for (a, b) in dx.data.iter_mut().zip(&dx1.data) {
            *a += *b;
        }
        if let (Some(bn), Some(idctx)) = (&mut self.bn_id, &ctx.id) {
            let did = bn.backward(x, idctx, &dsum);
            for (a, b) in dx.data.iter_mut().zip(&did.data) {
                *a += *b;
            }
        }
        dx
    }

    /// Fold the branches into one biased 3x3 convolution equivalent to
    /// [`forward_eval`] up to floating-point rounding (ReLU excluded; apply
    /// it after the returned convolution).
    pub fn fuse(&self) -> Conv2d<S> {
        let (in_ch, out_ch) = (self.conv3.in_ch, self.conv3.out_ch);
        let mut fused = Conv2d {
            in_ch,
            out_ch,
            k: 3,
            stride: self.stride,
            pad: 1,
            w: vec![S::ZERO; out_ch * in_ch * 9],
            b: vec![S::ZERO; out_ch],
            gw: vec![S::ZERO; out_ch * in_ch * 9],
            gb: vec![S::ZERO; out_ch],
        };
        let eps = S::from_f64(BN_EPS);
        let fold = |bn: &BatchNorm2d<S>, oc: usize| {
            let scale = bn.gamma[oc] / (bn.running_var[oc] + eps).sqrt();
            let shift = bn.beta[oc] - bn.running_mean[oc] * scale;
            (scale, shift)
        };
        for oc in 0..out_ch {
            let (s3, t3) = fold(&self.bn3, oc);
            for q in 0..in_ch * 9 {
                fused.w[oc * in_ch * 9 + q] = self.conv3.w[oc * in_ch * 9 + q] * s3;
            }
            fused.b[oc] += t3;

            let (s1, t1) = fold(&self.bn1, oc);
            for ic in 0..in_ch {
                // center tap of the 3x3 grid
                fused.w[(oc * in_ch + ic) * 9 + 4] += self.conv1.w[oc * in_ch + ic] * s1;
            }
            fused.b[oc] += t1;

            if let Some(bn) = &self.bn_id {
                let (si, ti) = fold(bn, oc);
                fused.w[(oc * in_ch + oc) * 9 + 4] += si;
                fused.b[oc] += ti;
            }
        }
        fused
    }

    pub fn visit(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        self.conv3.visit(&format!("{prefix}.conv3"), f);
        self.bn3.visit(&format!("{prefix}.bn3"), f);
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        if let Some(bn) = &mut self.bn_id {
            bn.visit(&format!("{prefix}.bn_id"), f);
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.bn3.visit_buffers(&format!("{prefix}.bn3"), f);
        self.bn1.visit_buffers(&format!("{prefix}.bn1"), f);
        if let Some(bn) = &mut self.bn_id {
            bn.visit_buffers(&format!("{prefix}.bn_id"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::assert_matches_fd;
    use crate::nn::ops::relu;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(
            dims,
            (0..dims.iter().product())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn identity_branch_exists_only_at_matching_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        assert!(RepBlock::<f32>::new(8, 8, 1, &mut rng).bn_id.is_some());
        assert!(RepBlock::<f32>::new(8, 8, 2, &mut rng).bn_id.is_none());
        assert!(RepBlock::<f32>::new(8, 16, 1, &mut rng).bn_id.is_none());
    }

    #[test]
    fn stride_two_block_halves_even_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut b1 = RepBlock::<f32>::new(1, 32, 2, &mut rng);
        let mut b2 = RepBlock::<f32>::new(32, 64, 2, &mut rng);
        let x = Tensor::zeros(&[1, 1, 128, 128]);
        let (y1, _) = b1.forward_train(&x);
        assert_eq!(y1.dims, vec![1, 32, 64, 64]);
        let (y2, _) = b2.forward_train(&y1);
        assert_eq!(y2.dims, vec![1, 64, 32, 32]);
    }

    fn drift_stats(block: &mut RepBlock<f64>, rng: &mut ChaCha8Rng, dims: &[usize]) {
        for _ in 0..5 {
            let x = rand_tensor(dims, rng);
            block.forward_train(&x);
        }
    }

    #[test]
    fn fused_convolution_matches_eval_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        // identity-bearing block (stride 1) and plain block (stride 2)
        for (in_ch, out_ch, stride) in [(6, 6, 1), (4, 10, 2)] {
            let mut block = RepBlock::<f64>::new(in_ch, out_ch, stride, &mut rng);
            // make batch-norm state non-trivial before comparing
            block.bn3.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
            block.bn1.beta.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
            drift_stats(&mut block, &mut rng, &[3, in_ch, 9, 7]);

            let x = rand_tensor(&[2, in_ch, 9, 7], &mut rng);
            let want = block.forward_eval(&x);
            let got = relu(&block.fuse().forward(&x));
            assert_eq!(want.dims, got.dims);
            for (a, b) in want.data.iter().zip(&got.data) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_f32_stays_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut block = RepBlock::<f32>::new(3, 3, 1, &mut rng);
        for _ in 0..5 {
            let x = Tensor::from_vec(
                &[4, 3, 8, 8],
                (0..4 * 3 * 64).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            );
            block.forward_train(&x);
        }
        let x = Tensor::from_vec(
            &[2, 3, 8, 8],
            (0..2 * 3 * 64).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        );
        let want = block.forward_eval(&x);
        let got = relu(&block.fuse().forward(&x));
        for (a, b) in want.data.iter().zip(&got.data) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let mut block = RepBlock::<f64>::new(2, 2, 1, &mut rng);
        let x = rand_tensor(&[2, 2, 4, 4], &mut rng);
        let (y, ctx) = block.clone().forward_train(&x);
        let lw: Vec<f64> = (0..y.numel()).map(|i| ((i % 11) as f64 - 5.0) * 0.1).collect();
        let dy = Tensor::from_vec(&y.dims, lw.clone());
        let mut block_b = block.clone();
        let dx = block_b.backward(&x, &ctx, &dy);

        let loss = |b: &RepBlock<f64>, xin: &Tensor<f64>| -> f64 {
            let mut bb = b.clone();
            let (y, _) = bb.forward_train(xin);
            y.data.iter().zip(&lw).map(|(o, l)| o * l).sum()
        };

        // every parameter tensor in the block
        let mut names = Vec::new();
        block.clone().visit("blk", &mut |name, v, _| {
            names.push((name.to_string(), v.len()));
        });
        assert_eq!(names.len(), 8); // conv3.w conv1.w + 3 bn pairs
        for (name, _) in names {
            let mut value = Vec::new();
            block.clone().visit("blk", &mut |n, v, _| {
                if n == name {
                    value = v.clone();
                }
            });
            let mut grad = Vec::new();
            block_b.visit("blk", &mut |n, _, g| {
                if n == name {
                    grad = g.clone();
                }
            });
            let base = block.clone();
            assert_matches_fd(
                &mut value,
                &grad,
                |p| {
                    let mut probe = base.clone();
                    probe.visit("blk", &mut |n, v, _| {
                        if n == name {
                            v.copy_from_slice(p);
                        }
                    });
                    loss(&probe, &x)
                },
                1e-3,
            );
        }

        let mut xv = x.data.clone();
        let dims = x.dims.clone();
        assert_matches_fd(
            &mut xv,
            &dx.data,
            |p| loss(&block, &Tensor::from_vec(&dims, p.to_vec())),
            1e-3,
        );
    }
}
