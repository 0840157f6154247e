//! The spectrogram classifier: two reparameterizable blocks, adaptive
//! pooling to a fixed grid, and a three-layer fully connected head.
//!
//! Adaptive pooling makes one architecture serve every spectrogram shape the
//! feature extractor produces; the flattened feature width is always
//! 64 * 4 * 4 = 1024. Dropout sits between the second hidden layer and the
//! output projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::Conv2d;
use super::linear::Linear;
use super::ops::{
    adaptive_avg_pool, adaptive_avg_pool_backward, dropout, dropout_backward, relu,
    relu_backward,
};
use super::repblock::{RepBlock, RepCtx};
use super::{Params, Scalar, Tensor};

pub const POOL_GRID: usize = 4;
pub const FEATURE_DIM: usize = 64 * POOL_GRID * POOL_GRID;
pub const HIDDEN_DIM: usize = 512;
pub const DROPOUT_P: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct MotionModel<S> {
    pub rep1: RepBlock<S>,
    pub rep2: RepBlock<S>,
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
    pub fc3: Linear<S>,
    pub n_classes: usize,
    pub dropout_p: f64,
}

pub struct ClassifierCtx<S> {
    x: Tensor<S>,
    r1ctx: RepCtx<S>,
    r1out: Tensor<S>,
    r2ctx: RepCtx<S>,
    r2out: Tensor<S>,
    flat: Tensor<S>,
    h1: Tensor<S>,
    h2: Tensor<S>,
    mask: Vec<S>,
    h2d: Tensor<S>,
}

impl<S: Scalar> MotionModel<S> {
    pub fn new(n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MotionModel {
            rep1: RepBlock::new(1, 32, 2, &mut rng),
            rep2: RepBlock::new(32, 64, 2, &mut rng),
            fc1: Linear::new(FEATURE_DIM, HIDDEN_DIM, &mut rng),
            fc2: Linear::new(HIDDEN_DIM, HIDDEN_DIM, &mut rng),
            fc3: Linear::new(HIDDEN_DIM, n_classes, &mut rng),
            n_classes,
            dropout_p: DROPOUT_P,
        }
    }

    fn flatten_pooled(pooled: Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = pooled.nchw();
        Tensor::from_vec(&[n, c * h * w], pooled.data)
    }

    pub fn forward_train(
        &mut self,
        x: &Tensor<S>,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor<S>, ClassifierCtx<S>) {
        let (r1out, r1ctx) = self.rep1.forward_train(x);
        let (r2out, r2ctx) = self.rep2.forward_train(&r1out);
        let pooled = adaptive_avg_pool(&r2out, POOL_GRID, POOL_GRID);
        let flat = Self::flatten_pooled(pooled);
        let h1 = relu(&self.fc1.forward(&flat));
        let h2 = relu(&self.fc2.forward(&h1));
        let (h2d, mask) = dropout(&h2, self.dropout_p, rng);
        let logits = self.fc3.forward(&h2d);
        let ctx = ClassifierCtx {
            x: x.clone(),
            r1ctx,
            r1out,
            r2ctx,
            r2out,
            flat,
            h1,
            h2,
            mask,
            h2d,
        };
        (logits, ctx)
    }

    pub fn backward(&mut self, ctx: &ClassifierCtx<S>, dlogits: &Tensor<S>) {
        let dh2d = self.fc3.backward(&ctx.h2d, dlogits);
        let dh2 = dropout_backward(&dh2d, &ctx.mask);
        let dh2pre = relu_backward(&ctx.h2, &dh2);
        let dh1 = self.fc2.backward(&ctx.h1, &dh2pre);
        let dh1pre = relu_backward(&ctx.h1, &dh1);
        let dflat = self.fc1.backward(&ctx.flat, &dh1pre);
        let [n, _, _, _] = ctx.r2out.nchw();
        let dpooled = Tensor::from_vec(&[n, 64, POOL_GRID, POOL_GRID], dflat.data);
        let dr2out = adaptive_avg_pool_backward(&ctx.r2out.dims, &dpooled);
        let dr1out = self.rep2.backward(&ctx.r1out, &ctx.r2ctx, &dr2out);
        self.rep1.backward(&ctx.x, &ctx.r1ctx, &dr1out);
    }

    /// Inference with separate branches and running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor<S>) -> Tensor<S> {
        let r1 = self.rep1.forward_eval(x);
        let r2 = self.rep2.forward_eval(&r1);
        let flat = Self::flatten_pooled(adaptive_avg_pool(&r2, POOL_GRID, POOL_GRID));
        let h1 = relu(&self.fc1.forward(&flat));
        let h2 = relu(&self.fc2.forward(&h1));
        self.fc3.forward(&h2)
    }

    /// Fold both blocks into single convolutions for deployment.
    pub fn fuse(&self) -> FusedModel<S> {
        FusedModel {
            conv1: self.rep1.fuse(),
            conv2: self.rep2.fuse(),
            fc1: self.fc1.clone(),
            fc2: self.fc2.clone(),
            fc3: self.fc3.clone(),
            n_classes: self.n_classes,
        }
    }
}

impl<S: Scalar> Params<S> for MotionModel<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.rep1.visit(&p("rep1"), f);
        self.rep2.visit(&p("rep2"), f);
        self.fc1.visit(&p("fc1"), f);
        self.fc2.visit(&p("fc2"), f);
        self.fc3.visit(&p("fc3"), f);
    }
}

impl<S: Scalar> MotionModel<S> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.rep1.visit_buffers(&p("rep1"), f);
        self.rep2.visit_buffers(&p("rep2"), f);
    }
}

/// Single-branch deployment form of [`MotionModel`].
#[derive(Clone, Debug)]
pub struct FusedModel<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
    pub fc3: Linear<S>,
    pub n_classes: usize,
}

impl<S: Scalar> FusedModel<S> {
    /// Pooled and flattened convolutional features, (batch, 1024).
    pub fn features(&self, x: &Tensor<S>) -> Tensor<S> {
        let c1 = relu(&self.conv1.forward(x));
        let c2 = relu(&self.conv2.forward(&c1));
        let pooled = adaptive_avg_pool(&c2, POOL_GRID, POOL_GRID);
        let [n, c, h, w] = pooled.nchw();
        Tensor::from_vec(&[n, c * h * w], pooled.data)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let flat = self.features(x);
        let h1 = relu(&self.fc1.forward(&flat));
        let h2 = relu(&self.fc2.forward(&h1));
        self.fc3.forward(&h2)
    }

    /// Arg-max class index per sample.
    pub fn classify(&self, x: &Tensor<S>) -> Vec<usize> {
        argmax_rows(&self.forward(x))
    }
}

/// Row-wise arg-max, first index on ties.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let [n, c] = logits.rows_cols();
    (0..n)
        .map(|i| {
            let row = &logits.data[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
