//! Neural-network building blocks: tensors, kernels, layers, and the Adam
//! optimizer, written for single-machine CPU training.
//!
//! Everything numeric is generic over [`Scalar`] and instantiated at `f32`
//! (training, checkpoints) and `f64` (finite-difference gradient checks, which
//! need more headroom than single precision gives at usable step sizes). All
//! reductions run in a fixed order, so repeated runs on one machine produce
//! bit-identical results.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod classifier;
pub mod conv;
pub mod gemm;
pub mod linear;
pub mod lstm;
pub mod norm;
pub mod ops;
pub mod repblock;
pub mod tensor;

pub use adam::Adam;
pub use autoencoder::Autoencoder;
pub use classifier::{FusedModel, MotionModel};
pub use linear::Linear;
pub use repblock::RepBlock;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{ctx}: expected shape {want:?}, got {got:?}")]
    ShapeMismatch {
        ctx: &'static str,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint {path}: {msg}")]
    BadCheckpoint {
        path: std::path::PathBuf,
        msg: String,
    },
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

/// Floating-point element type for tensors and kernels.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Default
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maxv(self, other: Self) -> Self;
    /// Fused multiply-add: `self * a + b` with a single rounding.
    fn mul_add(self, a: Self, b: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn maxv(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Parameter traversal in a fixed order, used by the optimizer and checkpoint
/// code. Implementations call `f(name, value, grad)` once per parameter
/// tensor; names are stable across runs and releases.
pub trait Params<S: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, _, g| g.iter_mut().for_each(|v| *v = S::ZERO));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, v, _| n += v.len());
        n
    }
}

/// One standard-normal draw via Box-Muller. Always samples `f64` internally,
/// so `f32` and `f64` instantiations of a model initialize identically up to
/// rounding.
pub fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..=1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Fill with N(0, std^2) draws.
pub fn init_normal<S: Scalar>(out: &mut [S], std: f64, rng: &mut ChaCha8Rng) {
    for v in out {
        *v = S::from_f64(sample_normal(rng) * std);
    }
}

/// Kaiming-style standard deviation for layers followed by ReLU.
pub fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
