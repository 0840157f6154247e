//! Fully connected layer.

use super::gemm::{gemm_nn, gemm_nt, transpose};
use super::{kaiming_std, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Linear<S> {
    pub in_f: usize,
    pub out_f: usize,
    /// (out_f, in_f) row-major.
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = vec![S::ZERO; out_f * in_f];
        super::init_normal(&mut w, kaiming_std(in_f), rng);
        Linear {
            in_f,
            out_f,
            w,
            b: vec![S::ZERO; out_f],
            gw: vec![S::ZERO; out_f * in_f],
            gb: vec![S::ZERO; out_f],
        }
    }

    /// `x` is (batch, in_f); returns (batch, out_f).
    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, in_f] = x.rows_cols();
        assert_eq!(in_f, self.in_f);
        let mut out = Tensor::zeros(&[n, self.out_f]);
        gemm_nt(&x.data, &self.w, &mut out.data, n, self.out_f, self.in_f);
        for i in 0..n {
            let row = &mut out.data[i * self.out_f..(i + 1) * self.out_f];
            for (v, &b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, in_f] = x.rows_cols();
        assert_eq!(dy.rows_cols(), [n, self.out_f]);
        let mut dy_t = vec![S::ZERO; n * self.out_f];
        transpose(&dy.data, n, self.out_f, &mut dy_t);
        gemm_nn(&dy_t, &x.data, &mut self.gw, self.out_f, in_f, n);
        for i in 0..n {
            for j in 0..self.out_f {
                self.gb[j] += dy.data[i * self.out_f + j];
            }
        }
        let mut dx = Tensor::zeros(&[n, in_f]);
        gemm_nn(&dy.data, &self.w, &mut dx.data, n, in_f, self.out_f);
        dx
    }

    pub fn visit(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        f(&format!("{prefix}.w"), &mut self.w, &mut self.gw);
        f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::assert_matches_fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let lin = Linear::<f64>::new(3, 2, &mut rng);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -0.5, 2.0, 0.0, 1.5, -1.0]);
        let y = lin.forward(&x);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| x.data[i * 3 + k] * lin.w[j * 3 + k]).sum::<f64>()
                    + lin.b[j];
                assert!((y.data[i * 2 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        lin.b.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let x = Tensor::from_vec(
            &[2, 4],
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let y = lin.forward(&x);
        let lw: Vec<f64> = (0..y.numel()).map(|i| (i as f64 - 2.5) * 0.3).collect();
        let dy = Tensor::from_vec(&y.dims, lw.clone());
        let dx = lin.backward(&x, &dy);

        let loss = |l: &Linear<f64>, xin: &Tensor<f64>| -> f64 {
            l.forward(xin).data.iter().zip(&lw).map(|(o, w)| o * w).sum()
        };
        let mut w = lin.w.clone();
        assert_matches_fd(
            &mut w,
            &lin.gw,
            |p| {
                let mut probe = lin.clone();
                probe.w.copy_from_slice(p);
                loss(&probe, &x)
            },
            1e-3,
        );
        let mut b = lin.b.clone();
        assert_matches_fd(
            &mut b,
            &lin.gb,
            |p| {
                let mut probe = lin.clone();
                probe.b.copy_from_slice(p);
                loss(&probe, &x)
            },
            1e-3,
        );
        let mut xv = x.data.clone();
        assert_matches_fd(
            &mut xv,
            &dx.data,
            |p| loss(&lin, &Tensor::from_vec(&[2, 4], p.to_vec())),
            1e-3,
        );
    }
}
