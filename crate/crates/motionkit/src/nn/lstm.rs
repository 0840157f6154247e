//! Single-layer LSTM with full backpropagation through time.
//!
//! Gate order inside the stacked weight matrices is [input, forget, cell,
//! output]. The forget-gate bias initializes to one, the usual guard against
//! vanishing memory early in training.

use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm_nn, gemm_nt, transpose};
use super::ops::sigmoid_scalar;
use super::{kaiming_std, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Lstm<S> {
    pub in_f: usize,
    pub hidden: usize,
    /// (4 * hidden, in_f)
    pub wx: Vec<S>,
    /// (4 * hidden, hidden)
    pub wh: Vec<S>,
    pub b: Vec<S>,
    pub gwx: Vec<S>,
    pub gwh: Vec<S>,
    pub gb: Vec<S>,
}

struct StepCtx<S> {
    /// Post-activation gates (N, 4H) in [i, f, g, o] blocks.
    gates: Vec<S>,
    c_prev: Vec<S>,
    h_prev: Vec<S>,
    tanh_c: Vec<S>,
}

pub struct LstmCtx<S> {
    steps: Vec<StepCtx<S>>,
    batch: usize,
}

impl<S: Scalar> Lstm<S> {
    pub fn new(in_f: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut wx = vec![S::ZERO; 4 * hidden * in_f];
        let mut wh = vec![S::ZERO; 4 * hidden * hidden];
        super::init_normal(&mut wx, kaiming_std(in_f), rng);
        super::init_normal(&mut wh, kaiming_std(hidden), rng);
        let mut b = vec![S::ZERO; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = S::ONE);
        Lstm {
            in_f,
            hidden,
            gwx: vec![S::ZERO; wx.len()],
            gwh: vec![S::ZERO; wh.len()],
            gb: vec![S::ZERO; b.len()],
            wx,
            wh,
            b,
        }
    }

    /// Run the full sequence. `xs` is (T, N, in_f); `h0`/`c0` are (N, hidden).
    /// Returns all hidden states (T, N, hidden) plus the backward context.
    pub fn forward(
        &self,
        xs: &Tensor<S>,
        h0: &Tensor<S>,
        c0: &Tensor<S>,
    ) -> (Tensor<S>, LstmCtx<S>) {
        let [t_len, n, in_f] = [xs.dims[0], xs.dims[1], xs.dims[2]];
        assert_eq!(in_f, self.in_f);
        let hid = self.hidden;
        assert_eq!(h0.dims, vec![n, hid]);
        assert_eq!(c0.dims, vec![n, hid]);
        let mut hs = Tensor::zeros(&[t_len, n, hid]);
        let mut steps = Vec::with_capacity(t_len);
        let mut h = h0.data.clone();
        let mut c = c0.data.clone();
        for t in 0..t_len {
            let xt = &xs.data[t * n * in_f..(t + 1) * n * in_f];
            let mut gates = vec![S::ZERO; n * 4 * hid];
            gemm_nt(xt, &self.wx, &mut gates, n, 4 * hid, in_f);
            gemm_nt(&h, &self.wh, &mut gates, n, 4 * hid, hid);
            for row in 0..n {
                let g = &mut gates[row * 4 * hid..(row + 1) * 4 * hid];
                for (gv, &bv) in g.iter_mut().zip(&self.b) {
                    *gv += bv;
                }
                for j in 0..hid {
                    g[j] = sigmoid_scalar(g[j]); // input
                    g[hid + j] = sigmoid_scalar(g[hid + j]); // forget
                    g[2 * hid + j] = g[2 * hid + j].tanh(); // cell candidate
                    g[3 * hid + j] = sigmoid_scalar(g[3 * hid + j]); // output
                }
            }
            let c_prev = c.clone();
            let h_prev = h.clone();
            let mut tanh_c = vec![S::ZERO; n * hid];
            for row in 0..n {
                let g = &gates[row * 4 * hid..(row + 1) * 4 * hid];
                for j in 0..hid {
                    let idx = row * hid + j;
                    c[idx] = g[hid + j] * c_prev[idx] + g[j] * g[2 * hid + j];
                    tanh_c[idx] = c[idx].tanh();
                    h[idx] = g[3 * hid + j] * tanh_c[idx];
                }
            }
            hs.data[t * n * hid..(t + 1) * n * hid].copy_from_slice(&h);
            steps.push(StepCtx {
                gates,
                c_prev,
                h_prev,
                tanh_c,
            });
        }
        (hs, LstmCtx { steps, batch: n })
    }

    /// Backpropagate `dhs` (gradient on every hidden state, (T, N, hidden)).
    /// Accumulates weight gradients; returns (dxs, dh0, dc0).
    pub fn backward(
        &mut self,
        xs: &Tensor<S>,
        ctx: &LstmCtx<S>,
        dhs: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let [t_len, n, in_f] = [xs.dims[0], xs.dims[1], xs.dims[2]];
        let hid = self.hidden;
        assert_eq!(dhs.dims, vec![t_len, n, hid]);
        assert_eq!(ctx.batch, n);
        let mut dxs = Tensor::zeros(&[t_len, n, in_f]);
        let mut dh = vec![S::ZERO; n * hid];
        let mut dc = vec![S::ZERO; n * hid];
        let mut da = vec![S::ZERO; n * 4 * hid];
        let mut da_t = vec![S::ZERO; n * 4 * hid];
        for t in (0..t_len).rev() {
            let step = &ctx.steps[t];
            for (d, &g) in dh.iter_mut().zip(&dhs.data[t * n * hid..(t + 1) * n * hid]) {
                *d += g;
            }
            for row in 0..n {
                let g = &step.gates[row * 4 * hid..(row + 1) * 4 * hid];
                let dar = &mut da[row * 4 * hid..(row + 1) * 4 * hid];
                for j in 0..hid {
                    let idx = row * hid + j;
                    let (i_g, f_g, g_g, o_g) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                    let tc = step.tanh_c[idx];
                    let do_post = dh[idx] * tc;
                    let dtc = dh[idx] * o_g * (S::ONE - tc * tc) + dc[idx];
                    let di_post = dtc * g_g;
                    let df_post = dtc * step.c_prev[idx];
                    let dg_post = dtc * i_g;
                    dc[idx] = dtc * f_g;
                    dar[j] = di_post * i_g * (S::ONE - i_g);
                    dar[hid + j] = df_post * f_g * (S::ONE - f_g);
                    dar[2 * hid + j] = dg_post * (S::ONE - g_g * g_g);
                    dar[3 * hid + j] = do_post * o_g * (S::ONE - o_g);
                }
            }
            let xt = &xs.data[t * n * in_f..(t + 1) * n * in_f];
            transpose(&da, n, 4 * hid, &mut da_t);
            gemm_nn(&da_t, xt, &mut self.gwx, 4 * hid, in_f, n);
            gemm_nn(&da_t, &step.h_prev, &mut self.gwh, 4 * hid, hid, n);
            for row in 0..n {
                for (gb, &d) in self
                    .gb
                    .iter_mut()
                    .zip(&da[row * 4 * hid..(row + 1) * 4 * hid])
                {
                    *gb += d;
                }
            }
            gemm_nn(
                &da,
                &self.wx,
                &mut dxs.data[t * n * in_f..(t + 1) * n * in_f],
                n,
                in_f,
                4 * hid,
            );
            dh.iter_mut().for_each(|v| *v = S::ZERO);
            gemm_nn(&da, &self.wh, &mut dh, n, hid, 4 * hid);
        }
        (
            dxs,
            Tensor::from_vec(&[n, hid], dh),
            Tensor::from_vec(&[n, hid], dc),
        )
    }

    pub fn visit(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        f(&format!("{prefix}.wx"), &mut self.wx, &mut self.gwx);
        f(&format!("{prefix}.wh"), &mut self.wh, &mut self.gwh);
        f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
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
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let l = Lstm::<f32>::new(3, 5, &mut rng);
        assert!(l.b[..5].iter().all(|&v| v == 0.0));
        assert!(l.b[5..10].iter().all(|&v| v == 1.0));
        assert!(l.b[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_hidden_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut l = Lstm::<f64>::new(3, 4, &mut rng);
        l.wx.iter_mut().for_each(|v| *v = 0.0);
        l.wh.iter_mut().for_each(|v| *v = 0.0);
        l.b.iter_mut().for_each(|v| *v = 0.0);
        let xs = rand_tensor(&[3, 2, 3], &mut rng);
        let (hs, _) = l.forward(&xs, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2, 4]));
        // candidate tanh(0) = 0 keeps the cell at zero regardless of gates
        assert!(hs.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_carries_information_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let l = Lstm::<f64>::new(2, 3, &mut rng);
        let mut xs = Tensor::zeros(&[4, 1, 2]);
        xs.data[0] = 1.0; // impulse only at t = 0
        let (hs, _) = l.forward(&xs, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3]));
        let late = &hs.data[3 * 3..];
        assert!(late.iter().any(|&v| v.abs() > 1e-6), "impulse forgotten");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let lstm = Lstm::<f64>::new(3, 4, &mut rng);
        let xs = rand_tensor(&[3, 2, 3], &mut rng);
        let h0 = rand_tensor(&[2, 4], &mut rng);
        let c0 = rand_tensor(&[2, 4], &mut rng);
        let (hs, ctx) = lstm.forward(&xs, &h0, &c0);
        let lw: Vec<f64> = (0..hs.numel()).map(|i| ((i % 13) as f64 - 6.0) * 0.1).collect();
        let dhs = Tensor::from_vec(&hs.dims, lw.clone());
        let mut trained = lstm.clone();
        let (dxs, dh0, dc0) = trained.backward(&xs, &ctx, &dhs);

        let loss = |l: &Lstm<f64>, xs: &Tensor<f64>, h0: &Tensor<f64>, c0: &Tensor<f64>| -> f64 {
            let (hs, _) = l.forward(xs, h0, c0);
            hs.data.iter().zip(&lw).map(|(o, w)| o * w).sum()
        };

        for (name, grad) in [
            ("wx", &trained.gwx),
            ("wh", &trained.gwh),
            ("b", &trained.gb),
        ] {
            let mut value = match name {
                "wx" => lstm.wx.clone(),
                "wh" => lstm.wh.clone(),
                _ => lstm.b.clone(),
            };
            let base = lstm.clone();
            assert_matches_fd(
                &mut value,
                grad,
                |p| {
                    let mut probe = base.clone();
                    match name {
                        "wx" => probe.wx.copy_from_slice(p),
                        "wh" => probe.wh.copy_from_slice(p),
                        _ => probe.b.copy_from_slice(p),
                    }
                    loss(&probe, &xs, &h0, &c0)
                },
                1e-3,
            );
        }
        let mut v = xs.data.clone();
        assert_matches_fd(
            &mut v,
            &dxs.data,
            |p| loss(&lstm, &Tensor::from_vec(&[3, 2, 3], p.to_vec()), &h0, &c0),
            1e-3,
        );
        let mut v = h0.data.clone();
        assert_matches_fd(
            &mut v,
            &dh0.data,
            |p| loss(&lstm, &xs, &Tensor::from_vec(&[2, 4], p.to_vec()), &c0),
            1e-3,
        );
        let mut v = c0.data.clone();
        assert_matches_fd(
            &mut v,
            &dc0.data,
            |p| loss(&lstm, &xs, &h0, &Tensor::from_vec(&[2, 4], p.to_vec())),
            1e-3,
        );
    }
}
