//! Differentiable optimal transport for training.
//!
//! The solver in [`super::sinkhorn`] iterates to a tolerance, which gives a
//! data-dependent iteration count — awkward to differentiate. Training instead
//! unrolls a fixed number of standard-domain scaling steps on the kernel
//! `K = exp(-(C - min C) / lambda)` (the min-shift rescales the kernel without
//! changing the resulting plan, so gradients through the shifted kernel equal
//! gradients through the raw one) and backpropagates through the exact
//! arithmetic of those steps. Divisions carry a tiny additive guard, so the
//! forward pass never produces non-finite values; a plan that is still badly
//! unbalanced after the unroll is reported through its marginal violation and
//! the caller can fall back to the log-domain solver for the value while
//! skipping that sample's cost gradient.

/// Additive guard inside each scaling division.
const DELTA: f64 = 1e-30;

/// Kernel of the shifted cost: `K_ij = exp(-(C_ij - min C) / lambda)`.
pub fn kernel_from_cost(cost: &[f64], lambda: f64) -> Vec<f64> {
    let m = cost.iter().cloned().fold(f64::INFINITY, f64::min);
    cost.iter().map(|&c| (-(c - m) / lambda).exp()).collect()
}

/// Gradient pullback from kernel to cost: `dC_ij = -K_ij dK_ij / lambda`.
pub fn accumulate_cost_grad(kernel: &[f64], dk: &[f64], lambda: f64, dc: &mut [f64]) {
    for ((d, &k), &g) in dc.iter_mut().zip(kernel).zip(dk) {
        *d += -k * g / lambda;
    }
}

pub struct OtTrace {
    /// u^0 .. u^L (L+1 vectors).
    us: Vec<Vec<f64>>,
    /// v^0 .. v^{L-1}.
    vs: Vec<Vec<f64>>,
    /// q^l = K^T u^l and r^l = K v^l, kept for the backward pass.
    qs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    n: usize,
    /// Largest column-marginal violation of the final plan against b.
    pub violation: f64,
}

/// Run `iters` scaling steps of `u = a/(K v), v = b/(K^T u)` from `u = 1/n`.
pub fn ot_forward(kernel: &[f64], n: usize, a: &[f64], b: &[f64], iters: usize) -> OtTrace {
    assert!(iters >= 1);
    assert_eq!(kernel.len(), n * n);
    let mut us = Vec::with_capacity(iters + 1);
    let mut vs = Vec::with_capacity(iters);
    let mut qs = Vec::with_capacity(iters);
    let mut rs = Vec::with_capacity(iters);
    let mut u = vec![1.0 / n as f64; n];
    us.push(u.clone());
    for _ in 0..iters {
        let mut q = vec![0.0f64; n];
        for i in 0..n {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for (qj, &kij) in q.iter_mut().zip(&kernel[i * n..(i + 1) * n]) {
                *qj += kij * ui;
            }
        }
        let v: Vec<f64> = b.iter().zip(&q).map(|(&bj, &qj)| bj / (qj + DELTA)).collect();
        let mut r = vec![0.0f64; n];
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&kij, &vj) in row.iter().zip(&v) {
                acc += kij * vj;
            }
            r[i] = acc;
        }
        u = a.iter().zip(&r).map(|(&ai, &ri)| ai / (ri + DELTA)).collect();
        qs.push(q);
        vs.push(v);
        rs.push(r);
        us.push(u.clone());
    }
    // column-marginal violation of P = diag(u^L) K diag(v^{L-1}) against b
    let ul = &us[iters];
    let vl = &vs[iters - 1];
    let mut violation = 0.0f64;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += ul[i] * kernel[i * n + j] * vl[j];
        }
        violation = violation.max((col - b[j]).abs());
    }
    OtTrace {
        us,
        vs,
        qs,
        rs,
        n,
        violation,
    }
}

/// The plan the trace represents: `P = diag(u^L) K diag(v^{L-1})`.
pub fn ot_plan(kernel: &[f64], trace: &OtTrace) -> Vec<f64> {
    let n = trace.n;
    let ul = trace.us.last().unwrap();
    let vl = trace.vs.last().unwrap();
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ul[i] * kernel[i * n + j] * vl[j];
        }
    }
    p
}

/// Backpropagate a plan gradient through the unrolled iterations, returning
/// the kernel gradient.
pub fn ot_backward(kernel: &[f64], trace: &OtTrace, dp: &[f64]) -> Vec<f64> {
    let n = trace.n;
    assert_eq!(dp.len(), n * n);
    let iters = trace.vs.len();
    let mut dk = vec![0.0f64; n * n];
    let mut du = vec![0.0f64; n];
    let mut dv = vec![0.0f64; n];
    // through P = diag(u^L) K diag(v^{L-1})
    {
        let ul = &trace.us[iters];
        let vl = &trace.vs[iters - 1];
        for i in 0..n {
            for j in 0..n {
                let g = dp[i * n + j];
                if g == 0.0 {
                    continue;
                }
                let k = kernel[i * n + j];
                du[i] += g * k * vl[j];
                dv[j] += g * k * ul[i];
                dk[i * n + j] += g * ul[i] * vl[j];
            }
        }
    }
    for l in (0..iters).rev() {
        // u^{l+1} = a / (r^l + delta)
        let unext = &trace.us[l + 1];
        let r = &trace.rs[l];
        let v = &trace.vs[l];
        let mut dr = vec![0.0f64; n];
        for i in 0..n {
            dr[i] = -unext[i] / (r[i] + DELTA) * du[i];
        }
        // r^l = K v^l
        for i in 0..n {
            let dri = dr[i];
            if dri != 0.0 {
                let row = &kernel[i * n..(i + 1) * n];
                let dkrow = &mut dk[i * n..(i + 1) * n];
                for j in 0..n {
                    dv[j] += row[j] * dri;
                    dkrow[j] += dri * v[j];
                }
            }
        }
        // v^l = b / (q^l + delta)
        let q = &trace.qs[l];
        let mut dq = vec![0.0f64; n];
        for j in 0..n {
            dq[j] = -v[j] / (q[j] + DELTA) * dv[j];
        }
        // q^l = K^T u^l
        let up = &trace.us[l];
        du.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            let dkrow = &mut dk[i * n..(i + 1) * n];
            let ui = up[i];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * dq[j];
                dkrow[j] += ui * dq[j];
            }
            du[i] = acc;
        }
        dv.iter_mut().for_each(|x| *x = 0.0);
    }
    dk
}
