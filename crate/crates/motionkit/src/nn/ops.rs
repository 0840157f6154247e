//! Stateless layers: activations, dropout, adaptive pooling, and losses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    Tensor {
        dims: x.dims.clone(),
        data: x.data.iter().map(|&v| v.maxv(S::ZERO)).collect(),
    }
}

/// `dy * [y > 0]`; takes the forward *output*, which carries the same sign
/// pattern as the input.
pub fn relu_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    assert_eq!(y.dims, dy.dims);
    Tensor {
        dims: y.dims.clone(),
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&yv, &dv)| if yv > S::ZERO { dv } else { S::ZERO })
            .collect(),
    }
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    Tensor {
        dims: x.dims.clone(),
        data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
    }
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    S::ONE / (S::ONE + (-v).exp())
}

/// `dy * y * (1 - y)` from the forward output.
pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    assert_eq!(y.dims, dy.dims);
    Tensor {
        dims: y.dims.clone(),
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&yv, &dv)| dv * yv * (S::ONE - yv))
            .collect(),
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` so
/// evaluation is a plain identity. Returns the output and the per-element
/// scale mask used by the backward pass.
pub fn dropout<S: Scalar>(x: &Tensor<S>, p: f64, rng: &mut ChaCha8Rng) -> (Tensor<S>, Vec<S>) {
    assert!((0.0..1.0).contains(&p));
    let keep = S::from_f64(1.0 / (1.0 - p));
    let mask: Vec<S> = (0..x.numel())
        .map(|_| {
            if rng.gen_range(0.0..1.0) < p {
                S::ZERO
            } else {
                keep
            }
        })
        .collect();
    let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (
        Tensor {
            dims: x.dims.clone(),
            data,
        },
        mask,
    )
}

pub fn dropout_backward<S: Scalar>(dy: &Tensor<S>, mask: &[S]) -> Tensor<S> {
    assert_eq!(dy.numel(), mask.len());
    Tensor {
        dims: dy.dims.clone(),
        data: dy.data.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
    }
}

/// Bin boundaries of the adaptive pool: bin `i` of `bins` covers
/// `[floor(i * extent / bins), floor((i + 1) * extent / bins))`.
fn pool_bounds(extent: usize, bins: usize, i: usize) -> (usize, usize) {
    (i * extent / bins, (i + 1) * extent / bins)
}

/// Adaptive average pooling to a fixed (out_h, out_w) grid. Requires the
/// input to be at least as large as the output grid.
pub fn adaptive_avg_pool<S: Scalar>(x: &Tensor<S>, out_h: usize, out_w: usize) -> Tensor<S> {
    let [n, c, h, w] = x.nchw();
    assert!(h >= out_h && w >= out_w, "pool input {h}x{w} smaller than {out_h}x{out_w}");
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    for s in 0..n {
        for ch in 0..c {
            let plane = &x.data[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            let dst =
                &mut out.data[(s * c + ch) * out_h * out_w..(s * c + ch + 1) * out_h * out_w];
            for oy in 0..out_h {
                let (y0, y1) = pool_bounds(h, out_h, oy);
                for ox in 0..out_w {
                    let (x0, x1) = pool_bounds(w, out_w, ox);
                    let mut sum = S::ZERO;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += plane[y * w + x];
                        }
                    }
                    dst[oy * out_w + ox] = sum / S::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward<S: Scalar>(
    in_dims: &[usize],
    dy: &Tensor<S>,
) -> Tensor<S> {
    let [n, c, h, w] = [in_dims[0], in_dims[1], in_dims[2], in_dims[3]];
    let [dn, dc, oh, ow] = dy.nchw();
    assert_eq!((n, c), (dn, dc));
    let mut dx = Tensor::zeros(in_dims);
    for s in 0..n {
        for ch in 0..c {
            let src = &dy.data[(s * c + ch) * oh * ow..(s * c + ch + 1) * oh * ow];
            let plane = &mut dx.data[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1) = pool_bounds(h, oh, oy);
                for ox in 0..ow {
                    let (x0, x1) = pool_bounds(w, ow, ox);
                    let share = src[oy * ow + ox] / S::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            plane[y * w + x] += share;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean cross-entropy of row-wise softmax against integer labels, with its
/// gradient `(softmax - onehot) / batch`. Log-sum-exp stabilized.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> (S, Tensor<S>) {
    let [n, c] = logits.rows_cols();
    assert_eq!(labels.len(), n);
    let inv_n = S::ONE / S::from_f64(n as f64);
    let mut loss = S::ZERO;
    let mut grad = Tensor::zeros(&[n, c]);
    for i in 0..n {
        assert!(labels[i] < c, "label {} out of range {c}", labels[i]);
        let row = &logits.data[i * c..(i + 1) * c];
        let mut maxv = row[0];
        for &v in &row[1..] {
            maxv = maxv.maxv(v);
        }
        let mut denom = S::ZERO;
        for &v in row {
            denom += (v - maxv).exp();
        }
        let lse = maxv + denom.ln();
        loss += lse - row[labels[i]];
        let grow = &mut grad.data[i * c..(i + 1) * c];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grow[j] = (p - if j == labels[i] { S::ONE } else { S::ZERO }) * inv_n;
        }
    }
    (loss * inv_n, grad)
}

/// Row-wise softmax probabilities.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let [n, c] = logits.rows_cols();
    let mut out = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let row = &logits.data[i * c..(i + 1) * c];
        let mut maxv = row[0];
        for &v in &row[1..] {
            maxv = maxv.maxv(v);
        }
        let mut denom = S::ZERO;
        for &v in row {
            denom += (v - maxv).exp();
        }
        let orow = &mut out.data[i * c..(i + 1) * c];
        for j in 0..c {
            orow[j] = (row[j] - maxv).exp() / denom;
        }
    }
    out
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> (S, Tensor<S>) {
    assert_eq!(pred.dims, target.dims);
    let inv = S::ONE / S::from_f64(pred.numel() as f64);
    let mut loss = S::ZERO;
    let mut grad = Tensor::zeros(&pred.dims);
    for i in 0..pred.numel() {
        let d = pred.data[i] - target.data[i];
        loss += d * d;
        grad.data[i] = S::from_f64(2.0) * d * inv;
    }
    (loss * inv, grad)
}
