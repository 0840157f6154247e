//! 2-D convolution layers via im2col and the GEMM kernels.
//!
//! Forward lowers each sample to a patch matrix (one row per output pixel)
//! and multiplies against the weight matrix; backward recomputes the patch
//! matrix instead of caching it, trading a little compute for a flat memory
//! profile. Transposed convolution is expressed as zero-stuffing plus a
//! stride-1 convolution, so its backward pass reuses the same machinery.

use super::gemm::{gemm_nn, gemm_nt, transpose};
use super::{kaiming_std, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

/// Output extent of a convolution along one axis.
pub fn conv_out(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

/// Patch matrix for one sample: row per output pixel, columns ordered
/// (channel, ky, kx). Out-of-bounds taps read as zero.
fn im2col<S: Scalar>(
    x: &[S],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [S],
) {
    let (oh, ow) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
    let ck2 = c * k * k;
    assert_eq!(cols.len(), oh * ow * ck2);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * ck2..(oy * ow + ox + 1) * ck2];
            let mut q = 0;
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        row[q..q + k].iter_mut().for_each(|v| *v = S::ZERO);
                        q += k;
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[q] = if ix < 0 || ix >= w as isize {
                            S::ZERO
                        } else {
                            line[ix as usize]
                        };
                        q += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch-matrix gradients back onto the
/// input gradient plane.
fn col2im<S: Scalar>(
    cols: &[S],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [S],
) {
    let (oh, ow) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
    let ck2 = c * k * k;
    assert_eq!(cols.len(), oh * ow * ck2);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * ck2..(oy * ow + ox + 1) * ck2];
            let mut q = 0;
            for ch in 0..c {
                let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        q += k;
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += row[q];
                        }
                        q += 1;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// (out_ch, in_ch * k * k) row-major.
    pub w: Vec<S>,
    /// Empty when the layer has no bias (the usual case before batch norm).
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let mut w = vec![S::ZERO; out_ch * fan_in];
        super::init_normal(&mut w, kaiming_std(fan_in), rng);
        let b = if bias { vec![S::ZERO; out_ch] } else { Vec::new() };
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            gw: vec![S::ZERO; w.len()],
            gb: vec![S::ZERO; b.len()],
            w,
            b,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.k, self.stride, self.pad),
            conv_out(w, self.k, self.stride, self.pad),
        )
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.nchw();
        assert_eq!(c, self.in_ch, "input channels");
        let (oh, ow) = self.out_hw(h, w);
        let (npix, ck2) = (oh * ow, self.in_ch * self.k * self.k);
        let mut out = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        let mut cols = vec![S::ZERO; npix * ck2];
        for s in 0..n {
            let xs = &x.data[s * c * h * w..(s + 1) * c * h * w];
            im2col(xs, (c, h, w), self.k, self.stride, self.pad, &mut cols);
            let os = &mut out.data[s * self.out_ch * npix..(s + 1) * self.out_ch * npix];
            gemm_nt(&self.w, &cols, os, self.out_ch, npix, ck2);
            if !self.b.is_empty() {
                for oc in 0..self.out_ch {
                    let bias = self.b[oc];
                    os[oc * npix..(oc + 1) * npix]
                        .iter_mut()
                        .for_each(|v| *v += bias);
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.nchw();
        let (oh, ow) = self.out_hw(h, w);
        let (npix, ck2) = (oh * ow, self.in_ch * self.k * self.k);
        assert_eq!(dy.nchw(), [n, self.out_ch, oh, ow], "output gradient shape");
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut cols = vec![S::ZERO; npix * ck2];
        let mut dcols = vec![S::ZERO; npix * ck2];
        let mut dy_t = vec![S::ZERO; self.out_ch * npix];
        for s in 0..n {
            let xs = &x.data[s * c * h * w..(s + 1) * c * h * w];
            let dys = &dy.data[s * self.out_ch * npix..(s + 1) * self.out_ch * npix];
            im2col(xs, (c, h, w), self.k, self.stride, self.pad, &mut cols);
            // dW[oc, q] += sum_pix dy[oc, pix] * cols[pix, q]
            gemm_nn(dys, &cols, &mut self.gw, self.out_ch, ck2, npix);
            if !self.b.is_empty() {
                for oc in 0..self.out_ch {
                    let mut sum = S::ZERO;
                    for &v in &dys[oc * npix..(oc + 1) * npix] {
                        sum += v;
                    }
                    self.gb[oc] += sum;
                }
            }
            // dcols[pix, q] = sum_oc dy[oc, pix] * w[oc, q]
            transpose(dys, self.out_ch, npix, &mut dy_t);
            dcols.iter_mut().for_each(|v| *v = S::ZERO);
            gemm_nn(&dy_t, &self.w, &mut dcols, npix, ck2, self.out_ch);
            col2im(
                &dcols,
                (c, h, w),
                self.k,
                self.stride,
                self.pad,
                &mut dx.data[s * c * h * w..(s + 1) * c * h * w],
            );
        }
        dx
    }

    pub fn visit(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        f(&format!("{prefix}.w"), &mut self.w, &mut self.gw);
        if !self.b.is_empty() {
            f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
        }
    }
}

/// Transposed convolution: zero-stuff by the stride, pad by `k - 1 - pad`
/// (plus `out_pad` on the bottom/right), then convolve at stride 1. The
/// weight is stored directly in that equivalent stride-1 orientation.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<S> {
    pub conv: Conv2d<S>,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl<S: Scalar> ConvTranspose2d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(out_pad < stride);
        ConvTranspose2d {
            conv: Conv2d::new(in_ch, out_ch, k, 1, 0, bias, rng),
            stride,
            pad,
            out_pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.conv.k;
        (
            (h - 1) * self.stride + k + self.out_pad - 2 * self.pad,
            (w - 1) * self.stride + k + self.out_pad - 2 * self.pad,
        )
    }

    fn stuffed_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let lead = self.conv.k - 1 - self.pad;
        (
            (h - 1) * self.stride + 1 + 2 * lead + self.out_pad,
            (w - 1) * self.stride + 1 + 2 * lead + self.out_pad,
        )
    }

    fn stuff(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.nchw();
        let lead = self.conv.k - 1 - self.pad;
        let (sh, sw) = self.stuffed_hw(h, w);
        let mut out = Tensor::zeros(&[n, c, sh, sw]);
        for s in 0..n {
            for ch in 0..c {
                let src = &x.data[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                let dst = &mut out.data[(s * c + ch) * sh * sw..(s * c + ch + 1) * sh * sw];
                for y in 0..h {
                    let dy = lead + y * self.stride;
                    for xx in 0..w {
                        dst[dy * sw + lead + xx * self.stride] = src[y * w + xx];
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        self.conv.forward(&self.stuff(x))
    }

    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.nchw();
        let stuffed = self.stuff(x);
        let dstuffed = self.conv.backward(&stuffed, dy);
        let lead = self.conv.k - 1 - self.pad;
        let [_, _, sh, sw] = stuffed.nchw();
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for s in 0..n {
            for ch in 0..c {
                let src = &dstuffed.data[(s * c + ch) * sh * sw..(s * c + ch + 1) * sh * sw];
                let dst = &mut dx.data[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                for y in 0..h {
                    let sy = lead + y * self.stride;
                    for xx in 0..w {
                        dst[y * w + xx] = src[sy * sw + lead + xx * self.stride];
                    }
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
        self.conv.visit(prefix, f);
    }
}
