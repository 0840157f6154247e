//! Convolutional-recurrent autoencoder over spectrogram images.
//!
//! The encoder runs three stride-2 conv stages (8, 16, 32 channels, each with
//! batch norm and ReLU), treats the downsampled time axis as a sequence whose
//! per-step feature is every channel at every remaining frequency bin, runs an
//! LSTM over it, and projects the final hidden state to a 512-dim embedding.
//! The decoder mirrors it: two linears seed the LSTM initial state and a
//! constant per-step input from the embedding, per-step linears emit feature
//! maps, and three stride-2 transposed convs upsample back to image size with
//! a final sigmoid. Odd input extents round up through the transposed convs,
//! so the decoder output is cropped (bottom/right) to the requested shape.

use rand_chacha::ChaCha8Rng;

use super::conv::{conv_out, Conv2d, ConvTranspose2d};
use super::lstm::{Lstm, LstmCtx};
use super::norm::BatchNorm2d;
use super::ops::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::{Linear, Params, Scalar, Tensor};

/// Embedding width produced by the encoder.
pub const EMBED_DIM: usize = 512;
/// Default LSTM hidden width.
pub const AE_LSTM_WIDTH: usize = 256;
/// Width of the constant per-step decoder input derived from the embedding.
pub const DEC_STEP_IN: usize = 64;

const ENC_CH: [usize; 3] = [8, 16, 32];

/// Time/frequency extents after each stride-2 stage, plus sequence layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentDims {
    pub seq_len: usize,
    pub freq: usize,
}

impl LatentDims {
    pub fn for_input(in_h: usize, in_w: usize) -> Self {
        let mut h = in_h;
        let mut w = in_w;
        for _ in 0..3 {
            h = conv_out(h, 3, 2, 1);
            w = conv_out(w, 3, 2, 1);
        }
        assert!(h >= 1 && w >= 1, "input too small for three stride-2 stages");
        LatentDims { seq_len: h, freq: w }
    }

    pub fn feat(&self) -> usize {
        ENC_CH[2] * self.freq
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<S> {
    pub conv1: Conv2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub conv2: Conv2d<S>,
    pub bn2: BatchNorm2d<S>,
    pub conv3: Conv2d<S>,
    pub bn3: BatchNorm2d<S>,
    pub lstm: Lstm<S>,
    pub proj: Linear<S>,
    pub in_h: usize,
    pub in_w: usize,
    pub latent: LatentDims,
}

pub struct EncoderCtx<S> {
    u1: Tensor<S>,
    bn1: super::norm::BnCtx<S>,
    r1: Tensor<S>,
    u2: Tensor<S>,
    bn2: super::norm::BnCtx<S>,
    r2: Tensor<S>,
    u3: Tensor<S>,
    bn3: super::norm::BnCtx<S>,
    r3: Tensor<S>,
    xs: Tensor<S>,
    lstm: LstmCtx<S>,
    h_last: Tensor<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(in_h: usize, in_w: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let latent = LatentDims::for_input(in_h, in_w);
        Encoder {
            conv1: Conv2d::new(1, ENC_CH[0], 3, 2, 1, false, rng),
            bn1: BatchNorm2d::new(ENC_CH[0]),
            conv2: Conv2d::new(ENC_CH[0], ENC_CH[1], 3, 2, 1, false, rng),
            bn2: BatchNorm2d::new(ENC_CH[1]),
            conv3: Conv2d::new(ENC_CH[1], ENC_CH[2], 3, 2, 1, false, rng),
            bn3: BatchNorm2d::new(ENC_CH[2]),
            lstm: Lstm::new(latent.feat(), width, rng),
            proj: Linear::new(width, EMBED_DIM, rng),
            in_h,
            in_w,
            latent,
        }
    }

    fn check_input(&self, x: &Tensor<S>) {
        let [_, c, h, w] = x.nchw();
        assert_eq!(
            (c, h, w),
            (1, self.in_h, self.in_w),
            "encoder built for 1x{}x{}",
            self.in_h,
            self.in_w
        );
    }

    /// Rearrange (N, C, T, F) feature maps into a (T, N, C*F) sequence.
    fn to_sequence(&self, maps: &Tensor<S>) -> Tensor<S> {
        let [n, c, t, f] = maps.nchw();
        let mut xs = Tensor::zeros(&[t, n, c * f]);
        for s in 0..n {
            for ch in 0..c {
                for ti in 0..t {
                    let src = ((s * c + ch) * t + ti) * f;
                    let dst = (ti * n + s) * (c * f) + ch * f;
                    xs.data[dst..dst + f].copy_from_slice(&maps.data[src..src + f]);
                }
            }
        }
        xs
    }

    fn from_sequence_grad(&self, dxs: &Tensor<S>, n: usize) -> Tensor<S> {
        let (t, f) = (self.latent.seq_len, self.latent.freq);
        let c = ENC_CH[2];
        let mut dmaps = Tensor::zeros(&[n, c, t, f]);
        for s in 0..n {
            for ch in 0..c {
                for ti in 0..t {
                    let dst = ((s * c + ch) * t + ti) * f;
                    let src = (ti * n + s) * (c * f) + ch * f;
                    dmaps.data[dst..dst + f].copy_from_slice(&dxs.data[src..src + f]);
                }
            }
        }
        dmaps
    }

    pub fn forward_train(&mut self, x: &Tensor<S>) -> (Tensor<S>, EncoderCtx<S>) {
        self.check_input(x);
        let n = x.dims[0];
        let width = self.lstm.hidden;
        let u1 = self.conv1.forward(x);
        let (v1, bn1) = self.bn1.forward_train(&u1);
        let r1 = relu(&v1);
        let u2 = self.conv2.forward(&r1);
        let (v2, bn2) = self.bn2.forward_train(&u2);
        let r2 = relu(&v2);
        let u3 = self.conv3.forward(&r2);
        let (v3, bn3) = self.bn3.forward_train(&u3);
        let r3 = relu(&v3);
        let xs = self.to_sequence(&r3);
        let (hs, lstm) = self.lstm.forward(
            &xs,
            &Tensor::zeros(&[n, width]),
            &Tensor::zeros(&[n, width]),
        );
        let t = self.latent.seq_len;
        let h_last = Tensor::from_vec(
            &[n, width],
            hs.data[(t - 1) * n * width..].to_vec(),
        );
        let z = self.proj.forward(&h_last);
        (
            z,
            EncoderCtx {
                u1,
                bn1,
                r1,
                u2,
                bn2,
                r2,
                u3,
                bn3,
                r3,
                xs,
                lstm,
                h_last,
            },
        )
    }

    pub fn embed(&self, x: &Tensor<S>) -> Tensor<S> {
        self.check_input(x);
        let n = x.dims[0];
        let width = self.lstm.hidden;
        let r1 = relu(&self.bn1.forward_eval(&self.conv1.forward(x)));
        let r2 = relu(&self.bn2.forward_eval(&self.conv2.forward(&r1)));
        let r3 = relu(&self.bn3.forward_eval(&self.conv3.forward(&r2)));
        let xs = self.to_sequence(&r3);
        let (hs, _) = self.lstm.forward(
            &xs,
            &Tensor::zeros(&[n, width]),
            &Tensor::zeros(&[n, width]),
        );
        let t = self.latent.seq_len;
        let h_last = Tensor::from_vec(
            &[n, width],
            hs.data[(t - 1) * n * width..].to_vec(),
        );
        self.proj.forward(&h_last)
    }

    pub fn backward(&mut self, x: &Tensor<S>, ctx: &EncoderCtx<S>, dz: &Tensor<S>) -> Tensor<S> {
        let n = x.dims[0];
        let width = self.lstm.hidden;
        let t = self.latent.seq_len;
        let dh_last = self.proj.backward(&ctx.h_last, dz);
        let mut dhs = Tensor::zeros(&[t, n, width]);
        dhs.data[(t - 1) * n * width..].copy_from_slice(&dh_last.data);
        let (dxs, _, _) = self.lstm.backward(&ctx.xs, &ctx.lstm, &dhs);
        let dr3 = self.from_sequence_grad(&dxs, n);
        let dv3 = relu_backward(&ctx.r3, &dr3);
        let du3 = self.bn3.backward(&ctx.u3, &ctx.bn3, &dv3);
        let dr2 = self.conv3.backward(&ctx.r2, &du3);
        let dv2 = relu_backward(&ctx.r2, &dr2);
        let du2 = self.bn2.backward(&ctx.u2, &ctx.bn2, &dv2);
        let dr1 = self.conv2.backward(&ctx.r1, &du2);
        let dv1 = relu_backward(&ctx.r1, &dr1);
        let du1 = self.bn1.backward(&ctx.u1, &ctx.bn1, &dv1);
        self.conv1.backward(x, &du1)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        self.conv3.visit(&format!("{prefix}.conv3"), f);
        self.bn3.visit(&format!("{prefix}.bn3"), f);
        self.lstm.visit(&format!("{prefix}.lstm"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.bn1.visit_buffers(&format!("{prefix}.bn1"), f);
        self.bn2.visit_buffers(&format!("{prefix}.bn2"), f);
        self.bn3.visit_buffers(&format!("{prefix}.bn3"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<S> {
    pub h0_proj: Linear<S>,
    pub step_in: Linear<S>,
    pub lstm: Lstm<S>,
    pub step_out: Linear<S>,
    pub tconv1: ConvTranspose2d<S>,
    pub bn1: BatchNorm2d<S>,
    pub tconv2: ConvTranspose2d<S>,
    pub bn2: BatchNorm2d<S>,
    pub tconv3: ConvTranspose2d<S>,
    pub out_h: usize,
    pub out_w: usize,
    pub latent: LatentDims,
}

pub struct DecoderCtx<S> {
    xs: Tensor<S>,
    lstm: LstmCtx<S>,
    hs_flat: Tensor<S>,
    gen: Tensor<S>,
    u1: Tensor<S>,
    bn1: super::norm::BnCtx<S>,
    r1: Tensor<S>,
    u2: Tensor<S>,
    bn2: super::norm::BnCtx<S>,
    r2: Tensor<S>,
    sig: Tensor<S>,
}

impl<S: Scalar> Decoder<S> {
    pub fn new(out_h: usize, out_w: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let latent = LatentDims::for_input(out_h, out_w);
        Decoder {
            h0_proj: Linear::new(EMBED_DIM, width, rng),
            step_in: Linear::new(EMBED_DIM, DEC_STEP_IN, rng),
            lstm: Lstm::new(DEC_STEP_IN, width, rng),
            step_out: Linear::new(width, latent.feat(), rng),
            tconv1: ConvTranspose2d::new(ENC_CH[2], ENC_CH[1], 3, 2, 1, 1, false, rng),
            bn1: BatchNorm2d::new(ENC_CH[1]),
            tconv2: ConvTranspose2d::new(ENC_CH[1], ENC_CH[0], 3, 2, 1, 1, false, rng),
            bn2: BatchNorm2d::new(ENC_CH[0]),
            tconv3: ConvTranspose2d::new(ENC_CH[0], 1, 3, 2, 1, 1, true, rng),
            out_h,
            out_w,
            latent,
        }
    }

    /// Upsampled extent before cropping: three doublings of the latent grid.
    fn full_hw(&self) -> (usize, usize) {
        (self.latent.seq_len * 8, self.latent.freq * 8)
    }

    fn crop(&self, full: &Tensor<S>) -> Tensor<S> {
        let [n, _, fh, fw] = full.nchw();
        let mut out = Tensor::zeros(&[n, 1, self.out_h, self.out_w]);
        for s in 0..n {
            for row in 0..self.out_h {
                let src = (s * fh + row) * fw;
                let dst = (s * self.out_h + row) * self.out_w;
                out.data[dst..dst + self.out_w]
                    .copy_from_slice(&full.data[src..src + self.out_w]);
            }
        }
        out
    }

    fn uncrop_grad(&self, dout: &Tensor<S>) -> Tensor<S> {
        let n = dout.dims[0];
        let (fh, fw) = self.full_hw();
        let mut dfull = Tensor::zeros(&[n, 1, fh, fw]);
        for s in 0..n {
            for row in 0..self.out_h {
                let dst = (s * fh + row) * fw;
                let src = (s * self.out_h + row) * self.out_w;
                dfull.data[dst..dst + self.out_w]
                    .copy_from_slice(&dout.data[src..src + self.out_w]);
            }
        }
        dfull
    }

    fn run_lstm(&self, z: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>, LstmCtx<S>) {
        let n = z.dims[0];
        let width = self.lstm.hidden;
        let t = self.latent.seq_len;
        let h0 = self.h0_proj.forward(z);
        let xin = self.step_in.forward(z);
        let mut xs = Tensor::zeros(&[t, n, DEC_STEP_IN]);
        for ti in 0..t {
            xs.data[ti * n * DEC_STEP_IN..(ti + 1) * n * DEC_STEP_IN]
                .copy_from_slice(&xin.data);
        }
        let (hs, ctx) = self.lstm.forward(&xs, &h0, &Tensor::zeros(&[n, width]));
        (xin, xs, hs, ctx)
    }

    fn maps_from_steps(&self, so: &Tensor<S>, n: usize) -> Tensor<S> {
        let (t, f) = (self.latent.seq_len, self.latent.freq);
        let c = ENC_CH[2];
        let mut gen = Tensor::zeros(&[n, c, t, f]);
        for ti in 0..t {
            for s in 0..n {
                for ch in 0..c {
                    let src = (ti * n + s) * (c * f) + ch * f;
                    let dst = ((s * c + ch) * t + ti) * f;
                    gen.data[dst..dst + f].copy_from_slice(&so.data[src..src + f]);
                }
            }
        }
        gen
    }

    pub fn forward_train(&mut self, z: &Tensor<S>) -> (Tensor<S>, DecoderCtx<S>) {
        let n = z.dims[0];
        let width = self.lstm.hidden;
        let t = self.latent.seq_len;
        let (_, xs, hs, lstm) = self.run_lstm(z);
        let hs_flat = Tensor::from_vec(&[t * n, width], hs.data);
        let so = self.step_out.forward(&hs_flat);
        let gen = self.maps_from_steps(&so, n);
        let u1 = self.tconv1.forward(&gen);
        let (v1, bn1) = self.bn1.forward_train(&u1);
        let r1 = relu(&v1);
        let u2 = self.tconv2.forward(&r1);
        let (v2, bn2) = self.bn2.forward_train(&u2);
        let r2 = relu(&v2);
        let u3 = self.tconv3.forward(&r2);
        let sig = sigmoid(&u3);
        let out = self.crop(&sig);
        (
            out,
            DecoderCtx {
                xs,
                lstm,
                hs_flat,
                gen,
                u1,
                bn1,
                r1,
                u2,
                bn2,
                r2,
                sig,
            },
        )
    }

    pub fn decode(&self, z: &Tensor<S>) -> Tensor<S> {
        let n = z.dims[0];
        let width = self.lstm.hidden;
        let t = self.latent.seq_len;
        let (_, _, hs, _) = self.run_lstm(z);
        let hs_flat = Tensor::from_vec(&[t * n, width], hs.data);
        let so = self.step_out.forward(&hs_flat);
        let gen = self.maps_from_steps(&so, n);
        let r1 = relu(&self.bn1.forward_eval(&self.tconv1.forward(&gen)));
        let r2 = relu(&self.bn2.forward_eval(&self.tconv2.forward(&r1)));
        let sig = sigmoid(&self.tconv3.forward(&r2));
        self.crop(&sig)
    }

    pub fn backward(&mut self, z: &Tensor<S>, ctx: &DecoderCtx<S>, dout: &Tensor<S>) -> Tensor<S> {
        let n = z.dims[0];
        let width = self.lstm.hidden;
        let t = self.latent.seq_len;
        let dfull = self.uncrop_grad(dout);
        let du3 = sigmoid_backward(&ctx.sig, &dfull);
        let dr2 = self.tconv3.backward(&ctx.r2, &du3);
        let dv2 = relu_backward(&ctx.r2, &dr2);
        let du2 = self.bn2.backward(&ctx.u2, &ctx.bn2, &dv2);
        let dr1 = self.tconv2.backward(&ctx.r1, &du2);
        let dv1 = relu_backward(&ctx.r1, &dr1);
        let du1 = self.bn1.backward(&ctx.u1, &ctx.bn1, &dv1);
        let dgen = self.tconv1.backward(&ctx.gen, &du1);
        // reverse the step/channel reshuffle back onto the per-step outputs
        let (lt, lf) = (self.latent.seq_len, self.latent.freq);
        let c = ENC_CH[2];
        let mut dso = Tensor::zeros(&[lt * n, c * lf]);
        for ti in 0..lt {
            for s in 0..n {
                for ch in 0..c {
                    let dst = (ti * n + s) * (c * lf) + ch * lf;
                    let src = ((s * c + ch) * lt + ti) * lf;
                    dso.data[dst..dst + lf].copy_from_slice(&dgen.data[src..src + lf]);
                }
            }
        }
        let dhs_flat = self.step_out.backward(&ctx.hs_flat, &dso);
        let dhs = Tensor::from_vec(&[t, n, width], dhs_flat.data);
        let (dxs, dh0, _) = self.lstm.backward(&ctx.xs, &ctx.lstm, &dhs);
        let mut dxin = Tensor::zeros(&[n, DEC_STEP_IN]);
        for ti in 0..t {
            for (acc, &d) in dxin
                .data
                .iter_mut()
                .zip(&dxs.data[ti * n * DEC_STEP_IN..(ti + 1) * n * DEC_STEP_IN])
            {
                *acc += d;
            }
        }
        let mut dz = self.h0_proj.backward(z, &dh0);
        let dz2 = self.step_in.backward(z, &dxin);
        for (a, b) in dz.data.iter_mut().zip(&dz2.data) {
            *a += *b;
        }
        dz
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        self.h0_proj.visit(&format!("{prefix}.h0_proj"), f);
        self.step_in.visit(&format!("{prefix}.step_in"), f);
        self.lstm.visit(&format!("{prefix}.lstm"), f);
        self.step_out.visit(&format!("{prefix}.step_out"), f);
        self.tconv1.visit(&format!("{prefix}.tconv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.tconv2.visit(&format!("{prefix}.tconv2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        self.tconv3.visit(&format!("{prefix}.tconv3"), f);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.bn1.visit_buffers(&format!("{prefix}.bn1"), f);
        self.bn2.visit_buffers(&format!("{prefix}.bn2"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Autoencoder<S> {
    pub encoder: Encoder<S>,
    pub decoder: Decoder<S>,
}

pub struct AeCtx<S> {
    pub enc: EncoderCtx<S>,
    pub z: Tensor<S>,
    pub dec: DecoderCtx<S>,
}

impl<S: Scalar> Autoencoder<S> {
    pub fn new(in_h: usize, in_w: usize, width: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Autoencoder {
            encoder: Encoder::new(in_h, in_w, width, &mut rng),
            decoder: Decoder::new(in_h, in_w, width, &mut rng),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<S>) -> (Tensor<S>, AeCtx<S>) {
        let (z, enc) = self.encoder.forward_train(x);
        let (recon, dec) = self.decoder.forward_train(&z);
        (recon, AeCtx { enc, z, dec })
    }

    /// Backpropagate a reconstruction gradient plus an optional direct
    /// gradient on the embedding.
    pub fn backward(
        &mut self,
        x: &Tensor<S>,
        ctx: &AeCtx<S>,
        drecon: &Tensor<S>,
        dz_extra: Option<&Tensor<S>>,
    ) {
        let mut dz = self.decoder.backward(&ctx.z, &ctx.dec, drecon);
        if let Some(extra) = dz_extra {
            for (a, b) in dz.data.iter_mut().zip(&extra.data) {
                *a += *b;
            }
        }
        self.encoder.backward(x, &ctx.enc, &dz);
    }

    pub fn reconstruct(&self, x: &Tensor<S>) -> Tensor<S> {
        self.decoder.decode(&self.encoder.embed(x))
    }
}

impl<S: Scalar> Params<S> for Autoencoder<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
    ) {
        let p = |suffix: &str| {
            if prefix.is_empty() {
                suffix.to_string()
            } else {
                format!("{prefix}.{suffix}")
            }
        };
        self.encoder.visit(&p("enc"), f);
        self.decoder.visit(&p("dec"), f);
    }
}

impl<S: Scalar> Autoencoder<S> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        let p = |suffix: &str| {
            if prefix.is_empty() {
                suffix.to_string()
            } else {
                format!("{prefix}.{suffix}")
            }
        };
        self.encoder.visit_buffers(&p("enc"), f);
        self.decoder.visit_buffers(&p("dec"), f);
    }
}
