//! Short-time Fourier magnitude spectrograms.
//!
//! Each frame is sliced into Hann-windowed segments (periodic window), zero-
//! padded to the configured FFT length, and transformed. The one-sided
//! magnitude keeps DC and drops the Nyquist bin, giving fft_len/2 frequency
//! bins; trailing time segments beyond the configured time bin count are
//! trimmed. Arithmetic is f64 throughout.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureError, SpectroConfig};

pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

pub struct Stft {
    cfg: SpectroConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl Stft {
    pub fn new(cfg: &SpectroConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len);
        let scratch_len = fft.get_inplace_scratch_len();
        Stft {
            cfg: cfg.clone(),
            window: hann_window(cfg.stft_win),
            fft,
            scratch_len,
        }
    }

    /// Raw magnitude spectrogram of one frame, time-major
    /// (`out[t * freq_bins + f]`).
    pub fn spectrogram(&self, frame: &[f32]) -> Result<Vec<f64>, FeatureError> {
        let cfg = &self.cfg;
        if frame.len() != cfg.frame_len {
            return Err(FeatureError::BadFrameLength {
                need: cfg.frame_len,
                got: frame.len(),
            });
        }
        let hop = cfg.stft_hop();
        let natural = (cfg.frame_len - cfg.stft_win) / hop + 1;
        let time_bins = cfg.out_shape.time_bins;
        let freq_bins = cfg.out_shape.freq_bins;
        debug_assert!(natural >= time_bins);
        let mut out = vec![0.0f64; time_bins * freq_bins];
        let mut buf = vec![Complex::new(0.0f64, 0.0); cfg.fft_len];
        let mut scratch = vec![Complex::new(0.0f64, 0.0); self.scratch_len];
        for t in 0..time_bins {
            let start = t * hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, &v) in frame[start..start + cfg.stft_win].iter().enumerate() {
                buf[i] = Complex::new(v as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let row = &mut out[t * freq_bins..(t + 1) * freq_bins];
            for (f, slot) in row.iter_mut().enumerate() {
                *slot = buf[f].norm();
            }
        }
        Ok(out)
    }
}

/// One-shot convenience over [`Stft`].
pub fn stft_spectrogram(frame: &[f32], cfg: &SpectroConfig) -> Result<Vec<f64>, FeatureError> {
    Stft::new(cfg).spectrogram(frame)
}
