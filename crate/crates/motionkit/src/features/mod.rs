//! Spectrogram-image feature extraction.
//!
//! A recording becomes images in four steps: per-axis z-score normalization
//! (population statistics, so sensor orientation and gain wash out), collapse
//! to the acceleration magnitude, 5.12 s frames every 0.64 s, then a
//! Hann-windowed STFT per frame. Each image is scaled by its own 99th
//! percentile and clipped to [0, 1], which makes images comparable across
//! devices without any global statistics.
//!
//! All rate-dependent STFT parameters derive from the 100 Hz reference
//! configuration (window 128, overlap 125, FFT 256) by the rate ratio; FFT
//! length and output shape per rate are fixed by [`rate_config`].

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ingest::{align_labels, Activity, IngestError, LabelSegment, Location, Recording};

pub mod dataset;
pub mod spectransform;
pub mod stft;

pub use dataset::{DatasetWriter, IndexEntry, SpecDataset};
pub use spectransform::spectransform;
pub use stft::Stft;

/// Seconds of signal per spectrogram image.
pub const FRAME_S: f64 = 5.12;
/// Hop between successive images.
pub const HOP_S: f64 = 0.64;
/// Per-image contrast percentile.
pub const SCALE_PERCENTILE: f64 = 0.99;

pub const SUPPORTED_RATES: [u32; 5] = [10, 25, 50, 75, 100];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("unsupported rate {rate_hz} Hz (supported: 10, 25, 50, 75, 100)")]
    UnsupportedRate { rate_hz: f64 },
    #[error("frame length {got} does not match configuration ({need})")]
    BadFrameLength { need: usize, got: usize },
    #[error("recording rate {rec} Hz does not match configuration rate {cfg} Hz")]
    RateMismatch { cfg: f64, rec: f64 },
    #[error("signal of {got} samples is shorter than one frame ({need})")]
    TooShort { need: usize, got: usize },
    #[error("rate conditioning only lowers the rate: {from} Hz -> {to} Hz")]
    BadDirection { from: f64, to: f64 },
    #[error("image shape {got:?} does not match expected {want:?}")]
    ShapeMismatch {
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error("dataset index {path}: row {row}: {msg}")]
    MalformedIndex {
        path: PathBuf,
        row: usize,
        msg: String,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectroShape {
    pub time_bins: usize,
    pub freq_bins: usize,
}

impl SpectroShape {
    pub fn len(&self) -> usize {
        self.time_bins * self.freq_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectroConfig {
    pub rate_hz: f64,
    /// Samples per image frame: floor(5.12 * rate).
    pub frame_len: usize,
    /// Samples between image frames: floor(0.64 * rate).
    pub hop_len: usize,
    pub stft_win: usize,
    pub stft_overlap: usize,
    pub fft_len: usize,
    pub out_shape: SpectroShape,
}

impl SpectroConfig {
    pub fn stft_hop(&self) -> usize {
        self.stft_win - self.stft_overlap
    }
}

/// STFT configuration for one of the supported rates.
///
/// Window and overlap scale from the 100 Hz reference (128 and 125) by the
/// rate ratio, rounded half-to-even; half-away rounding would give a zero
/// STFT hop at 10 Hz. FFT lengths and output shapes are fixed per rate.
pub fn rate_config(rate_hz: f64) -> Result<SpectroConfig, FeatureError> {
    let err = || FeatureError::UnsupportedRate { rate_hz };
    if !(rate_hz.is_finite() && rate_hz > 0.0 && rate_hz.fract() == 0.0) {
        return Err(err());
    }
    let (fft_len, time_bins, freq_bins) = match rate_hz as u32 {
        10 => (26, 38, 13),
        25 => (64, 96, 32),
        50 => (128, 96, 64),
        75 => (192, 96, 96),
        100 => (256, 128, 128),
        _ => return Err(err()),
    };
    let ratio = rate_hz / 100.0;
    let cfg = SpectroConfig {
        rate_hz,
        frame_len: (FRAME_S * rate_hz).floor() as usize,
        hop_len: (HOP_S * rate_hz).floor() as usize,
        stft_win: (128.0 * ratio).round_ties_even() as usize,
        stft_overlap: (125.0 * ratio).round_ties_even() as usize,
        fft_len,
        out_shape: SpectroShape {
            time_bins,
            freq_bins,
        },
    };
    debug_assert!(cfg.stft_overlap < cfg.stft_win);
    debug_assert!(cfg.stft_win <= cfg.fft_len);
    debug_assert_eq!(cfg.out_shape.freq_bins, cfg.fft_len / 2);
    Ok(cfg)
}

/// Per-axis z-score normalization with population statistics. An axis with no
/// variance comes back as all zeros and is flagged.
pub fn normalize_channels(rec: &Recording) -> (Recording, [bool; 3]) {
    let mut out = rec.clone();
    let mut zero_variance = [false; 3];
    for (idx, axis) in [&mut out.x_g, &mut out.y_g, &mut out.z_g].into_iter().enumerate() {
        let n = axis.len() as f64;
        let mean = axis.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = axis
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std <= 1e-9 * (1.0 + mean.abs()) {
            zero_variance[idx] = true;
            axis.iter_mut().for_each(|v| *v = 0.0);
        } else {
            axis.iter_mut()
                .for_each(|v| *v = ((*v as f64 - mean) / std) as f32);
        }
    }
    (out, zero_variance)
}

/// Euclidean magnitude across the three (already normalized) axes.
pub fn magnitude(rec: &Recording) -> Vec<f32> {
    (0..rec.len())
        .map(|i| {
            let (x, y, z) = (rec.x_g[i] as f64, rec.y_g[i] as f64, rec.z_g[i] as f64);
            (x * x + y * y + z * z).sqrt() as f32
        })
        .collect()
}

/// Start offsets of complete frames in a signal of `len` samples.
pub fn frame_starts(len: usize, frame_len: usize, hop_len: usize) -> Vec<usize> {
    if len < frame_len {
        return Vec::new();
    }
    (0..=(len - frame_len) / hop_len)
        .map(|i| i * hop_len)
        .collect()
}

/// Linear-interpolated order statistic, the same convention as numpy's
/// default percentile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecMeta {
    pub user_id: String,
    pub location: Location,
    pub activity: Activity,
    pub rate_hz: f64,
    pub frame_start_unix_s: f64,
}

/// One spectrogram image, time-major: `data[t * freq_bins + f]`, values in
/// [0, 1]. `degenerate` marks images whose scale percentile was zero (for
/// example a constant input signal); their pixels are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramImage {
    pub shape: SpectroShape,
    pub data: Vec<f32>,
    pub meta: SpecMeta,
    pub degenerate: bool,
}

/// Scale a raw magnitude spectrogram by its 99th percentile and clip to
/// [0, 1]. Returns the clipped image and whether it was degenerate.
pub fn percentile_scale(raw: &[f64]) -> (Vec<f32>, bool) {
    let p = percentile(raw, SCALE_PERCENTILE);
    if p <= 0.0 {
        return (vec![0.0; raw.len()], true);
    }
    let img = raw
        .iter()
        .map(|&v| (v / p).clamp(0.0, 1.0) as f32)
        .collect();
    (img, false)
}

/// Extract all spectrogram images from one labeled recording.
///
/// Labeled ranges shorter than one frame produce no images; frames never
/// cross label boundaries.
pub fn extract_recording(
    rec: &Recording,
    segments: &[LabelSegment],
    user_id: &str,
    cfg: &SpectroConfig,
) -> Result<Vec<SpectrogramImage>, FeatureError> {
    if rec.rate_hz != cfg.rate_hz {
        return Err(FeatureError::RateMismatch {
            cfg: cfg.rate_hz,
            rec: rec.rate_hz,
        });
    }
    let (normalized, _zero_variance) = normalize_channels(rec);
    let mag = magnitude(&normalized);
    let stft = Stft::new(cfg);
    let mut images = Vec::new();
    for (activity, range) in align_labels(rec, segments) {
        images.extend(extract_range(
            &mag, &range, activity, rec, user_id, cfg, &stft,
        )?);
    }
    Ok(images)
}

fn extract_range(
    mag: &[f32],
    range: &Range<usize>,
    activity: Activity,
    rec: &Recording,
    user_id: &str,
    cfg: &SpectroConfig,
    stft: &Stft,
) -> Result<Vec<SpectrogramImage>, FeatureError> {
    let slice = &mag[range.clone()];
    let mut images = Vec::new();
    for start in frame_starts(slice.len(), cfg.frame_len, cfg.hop_len) {
        let frame = &slice[start..start + cfg.frame_len];
        let raw = stft.spectrogram(frame)?;
        let (data, degenerate) = percentile_scale(&raw);
        images.push(SpectrogramImage {
            shape: cfg.out_shape,
            data,
            meta: SpecMeta {
                user_id: user_id.to_string(),
                location: rec.location.clone(),
                activity,
                rate_hz: cfg.rate_hz,
                frame_start_unix_s: rec.t_unix_s[range.start + start],
            },
            degenerate,
        });
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine_recording(rate: f64, n: usize, freq: f64, amp: f32) -> Recording {
        Recording {
            location: Location::Wrist,
            rate_hz: rate,
            t_unix_s: (0..n).map(|i| 100.0 + i as f64 / rate).collect(),
            x_g: (0..n)
                .map(|i| {
                    amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin() as f32
                })
                .collect(),
            y_g: (0..n)
                .map(|i| {
                    0.5 * amp
                        * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).cos() as f32
                })
                .collect(),
            z_g: vec![1.0; n],
        }
    }

    fn full_label(rec: &Recording, activity: Activity) -> Vec<LabelSegment> {
        vec![LabelSegment {
            activity,
            start_unix_s: rec.t_unix_s[0],
            stop_unix_s: rec.t_unix_s[rec.len() - 1] + 1.0,
        }]
    }

    #[test]
    fn rate_configs_match_reference_table() {
        let expect = [
            (10.0, 51, 6, 13, 12, 26, 38, 13),
            (25.0, 128, 16, 32, 31, 64, 96, 32),
            (50.0, 256, 32, 64, 62, 128, 96, 64),
            (75.0, 384, 48, 96, 94, 192, 96, 96),
            (100.0, 512, 64, 128, 125, 256, 128, 128),
        ];
        for (rate, frame, hop, win, overlap, fft, tb, fb) in expect {
            let cfg = rate_config(rate).unwrap();
            assert_eq!(cfg.frame_len, frame, "{rate} Hz frame");
            assert_eq!(cfg.hop_len, hop, "{rate} Hz hop");
            assert_eq!(cfg.stft_win, win, "{rate} Hz window");
            assert_eq!(cfg.stft_overlap, overlap, "{rate} Hz overlap");
            assert_eq!(cfg.fft_len, fft, "{rate} Hz fft");
            assert_eq!(cfg.out_shape.time_bins, tb, "{rate} Hz time bins");
            assert_eq!(cfg.out_shape.freq_bins, fb, "{rate} Hz freq bins");
            assert!(cfg.stft_overlap < cfg.stft_win);
        }
        assert!(matches!(
            rate_config(44.1),
            Err(FeatureError::UnsupportedRate { .. })
        ));
        assert!(matches!(
            rate_config(200.0),
            Err(FeatureError::UnsupportedRate { .. })
        ));
    }

    #[test]
    fn sixty_seconds_at_100hz_gives_86_frames() {
        let starts = frame_starts(6000, 512, 64);
        assert_eq!(starts.len(), 86);
        assert_eq!(starts[0], 0);
        assert_eq!(starts[85], 85 * 64);
    }

    #[test]
    fn percentile_is_linear_interpolated_order_statistic() {
        let vals: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!((percentile(&vals, 0.99) - 98.01).abs() < 1e-12);
        assert!((percentile(&vals, 0.5) - 49.5).abs() < 1e-12);
        assert!((percentile(&vals, 1.0) - 99.0).abs() < 1e-12);
        assert!((percentile(&vals, 0.0) - 0.0).abs() < 1e-12);
        // order-independent
        let mut shuffled = vals.clone();
        shuffled.reverse();
        assert_eq!(percentile(&shuffled, 0.99), percentile(&vals, 0.99));
    }

    #[test]
    fn zero_variance_axis_is_flagged_and_zeroed() {
        let rec = sine_recording(100.0, 600, 3.0, 0.5);
        let (norm, flags) = normalize_channels(&rec);
        assert_eq!(flags, [false, false, true]);
        assert!(norm.z_g.iter().all(|&v| v == 0.0));
        // normalized axes have zero mean, unit population variance
        let mean: f64 = norm.x_g.iter().map(|&v| v as f64).sum::<f64>() / 600.0;
        let var: f64 = norm.x_g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 600.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_recording_yields_degenerate_zero_images() {
        let n = 600;
        let rec = Recording {
            location: Location::Chest,
            rate_hz: 100.0,
            t_unix_s: (0..n).map(|i| i as f64 / 100.0).collect(),
            x_g: vec![0.3; n],
            y_g: vec![-0.1; n],
            z_g: vec![0.98; n],
        };
        let cfg = rate_config(100.0).unwrap();
        let images =
            extract_recording(&rec, &full_label(&rec, Activity::Other), "u0", &cfg).unwrap();
        assert_eq!(images.len(), 2);
        for img in &images {
            assert!(img.degenerate);
            assert!(img.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn images_are_scale_invariant_and_bounded() {
        let rec1 = sine_recording(100.0, 1200, 2.0, 0.4);
        let mut rec2 = rec1.clone();
        for axis in [&mut rec2.x_g, &mut rec2.y_g, &mut rec2.z_g] {
            axis.iter_mut().for_each(|v| *v *= 7.5);
        }
        let cfg = rate_config(100.0).unwrap();
        let a = extract_recording(&rec1, &full_label(&rec1, Activity::Walking), "u", &cfg).unwrap();
        let b = extract_recording(&rec2, &full_label(&rec2, Activity::Walking), "u", &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty());
        for (ia, ib) in a.iter().zip(&b) {
            assert!(ia.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let max_diff = ia
                .data
                .iter()
                .zip(&ib.data)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(max_diff < 1e-5, "scale changed the image by {max_diff}");
        }
    }

    #[test]
    fn rectified_sine_peaks_at_doubled_frequency_bin() {
        // The magnitude collapse rectifies a zero-mean normalized sine, so a
        // single-axis 6.25 Hz sine puts its spectral mass at 12.5 Hz, which
        // is bin 12.5 * 256 / 100 = 32 exactly (16 cycles per 128-sample
        // window, so no leakage). DC and its leakage dominate the first few
        // bins; the peak among the rest must be bin 32.
        let n = 1024;
        let rec = Recording {
            location: Location::Wrist,
            rate_hz: 100.0,
            t_unix_s: (0..n).map(|i| 100.0 + i as f64 / 100.0).collect(),
            x_g: (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * 6.25 * i as f64 / 100.0).sin() as f32)
                .collect(),
            y_g: vec![0.2; n],
            z_g: vec![1.0; n],
        };
        let cfg = rate_config(100.0).unwrap();
        let images =
            extract_recording(&rec, &full_label(&rec, Activity::Running), "u", &cfg).unwrap();
        let img = &images[0];
        let column = &img.data[..cfg.out_shape.freq_bins];
        let peak = column
            .iter()
            .enumerate()
            .skip(8)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 32);
    }

    #[test]
    fn frames_never_cross_label_boundaries() {
        let rec = sine_recording(100.0, 2000, 3.0, 0.6);
        let segs = vec![
            LabelSegment {
                activity: Activity::Walking,
                start_unix_s: 100.0,
                stop_unix_s: 106.0,
            },
            LabelSegment {
                activity: Activity::Running,
                start_unix_s: 106.0,
                stop_unix_s: 120.0,
            },
        ];
        let cfg = rate_config(100.0).unwrap();
        let images = extract_recording(&rec, &segs, "u", &cfg).unwrap();
        // 600 samples -> 2 frames; 1400 samples -> 14 frames.
        let walking = images
            .iter()
            .filter(|i| i.meta.activity == Activity::Walking)
            .count();
        let running = images
            .iter()
            .filter(|i| i.meta.activity == Activity::Running)
            .count();
        assert_eq!(walking, 2);
        assert_eq!(running, 14);
        for img in &images {
            let end = img.meta.frame_start_unix_s + FRAME_S;
            let seg = segs
                .iter()
                .find(|s| s.activity == img.meta.activity)
                .unwrap();
            assert!(img.meta.frame_start_unix_s >= seg.start_unix_s - 1e-9);
            assert!(end <= seg.stop_unix_s + 1e-9);
        }
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let rec = sine_recording(50.0, 600, 3.0, 0.5);
        let cfg = rate_config(100.0).unwrap();
        assert!(matches!(
            extract_recording(&rec, &full_label(&rec, Activity::Walking), "u", &cfg),
            Err(FeatureError::RateMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn frame_starts_law(len in 0usize..5000, frame in 1usize..600, hop in 1usize..128) {
            let starts = frame_starts(len, frame, hop);
            if len < frame {
                prop_assert!(starts.is_empty());
            } else {
                prop_assert_eq!(starts.len(), (len - frame) / hop + 1);
                for (i, s) in starts.iter().enumerate() {
                    prop_assert_eq!(*s, i * hop);
                    prop_assert!(s + frame <= len);
                }
            }
        }

        #[test]
        fn percentile_bounds(mut vals in proptest::collection::vec(-1e3f64..1e3, 1..200), q in 0.0f64..1.0) {
            let p = percentile(&vals, q);
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(p >= vals[0] - 1e-9 && p <= vals[vals.len() - 1] + 1e-9);
        }
    }
}
