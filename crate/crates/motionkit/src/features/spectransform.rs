//! Rate conditioning: make a high-rate spectrogram look like a low-rate one.
//!
//! A lower sampling rate sees only the bottom slice of the frequency axis, so
//! the transform keeps frequency bins [0, c) with
//! `c = floor(fft_len_high / 2 * rate_low / rate_high)`, bilinearly resizes
//! the crop to the low-rate output shape, and re-clips to [0, 1]. Upsampling
//! has no equivalent (the information does not exist) and is rejected.

use super::{rate_config, FeatureError, SpectrogramImage};

/// Bilinear resize with half-pixel-center sampling, edge clamped.
pub fn bilinear_resize(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w);
    assert!(src_h > 0 && src_w > 0 && dst_h > 0 && dst_w > 0);
    let mut out = vec![0.0f32; dst_h * dst_w];
    let scale_h = src_h as f64 / dst_h as f64;
    let scale_w = src_w as f64 / dst_w as f64;
    for dy in 0..dst_h {
        let sy = ((dy as f64 + 0.5) * scale_h - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dst_w {
            let sx = ((dx as f64 + 0.5) * scale_w - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * src_w + x0] as f64;
            let v01 = src[y0 * src_w + x1] as f64;
            let v10 = src[y1 * src_w + x0] as f64;
            let v11 = src[y1 * src_w + x1] as f64;
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out[dy * dst_w + dx] = (top + (bot - top) * fy) as f32;
        }
    }
    out
}

/// Number of source frequency bins a target rate can see.
pub fn visible_bins(from_cfg_fft_len: usize, from_hz: f64, to_hz: f64) -> usize {
    ((from_cfg_fft_len / 2) as f64 * to_hz / from_hz).floor() as usize
}

pub fn spectransform(img: &SpectrogramImage, to_hz: f64) -> Result<SpectrogramImage, FeatureError> {
    let from_hz = img.meta.rate_hz;
    let from_cfg = rate_config(from_hz)?;
    let to_cfg = rate_config(to_hz)?;
    if to_hz >= from_hz {
        return Err(FeatureError::BadDirection {
            from: from_hz,
            to: to_hz,
        });
    }
    let want = (from_cfg.out_shape.time_bins, from_cfg.out_shape.freq_bins);
    let got = (img.shape.time_bins, img.shape.freq_bins);
    if want != got {
        return Err(FeatureError::ShapeMismatch { want, got });
    }
    let c = visible_bins(from_cfg.fft_len, from_hz, to_hz);
    let (src_h, src_w) = (img.shape.time_bins, img.shape.freq_bins);
    let mut cropped = Vec::with_capacity(src_h * c);
    for t in 0..src_h {
        cropped.extend_from_slice(&img.data[t * src_w..t * src_w + c]);
    }
    let out_shape = to_cfg.out_shape;
    let mut data = bilinear_resize(&cropped, src_h, c, out_shape.time_bins, out_shape.freq_bins);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let mut meta = img.meta.clone();
    meta.rate_hz = to_hz;
    Ok(SpectrogramImage {
        shape: out_shape,
        data,
        meta,
        degenerate: img.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{SpecMeta, SpectroShape};
    use crate::ingest::{Activity, Location};

    fn image_at(rate_hz: f64, fill: impl Fn(usize, usize) -> f32) -> SpectrogramImage {
        let shape = rate_config(rate_hz).unwrap().out_shape;
        let mut data = Vec::with_capacity(shape.len());
        for t in 0..shape.time_bins {
            for f in 0..shape.freq_bins {
                data.push(fill(t, f));
            }
        }
        SpectrogramImage {
            shape,
            data,
            meta: SpecMeta {
                user_id: "u".into(),
                location: Location::Wrist,
                activity: Activity::Walking,
                rate_hz,
                frame_start_unix_s: 0.0,
            },
            degenerate: false,
        }
    }

    #[test]
    fn output_shapes_match_target_configs() {
        let cases = [
            (100.0, 75.0, 96, 96),
            (100.0, 50.0, 96, 64),
            (100.0, 25.0, 96, 32),
            (100.0, 10.0, 38, 13),
            (75.0, 25.0, 96, 32),
            (50.0, 25.0, 96, 32),
            (25.0, 10.0, 38, 13),
        ];
        for (from, to, tb, fb) in cases {
            let img = image_at(from, |t, f| ((t + f) % 7) as f32 / 7.0);
            let out = spectransform(&img, to).unwrap();
            assert_eq!(out.shape, SpectroShape { time_bins: tb, freq_bins: fb });
            assert_eq!(out.meta.rate_hz, to);
            assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn crop_keeps_expected_bin_count() {
        assert_eq!(visible_bins(256, 100.0, 25.0), 32);
        assert_eq!(visible_bins(256, 100.0, 50.0), 64);
        assert_eq!(visible_bins(256, 100.0, 75.0), 96);
        assert_eq!(visible_bins(256, 100.0, 10.0), 12);
        assert_eq!(visible_bins(192, 75.0, 25.0), 32);
    }

    #[test]
    fn upsampling_is_rejected() {
        let img = image_at(25.0, |_, _| 0.5);
        assert!(matches!(
            spectransform(&img, 50.0),
            Err(FeatureError::BadDirection { from, to }) if from == 25.0 && to == 50.0
        ));
        assert!(matches!(
            spectransform(&img, 25.0),
            Err(FeatureError::BadDirection { .. })
        ));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut img = image_at(100.0, |_, _| 0.1);
        img.shape = SpectroShape {
            time_bins: 10,
            freq_bins: 10,
        };
        img.data.truncate(100);
        assert!(matches!(
            spectransform(&img, 25.0),
            Err(FeatureError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = image_at(100.0, |_, _| 0.42);
        let out = spectransform(&img, 25.0).unwrap();
        for &v in &out.data {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn low_frequency_content_is_preserved_high_is_cropped() {
        // Energy in bin 8 survives 100 -> 25 (visible range is 32 bins);
        // energy in bin 100 does not exist at 25 Hz.
        let low = image_at(100.0, |_, f| if f == 8 { 1.0 } else { 0.0 });
        let out = spectransform(&low, 25.0).unwrap();
        let peak_f = (0..out.shape.freq_bins)
            .max_by(|&a, &b| {
                let col = |f: usize| {
                    (0..out.shape.time_bins)
                        .map(|t| out.data[t * out.shape.freq_bins + f])
                        .sum::<f32>()
                };
                col(a).partial_cmp(&col(b)).unwrap()
            })
            .unwrap();
        assert_eq!(peak_f, 8);

        let high = image_at(100.0, |_, f| if f == 100 { 1.0 } else { 0.0 });
        let out = spectransform(&high, 25.0).unwrap();
        let total: f32 = out.data.iter().sum();
        assert!(total < 1e-6, "cropped content leaked: {total}");
    }

    #[test]
    fn bilinear_identity_when_shapes_match() {
        let src: Vec<f32> = (0..12).map(|v| v as f32 / 12.0).collect();
        let out = bilinear_resize(&src, 3, 4, 3, 4);
        assert_eq!(src, out);
    }

    #[test]
    fn bilinear_interpolates_midpoints() {
        // Doubling a 1x2 image puts interpolated values at the quarter points.
        let out = bilinear_resize(&[0.0, 1.0], 1, 2, 1, 4);
        assert!((out[0] - 0.0).abs() < 1e-6);
        assert!((out[1] - 0.25).abs() < 1e-6);
        assert!((out[2] - 0.75).abs() < 1e-6);
        assert!((out[3] - 1.0).abs() < 1e-6);
    }
}
