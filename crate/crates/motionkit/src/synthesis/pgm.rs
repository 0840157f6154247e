//! Binary PGM (P5) output for visual inspection of spectrograms.
//!
//! Panels render with frequency on the vertical axis (lowest bin at the
//! bottom, as spectrograms are usually read) and time on the horizontal.
//! The triptych places source, real target, and synthesized target side by
//! side with a thin mid-gray separator.

use std::io::Write;
use std::path::Path;

use crate::features::SpectrogramImage;
use crate::ingest::IngestError;

const SEPARATOR_W: usize = 2;
const SEPARATOR_GRAY: u8 = 128;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a raw grayscale buffer (row-major, values in [0,1]) as binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), IngestError> {
    assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Render one spectrogram (time_bins x freq_bins) into a pixel panel of
/// width = time_bins, height = freq_bins, low frequencies at the bottom.
fn panel(spec: &SpectrogramImage) -> (usize, usize, Vec<u8>) {
    let (t, f) = (spec.shape.time_bins, spec.shape.freq_bins);
    let mut pixels = vec![0u8; t * f];
    for row in 0..f {
        let freq = f - 1 - row;
        for col in 0..t {
            pixels[row * t + col] = to_byte(spec.data[col * f + freq]);
        }
    }
    (t, f, pixels)
}

/// Write source / real target / synthetic side by side. All three must share
/// one shape.
pub fn write_triptych(
    path: &Path,
    source: &SpectrogramImage,
    target: &SpectrogramImage,
    synthetic: &SpectrogramImage,
) -> Result<(), IngestError> {
    let panels: Vec<_> = [source, target, synthetic].iter().map(|s| panel(s)).collect();
    let (w, h) = (panels[0].0, panels[0].1);
    assert!(
        panels.iter().all(|p| p.0 == w && p.1 == h),
        "triptych panels must share one shape"
    );
    let total_w = 3 * w + 2 * SEPARATOR_W;
    let mut pixels = vec![SEPARATOR_GRAY; total_w * h];
    for (idx, (_, _, p)) in panels.iter().enumerate() {
        let x0 = idx * (w + SEPARATOR_W);
        for row in 0..h {
            pixels[row * total_w + x0..row * total_w + x0 + w]
                .copy_from_slice(&p[row * w..(row + 1) * w]);
        }
    }
    write_pgm(path, total_w, h, &pixels)
}
