//! Band-limited sample-rate conversion.
//!
//! Interpolation is a Hann-windowed sinc with a 64-tap half-width evaluated
//! on the exact output grid, which keeps the filter linear-phase. The sinc
//! cutoff sits at 0.45x the lower of the two rates, so downsampling gets its
//! anti-alias low-pass from the same kernel. Output length is always
//! `floor(len * to_hz / from_hz)`; equal rates short-circuit to a copy.

use super::{IngestError, Recording};

pub const HALF_WIDTH: usize = 64;
const CUTOFF_FRACTION: f64 = 0.45;

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let pu = std::f64::consts::PI * u;
        pu.sin() / pu
    }
}

pub fn resample_signal(x: &[f32], from_hz: f64, to_hz: f64) -> Result<Vec<f32>, IngestError> {
    for rate in [from_hz, to_hz] {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(IngestError::BadRate { rate_hz: rate });
        }
    }
    if from_hz == to_hz {
        return Ok(x.to_vec());
    }
    let out_len = (x.len() as f64 * to_hz / from_hz).floor() as usize;
    // Cutoff in cycles per input sample; 0.45 * min keeps the transition band
    // clear of the narrower Nyquist on either side.
    let fc = CUTOFF_FRACTION * to_hz.min(from_hz) / from_hz;
    let half = HALF_WIDTH as f64;
    let step = from_hz / to_hz;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 * step;
        let lo = (center - half).ceil().max(0.0) as usize;
        let hi = ((center + half).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0f64;
        for (k, &v) in x[lo..=hi].iter().enumerate() {
            let tau = center - (lo + k) as f64;
            let window = 0.5 * (1.0 + (std::f64::consts::PI * tau / half).cos());
            acc += v as f64 * 2.0 * fc * sinc(2.0 * fc * tau) * window;
        }
        out.push(acc as f32);
    }
    Ok(out)
}

/// Resample all three axes and regenerate a uniform timestamp grid anchored
/// at the first input timestamp.
pub fn resample(rec: &Recording, to_hz: f64) -> Result<Recording, IngestError> {
    let x = resample_signal(&rec.x_g, rec.rate_hz, to_hz)?;
    let y = resample_signal(&rec.y_g, rec.rate_hz, to_hz)?;
    let z = resample_signal(&rec.z_g, rec.rate_hz, to_hz)?;
    let t0 = rec.start_unix_s();
    let t = (0..x.len()).map(|j| t0 + j as f64 / to_hz).collect();
    Ok(Recording {
        location: rec.location.clone(),
        rate_hz: to_hz,
        t_unix_s: t,
        x_g: x,
        y_g: y,
        z_g: z,
    })
}
