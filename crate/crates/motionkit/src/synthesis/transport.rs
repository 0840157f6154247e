//! Applying a transport plan to a feature vector.
//!
//! A feature vector enters optimal transport as a histogram: shift it to be
//! strictly positive (`g = f - min(f) + eps`), remember the shift and the
//! total mass, and normalize. The plan's target-conditional expectation
//! `h_j = (P^T g)_j / b_j` redistributes that histogram onto the target
//! marginal's support; with a uniform target marginal this is the familiar
//! `h = n * P^T g`. The result is rescaled back to feature units (multiply by
//! the original mass, add back the minimum). An all-equal input carries no
//! usable histogram; it is returned unchanged with a degenerate flag.

use super::sinkhorn::TransportPlan;

/// Shift added after subtracting the minimum, keeping every bin positive.
pub const FEATURE_SHIFT_EPS: f64 = 1e-10;

/// Spread below which a vector counts as all-equal.
const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct FeatureHistogram {
    /// Normalized weights summing to 1: the OT source marginal.
    pub weights: Vec<f64>,
    /// Total mass of the shifted vector, for undoing the normalization.
    pub scale: f64,
    /// Minimum of the original vector, for undoing the shift.
    pub min: f64,
    pub degenerate: bool,
}

/// Build the histogram form of a feature vector.
pub fn to_histogram(f: &[f64]) -> FeatureHistogram {
    assert!(!f.is_empty());
    let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = (max - min).abs() <= DEGENERATE_SPREAD * (1.0 + max.abs());
    let shifted: Vec<f64> = f.iter().map(|&v| v - min + FEATURE_SHIFT_EPS).collect();
    let scale: f64 = shifted.iter().sum();
    let weights = shifted.iter().map(|&v| v / scale).collect();
    FeatureHistogram {
        weights,
        scale,
        min,
        degenerate,
    }
}

/// Transport `f` through `plan` (whose target marginal is `b`) and rescale
/// back to feature units. Returns the transported vector and whether the
/// input was degenerate (in which case it is returned unchanged).
pub fn transport_apply(plan: &TransportPlan, b: &[f64], f: &[f64]) -> (Vec<f64>, bool) {
    let n = plan.n;
    assert_eq!(f.len(), n);
    assert_eq!(b.len(), n);
    let hist = to_histogram(f);
    if hist.degenerate {
        return (f.to_vec(), true);
    }
    let mut h = vec![0.0f64; n];
    for i in 0..n {
        let g = hist.weights[i];
        if g == 0.0 {
            continue;
        }
        let row = &plan.p[i * n..(i + 1) * n];
        for (hj, &pij) in h.iter_mut().zip(row) {
            *hj += pij * g;
        }
    }
    for (hj, &bj) in h.iter_mut().zip(b) {
        *hj /= bj;
    }
    let out = h
        .iter()
        .map(|&v| v * hist.scale + hist.min)
        .collect();
    (out, false)
}
