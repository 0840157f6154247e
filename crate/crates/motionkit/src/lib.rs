//! Motion-activity recognition from wrist-, ankle-, and body-worn
//! accelerometers.
//!
//! The pipeline: raw 3-axis recordings are normalized per axis, collapsed to
//! a magnitude signal, and cut into short-time Fourier spectrogram images.
//! Reparameterizable convolutional classifiers train on those images and fold
//! down to plain single-branch convolutions for inference. On top of that the
//! crate provides cross-location transfer analysis (which sensor placements
//! generalize to which), rate conditioning so high-rate models can score
//! low-rate data, activity-level aggregation of frame predictions, embedding
//! fine-tuning for new target activities, and an optimal-transport synthesis
//! path that maps spectrograms from one wearing location into another.
//!
//! A deterministic synthetic benchmark ships with the harness so every stage
//! is runnable end to end without any device data.

pub mod features;
pub mod ingest;
pub mod nn;
