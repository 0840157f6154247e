//! Model checkpoints on disk.
//!
//! A checkpoint is a directory holding `model.json` (format marker, an
//! architecture description chosen by the caller, and the tensor name lists)
//! plus one tensor file per parameter under `params/` and per statistics
//! buffer under `buffers/`. Tensors are stored as `f32`, which makes `f32`
//! model roundtrips bit-exact. `model.json` is written last, so a directory
//! with a readable manifest is a complete checkpoint.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::tensor_file::{read_tensor, write_tensor};

use super::autoencoder::Autoencoder;
use super::classifier::MotionModel;
use super::{NnError, Params, Scalar};

const FORMAT: &str = "motionkit-checkpoint";
const VERSION: u32 = 1;

/// Anything whose full state (trainable parameters plus non-trainable
/// statistics buffers) can be walked by stable names.
pub trait Checkpointable<S: Scalar>: Params<S> {
    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        let _ = (prefix, f);
    }
}

impl<S: Scalar> Checkpointable<S> for MotionModel<S> {
    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        MotionModel::visit_buffers(self, prefix, f);
    }
}

impl<S: Scalar> Checkpointable<S> for Autoencoder<S> {
    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        Autoencoder::visit_buffers(self, prefix, f);
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    arch: serde_json::Value,
    params: Vec<String>,
    buffers: Vec<String>,
}

fn bad(path: &Path, msg: impl Into<String>) -> NnError {
    NnError::BadCheckpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn tensor_path(dir: &Path, sub: &str, name: &str) -> PathBuf {
    dir.join(sub).join(format!("{name}.mptn"))
}

/// Write the complete state of `model` under `dir`, labeling it with the
/// caller-supplied architecture description.
pub fn save_state<S: Scalar, M: Checkpointable<S>>(
    dir: &Path,
    arch: serde_json::Value,
    model: &mut M,
) -> Result<(), NnError> {
    fs::create_dir_all(dir.join("params")).map_err(|e| bad(dir, format!("create: {e}")))?;
    fs::create_dir_all(dir.join("buffers")).map_err(|e| bad(dir, format!("create: {e}")))?;
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    let mut first_err: Option<NnError> = None;
    model.visit_params("", &mut |name, value, _| {
        if first_err.is_some() {
            return;
        }
        let as_f32: Vec<f32> = value.iter().map(|v| v.to_f64() as f32).collect();
        match write_tensor(&tensor_path(dir, "params", name), &[as_f32.len()], &as_f32) {
            Ok(()) => params.push(name.to_string()),
            Err(e) => first_err = Some(e.into()),
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    model.visit_buffers("", &mut |name, value| {
        if first_err.is_some() {
            return;
        }
        let as_f32: Vec<f32> = value.iter().map(|v| v.to_f64() as f32).collect();
        match write_tensor(&tensor_path(dir, "buffers", name), &[as_f32.len()], &as_f32) {
            Ok(()) => buffers.push(name.to_string()),
            Err(e) => first_err = Some(e.into()),
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let unique: BTreeSet<&String> = params.iter().chain(buffers.iter()).collect();
    assert_eq!(
        unique.len(),
        params.len() + buffers.len(),
        "duplicate tensor names in model state"
    );
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        arch,
        params,
        buffers,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| bad(dir, format!("encode manifest: {e}")))?;
    fs::write(dir.join("model.json"), json).map_err(|e| bad(dir, format!("write manifest: {e}")))?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Manifest, NnError> {
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| bad(&path, e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| bad(&path, format!("parse: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(&path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(bad(&path, format!("unsupported version {}", manifest.version)));
    }
    Ok(manifest)
}

/// The architecture description stored at save time.
pub fn read_arch(dir: &Path) -> Result<serde_json::Value, NnError> {
    Ok(read_manifest(dir)?.arch)
}

/// Fill an already-constructed `model` from the checkpoint at `dir`. The
/// model's tensor names and lengths must match the checkpoint exactly.
pub fn load_state<S: Scalar, M: Checkpointable<S>>(
    dir: &Path,
    model: &mut M,
) -> Result<(), NnError> {
    let manifest = read_manifest(dir)?;
    let mut first_err: Option<NnError> = None;
    let mut seen_params = BTreeSet::new();
    model.visit_params("", &mut |name, value, _| {
        if first_err.is_some() {
            return;
        }
        seen_params.insert(name.to_string());
        let path = tensor_path(dir, "params", name);
        match read_tensor(&path) {
            Ok(t) if t.len() == value.len() => {
                for (dst, &src) in value.iter_mut().zip(&t.data) {
                    *dst = S::from_f64(src as f64);
                }
            }
            Ok(t) => {
                first_err = Some(bad(
                    &path,
                    format!("length {} does not match model tensor {}", t.len(), value.len()),
                ))
            }
            Err(e) => first_err = Some(e.into()),
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let mut seen_buffers = BTreeSet::new();
    model.visit_buffers("", &mut |name, value| {
        if first_err.is_some() {
            return;
        }
        seen_buffers.insert(name.to_string());
        let path = tensor_path(dir, "buffers", name);
        match read_tensor(&path) {
            Ok(t) if t.len() == value.len() => {
                for (dst, &src) in value.iter_mut().zip(&t.data) {
                    *dst = S::from_f64(src as f64);
                }
            }
            Ok(t) => {
                first_err = Some(bad(
                    &path,
                    format!("length {} does not match model tensor {}", t.len(), value.len()),
                ))
            }
            Err(e) => first_err = Some(e.into()),
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let want_params: BTreeSet<String> = manifest.params.into_iter().collect();
    let want_buffers: BTreeSet<String> = manifest.buffers.into_iter().collect();
    if seen_params != want_params || seen_buffers != want_buffers {
        let extra: Vec<_> = want_params
            .difference(&seen_params)
            .chain(want_buffers.difference(&seen_buffers))
            .cloned()
            .collect();
        let missing: Vec<_> = seen_params
            .difference(&want_params)
            .chain(seen_buffers.difference(&want_buffers))
            .cloned()
            .collect();
        return Err(bad(
            dir,
            format!(
                "tensor names do not match model (checkpoint-only: {extra:?}, model-only: {missing:?})"
            ),
        ));
    }
    Ok(())
}

/// Save a classifier with enough architecture metadata to rebuild it.
pub fn save_classifier(dir: &Path, model: &mut MotionModel<f32>) -> Result<(), NnError> {
    let arch = serde_json::json!({
        "kind": "classifier",
        "n_classes": model.n_classes,
    });
    save_state(dir, arch, model)
}

pub fn load_classifier(dir: &Path) -> Result<MotionModel<f32>, NnError> {
    let arch = read_arch(dir)?;
    if arch["kind"] != "classifier" {
        return Err(bad(dir, format!("expected a classifier checkpoint, got {}", arch["kind"])));
    }
    let n_classes = arch["n_classes"]
        .as_u64()
        .ok_or_else(|| bad(dir, "missing n_classes"))? as usize;
    let mut model = MotionModel::new(n_classes, 0);
    load_state(dir, &mut model)?;
    Ok(model)
}

/// Save an autoencoder with enough architecture metadata to rebuild it.
pub fn save_autoencoder(
    dir: &Path,
    model: &mut Autoencoder<f32>,
    width: usize,
) -> Result<(), NnError> {
    let arch = serde_json::json!({
        "kind": "autoencoder",
        "in_h": model.encoder.in_h,
        "in_w": model.encoder.in_w,
        "width": width,
    });
    save_state(dir, arch, model)
}

pub fn load_autoencoder(dir: &Path) -> Result<Autoencoder<f32>, NnError> {
    let arch = read_arch(dir)?;
    if arch["kind"] != "autoencoder" {
        return Err(bad(dir, format!("expected an autoencoder checkpoint, got {}", arch["kind"])));
    }
    let field = |k: &str| -> Result<usize, NnError> {
        arch[k]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| bad(dir, format!("missing {k}")))
    };
    let mut model = Autoencoder::new(field("in_h")?, field("in_w")?, field("width")?, 0);
    load_state(dir, &mut model)?;
    Ok(model)
}
