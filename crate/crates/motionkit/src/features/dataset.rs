//! On-disk spectrogram datasets: tensor files plus a CSV index.
//!
//! Frames are stored in row-major (n, time, freq) tensors, one per append
//! group (typically one group per recording). The sidecar `index.csv` carries
//! one row per frame: `tensor_path,frame_idx,user_id,location,activity,
//! rate_hz,frame_start_unix_s`. Index order is append order, which downstream
//! code relies on being the extraction (time) order within each recording.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::ingest::{read_tensor, write_tensor, Activity, Location};

use super::{rate_config, FeatureError, SpecMeta, SpectroShape, SpectrogramImage};

pub const INDEX_NAME: &str = "index.csv";
const TENSOR_DIR: &str = "tensors";

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    /// Relative to the dataset root.
    pub tensor_path: PathBuf,
    pub frame_idx: usize,
    pub meta: SpecMeta,
}

pub struct DatasetWriter {
    root: PathBuf,
    used_groups: BTreeSet<String>,
    entries: Vec<IndexEntry>,
    shape: Option<SpectroShape>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<Self, FeatureError> {
        std::fs::create_dir_all(root.join(TENSOR_DIR))
            .map_err(|e| crate::ingest::IngestError::io(root, e))?;
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            used_groups: BTreeSet::new(),
            entries: Vec::new(),
            shape: None,
        })
    }

    /// Write one tensor holding `images` in order and index them. Group names
    /// must be unique per dataset; all images in a dataset share one shape.
    pub fn append(&mut self, group: &str, images: &[SpectrogramImage]) -> Result<(), FeatureError> {
        if images.is_empty() {
            return Ok(());
        }
        assert!(
            self.used_groups.insert(group.to_string()),
            "dataset group {group:?} written twice"
        );
        let shape = images[0].shape;
        match self.shape {
            None => self.shape = Some(shape),
            Some(prev) => {
                if prev != shape {
                    return Err(FeatureError::ShapeMismatch {
                        want: (prev.time_bins, prev.freq_bins),
                        got: (shape.time_bins, shape.freq_bins),
                    });
                }
            }
        }
        let mut data = Vec::with_capacity(images.len() * shape.len());
        for img in images {
            if img.shape != shape {
                return Err(FeatureError::ShapeMismatch {
                    want: (shape.time_bins, shape.freq_bins),
                    got: (img.shape.time_bins, img.shape.freq_bins),
                });
            }
            data.extend_from_slice(&img.data);
        }
        let rel = PathBuf::from(TENSOR_DIR).join(format!("{group}.mptn"));
        write_tensor(
            &self.root.join(&rel),
            &[images.len(), shape.time_bins, shape.freq_bins],
            &data,
        )?;
        for (i, img) in images.iter().enumerate() {
            self.entries.push(IndexEntry {
                tensor_path: rel.clone(),
                frame_idx: i,
                meta: img.meta.clone(),
            });
        }
        Ok(())
    }

    pub fn finish(self) -> Result<SpecDataset, FeatureError> {
        let index_path = self.root.join(INDEX_NAME);
        let mut w = csv::Writer::from_path(&index_path).map_err(|e| {
            FeatureError::MalformedIndex {
                path: index_path.clone(),
                row: 0,
                msg: e.to_string(),
            }
        })?;
        w.write_record([
            "tensor_path",
            "frame_idx",
            "user_id",
            "location",
            "activity",
            "rate_hz",
            "frame_start_unix_s",
        ])
        .and_then(|_| {
            for e in &self.entries {
                w.write_record([
                    e.tensor_path.to_string_lossy().as_ref(),
                    &e.frame_idx.to_string(),
                    &e.meta.user_id,
                    e.meta.location.as_key(),
                    e.meta.activity.as_key(),
                    &format!("{}", e.meta.rate_hz),
                    &format!("{}", e.meta.frame_start_unix_s),
                ])?;
            }
            w.flush()?;
            Ok(())
        })
        .map_err(|e| FeatureError::MalformedIndex {
            path: index_path,
            row: 0,
            msg: e.to_string(),
        })?;
        Ok(SpecDataset {
            root: self.root,
            entries: self.entries,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SpecDataset {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl SpecDataset {
    pub fn open(root: &Path) -> Result<Self, FeatureError> {
        let index_path = root.join(INDEX_NAME);
        let bad = |row: usize, msg: String| FeatureError::MalformedIndex {
            path: index_path.clone(),
            row,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&index_path)
            .map_err(|e| bad(0, e.to_string()))?;
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| bad(row, e.to_string()))?;
            let get = |idx: usize| {
                rec.get(idx)
                    .ok_or_else(|| bad(row, format!("missing column {idx}")))
            };
            let activity_raw = get(4)?;
            let activity = Activity::parse(activity_raw)
                .ok_or_else(|| bad(row, format!("unknown activity {activity_raw:?}")))?;
            entries.push(IndexEntry {
                tensor_path: PathBuf::from(get(0)?),
                frame_idx: get(1)?
                    .parse()
                    .map_err(|e| bad(row, format!("bad frame_idx: {e}")))?,
                meta: SpecMeta {
                    user_id: get(2)?.to_string(),
                    location: Location::parse(get(3)?),
                    activity,
                    rate_hz: get(5)?
                        .parse()
                        .map_err(|e| bad(row, format!("bad rate_hz: {e}")))?,
                    frame_start_unix_s: get(6)?
                        .parse()
                        .map_err(|e| bad(row, format!("bad frame_start_unix_s: {e}")))?,
                },
            });
        }
        Ok(SpecDataset {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.meta.user_id.as_str()).collect();
        set.into_iter().map(|s| s.to_string()).collect()
    }

    pub fn locations(&self) -> Vec<Location> {
        let set: BTreeSet<&Location> = self.entries.iter().map(|e| &e.meta.location).collect();
        set.into_iter().cloned().collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        let mut rates: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !rates.iter().any(|&r| r == e.meta.rate_hz) {
                rates.push(e.meta.rate_hz);
            }
        }
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rates
    }

    /// Load the frames selected by `keep`, optionally keeping only every
    /// `stride`-th frame of each contiguous same-activity run (stride 1 keeps
    /// everything). Returns images in index order.
    pub fn load(
        &self,
        keep: impl Fn(&IndexEntry) -> bool,
        stride: usize,
    ) -> Result<Vec<SpectrogramImage>, FeatureError> {
        assert!(stride >= 1);
        let selected = self.select(keep, stride);
        let mut images = Vec::with_capacity(selected.len());
        let mut current: Option<(PathBuf, crate::ingest::TensorData)> = None;
        for entry in selected {
            let reload = match &current {
                Some((p, _)) => *p != entry.tensor_path,
                None => true,
            };
            if reload {
                let tensor = read_tensor(&self.root.join(&entry.tensor_path))?;
                current = Some((entry.tensor_path.clone(), tensor));
            }
            let (_, tensor) = current.as_ref().unwrap();
            let [n, t, f] = tensor.dims[..] else {
                return Err(FeatureError::MalformedIndex {
                    path: self.root.join(&entry.tensor_path),
                    row: 0,
                    msg: format!("expected 3 dims, got {:?}", tensor.dims),
                });
            };
            assert!(entry.frame_idx < n, "frame_idx out of range");
            let len = t * f;
            let start = entry.frame_idx * len;
            let data = tensor.data[start..start + len].to_vec();
            let degenerate = data.iter().all(|&v| v == 0.0);
            images.push(SpectrogramImage {
                shape: SpectroShape {
                    time_bins: t,
                    freq_bins: f,
                },
                data,
                meta: entry.meta.clone(),
                degenerate,
            });
        }
        Ok(images)
    }

    /// Index entries selected by `keep` with per-run striding (runs =
    /// consecutive entries of one tensor with the same activity and
    /// consecutive frame indices).
    pub fn select(&self, keep: impl Fn(&IndexEntry) -> bool, stride: usize) -> Vec<&IndexEntry> {
        let mut out = Vec::new();
        let mut run_key: Option<(&Path, Activity)> = None;
        let mut run_pos = 0usize;
        let mut prev_idx = 0usize;
        for e in &self.entries {
            let key = (e.tensor_path.as_path(), e.meta.activity);
            let continues = run_key == Some(key) && e.frame_idx == prev_idx + 1;
            if !continues {
                run_key = Some(key);
                run_pos = 0;
            } else {
                run_pos += 1;
            }
            prev_idx = e.frame_idx;
            if keep(e) && run_pos % stride == 0 {
                out.push(e);
            }
        }
        out
    }

    /// The dataset's single rate, with the image shape implied by it.
    pub fn uniform_rate(&self) -> Option<f64> {
        match self.rates()[..] {
            [rate] => Some(rate),
            _ => None,
        }
    }

    pub fn shape(&self) -> Option<SpectroShape> {
        self.uniform_rate()
            .and_then(|r| rate_config(r).ok())
            .map(|c| c.out_shape)
    }
}
