//! Accelerometer dataset ingestion.
//!
//! On disk a dataset is a JSONL manifest (one session per line) whose entries
//! point at per-location recording CSVs plus one label CSV per session.
//! Timestamps are seconds since the Unix epoch, axis values are in g.
//! Relative paths inside a manifest resolve against the manifest's directory.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod resample;
pub mod tensor_file;

pub use resample::{resample, resample_signal};
pub use tensor_file::{read_tensor, write_tensor, TensorData};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    MalformedManifest { line: usize, msg: String },
    #[error("session {session}: duplicate recording location {location}")]
    DuplicateLocation { session: String, location: String },
    #[error("{path}: row {row}: {msg}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        msg: String,
    },
    #[error("recording {path} has no samples")]
    EmptySignal { path: PathBuf },
    #[error("{path}: timestamps not strictly increasing at row {row}")]
    NonMonotonicTimestamps { path: PathBuf, row: usize },
    #[error("label segment {idx}: stop {stop} not after start {start}")]
    EmptySegment { idx: usize, start: f64, stop: f64 },
    #[error("target rate {rate_hz} Hz is not positive and finite")]
    BadRate { rate_hz: f64 },
    #[error("{path}: bad magic (not a tensor file)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported tensor version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },
    #[error("{path}: unsupported tensor dtype {dtype}")]
    UnsupportedDtype { path: PathBuf, dtype: u8 },
    #[error("{path}: payload holds {got} values, dims require {want}")]
    PayloadMismatch {
        path: PathBuf,
        want: usize,
        got: usize,
    },
    #[error("tensor dims {dims:?} are not storable (empty, >255 axes, or axis > u32::MAX)")]
    BadDims { dims: Vec<usize> },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Wearing position of a sensor. The six canonical positions are the ones the
/// transfer harness reports on; anything else is carried through verbatim.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Wrist,
    Ankle,
    Thigh,
    Head,
    Chest,
    Shoulder,
    Hat,
    Belt,
    Shoe,
    OtherLocation(String),
}

/// Report/row order for the canonical transfer locations.
pub const CANONICAL_LOCATIONS: [Location; 6] = [
    Location::Wrist,
    Location::Ankle,
    Location::Thigh,
    Location::Head,
    Location::Chest,
    Location::Shoulder,
];

impl Location {
    pub fn parse(s: &str) -> Location {
        match s.to_ascii_lowercase().as_str() {
            "wrist" => Location::Wrist,
            "ankle" => Location::Ankle,
            "thigh" => Location::Thigh,
            "head" => Location::Head,
            "chest" => Location::Chest,
            "shoulder" => Location::Shoulder,
            "hat" => Location::Hat,
            "belt" => Location::Belt,
            "shoe" => Location::Shoe,
            other => Location::OtherLocation(other.to_string()),
        }
    }

    /// Canonical lowercase key used in files.
    pub fn as_key(&self) -> &str {
        match self {
            Location::Wrist => "wrist",
            Location::Ankle => "ankle",
            Location::Thigh => "thigh",
            Location::Head => "head",
            Location::Chest => "chest",
            Location::Shoulder => "shoulder",
            Location::Hat => "hat",
            Location::Belt => "belt",
            Location::Shoe => "shoe",
            Location::OtherLocation(s) => s.as_str(),
        }
    }

    /// Capitalized form for report headers.
    pub fn label(&self) -> String {
        let key = self.as_key();
        let mut out = String::with_capacity(key.len());
        let mut chars = key.chars();
        if let Some(c) = chars.next() {
            out.extend(c.to_uppercase());
            out.extend(chars);
        }
        out
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_key())
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_key())
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Location::parse(&s))
    }
}

/// The four activity classes carried by label files. Class index order is the
/// order used everywhere a prediction index appears.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Activity {
    Walking,
    Running,
    Cycling,
    Other,
}

pub const ACTIVITIES: [Activity; 4] = [
    Activity::Walking,
    Activity::Running,
    Activity::Cycling,
    Activity::Other,
];

impl Activity {
    pub fn parse(s: &str) -> Option<Activity> {
        match s.to_ascii_lowercase().as_str() {
            "walking" => Some(Activity::Walking),
            "running" => Some(Activity::Running),
            "cycling" => Some(Activity::Cycling),
            "other" => Some(Activity::Other),
            _ => None,
        }
    }

    pub fn as_key(&self) -> &'static str {
        match self {
            Activity::Walking => "walking",
            Activity::Running => "running",
            Activity::Cycling => "cycling",
            Activity::Other => "other",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Activity::Walking => "Walking",
            Activity::Running => "Running",
            Activity::Cycling => "Cycling",
            Activity::Other => "Other",
        }
    }

    /// Class index; also the row/column index in confusion matrices.
    pub fn index(&self) -> usize {
        match self {
            Activity::Walking => 0,
            Activity::Running => 1,
            Activity::Cycling => 2,
            Activity::Other => 3,
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_key())
    }
}

impl Serialize for Activity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_key())
    }
}

impl<'de> Deserialize<'de> for Activity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Activity::parse(&s).ok_or_else(|| D::Error::custom(format!("unknown activity {s:?}")))
    }
}

/// One labeled time interval, half-open: [start_unix_s, stop_unix_s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSegment {
    pub activity: Activity,
    pub start_unix_s: f64,
    pub stop_unix_s: f64,
}

/// A single-location accelerometer stream with per-sample timestamps.
#[derive(Clone, Debug)]
pub struct Recording {
    pub location: Location,
    pub rate_hz: f64,
    pub t_unix_s: Vec<f64>,
    pub x_g: Vec<f32>,
    pub y_g: Vec<f32>,
    pub z_g: Vec<f32>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.t_unix_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_unix_s.is_empty()
    }

    pub fn start_unix_s(&self) -> f64 {
        self.t_unix_s.first().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub path: PathBuf,
    pub location: Location,
    pub rate_hz: f64,
}

/// One session = one user wearing several sensors simultaneously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub user_id: String,
    pub labels: PathBuf,
    pub recordings: Vec<RecordingEntry>,
}

/// Parse a JSONL manifest. Paths are resolved relative to the manifest file.
pub fn parse_manifest(path: &Path) -> Result<Vec<SessionManifest>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut sessions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut session: SessionManifest =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedManifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if session.recordings.is_empty() {
            return Err(IngestError::MalformedManifest {
                line: i + 1,
                msg: format!("session {} has no recordings", session.session_id),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for rec in &session.recordings {
            if !seen.insert(rec.location.clone()) {
                return Err(IngestError::DuplicateLocation {
                    session: session.session_id.clone(),
                    location: rec.location.as_key().to_string(),
                });
            }
            if !(rec.rate_hz > 0.0 && rec.rate_hz.is_finite()) {
                return Err(IngestError::MalformedManifest {
                    line: i + 1,
                    msg: format!("recording {} has bad rate {}", rec.path.display(), rec.rate_hz),
                });
            }
        }
        session.labels = base.join(&session.labels);
        for rec in &mut session.recordings {
            rec.path = base.join(&rec.path);
        }
        sessions.push(session);
    }
    Ok(sessions)
}

/// Write sessions as a JSONL manifest with paths kept as given.
pub fn write_manifest(path: &Path, sessions: &[SessionManifest]) -> Result<(), IngestError> {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&serde_json::to_string(s).expect("manifest serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Load a label CSV: `session_id,activity,start_unix_s,stop_unix_s`.
pub fn load_labels(path: &Path) -> Result<Vec<LabelSegment>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IngestError::MalformedRow {
            path: path.to_path_buf(),
            row: 0,
            msg: e.to_string(),
        })?;
    let mut segments = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after header
        let rec = rec.map_err(|e| IngestError::MalformedRow {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<&str, IngestError> {
            rec.get(idx).ok_or_else(|| IngestError::MalformedRow {
                path: path.to_path_buf(),
                row,
                msg: format!("missing column {name}"),
            })
        };
        let activity_str = field(1, "activity")?;
        let activity =
            Activity::parse(activity_str).ok_or_else(|| IngestError::MalformedRow {
                path: path.to_path_buf(),
                row,
                msg: format!("unknown activity {activity_str:?}"),
            })?;
        let parse_t = |idx: usize, name: &str| -> Result<f64, IngestError> {
            let raw = field(idx, name)?;
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    msg: format!("bad {name} value {raw:?}"),
                })
        };
        let start = parse_t(2, "start_unix_s")?;
        let stop = parse_t(3, "stop_unix_s")?;
        if !(stop > start) {
            return Err(IngestError::EmptySegment {
                idx: segments.len(),
                start,
                stop,
            });
        }
        segments.push(LabelSegment {
            activity,
            start_unix_s: start,
            stop_unix_s: stop,
        });
    }
    Ok(segments)
}

pub fn write_labels(
    path: &Path,
    session_id: &str,
    segments: &[LabelSegment],
) -> Result<(), IngestError> {
    let mut out = String::from("session_id,activity,start_unix_s,stop_unix_s\n");
    for seg in segments {
        out.push_str(&format!(
            "{},{},{},{}\n",
            session_id, seg.activity, seg.start_unix_s, seg.stop_unix_s
        ));
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Load a recording CSV: `t_unix_s,x_g,y_g,z_g`. Timestamps must be strictly
/// increasing; all values must be finite.
pub fn load_recording(
    path: &Path,
    location: Location,
    rate_hz: f64,
) -> Result<Recording, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IngestError::MalformedRow {
            path: path.to_path_buf(),
            row: 0,
            msg: e.to_string(),
        })?;
    let mut rec = Recording {
        location,
        rate_hz,
        t_unix_s: Vec::new(),
        x_g: Vec::new(),
        y_g: Vec::new(),
        z_g: Vec::new(),
    };
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| IngestError::MalformedRow {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        let mut vals = [0.0f64; 4];
        for (j, v) in vals.iter_mut().enumerate() {
            let raw = record.get(j).ok_or_else(|| IngestError::MalformedRow {
                path: path.to_path_buf(),
                row,
                msg: format!("expected 4 columns, got {}", record.len()),
            })?;
            *v = raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    msg: format!("bad value {raw:?} in column {j}"),
                })?;
        }
        if let Some(&prev) = rec.t_unix_s.last() {
            if vals[0] <= prev {
                return Err(IngestError::NonMonotonicTimestamps {
                    path: path.to_path_buf(),
                    row,
                });
            }
        }
        rec.t_unix_s.push(vals[0]);
        rec.x_g.push(vals[1] as f32);
        rec.y_g.push(vals[2] as f32);
        rec.z_g.push(vals[3] as f32);
    }
    if rec.is_empty() {
        return Err(IngestError::EmptySignal {
            path: path.to_path_buf(),
        });
    }
    Ok(rec)
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<(), IngestError> {
    let mut out = String::with_capacity(rec.len() * 40 + 32);
    out.push_str("t_unix_s,x_g,y_g,z_g\n");
    for i in 0..rec.len() {
        out.push_str(&format!(
            "{:.6},{},{},{}\n",
            rec.t_unix_s[i], rec.x_g[i], rec.y_g[i], rec.z_g[i]
        ));
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Map label intervals onto sample index ranges of a recording.
///
/// Intervals are half-open, so a sample at exactly `stop_unix_s` belongs to
/// the next segment, never to two. Segments that fall outside the recording
/// (or round to zero samples) are dropped.
pub fn align_labels(
    rec: &Recording,
    segments: &[LabelSegment],
) -> Vec<(Activity, Range<usize>)> {
    let t = &rec.t_unix_s;
    let mut out = Vec::new();
    for seg in segments {
        let start = t.partition_point(|&v| v < seg.start_unix_s);
        let stop = t.partition_point(|&v| v < seg.stop_unix_s);
        if stop > start {
            out.push((seg.activity, start..stop));
        }
    }
    out
}
