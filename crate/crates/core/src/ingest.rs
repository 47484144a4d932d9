//! Eye-tracker streams, frame metadata and embedding matrices.
//!
//! Everything in here is per-session and pure: parsing turns files into
//! sorted vectors, and the window helpers slice a sorted eye stream around a
//! frame timestamp. Window membership uses closed bounds on both ends.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default half-width of the frame-centered aggregation window, in seconds.
pub const CENTERED_HALF_WIDTH_S: f64 = 0.050;
/// Default bounds of the forward-shifted pupil window, relative to the frame.
pub const DELAYED_LO_S: f64 = 0.300;
pub const DELAYED_HI_S: f64 = 1.500;

/// Fraction of rows allowed to step backwards in time before a stream is rejected.
const MAX_REGRESSION_FRACTION: f64 = 0.001;

const EMB_MAGIC: [u8; 4] = *b"EMB1";
const EMB_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: field `{field}` is out of range ({value})")]
    OutOfRangeField { row: usize, field: &'static str, value: String },
    #[error("row {row}: cannot parse field `{field}` from {value:?}")]
    UnparsableField { row: usize, field: &'static str, value: String },
    #[error("{regressions} of {rows} rows step backwards in time")]
    NonMonotoneTimestamps { regressions: usize, rows: usize },
    #[error("eye stream contains no samples")]
    EmptyStream,
    #[error("row {row}: unknown {task} label {label:?}")]
    UnknownLabel { row: usize, task: &'static str, label: String },
    #[error("duplicate frame id {0:?}")]
    DuplicateFrameId(String),
    #[error("bad magic bytes in embedding file")]
    BadMagic,
    #[error("embedding payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("embedding file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("embedding payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("frame {frame_id:?} references embedding row {row} but the matrix has {rows} rows")]
    DimMismatch { frame_id: String, row: usize, rows: usize },
    #[error("frame {frame_id:?} references embedding row {row}, which is not finite")]
    NonFiniteRow { frame_id: String, row: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json, line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

/// One eye-tracker reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeSample {
    /// Seconds since session start.
    pub t: f64,
    pub gaze_x: f64,
    pub gaze_y: f64,
    pub confidence: f64,
    /// Millimetres; NaN during blinks or when the tracker reports nothing.
    pub pupil_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EyeFormat {
    Csv,
    JsonLines,
}

impl EyeFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => EyeFormat::JsonLines,
            _ => EyeFormat::Csv,
        }
    }
}

const EYE_COLUMNS: [&str; 5] = ["t", "gaze_x", "gaze_y", "confidence", "pupil_mm"];

pub fn parse_eye_stream(path: &Path, format: EyeFormat) -> Result<Vec<EyeSample>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_eye_stream(BufReader::new(file), format)
}

pub fn read_eye_stream<R: Read>(reader: R, format: EyeFormat) -> Result<Vec<EyeSample>, IngestError> {
    let samples = match format {
        EyeFormat::Csv => read_eye_csv(reader)?,
        EyeFormat::JsonLines => read_eye_jsonl(reader)?,
    };
    finish_stream(samples)
}

fn read_eye_csv<R: Read>(reader: R) -> Result<Vec<EyeSample>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(EYE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let raw = RawEye {
            t: Some(field(0).to_string()),
            gaze_x: Some(field(1).to_string()),
            gaze_y: Some(field(2).to_string()),
            confidence: Some(field(3).to_string()),
            pupil_mm: Some(field(4).to_string()),
        };
        out.push(raw.validate(row)?);
    }
    Ok(out)
}

fn read_eye_jsonl<R: Read>(reader: R) -> Result<Vec<EyeSample>, IngestError> {
    let mut out = Vec::new();
    let mut row = 0;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| IngestError::Io { path: PathBuf::from("<stream>"), source: e })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        row += 1;
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|source| IngestError::Json { line: lineno + 1, source })?;
        let obj = value.as_object().ok_or_else(|| IngestError::UnparsableField {
            row,
            field: "t",
            value: trimmed.to_string(),
        })?;
        let get = |key: &str| -> Result<Option<String>, IngestError> {
            match obj.get(key) {
                None => Err(IngestError::MissingColumn(key.to_string())),
                Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::Number(n)) => Ok(Some(n.to_string())),
                Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
                Some(other) => Ok(Some(other.to_string())),
            }
        };
        let raw = RawEye {
            t: get("t")?,
            gaze_x: get("gaze_x")?,
            gaze_y: get("gaze_y")?,
            confidence: get("confidence")?,
            pupil_mm: get("pupil_mm")?,
        };
        out.push(raw.validate(row)?);
    }
    Ok(out)
}

struct RawEye {
    t: Option<String>,
    gaze_x: Option<String>,
    gaze_y: Option<String>,
    confidence: Option<String>,
    pupil_mm: Option<String>,
}

fn parse_opt(row: usize, field: &'static str, value: &Option<String>) -> Result<f64, IngestError> {
    match value.as_deref().map(str::trim) {
        None | Some("") => Ok(f64::NAN),
        Some(s) if s.eq_ignore_ascii_case("nan") => Ok(f64::NAN),
        Some(s) => s.parse::<f64>().map_err(|_| IngestError::UnparsableField {
            row,
            field,
            value: s.to_string(),
        }),
    }
}

impl RawEye {
    fn validate(&self, row: usize) -> Result<EyeSample, IngestError> {
        let t = parse_opt(row, "t", &self.t)?;
        if !t.is_finite() {
            return Err(IngestError::UnparsableField {
                row,
                field: "t",
                value: self.t.clone().unwrap_or_default(),
            });
        }
        let confidence = parse_opt(row, "confidence", &self.confidence)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(IngestError::OutOfRangeField {
                row,
                field: "confidence",
                value: confidence.to_string(),
            });
        }
        let gaze_x = parse_opt(row, "gaze_x", &self.gaze_x)?;
        let gaze_y = parse_opt(row, "gaze_y", &self.gaze_y)?;
        if confidence > 0.0 {
            for (field, v) in [("gaze_x", gaze_x), ("gaze_y", gaze_y)] {
                if !v.is_finite() {
                    return Err(IngestError::OutOfRangeField { row, field, value: v.to_string() });
                }
            }
        }
        let pupil_mm = parse_opt(row, "pupil_mm", &self.pupil_mm)?;
        if pupil_mm.is_infinite() || pupil_mm < 0.0 {
            return Err(IngestError::OutOfRangeField {
                row,
                field: "pupil_mm",
                value: pupil_mm.to_string(),
            });
        }
        Ok(EyeSample { t, gaze_x, gaze_y, confidence, pupil_mm })
    }
}

fn finish_stream(mut samples: Vec<EyeSample>) -> Result<Vec<EyeSample>, IngestError> {
    if samples.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    let regressions = samples.windows(2).filter(|w| w[1].t < w[0].t).count();
    if regressions > 0 {
        if regressions as f64 > MAX_REGRESSION_FRACTION * samples.len() as f64 {
            return Err(IngestError::NonMonotoneTimestamps { regressions, rows: samples.len() });
        }
        log::warn!("{regressions} eye samples out of time order; re-sorting");
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(samples)
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes an eye stream in the same format the parser accepts. NaN fields are
/// written empty (CSV) or `null` (JSON lines).
pub fn write_eye_stream<W: Write>(writer: W, samples: &[EyeSample], format: EyeFormat) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        EyeFormat::Csv => {
            writeln!(w, "t,gaze_x,gaze_y,confidence,pupil_mm")?;
            for s in samples {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    s.t,
                    fmt_opt(s.gaze_x),
                    fmt_opt(s.gaze_y),
                    s.confidence,
                    fmt_opt(s.pupil_mm)
                )?;
            }
        }
        EyeFormat::JsonLines => {
            let num = |v: f64| if v.is_nan() { "null".to_string() } else { format!("{v:?}") };
            for s in samples {
                writeln!(
                    w,
                    "{{\"t\":{},\"gaze_x\":{},\"gaze_y\":{},\"confidence\":{},\"pupil_mm\":{}}}",
                    num(s.t),
                    num(s.gaze_x),
                    num(s.gaze_y),
                    num(s.confidence),
                    num(s.pupil_mm)
                )?;
            }
        }
    }
    w.flush()
}

/// Ordered class names for one labelling task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDictionary {
    pub task: String,
    pub names: Vec<String>,
}

pub const ACTIVITY_CLASSES: [&str; 12] = [
    "walking",
    "cooking",
    "driving",
    "screen use",
    "reading",
    "eating",
    "socializing",
    "shopping",
    "exercising",
    "playing games",
    "grooming",
    "chores",
];

pub const SCENE_CLASSES: [&str; 16] = [
    "kitchen",
    "office",
    "street",
    "store",
    "restaurant",
    "gym",
    "park",
    "bedroom",
    "living room",
    "bathroom",
    "garage",
    "yard",
    "car interior",
    "public transit",
    "classroom",
    "other",
];

impl LabelDictionary {
    pub fn new(task: &str, names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        LabelDictionary { task: task.to_string(), names: names.into_iter().map(Into::into).collect() }
    }

    pub fn activity() -> Self {
        Self::new("activity", ACTIVITY_CLASSES)
    }

    pub fn scene() -> Self {
        Self::new("scene", SCENE_CLASSES)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Case-insensitive lookup; surrounding whitespace is ignored.
    pub fn resolve(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.names.iter().position(|n| n.eq_ignore_ascii_case(label))
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

/// Metadata for one 1 fps video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub session_id: String,
    pub t: f64,
    /// Mean frame luma in [0, 1].
    pub brightness: f64,
    pub activity: Option<usize>,
    pub scene: Option<usize>,
    pub embedding_row: Option<usize>,
}

impl FrameRecord {
    pub fn label(&self, task: Task) -> Option<usize> {
        match task {
            Task::Activity => self.activity,
            Task::Scene => self.scene,
        }
    }

    pub fn is_unlabeled(&self) -> bool {
        self.activity.is_none() && self.scene.is_none()
    }
}

/// The two downstream classification tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Activity,
    Scene,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Activity, Task::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Activity => "activity",
            Task::Scene => "scene",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s.trim() {
            "activity" => Some(Task::Activity),
            "scene" => Some(Task::Scene),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frames grouped by session, each group sorted by time.
pub type FrameTable = BTreeMap<String, Vec<FrameRecord>>;

pub fn parse_frames(
    path: &Path,
    activity: &LabelDictionary,
    scene: &LabelDictionary,
) -> Result<FrameTable, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_frames(BufReader::new(file), activity, scene)
}

pub fn read_frames<R: Read>(
    reader: R,
    activity: &LabelDictionary,
    scene: &LabelDictionary,
) -> Result<FrameTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let c_id = col("frame_id")?;
    let c_session = col("session_id")?;
    let c_t = col("t")?;
    let c_bright = col("brightness")?;
    let c_act = col("activity")?;
    let c_scene = col("scene")?;
    let c_row = col("embedding_row")?;

    let mut seen = HashSet::new();
    let mut table = FrameTable::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let get = |c: usize| record.get(c).unwrap_or("").trim();
        let frame_id = get(c_id).to_string();
        if !seen.insert(frame_id.clone()) {
            return Err(IngestError::DuplicateFrameId(frame_id));
        }
        let t = parse_required(row, "t", get(c_t))?;
        let brightness = parse_required(row, "brightness", get(c_bright))?;
        let resolve = |raw: &str, dict: &LabelDictionary, task: &'static str| {
            if raw.is_empty() {
                Ok(None)
            } else {
                dict.resolve(raw).map(Some).ok_or_else(|| IngestError::UnknownLabel {
                    row,
                    task,
                    label: raw.to_string(),
                })
            }
        };
        let activity = resolve(get(c_act), activity, "activity")?;
        let scene = resolve(get(c_scene), scene, "scene")?;
        let embedding_row = match get(c_row) {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| IngestError::UnparsableField {
                row,
                field: "embedding_row",
                value: s.to_string(),
            })?),
        };
        let frame = FrameRecord {
            frame_id,
            session_id: get(c_session).to_string(),
            t,
            brightness,
            activity,
            scene,
            embedding_row,
        };
        table.entry(frame.session_id.clone()).or_default().push(frame);
    }
    for frames in table.values_mut() {
        frames.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.frame_id.cmp(&b.frame_id)));
    }
    Ok(table)
}

fn parse_required(row: usize, field: &'static str, s: &str) -> Result<f64, IngestError> {
    let v = s.parse::<f64>().map_err(|_| IngestError::UnparsableField {
        row,
        field,
        value: s.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IngestError::OutOfRangeField { row, field, value: s.to_string() });
    }
    Ok(v)
}

pub fn write_frames<W: Write>(
    writer: W,
    frames: &[FrameRecord],
    activity: &LabelDictionary,
    scene: &LabelDictionary,
) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "frame_id,session_id,t,brightness,activity,scene,embedding_row")?;
    for f in frames {
        let act = f.activity.and_then(|i| activity.name(i)).unwrap_or("");
        let scn = f.scene.and_then(|i| scene.name(i)).unwrap_or("");
        let row = f.embedding_row.map(|r| r.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{}", f.frame_id, f.session_id, f.t, f.brightness, act, scn, row)?;
    }
    w.flush()
}

/// Row-major f32 matrix, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * dim, "embedding data length must equal rows * dim");
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_is_finite(&self, i: usize) -> bool {
        self.row(i).iter().all(|v| v.is_finite())
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Decodes the `EMB1` layout: 16-byte header (magic, rows, dim, reserved),
/// then rows x dim little-endian f32. An optional 4-byte trailer holds the
/// CRC-32 of the payload.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, IngestError> {
    if bytes.len() < EMB_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != EMB_MAGIC {
            return Err(IngestError::BadMagic);
        }
        return Err(IngestError::TruncatedPayload { expected: EMB_HEADER_LEN, found: bytes.len() });
    }
    if bytes[..4] != EMB_MAGIC {
        return Err(IngestError::BadMagic);
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let rows = word(4) as usize;
    let dim = word(8) as usize;
    let payload_len = rows * dim * 4;
    let body = &bytes[EMB_HEADER_LEN..];
    if body.len() < payload_len {
        return Err(IngestError::TruncatedPayload { expected: payload_len, found: body.len() });
    }
    let (payload, trailer) = body.split_at(payload_len);
    match trailer.len() {
        0 => {}
        4 => {
            let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
            let computed = crc32fast::hash(payload);
            if stored != computed {
                return Err(IngestError::ChecksumMismatch { stored, computed });
            }
        }
        n => return Err(IngestError::TrailingBytes(n)),
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(EmbeddingMatrix { rows, dim, data })
}

pub fn encode_embeddings(matrix: &EmbeddingMatrix, with_checksum: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + matrix.data.len() * 4 + 4);
    out.extend_from_slice(&EMB_MAGIC);
    out.extend_from_slice(&(matrix.rows as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if with_checksum {
        let crc = crc32fast::hash(&out[EMB_HEADER_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    out
}

/// Checks that every frame's embedding row exists and is finite.
pub fn validate_embedding_refs(frames: &[FrameRecord], matrix: &EmbeddingMatrix) -> Result<(), IngestError> {
    for f in frames {
        if let Some(row) = f.embedding_row {
            if row >= matrix.rows {
                return Err(IngestError::DimMismatch {
                    frame_id: f.frame_id.clone(),
                    row,
                    rows: matrix.rows,
                });
            }
            if !matrix.row_is_finite(row) {
                return Err(IngestError::NonFiniteRow { frame_id: f.frame_id.clone(), row });
            }
        }
    }
    Ok(())
}

/// Eye samples that fall inside a window around one frame.
#[derive(Clone, Copy, Debug)]
pub struct WindowAggregate<'a> {
    pub frame_t: f64,
    /// Window bounds relative to `frame_t`.
    pub lo: f64,
    pub hi: f64,
    pub samples: &'a [EyeSample],
    /// Last sample before the window, used for the first in-window velocity.
    pub preceding: Option<&'a EyeSample>,
}

impl<'a> WindowAggregate<'a> {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// Membership predicate shared by every window routine.
#[inline]
pub fn in_window(t: f64, frame_t: f64, lo: f64, hi: f64) -> bool {
    t >= frame_t + lo && t <= frame_t + hi
}

/// Window with arbitrary relative bounds via binary search on a sorted stream.
pub fn window(samples: &[EyeSample], frame_t: f64, lo: f64, hi: f64) -> WindowAggregate<'_> {
    let start = samples.partition_point(|s| s.t < frame_t + lo);
    let end = start + samples[start..].partition_point(|s| s.t <= frame_t + hi);
    aggregate(samples, frame_t, lo, hi, start, end)
}

fn aggregate(
    samples: &[EyeSample],
    frame_t: f64,
    lo: f64,
    hi: f64,
    start: usize,
    end: usize,
) -> WindowAggregate<'_> {
    WindowAggregate {
        frame_t,
        lo,
        hi,
        samples: &samples[start..end],
        preceding: start.checked_sub(1).map(|i| &samples[i]),
    }
}

pub fn centered_window(samples: &[EyeSample], frame_t: f64, half_width_s: f64) -> WindowAggregate<'_> {
    window(samples, frame_t, -half_width_s, half_width_s)
}

pub fn delayed_window(samples: &[EyeSample], frame_t: f64, lo_s: f64, hi_s: f64) -> WindowAggregate<'_> {
    window(samples, frame_t, lo_s, hi_s)
}

/// Streams windows for a sorted sequence of frame times with two monotone
/// cursors, one pass over the samples in total.
pub fn windows_for_frames<'a>(
    samples: &'a [EyeSample],
    frame_times: &[f64],
    lo: f64,
    hi: f64,
) -> Vec<WindowAggregate<'a>> {
    let mut out = Vec::with_capacity(frame_times.len());
    let (mut start, mut end) = (0usize, 0usize);
    let mut last_t = f64::NEG_INFINITY;
    for &ft in frame_times {
        if ft < last_t {
            // Unsorted input: fall back to a fresh search for this frame.
            out.push(window(samples, ft, lo, hi));
            continue;
        }
        last_t = ft;
        while start < samples.len() && samples[start].t < ft + lo {
            start += 1;
        }
        end = end.max(start);
        while end < samples.len() && samples[end].t <= ft + hi {
            end += 1;
        }
        out.push(aggregate(samples, ft, lo, hi, start, end));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> EyeSample {
        EyeSample { t, gaze_x: 0.5, gaze_y: 0.5, confidence: 1.0, pupil_mm: 3.0 }
    }

    #[test]
    fn parses_three_rows_in_order() {
        let csv = "t,gaze_x,gaze_y,confidence,pupil_mm\n0.0,0.1,0.2,0.9,3.1\n0.01,0.1,0.2,0.8,\n0.02,0.1,0.2,1.0,3.3\n";
        let s = read_eye_stream(csv.as_bytes(), EyeFormat::Csv).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(s[1].pupil_mm.is_nan());
    }

    #[test]
    fn columns_in_any_order() {
        let csv = "pupil_mm,confidence,t,gaze_y,gaze_x\n3.0,0.5,1.5,0.2,0.1\n";
        let s = read_eye_stream(csv.as_bytes(), EyeFormat::Csv).unwrap();
        assert_eq!(s[0], EyeSample { t: 1.5, gaze_x: 0.1, gaze_y: 0.2, confidence: 0.5, pupil_mm: 3.0 });
    }

    #[test]
    fn out_of_range_confidence_reports_row() {
        let mut csv = String::from("t,gaze_x,gaze_y,confidence,pupil_mm\n");
        for i in 0..10 {
            let c = if i == 6 { 1.2 } else { 0.9 };
            csv.push_str(&format!("{},0.5,0.5,{},3.0\n", i as f64 * 0.01, c));
        }
        match read_eye_stream(csv.as_bytes(), EyeFormat::Csv) {
            Err(IngestError::OutOfRangeField { row, field, .. }) => {
                assert_eq!(row, 7);
                assert_eq!(field, "confidence");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "t,gaze_x,gaze_y,pupil_mm\n0,0,0,3\n";
        match read_eye_stream(csv.as_bytes(), EyeFormat::Csv) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "confidence"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream_rejected() {
        let csv = "t,gaze_x,gaze_y,confidence,pupil_mm\n";
        assert!(matches!(read_eye_stream(csv.as_bytes(), EyeFormat::Csv), Err(IngestError::EmptyStream)));
    }

    #[test]
    fn non_monotone_stream_rejected_but_rare_swaps_tolerated() {
        let mut csv = String::from("t,gaze_x,gaze_y,confidence,pupil_mm\n");
        for i in 0..100 {
            let t = if i % 2 == 0 { i as f64 } else { i as f64 - 1.5 };
            csv.push_str(&format!("{t},0.5,0.5,1,3\n"));
        }
        assert!(matches!(
            read_eye_stream(csv.as_bytes(), EyeFormat::Csv),
            Err(IngestError::NonMonotoneTimestamps { .. })
        ));

        let mut csv = String::from("t,gaze_x,gaze_y,confidence,pupil_mm\n");
        for i in 0..2000 {
            let t = if i == 500 { 498.5 } else { i as f64 };
            csv.push_str(&format!("{t},0.5,0.5,1,3\n"));
        }
        let s = read_eye_stream(csv.as_bytes(), EyeFormat::Csv).unwrap();
        assert!(s.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn stream_120hz_for_60s_has_7200_samples() {
        let mut csv = String::from("t,gaze_x,gaze_y,confidence,pupil_mm\n");
        for i in 0..7200 {
            csv.push_str(&format!("{},0.5,0.5,1,3\n", i as f64 / 120.0));
        }
        let s = read_eye_stream(csv.as_bytes(), EyeFormat::Csv).unwrap();
        assert_eq!(s.len(), 7200);
        assert_eq!(s[0].t, 0.0);
        assert!(s.last().unwrap().t < 60.0);
    }

    #[test]
    fn jsonl_null_pupil_and_missing_key() {
        let ok = "{\"t\":0.0,\"gaze_x\":0.1,\"gaze_y\":0.2,\"confidence\":1.0,\"pupil_mm\":null}\n";
        let s = read_eye_stream(ok.as_bytes(), EyeFormat::JsonLines).unwrap();
        assert!(s[0].pupil_mm.is_nan());
        let bad = "{\"t\":0.0,\"gaze_x\":0.1,\"confidence\":1.0,\"pupil_mm\":3}\n";
        assert!(matches!(
            read_eye_stream(bad.as_bytes(), EyeFormat::JsonLines),
            Err(IngestError::MissingColumn(c)) if c == "gaze_y"
        ));
    }

    const FRAMES_HEADER: &str = "frame_id,session_id,t,brightness,activity,scene,embedding_row\n";

    #[test]
    fn frames_grouped_and_sorted_per_session() {
        let mut csv = String::from(FRAMES_HEADER);
        for i in (0..5).rev() {
            csv.push_str(&format!("a{i},s1,{i}.5,0.4,walking,kitchen,{i}\n"));
            csv.push_str(&format!("b{i},s2,{i}.5,0.4,,,\n"));
        }
        let table = read_frames(csv.as_bytes(), &LabelDictionary::activity(), &LabelDictionary::scene()).unwrap();
        assert_eq!(table.len(), 2);
        for frames in table.values() {
            assert_eq!(frames.len(), 5);
            assert!(frames.windows(2).all(|w| w[0].t < w[1].t));
        }
        assert_eq!(table["s1"][0].activity, Some(0));
        assert!(table["s2"][0].is_unlabeled());
    }

    #[test]
    fn duplicate_frame_and_unknown_label() {
        let csv = format!("{FRAMES_HEADER}a,s,0,0.5,,,\na,s,1,0.5,,,\n");
        assert!(matches!(
            read_frames(csv.as_bytes(), &LabelDictionary::activity(), &LabelDictionary::scene()),
            Err(IngestError::DuplicateFrameId(id)) if id == "a"
        ));
        let csv = format!("{FRAMES_HEADER}a,s,0,0.5,juggling,,\n");
        assert!(matches!(
            read_frames(csv.as_bytes(), &LabelDictionary::activity(), &LabelDictionary::scene()),
            Err(IngestError::UnknownLabel { row: 1, .. })
        ));
    }

    #[test]
    fn embedding_roundtrip_and_errors() {
        let m = EmbeddingMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode_embeddings(&m, false);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(decode_embeddings(&bytes).unwrap(), m);
        assert_eq!(decode_embeddings(&encode_embeddings(&m, true)).unwrap(), m);

        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(decode_embeddings(short), Err(IngestError::TruncatedPayload { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embeddings(&bad), Err(IngestError::BadMagic)));

        let mut corrupt = encode_embeddings(&m, true);
        corrupt[20] ^= 0xff;
        assert!(matches!(decode_embeddings(&corrupt), Err(IngestError::ChecksumMismatch { .. })));
    }

    #[test]
    fn embedding_row_reference_checked() {
        let m = EmbeddingMatrix::new(2, 1, vec![1.0, f32::NAN]);
        let frame = |row| FrameRecord {
            frame_id: "f".into(),
            session_id: "s".into(),
            t: 0.0,
            brightness: 0.5,
            activity: None,
            scene: None,
            embedding_row: Some(row),
        };
        assert!(validate_embedding_refs(&[frame(0)], &m).is_ok());
        assert!(matches!(validate_embedding_refs(&[frame(2)], &m), Err(IngestError::DimMismatch { .. })));
        assert!(matches!(validate_embedding_refs(&[frame(1)], &m), Err(IngestError::NonFiniteRow { .. })));
    }

    #[test]
    fn centered_window_boundaries() {
        let ft = 10.0;
        let samples: Vec<_> = [-0.06, -0.04, 0.0, 0.04, 0.06].iter().map(|d| sample(ft + d)).collect();
        let w = centered_window(&samples, ft, CENTERED_HALF_WIDTH_S);
        assert_eq!(w.len(), 3);
        assert_eq!(w.preceding.map(|s| s.t), Some(ft - 0.06));
        let far = centered_window(&samples, 100.0, CENTERED_HALF_WIDTH_S);
        assert!(far.is_empty());
    }

    #[test]
    fn delayed_window_closed_bounds() {
        let ft = 0.0;
        let samples = vec![sample(0.2), sample(0.3), sample(1.5), sample(1.6)];
        let w = delayed_window(&samples, ft, DELAYED_LO_S, DELAYED_HI_S);
        let ts: Vec<f64> = w.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.3, 1.5]);
    }

    #[test]
    fn window_counts_at_120hz() {
        let samples: Vec<_> = (0..120 * 30).map(|i| sample(i as f64 / 120.0)).collect();
        for k in 2..25 {
            let ft = k as f64 + 0.37;
            let c = centered_window(&samples, ft, CENTERED_HALF_WIDTH_S).len();
            assert!(c == 12 || c == 13, "centered count {c}");
            let d = delayed_window(&samples, ft, DELAYED_LO_S, DELAYED_HI_S).len();
            assert!(d == 144 || d == 145, "delayed count {d}");
        }
    }
}
