//! Per-session frame scoring: gaze quality on the centered window and both
//! pupil variants, collected into a `ScoreTable`.

use std::io::{self, BufWriter, Read, Write};

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::gaze::{gaze_quality, GazeParams};
use crate::ingest::{
    windows_for_frames, EyeSample, FrameRecord, IngestError, CENTERED_HALF_WIDTH_S, DELAYED_HI_S, DELAYED_LO_S,
};
use crate::pupil::{clean_pupil, frame_pupil, PupilParams, PupilSeries, PupilVariant, ScaleUsed};

bitflags! {
    /// Per-frame quality flags.
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
    pub struct FrameFlags: u16 {
        /// Fewer than two samples in the centered window; g forced to 0.
        const DROPOUT = 1;
        /// No samples at all in the centered window.
        const CENTERED_EMPTY = 1 << 1;
        const NO_PUPIL_CENTERED = 1 << 2;
        const NO_PUPIL_DELAYED = 1 << 3;
        const DELAYED_EMPTY = 1 << 4;
    }
}

const FLAG_NAMES: [(FrameFlags, &str); 5] = [
    (FrameFlags::DROPOUT, "dropout"),
    (FrameFlags::CENTERED_EMPTY, "centered_empty"),
    (FrameFlags::NO_PUPIL_CENTERED, "no_pupil_centered"),
    (FrameFlags::NO_PUPIL_DELAYED, "no_pupil_delayed"),
    (FrameFlags::DELAYED_EMPTY, "delayed_empty"),
];

impl FrameFlags {
    pub fn to_field(self) -> String {
        FLAG_NAMES
            .iter()
            .filter(|(f, _)| self.contains(*f))
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn from_field(s: &str) -> Option<Self> {
        let mut out = FrameFlags::empty();
        for part in s.split('|').map(str::trim).filter(|p| !p.is_empty()) {
            out |= FLAG_NAMES.iter().find(|(_, n)| *n == part)?.0;
        }
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub half_width_s: f64,
    pub delayed_lo_s: f64,
    pub delayed_hi_s: f64,
    pub gaze: GazeParams,
    pub pupil: PupilParams,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            half_width_s: CENTERED_HALF_WIDTH_S,
            delayed_lo_s: DELAYED_LO_S,
            delayed_hi_s: DELAYED_HI_S,
            gaze: GazeParams::default(),
            pupil: PupilParams::default(),
        }
    }
}

/// Everything needed to score one recording session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionBundle {
    pub session_id: String,
    /// Sorted by time.
    pub frames: Vec<FrameRecord>,
    /// Sorted by time.
    pub samples: Vec<EyeSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub frame_id: String,
    pub session_id: String,
    pub t: f64,
    pub g: f64,
    pub f: f64,
    pub c: f64,
    pub p_centered: f64,
    pub p_delayed: f64,
    pub nov_centered: f64,
    pub nov_delayed: f64,
    pub deriv: f64,
    pub flags: FrameFlags,
}

impl ScoreRow {
    pub fn novelty(&self, variant: PupilVariant) -> f64 {
        match variant {
            PupilVariant::Centered => self.nov_centered,
            PupilVariant::Delayed => self.nov_delayed,
        }
    }
}

/// Session-level QC and fit diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub n_frames: usize,
    pub n_samples: usize,
    pub dropout_frames: usize,
    pub dropout_rate: f64,
    pub pupil_valid_centered: usize,
    pub pupil_valid_delayed: usize,
    pub luminance_coeffs_centered: Vec<f64>,
    pub luminance_coeffs_delayed: Vec<f64>,
    pub luminance_fallback_centered: bool,
    pub luminance_fallback_delayed: bool,
    pub scale_centered: ScaleUsed,
    pub scale_delayed: ScaleUsed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub report: SessionReport,
}

impl AsRef<[ScoreRow]> for ScoreTable {
    fn as_ref(&self) -> &[ScoreRow] {
        &self.rows
    }
}

/// Raw per-frame pupil for one variant. Frames whose centered window is empty
/// are excluded (NaN) from both variants.
pub fn raw_frame_pupil(bundle: &SessionBundle, cfg: &ScoringConfig, variant: PupilVariant) -> Vec<f64> {
    let times: Vec<f64> = bundle.frames.iter().map(|f| f.t).collect();
    let centered = windows_for_frames(&bundle.samples, &times, -cfg.half_width_s, cfg.half_width_s);
    match variant {
        PupilVariant::Centered => centered.iter().map(frame_pupil).collect(),
        PupilVariant::Delayed => {
            let delayed = windows_for_frames(&bundle.samples, &times, cfg.delayed_lo_s, cfg.delayed_hi_s);
            centered
                .iter()
                .zip(&delayed)
                .map(|(c, d)| if c.is_empty() { f64::NAN } else { frame_pupil(d) })
                .collect()
        }
    }
}

/// Cleaned pupil signal for one variant.
pub fn score_pupil(bundle: &SessionBundle, cfg: &ScoringConfig, variant: PupilVariant) -> PupilSeries {
    let raw = raw_frame_pupil(bundle, cfg, variant);
    let brightness: Vec<f64> = bundle.frames.iter().map(|f| f.brightness).collect();
    let times: Vec<f64> = bundle.frames.iter().map(|f| f.t).collect();
    clean_pupil(&raw, &brightness, &times, &cfg.pupil)
}

/// Scores every frame of a session: gaze quality plus both pupil variants.
/// The derivative column is taken from the centered variant.
pub fn score_session(bundle: &SessionBundle, cfg: &ScoringConfig) -> ScoreTable {
    let times: Vec<f64> = bundle.frames.iter().map(|f| f.t).collect();
    let centered = windows_for_frames(&bundle.samples, &times, -cfg.half_width_s, cfg.half_width_s);
    let delayed = windows_for_frames(&bundle.samples, &times, cfg.delayed_lo_s, cfg.delayed_hi_s);
    let pc = score_pupil(bundle, cfg, PupilVariant::Centered);
    let pd = score_pupil(bundle, cfg, PupilVariant::Delayed);

    let mut rows = Vec::with_capacity(bundle.frames.len());
    let mut dropout_frames = 0;
    for (i, frame) in bundle.frames.iter().enumerate() {
        let q = gaze_quality(&centered[i], &cfg.gaze);
        let mut flags = FrameFlags::empty();
        if q.dropout {
            flags |= FrameFlags::DROPOUT;
            dropout_frames += 1;
        }
        if centered[i].is_empty() {
            flags |= FrameFlags::CENTERED_EMPTY;
        }
        if delayed[i].is_empty() {
            flags |= FrameFlags::DELAYED_EMPTY;
        }
        if pc.novelty_missing[i] {
            flags |= FrameFlags::NO_PUPIL_CENTERED;
        }
        if pd.novelty_missing[i] {
            flags |= FrameFlags::NO_PUPIL_DELAYED;
        }
        rows.push(ScoreRow {
            frame_id: frame.frame_id.clone(),
            session_id: bundle.session_id.clone(),
            t: frame.t,
            g: q.g,
            f: q.f,
            c: q.c,
            p_centered: pc.cleaned[i],
            p_delayed: pd.cleaned[i],
            nov_centered: pc.novelty[i],
            nov_delayed: pd.novelty[i],
            deriv: pc.deriv[i],
            flags,
        });
    }
    let n = bundle.frames.len();
    let report = SessionReport {
        session_id: bundle.session_id.clone(),
        n_frames: n,
        n_samples: bundle.samples.len(),
        dropout_frames,
        dropout_rate: if n == 0 { 0.0 } else { dropout_frames as f64 / n as f64 },
        pupil_valid_centered: pc.luminance.valid_points,
        pupil_valid_delayed: pd.luminance.valid_points,
        luminance_coeffs_centered: pc.luminance.coefficients.clone(),
        luminance_coeffs_delayed: pd.luminance.coefficients.clone(),
        luminance_fallback_centered: pc.luminance.fallback,
        luminance_fallback_delayed: pd.luminance.fallback,
        scale_centered: pc.scale_used,
        scale_delayed: pd.scale_used,
    };
    ScoreTable { rows, report }
}

pub const SCORE_COLUMNS: [&str; 12] = [
    "frame_id",
    "session_id",
    "t",
    "g",
    "f",
    "c",
    "p_centered",
    "p_delayed",
    "nov_centered",
    "nov_delayed",
    "deriv",
    "flags",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes score rows as CSV. `header_comment`, when given, becomes a leading
/// `# ...` line.
pub fn write_scores<W: Write>(writer: W, rows: &[ScoreRow], header_comment: Option<&str>) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", SCORE_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame_id,
            r.session_id,
            r.t,
            num(r.g),
            num(r.f),
            num(r.c),
            num(r.p_centered),
            num(r.p_delayed),
            num(r.nov_centered),
            num(r.nov_delayed),
            num(r.deriv),
            r.flags.to_field()
        )?;
    }
    w.flush()
}

pub fn read_scores<R: Read>(reader: R) -> Result<Vec<ScoreRow>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 12];
    for (slot, name) in idx.iter_mut().zip(SCORE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let f = |k: usize, field: &'static str| -> Result<f64, IngestError> {
            match get(k) {
                "" => Ok(f64::NAN),
                s => s.parse().map_err(|_| IngestError::UnparsableField { row, field, value: s.to_string() }),
            }
        };
        rows.push(ScoreRow {
            frame_id: get(0).to_string(),
            session_id: get(1).to_string(),
            t: f(2, "t")?,
            g: f(3, "g")?,
            f: f(4, "f")?,
            c: f(5, "c")?,
            p_centered: f(6, "p_centered")?,
            p_delayed: f(7, "p_delayed")?,
            nov_centered: f(8, "nov_centered")?,
            nov_delayed: f(9, "nov_delayed")?,
            deriv: f(10, "deriv")?,
            flags: FrameFlags::from_field(get(11)).ok_or_else(|| IngestError::UnparsableField {
                row,
                field: "flags",
                value: get(11).to_string(),
            })?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, brightness: impl Fn(usize) -> f64) -> Vec<FrameRecord> {
        (0..n)
            .map(|i| FrameRecord {
                frame_id: format!("f{i:04}"),
                session_id: "s".into(),
                t: i as f64 + 0.5,
                brightness: brightness(i),
                activity: None,
                scene: None,
                embedding_row: None,
            })
            .collect()
    }

    fn stream(len_s: f64, pupil: impl Fn(f64) -> f64) -> Vec<EyeSample> {
        (0..(len_s * 120.0) as usize)
            .map(|i| {
                let t = i as f64 / 120.0;
                EyeSample { t, gaze_x: 0.5, gaze_y: 0.5, confidence: 0.95, pupil_mm: pupil(t) }
            })
            .collect()
    }

    fn brightness_at(i: usize) -> f64 {
        0.2 + 0.6 * (((i * 7919) % 97) as f64 / 96.0)
    }

    #[test]
    fn pupil_fully_explained_by_brightness_has_no_novelty() {
        let fr = frames(60, brightness_at);
        // Pupil is constant within each frame's windows and a quadratic in its brightness.
        let lookup = fr.iter().map(|f| f.brightness).collect::<Vec<_>>();
        let samples = stream(62.0, |t| {
            let i = (t.floor() as usize).min(59);
            let b = lookup[i];
            6.0 - 3.0 * b + 0.5 * b * b
        });
        let bundle = SessionBundle { session_id: "s".into(), frames: fr, samples };
        let table = score_session(&bundle, &ScoringConfig::default());
        assert!(table.rows.iter().all(|r| r.nov_centered.abs() < 1e-6), "{:?}", &table.rows[..3]);
        assert_eq!(table.report.scale_centered, ScaleUsed::Degenerate);
    }

    #[test]
    fn short_session_uses_fallback() {
        let fr = frames(3, |_| 0.5);
        let samples = stream(4.0, |t| 3.0 + t);
        let bundle = SessionBundle { session_id: "s".into(), frames: fr, samples };
        let table = score_session(&bundle, &ScoringConfig::default());
        assert!(table.report.luminance_fallback_centered);
        assert_eq!(table.rows.len(), 3);
    }

    #[test]
    fn empty_session_does_not_panic() {
        let bundle = SessionBundle { session_id: "s".into(), frames: frames(5, |_| 0.5), samples: vec![] };
        let table = score_session(&bundle, &ScoringConfig::default());
        assert!(table.rows.iter().all(|r| r.g == 0.0 && r.flags.contains(FrameFlags::DROPOUT)));
        assert_eq!(table.report.dropout_rate, 1.0);
    }

    #[test]
    fn csv_roundtrip() {
        let fr = frames(30, brightness_at);
        let samples = stream(31.0, |t| 3.0 + 0.2 * (t * 0.7).sin());
        let bundle = SessionBundle { session_id: "s".into(), frames: fr, samples };
        let table = score_session(&bundle, &ScoringConfig::default());
        let mut buf = Vec::new();
        write_scores(&mut buf, &table.rows, Some("test")).unwrap();
        let back = read_scores(buf.as_slice()).unwrap();
        assert_eq!(back.len(), table.rows.len());
        for (a, b) in back.iter().zip(&table.rows) {
            assert_eq!(a.frame_id, b.frame_id);
            assert_eq!(a.g.to_bits(), b.g.to_bits());
            assert_eq!(a.nov_delayed.to_bits(), b.nov_delayed.to_bits());
            assert_eq!(a.flags, b.flags);
        }
    }

    #[test]
    fn flags_field_roundtrip() {
        let f = FrameFlags::DROPOUT | FrameFlags::NO_PUPIL_DELAYED;
        assert_eq!(f.to_field(), "dropout|no_pupil_delayed");
        assert_eq!(FrameFlags::from_field(&f.to_field()), Some(f));
        assert_eq!(FrameFlags::from_field(""), Some(FrameFlags::empty()));
        assert_eq!(FrameFlags::from_field("bogus"), None);
    }
}
