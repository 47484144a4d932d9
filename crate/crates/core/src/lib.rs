//! Capture-time frame curation from eye-tracker side channels.
//!
//! Frames are scored by gaze stability (quality) and cleaned pupil response
//! (novelty), selected under a data budget by one of six strategies, and
//! evaluated with a linear probe and a statistics harness. A synthetic
//! generator provides ground truth for end-to-end checks.

pub mod experiment;
pub mod gaze;
pub mod ingest;
pub mod numeric;
pub mod probe;
pub mod pupil;
pub mod scoring;
pub mod seeding;
pub mod select;
pub mod stats;
pub mod synth;

pub use gaze::{gaze_quality, GazeParams, GazeQuality};
pub use ingest::{EmbeddingMatrix, EyeSample, FrameRecord, FrameTable, LabelDictionary, Task, WindowAggregate};
pub use pupil::{PupilParams, PupilSeries, PupilVariant, ScaleUsed};
pub use scoring::{score_session, FrameFlags, ScoreRow, ScoreTable, ScoringConfig, SessionBundle, SessionReport};
pub use select::{select, SelectionManifest, StrategyKind, StrategySpec};
