//! Shared fixtures for the benchmarks.

use eyecurate_core::probe::Matrix;
use eyecurate_core::synth::{generate_session, SynthConfig};
use eyecurate_core::{score_session, ScoreRow, ScoringConfig, SessionBundle, Task};

/// One golden-preset session.
pub fn session() -> SessionBundle {
    generate_session(&SynthConfig::golden(), 0).bundle
}

/// Score rows of `n` golden-preset sessions.
pub fn score_rows(n: usize) -> Vec<ScoreRow> {
    let cfg = SynthConfig::golden();
    let scoring = ScoringConfig::default();
    (0..n).flat_map(|i| score_session(&generate_session(&cfg, i).bundle, &scoring).rows).collect()
}

/// Embedding rows and activity labels of four sessions, unlabeled frames dropped.
pub fn probe_problem() -> (Matrix, Vec<usize>) {
    let cfg = SynthConfig::golden();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..4 {
        let s = generate_session(&cfg, i);
        for (j, f) in s.bundle.frames.iter().enumerate() {
            if let Some(y) = f.label(Task::Activity) {
                data.extend(s.embeddings[j * cfg.embed_dim..(j + 1) * cfg.embed_dim].iter().map(|&v| v as f64));
                labels.push(y);
            }
        }
    }
    (Matrix::new(labels.len(), cfg.embed_dim, data), labels)
}
