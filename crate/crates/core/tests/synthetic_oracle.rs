//! Generator-level checks against the ground truth it records.

use eyecurate_core::experiment::in_sample_f1;
use eyecurate_core::probe::ProbeConfig;
use eyecurate_core::synth::{generate_dataset, SynthConfig, SyntheticDataset, EXPOSURE_HALF_S};
use eyecurate_core::{score_session, FrameTable, ScoringConfig, Task};

fn overlaps(intervals: &[(f64, f64)], lo: f64, hi: f64) -> bool {
    intervals.iter().any(|&(a, b)| a <= hi && b >= lo)
}

fn inside(intervals: &[(f64, f64)], lo: f64, hi: f64) -> bool {
    intervals.iter().any(|&(a, b)| a <= lo && b >= hi)
}

fn dataset(cfg: SynthConfig) -> SyntheticDataset {
    generate_dataset(&cfg).unwrap()
}

#[test]
fn fixation_frames_outscore_saccade_and_blink_frames() {
    let cfg = SynthConfig { n_sessions: 6, blink_rate: 15.0, ..SynthConfig::golden().noiseless() };
    let scoring = ScoringConfig::default();
    let hw = scoring.half_width_s;
    let (mut fix, mut other) = (Vec::new(), Vec::new());
    for s in &dataset(cfg).sessions {
        let table = score_session(&s.bundle, &scoring);
        for (f, row) in s.bundle.frames.iter().zip(&table.rows) {
            let (lo, hi) = (f.t - EXPOSURE_HALF_S, f.t + EXPOSURE_HALF_S);
            if overlaps(&s.truth.saccades, lo, hi) || overlaps(&s.truth.blinks, lo, hi) {
                other.push(row.g);
            } else if inside(&s.truth.fixations, f.t - hw, f.t + hw) {
                fix.push(row.g);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!fix.is_empty() && !other.is_empty());
    let (mf, mo) = (mean(&fix), mean(&other));
    assert!(mf >= 3.0 * mo, "fixation mean g {mf} vs saccade/blink {mo}");
}

#[test]
fn delayed_pupil_peaks_follow_transitions() {
    let scoring = ScoringConfig::default();
    let (mut hits, mut total) = (0, 0);
    for s in &dataset(SynthConfig { n_sessions: 12, ..SynthConfig::golden() }).sessions {
        let table = score_session(&s.bundle, &scoring);
        for &tr in &s.truth.transitions {
            let best = table
                .rows
                .iter()
                .filter(|r| (r.t - tr).abs() <= 2.0)
                .max_by(|a, b| a.nov_delayed.total_cmp(&b.nov_delayed));
            if let Some(r) = best {
                total += 1;
                if r.t >= tr && r.t <= tr + 2.0 {
                    hits += 1;
                }
            }
        }
    }
    let share = hits as f64 / total as f64;
    assert!(share >= 0.9, "{hits} of {total} transitions aligned ({share:.3})");
}

/// Frames whose exposure is free of blinks, disturbances and saccades.
fn clean_frames(ds: &SyntheticDataset) -> FrameTable {
    ds.sessions
        .iter()
        .map(|s| {
            let spoiled = |t: f64| {
                let (lo, hi) = (t - EXPOSURE_HALF_S, t + EXPOSURE_HALF_S);
                [&s.truth.blinks, &s.truth.disturbances, &s.truth.saccades].iter().any(|iv| overlaps(iv, lo, hi))
            };
            let kept = s.bundle.frames.iter().filter(|f| !spoiled(f.t)).cloned().collect();
            (s.bundle.session_id.clone(), kept)
        })
        .collect()
}

#[test]
fn scene_labels_are_recoverable_from_clean_frames() {
    let ds = dataset(SynthConfig::golden());
    let f1 = in_sample_f1(Task::Scene, &clean_frames(&ds), &ds.embedding_matrix(), &ProbeConfig::default()).unwrap();
    assert!(f1 >= 0.9, "scene in-sample macro F1 {f1}");
}

#[test]
fn activity_labels_are_recoverable_after_transitions() {
    let ds = dataset(SynthConfig::golden());
    let horizon = ds.config.informative_horizon_s;
    let mut frames = clean_frames(&ds);
    for s in &ds.sessions {
        let informative = |t: f64| s.truth.transitions.iter().any(|&tr| t >= tr && t - tr <= horizon);
        frames.get_mut(&s.bundle.session_id).unwrap().retain(|f| informative(f.t));
    }
    let f1 = in_sample_f1(Task::Activity, &frames, &ds.embedding_matrix(), &ProbeConfig::default()).unwrap();
    assert!(f1 >= 0.9, "activity in-sample macro F1 after transitions {f1}");
}
