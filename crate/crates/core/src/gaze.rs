//! Gaze quality: soft fixation state times tracker confidence.
//!
//! Velocities are computed between consecutive distinct timestamps. Samples
//! that share a timestamp are pooled (mean position) so that their order in
//! the stream never matters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EyeSample, WindowAggregate};
use crate::numeric::sorted_sum;

pub const DEFAULT_VELOCITY_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RAMP_S: f64 = 0.150;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GazeError {
    #[error("window has {0} samples; velocities need at least 2")]
    TooFewSamples(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeParams {
    /// Normalized screen units per second.
    pub v_thresh: f64,
    pub ramp_s: f64,
}

impl Default for GazeParams {
    fn default() -> Self {
        GazeParams { v_thresh: DEFAULT_VELOCITY_THRESHOLD, ramp_s: DEFAULT_RAMP_S }
    }
}

/// Per-frame quality decomposition. `g == f * c` always holds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeQuality {
    pub g: f64,
    pub f: f64,
    pub c: f64,
    pub low_vel_fraction: f64,
    pub low_vel_duration_s: f64,
    /// Fewer than two samples in the window.
    pub dropout: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fixation {
    pub f: f64,
    pub fraction: f64,
    pub duration_s: f64,
}

/// One run of equal timestamps.
struct Group {
    t: f64,
    x: f64,
    y: f64,
    count: usize,
}

fn group_of(samples: &[EyeSample]) -> Group {
    let mut xs: Vec<f64> = samples.iter().map(|s| s.gaze_x).collect();
    let mut ys: Vec<f64> = samples.iter().map(|s| s.gaze_y).collect();
    let finite = xs.iter().zip(&ys).all(|(x, y)| x.is_finite() && y.is_finite());
    let (x, y) = if finite {
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n)
    } else {
        (f64::NAN, f64::NAN)
    };
    Group { t: samples[0].t, x, y, count: samples.len() }
}

fn groups(samples: &[EyeSample]) -> Vec<Group> {
    samples.chunk_by(|a, b| a.t == b.t).map(group_of).collect()
}

/// Per-group velocity and the share of the step that lies inside the window.
struct Step {
    velocity: Option<f64>,
    dt_in_window: f64,
    count: usize,
}

fn steps(window: &WindowAggregate<'_>) -> Vec<Step> {
    let gs = groups(window.samples);
    let window_start = window.frame_t + window.lo;
    let mut prev = window.preceding.map(|p| group_of(std::slice::from_ref(p)));
    let mut out = Vec::with_capacity(gs.len());
    for g in gs {
        let step = match &prev {
            Some(p) if g.t > p.t => {
                let dt = g.t - p.t;
                let dist = ((g.x - p.x).powi(2) + (g.y - p.y).powi(2)).sqrt();
                let velocity = dist.is_finite().then(|| dist / dt);
                Step { velocity, dt_in_window: g.t - p.t.max(window_start), count: g.count }
            }
            _ => Step { velocity: None, dt_in_window: 0.0, count: g.count },
        };
        out.push(step);
        prev = Some(g);
    }
    out
}

/// Velocity of each in-window sample relative to the previous timestamp,
/// assigned to the later sample. The first sample uses the last sample before
/// the window when there is one.
pub fn gaze_velocity(window: &WindowAggregate<'_>) -> Result<Vec<Option<f64>>, GazeError> {
    if window.len() < 2 {
        return Err(GazeError::TooFewSamples(window.len()));
    }
    Ok(steps(window)
        .into_iter()
        .flat_map(|s| std::iter::repeat_n(s.velocity, s.count))
        .collect())
}

pub fn fixation_indicator(window: &WindowAggregate<'_>, params: &GazeParams) -> Fixation {
    let zero = Fixation { f: 0.0, fraction: 0.0, duration_s: 0.0 };
    if window.len() < 2 {
        return zero;
    }
    let (mut defined, mut low) = (0usize, 0usize);
    let mut durations = Vec::new();
    for s in steps(window) {
        if let Some(v) = s.velocity {
            defined += s.count;
            if v < params.v_thresh {
                low += s.count;
                durations.push(s.dt_in_window);
            }
        }
    }
    if defined == 0 {
        return zero;
    }
    let fraction = low as f64 / defined as f64;
    let duration_s = sorted_sum(&durations);
    let f = fraction * (duration_s / params.ramp_s).min(1.0);
    Fixation { f, fraction, duration_s }
}

pub fn gaze_quality(window: &WindowAggregate<'_>, params: &GazeParams) -> GazeQuality {
    let conf: Vec<f64> = window.samples.iter().map(|s| s.confidence).collect();
    let c = if conf.is_empty() { 0.0 } else { sorted_sum(&conf) / conf.len() as f64 };
    let fix = fixation_indicator(window, params);
    GazeQuality {
        g: fix.f * c,
        f: fix.f,
        c,
        low_vel_fraction: fix.fraction,
        low_vel_duration_s: fix.duration_s,
        dropout: window.len() < 2,
    }
}
