//! Synthetic multi-session recordings with known ground truth.
//!
//! Each session alternates calm and active bouts. Scene transitions switch
//! the embedding cluster and the brightness level, force a saccade and
//! trigger a pupil bump after a fixed latency. Active bouts carry more
//! transitions, more pupil arousal noise and more embedding jitter.
//! Tracking disturbances (head motion) produce rapid gaze, low confidence,
//! corrupted pupil readings and blurred embeddings. Frames within a short
//! horizon after a transition carry an extra activity-specific embedding
//! offset, which makes them the most informative frames for the activity
//! task.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    encode_embeddings, write_eye_stream, write_frames, EmbeddingMatrix, EyeFormat, EyeSample, FrameRecord, FrameTable,
    LabelDictionary, ACTIVITY_CLASSES, SCENE_CLASSES,
};
use crate::scoring::SessionBundle;
use crate::seeding::{child_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    NotEmpty(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub session_length_s: f64,
    pub eye_rate_hz: f64,
    pub n_activity_classes: usize,
    pub n_scene_classes: usize,
    pub embed_dim: usize,
    /// Scene transitions per minute during calm bouts.
    pub transition_rate: f64,
    /// Multiplier on transition, disturbance and saccade rates in active bouts.
    pub active_rate_factor: f64,
    pub min_transition_gap_s: f64,
    pub mean_bout_s: f64,
    /// Delay from a transition to the onset of its pupil bump.
    pub pupil_latency_s: f64,
    /// Full width at half maximum of each pupil bump.
    pub pupil_event_width_s: f64,
    /// Bump amplitude range in mm.
    pub pupil_event_mm: (f64, f64),
    pub pupil_base_mm: f64,
    /// mm of constriction per unit brightness.
    pub light_gain_mm: f64,
    pub pupil_drift_mm: f64,
    /// Stationary sd of the slow arousal component in calm bouts (mm).
    pub pupil_noise: f64,
    pub pupil_noise_active_factor: f64,
    pub pupil_measurement_noise: f64,
    pub gaze_jitter: f64,
    pub mean_fixation_s: f64,
    /// Mean fixation length while exploring a new scene, for
    /// `informative_horizon_s` after each transition.
    pub exploration_fixation_s: f64,
    pub saccade_s: f64,
    pub blink_rate: f64,
    /// Disturbance episodes per minute during calm bouts.
    pub disturbance_rate: f64,
    pub disturbance_s: (f64, f64),
    pub disturbance_pupil_mm: (f64, f64),
    pub scene_scale: f64,
    pub env_scale: f64,
    pub activity_scale: f64,
    /// Extra activity offset for frames shortly after a transition.
    pub informative_scale: f64,
    pub informative_horizon_s: f64,
    pub embedding_noise: f64,
    pub embedding_noise_active_factor: f64,
    /// Extra embedding noise for frames exposed during a saccade.
    pub blur_noise: f64,
    /// Scale of the shared motion-artifact vector that replaces scene and
    /// activity content in frames exposed during a blink or disturbance.
    pub junk_scale: f64,
    /// Overrides the random transition process when set (same times for every session).
    pub fixed_transitions: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sessions: 36,
            session_length_s: 300.0,
            eye_rate_hz: 120.0,
            n_activity_classes: 6,
            n_scene_classes: 8,
            embed_dim: 32,
            transition_rate: 4.0,
            active_rate_factor: 2.5,
            min_transition_gap_s: 4.0,
            mean_bout_s: 40.0,
            pupil_latency_s: 0.8,
            pupil_event_width_s: 1.5,
            pupil_event_mm: (0.4, 0.7),
            pupil_base_mm: 4.0,
            light_gain_mm: 0.8,
            pupil_drift_mm: 0.3,
            pupil_noise: 0.04,
            pupil_noise_active_factor: 2.0,
            pupil_measurement_noise: 0.02,
            gaze_jitter: 0.0006,
            mean_fixation_s: 0.8,
            exploration_fixation_s: 0.25,
            saccade_s: 0.04,
            blink_rate: 15.0,
            disturbance_rate: 2.5,
            disturbance_s: (2.0, 4.0),
            disturbance_pupil_mm: (0.8, 1.5),
            scene_scale: 1.5,
            env_scale: 1.0,
            activity_scale: 0.2,
            informative_scale: 3.0,
            informative_horizon_s: 2.0,
            embedding_noise: 1.0,
            embedding_noise_active_factor: 1.5,
            blur_noise: 1.0,
            junk_scale: 1.5,
            fixed_transitions: None,
            seed: 20_240_917,
        }
    }
}

impl SynthConfig {
    /// The fixed-seed dataset used by regression and acceptance tests.
    pub fn golden() -> Self {
        SynthConfig::default()
    }

    /// Session count, session length and label cardinalities shaped like a
    /// large real-world egocentric corpus.
    pub fn vedb_shape() -> Self {
        SynthConfig {
            n_sessions: 119,
            session_length_s: 1300.0,
            n_activity_classes: 12,
            n_scene_classes: 16,
            ..SynthConfig::default()
        }
    }

    /// No stochastic component anywhere: noise, blinks and disturbances off.
    pub fn noiseless(mut self) -> Self {
        self.pupil_noise = 0.0;
        self.pupil_measurement_noise = 0.0;
        self.pupil_drift_mm = 0.0;
        self.gaze_jitter = 0.0;
        self.blink_rate = 0.0;
        self.disturbance_rate = 0.0;
        self.embedding_noise = 0.0;
        self.blur_noise = 0.0;
        self.env_scale = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_sessions == 0 || self.session_length_s < 10.0 {
            return bad("need at least one session of at least 10 s");
        }
        if self.eye_rate_hz <= 0.0 || self.embed_dim == 0 {
            return bad("eye_rate_hz and embed_dim must be positive");
        }
        if self.n_activity_classes < 2 || self.n_activity_classes > ACTIVITY_CLASSES.len() {
            return bad("n_activity_classes must be in 2..=12");
        }
        if self.n_scene_classes < 2 || self.n_scene_classes > SCENE_CLASSES.len() {
            return bad("n_scene_classes must be in 2..=16");
        }
        if !(0.3..=1.5).contains(&self.pupil_latency_s) {
            return bad("pupil_latency_s must lie in [0.3, 1.5]");
        }
        let rates = [
            self.transition_rate,
            self.active_rate_factor,
            self.blink_rate,
            self.disturbance_rate,
            self.mean_fixation_s,
            self.mean_bout_s,
        ];
        let positive = [self.mean_fixation_s, self.exploration_fixation_s, self.mean_bout_s];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || positive.iter().any(|&r| r <= 0.0) {
            return bad("rates must be finite and non-negative");
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn n_frames(&self) -> usize {
        self.session_length_s.floor() as usize
    }
}

/// Known structure of one generated session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub activity: usize,
    pub fixations: Vec<(f64, f64)>,
    pub saccades: Vec<(f64, f64)>,
    /// Blink cores (pupil missing).
    pub blinks: Vec<(f64, f64)>,
    pub disturbances: Vec<(f64, f64)>,
    pub active_bouts: Vec<(f64, f64)>,
    pub transitions: Vec<f64>,
    /// Onset times of the injected pupil bumps.
    pub pupil_events: Vec<f64>,
    /// Scene class per frame.
    pub frame_scene: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSession {
    pub bundle: SessionBundle,
    pub truth: GroundTruth,
    /// n_frames x embed_dim, row-major.
    pub embeddings: Vec<f32>,
}

/// Class and environment vectors shared by every session of a dataset.
struct Prototypes {
    scene: Vec<Vec<f64>>,
    activity: Vec<Vec<f64>>,
    motion: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl Prototypes {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "prototypes", 0));
        let scene = (0..cfg.n_scene_classes).map(|_| gaussian_vec(&mut rng, cfg.embed_dim, 1.0)).collect();
        let activity = (0..cfg.n_activity_classes).map(|_| gaussian_vec(&mut rng, cfg.embed_dim, 1.0)).collect();
        let motion = gaussian_vec(&mut rng, cfg.embed_dim, 1.0);
        Prototypes { scene, activity, motion }
    }
}

pub fn session_id(index: usize) -> String {
    format!("s{index:03}")
}

fn round_to(x: f64, unit: f64) -> f64 {
    (x / unit).round() * unit
}

/// Snap to a decimal grid so the value prints compactly and parses back exactly.
fn snap(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    let v = (x * p).round() / p;
    format!("{v:.*}", decimals as usize).parse().expect("formatted float parses")
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn in_any(t: f64, intervals: &[(f64, f64)]) -> bool {
    intervals.iter().any(|&(s, e)| t >= s && t < e)
}

/// Half-width of a frame's exposure; saccades or blinks overlapping it spoil the frame.
pub const EXPOSURE_HALF_S: f64 = 0.02;

/// Full width at half maximum of `bump` in units of its peak time.
const BUMP_FWHM_PER_PEAK: f64 = 1.697_340_335;

/// Gamma-like bump with unit peak at `peak_s`.
fn bump(tau: f64, peak_s: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let r = tau / peak_s;
    r * r * (2.0 * (1.0 - r)).exp()
}

struct Bouts(Vec<(f64, f64)>);

impl Bouts {
    fn active(&self, t: f64) -> bool {
        in_any(t, &self.0)
    }
}

/// Poisson arrivals with a bout-dependent rate (per minute), thinned from the
/// active-bout maximum.
fn arrivals(rng: &mut ChaCha8Rng, len: f64, rate_per_min: f64, active_factor: f64, bouts: &Bouts) -> Vec<f64> {
    let max_rate = rate_per_min * active_factor.max(1.0) / 60.0;
    if max_rate <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(max_rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= len {
            break;
        }
        let rate = rate_per_min / 60.0 * if bouts.active(t) { active_factor } else { 1.0 };
        if rng.random::<f64>() * max_rate < rate {
            out.push(t);
        }
    }
    out
}

#[derive(Clone, Copy)]
enum GazeSeg {
    Fix { x: f64, y: f64 },
    Sacc { x0: f64, y0: f64, x1: f64, y1: f64 },
}

pub fn generate_session(cfg: &SynthConfig, index: usize) -> SyntheticSession {
    generate_with(cfg, &Prototypes::new(cfg), index)
}

fn generate_with(cfg: &SynthConfig, protos: &Prototypes, index: usize) -> SyntheticSession {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "session", index as u64));
    let len = cfg.session_length_s;
    let id = session_id(index);
    let activity = index % cfg.n_activity_classes;

    // Calm/active bouts.
    let bout_exp = Exp::new(1.0 / cfg.mean_bout_s).expect("positive bout length");
    let mut active_bouts = Vec::new();
    let mut t = 0.0;
    let mut active = rng.random::<bool>();
    while t < len {
        let end = (t + bout_exp.sample(&mut rng).max(5.0)).min(len);
        if active {
            active_bouts.push((t, end));
        }
        active = !active;
        t = end;
    }
    let bouts = Bouts(active_bouts);

    // Scene transitions with a refractory gap.
    let transitions: Vec<f64> = match &cfg.fixed_transitions {
        Some(fixed) => fixed.iter().copied().filter(|&t| t > 0.0 && t < len).collect(),
        None => {
            let mut out: Vec<f64> = Vec::new();
            for t in arrivals(&mut rng, len - 3.0, cfg.transition_rate, cfg.active_rate_factor, &bouts) {
                if t >= 2.0 && out.last().is_none_or(|&p| t - p >= cfg.min_transition_gap_s) {
                    out.push(round_to(t, 1e-3));
                }
            }
            out
        }
    };
    let mut scene_of_segment = vec![rng.random_range(0..cfg.n_scene_classes)];
    let mut level_of_segment = vec![rng.random_range(0.25..0.75)];
    for _ in &transitions {
        let prev = *scene_of_segment.last().expect("non-empty");
        let next = (prev + rng.random_range(1..cfg.n_scene_classes)) % cfg.n_scene_classes;
        scene_of_segment.push(next);
        level_of_segment.push(rng.random_range(0.25..0.75));
    }
    let segment_at = |t: f64| transitions.partition_point(|&tr| tr <= t);

    // Disturbances keep clear of transitions so pupil events stay attributable.
    let mut disturbances: Vec<(f64, f64)> = Vec::new();
    for start in arrivals(&mut rng, len - 1.0, cfg.disturbance_rate, cfg.active_rate_factor, &bouts) {
        let d = rng.random_range(cfg.disturbance_s.0..=cfg.disturbance_s.1);
        let iv = (round_to(start, 1e-3), round_to((start + d).min(len), 1e-3));
        let near_transition = transitions.iter().any(|&tr| overlaps(iv, (tr - 3.0, tr + 3.0)));
        let near_previous = disturbances.last().is_some_and(|&p| overlaps(iv, (p.0 - 1.0, p.1 + 1.0)));
        if !near_transition && !near_previous {
            disturbances.push(iv);
        }
    }
    let disturbance_offsets: Vec<f64> = disturbances
        .iter()
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(cfg.disturbance_pupil_mm.0..=cfg.disturbance_pupil_mm.1)
        })
        .collect();

    // Blinks: core plus 50 ms edges on either side.
    let mut blinks: Vec<(f64, f64)> = Vec::new();
    for start in arrivals(&mut rng, len - 0.5, cfg.blink_rate, 1.0, &bouts) {
        let iv = (round_to(start, 1e-3), round_to(start + rng.random_range(0.1..0.2), 1e-3));
        if blinks.last().is_none_or(|p| iv.0 > p.1 + 0.3) && !disturbances.iter().any(|&d| overlaps(iv, d)) {
            blinks.push(iv);
        }
    }
    let blink_edges: Vec<(f64, f64)> = blinks.iter().flat_map(|&(s, e)| [(s - 0.05, s), (e, e + 0.05)]).collect();

    // Fixation/saccade sequence; every transition forces a saccade.
    let mut segs: Vec<(f64, f64, GazeSeg)> = Vec::new();
    let (mut fixations, mut saccades) = (Vec::new(), Vec::new());
    let mut pos = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
    let mut t = 0.0;
    let mut next_tr = 0;
    while t < len {
        while next_tr < transitions.len() && transitions[next_tr] <= t {
            next_tr += 1;
        }
        let exploring = next_tr > 0 && t - transitions[next_tr - 1] < cfg.informative_horizon_s;
        let mean_fix = if exploring {
            cfg.exploration_fixation_s
        } else {
            cfg.mean_fixation_s / if bouts.active(t) { cfg.active_rate_factor.sqrt() } else { 1.0 }
        };
        let mut dur = Exp::new(1.0 / mean_fix).expect("positive").sample(&mut rng).max(0.1);
        if next_tr < transitions.len() && transitions[next_tr] < t + dur {
            dur = transitions[next_tr] - t;
        }
        let fix_end = round_to((t + dur).min(len), 1e-4);
        segs.push((t, fix_end, GazeSeg::Fix { x: pos.0, y: pos.1 }));
        fixations.push((t, fix_end));
        let target = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let sac_end = round_to((fix_end + cfg.saccade_s).min(len), 1e-4);
        if sac_end > fix_end {
            segs.push((fix_end, sac_end, GazeSeg::Sacc { x0: pos.0, y0: pos.1, x1: target.0, y1: target.1 }));
            saccades.push((fix_end, sac_end));
        }
        pos = target;
        t = sac_end;
    }

    // Pupil events.
    let pupil_events: Vec<f64> = transitions.iter().map(|tr| tr + cfg.pupil_latency_s).collect();
    let event_amp: Vec<f64> =
        pupil_events.iter().map(|_| rng.random_range(cfg.pupil_event_mm.0..=cfg.pupil_event_mm.1)).collect();
    let peak_s = cfg.pupil_event_width_s / BUMP_FWHM_PER_PEAK;
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let drift_period = rng.random_range(60.0..120.0);
    let base = cfg.pupil_base_mm + rng.random_range(-0.5..0.5);
    let wander_phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));

    // Eye samples.
    let n_samples = (len * cfg.eye_rate_hz).floor() as usize;
    let dt = 1.0 / cfg.eye_rate_hz;
    let ar_phi = (-dt / 0.5f64).exp();
    let ar_innov = (1.0 - ar_phi * ar_phi).sqrt();
    let mut ar = 0.0;
    let normal = |rng: &mut ChaCha8Rng, sd: f64| if sd > 0.0 { sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    let mut samples = Vec::with_capacity(n_samples);
    let (mut si, mut ei) = (0usize, 0usize);
    for i in 0..n_samples {
        let t = snap(i as f64 * dt, 6);
        while si + 1 < segs.len() && segs[si].1 <= t {
            si += 1;
        }
        let is_active = bouts.active(t);
        let disturbed = disturbances.iter().position(|&(s, e)| t >= s && t < e);
        let in_blink = in_any(t, &blinks);
        let blink_edge = in_any(t, &blink_edges);

        let (mut x, mut y, mut conf) = match segs[si].2 {
            GazeSeg::Fix { x, y } => (x, y, 0.92),
            GazeSeg::Sacc { x0, y0, x1, y1 } => {
                let (s, e) = (segs[si].0, segs[si].1);
                let a = ((t - s) / (e - s)).clamp(0.0, 1.0);
                (x0 + a * (x1 - x0), y0 + a * (y1 - y0), 0.7)
            }
        };
        if disturbed.is_some() {
            x = 0.5 + 0.35 * (2.0 * PI * 0.9 * t + wander_phase.0).sin();
            y = 0.5 + 0.35 * (2.0 * PI * 0.7 * t + wander_phase.1).cos();
            conf = 0.35;
        }
        conf += normal(&mut rng, 0.02);
        if blink_edge {
            conf = 0.4;
        }
        if in_blink {
            conf = 0.05;
        }
        x += normal(&mut rng, cfg.gaze_jitter);
        y += normal(&mut rng, cfg.gaze_jitter);

        let level = level_of_segment[segment_at(t)];
        let light = -cfg.light_gain_mm * level + 0.3 * cfg.light_gain_mm * level * level;
        let drift = cfg.pupil_drift_mm * (2.0 * PI * t / drift_period + drift_phase).sin();
        while ei < pupil_events.len() && pupil_events[ei] + 3.0 * cfg.pupil_event_width_s < t {
            ei += 1;
        }
        let mut events = 0.0;
        for (k, &onset) in pupil_events.iter().enumerate().skip(ei) {
            if onset > t {
                break;
            }
            events += event_amp[k] * bump(t - onset, peak_s);
        }
        let sd = cfg.pupil_noise * if is_active { cfg.pupil_noise_active_factor } else { 1.0 };
        ar = ar_phi * ar + ar_innov * normal(&mut rng, 1.0);
        let mut pupil = base + light + drift + events + sd * ar + normal(&mut rng, cfg.pupil_measurement_noise);
        if let Some(d) = disturbed {
            pupil += disturbance_offsets[d] + normal(&mut rng, 0.2);
        }
        if blink_edge {
            pupil *= 0.75;
        }
        if in_blink {
            pupil = f64::NAN;
        }
        samples.push(EyeSample {
            t,
            gaze_x: snap(x, 5),
            gaze_y: snap(y, 5),
            confidence: snap(conf.clamp(0.0, 1.0), 3),
            pupil_mm: if pupil.is_nan() { f64::NAN } else { snap(pupil.max(0.5), 4) },
        });
    }

    // Frames and embeddings.
    let n_frames = cfg.n_frames();
    let mut env_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "environment", index as u64));
    let env = gaussian_vec(&mut env_rng, cfg.embed_dim, cfg.env_scale);
    let mut frames = Vec::with_capacity(n_frames);
    let mut embeddings = Vec::with_capacity(n_frames * cfg.embed_dim);
    let mut frame_scene = Vec::with_capacity(n_frames);
    let lost: Vec<(f64, f64)> = disturbances.iter().chain(&blinks).copied().collect();
    let brightness_noise = Normal::new(0.0, 0.01).expect("valid sd");
    for k in 0..n_frames {
        let t = k as f64 + 0.5;
        let seg = segment_at(t);
        let scene = scene_of_segment[seg];
        frame_scene.push(scene);
        let brightness = snap((level_of_segment[seg] + brightness_noise.sample(&mut rng)).clamp(0.0, 1.0), 4);
        let since = if seg > 0 { t - transitions[seg - 1] } else { f64::INFINITY };
        let informative = since <= cfg.informative_horizon_s;
        let exposure = (t - EXPOSURE_HALF_S, t + EXPOSURE_HALF_S);
        let junk = lost.iter().any(|&iv| overlaps(iv, exposure));
        let blurred = saccades.iter().any(|&iv| overlaps(iv, exposure));
        let noise_sd = cfg.embedding_noise * if bouts.active(t) { cfg.embedding_noise_active_factor } else { 1.0 };
        let act = &protos.activity[activity];
        let act_scale = cfg.activity_scale + if informative { cfg.informative_scale } else { 0.0 };
        for j in 0..cfg.embed_dim {
            let content = cfg.scene_scale * protos.scene[scene][j] + act_scale * act[j];
            let mut v = env[j] + normal(&mut rng, noise_sd);
            if junk {
                v += cfg.junk_scale * protos.motion[j] + normal(&mut rng, cfg.blur_noise);
            } else if blurred {
                v += 0.5 * content + normal(&mut rng, cfg.blur_noise);
            } else {
                v += content;
            }
            embeddings.push(v as f32);
        }
        frames.push(FrameRecord {
            frame_id: format!("{id}_f{k:05}"),
            session_id: id.clone(),
            t,
            brightness,
            activity: Some(activity),
            scene: Some(scene),
            embedding_row: Some(k),
        });
    }

    SyntheticSession {
        bundle: SessionBundle { session_id: id.clone(), frames, samples },
        truth: GroundTruth {
            session_id: id,
            activity,
            fixations,
            saccades,
            blinks,
            disturbances,
            active_bouts: bouts.0,
            transitions,
            pupil_events,
            frame_scene,
        },
        embeddings,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub sessions: Vec<SyntheticSession>,
}

/// Generates every session in parallel from independent per-session seeds.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset, SynthError> {
    cfg.validate()?;
    let protos = Prototypes::new(cfg);
    let mut sessions: Vec<SyntheticSession> =
        (0..cfg.n_sessions).into_par_iter().map(|i| generate_with(cfg, &protos, i)).collect();
    let mut offset = 0;
    for s in &mut sessions {
        for f in &mut s.bundle.frames {
            f.embedding_row = f.embedding_row.map(|r| r + offset);
        }
        offset += s.bundle.frames.len();
    }
    Ok(SyntheticDataset { config: cfg.clone(), sessions })
}

impl SyntheticDataset {
    pub fn activity_dictionary(&self) -> LabelDictionary {
        LabelDictionary::activity()
    }

    pub fn scene_dictionary(&self) -> LabelDictionary {
        LabelDictionary::scene()
    }

    pub fn frame_table(&self) -> FrameTable {
        self.sessions.iter().map(|s| (s.bundle.session_id.clone(), s.bundle.frames.clone())).collect()
    }

    pub fn embedding_matrix(&self) -> EmbeddingMatrix {
        let data: Vec<f32> = self.sessions.iter().flat_map(|s| s.embeddings.iter().copied()).collect();
        let dim = self.config.embed_dim;
        EmbeddingMatrix::new(data.len() / dim, dim, data)
    }

    pub fn bundles(&self) -> Vec<&SessionBundle> {
        self.sessions.iter().map(|s| &s.bundle).collect()
    }

    /// Writes the ingest-format files plus `ground_truth.jsonl` and returns
    /// the dataset checksum.
    pub fn write(&self, dir: &Path, tool_version: &str) -> Result<String, SynthError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        let header = format!("eyecurate {tool_version} config={}", &self.config.config_hash()[..16]);
        let eye_dir = dir.join("eye");
        fs::create_dir_all(&eye_dir).map_err(io_err(&eye_dir))?;
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();

        let rendered: Vec<(String, Vec<u8>)> = self
            .sessions
            .par_iter()
            .map(|s| {
                let mut buf = format!("# {header}\n").into_bytes();
                write_eye_stream(&mut buf, &s.bundle.samples, EyeFormat::Csv).expect("writing to memory");
                (format!("eye/{}.csv", s.bundle.session_id), buf)
            })
            .collect();
        files.extend(rendered);

        let mut frames = format!("# {header}\n").into_bytes();
        let all: Vec<FrameRecord> = self.sessions.iter().flat_map(|s| s.bundle.frames.iter().cloned()).collect();
        write_frames(&mut frames, &all, &self.activity_dictionary(), &self.scene_dictionary())
            .expect("writing to memory");
        files.insert("frames.csv".into(), frames);
        files.insert("embeddings.emb".into(), encode_embeddings(&self.embedding_matrix(), true));

        let mut truth = serde_json::to_string(&serde_json::json!({
            "tool_version": tool_version,
            "config_hash": self.config.config_hash(),
            "config": self.config,
        }))
        .expect("serializes")
        .into_bytes();
        truth.push(b'\n');
        for s in &self.sessions {
            truth.extend(serde_json::to_string(&s.truth).expect("serializes").into_bytes());
            truth.push(b'\n');
        }
        files.insert("ground_truth.jsonl".into(), truth);

        for (name, bytes) in &files {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            w.write_all(bytes).and_then(|_| w.flush()).map_err(io_err(&path))?;
        }
        Ok(files_checksum(&files))
    }
}

/// SHA-256 over (name, length, bytes) of every file in name order.
pub fn files_checksum(files: &BTreeMap<String, Vec<u8>>) -> String {
    let mut all = Vec::new();
    for (name, bytes) in files {
        all.extend_from_slice(name.as_bytes());
        all.push(0);
        all.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        all.extend_from_slice(bytes);
    }
    sha256_hex(&all)
}

/// Recomputes the checksum of a dataset directory written by `write`.
pub fn directory_checksum(dir: &Path) -> Result<String, SynthError> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|source| SynthError::Io { path: d.clone(), source })? {
            let path = entry.map_err(|source| SynthError::Io { path: d.clone(), source })?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
                let bytes = fs::read(&path).map_err(|source| SynthError::Io { path: path.clone(), source })?;
                files.insert(rel, bytes);
            }
        }
    }
    Ok(files_checksum(&files))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_sessions: 2, session_length_s: 60.0, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_session(&small(), 0);
        let b = generate_session(&small(), 0);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = generate_session(&SynthConfig { seed: 1, ..small() }, 0);
        assert_ne!(a.bundle.samples, c.bundle.samples);
    }

    #[test]
    fn shapes() {
        let s = generate_session(&small(), 1);
        assert_eq!(s.bundle.samples.len(), 7200);
        assert_eq!(s.bundle.frames.len(), 60);
        assert_eq!(s.embeddings.len(), 60 * 32);
        assert!(s.bundle.samples.windows(2).all(|w| w[0].t < w[1].t));
        assert!(s.bundle.samples.iter().all(|x| (0.0..=1.0).contains(&x.confidence)));
    }

    #[test]
    fn intervals_do_not_overlap() {
        let s = generate_session(&SynthConfig { session_length_s: 300.0, ..small() }, 0);
        for list in [&s.truth.blinks, &s.truth.disturbances, &s.truth.fixations] {
            assert!(list.windows(2).all(|w| w[0].1 <= w[1].0));
        }
        assert!(s.truth.transitions.windows(2).all(|w| w[1] - w[0] >= 4.0));
    }

    #[test]
    fn bump_peaks_at_one() {
        assert!((bump(0.45, 0.45) - 1.0).abs() < 1e-15);
        assert_eq!(bump(-0.1, 0.45), 0.0);
        assert!(bump(1.5, 0.45) < 0.15);
    }

    #[test]
    fn bump_half_maximum_width() {
        let peak = 1.5 / BUMP_FWHM_PER_PEAK;
        let half = |lo: f64, hi: f64| {
            let (mut lo, mut hi) = (lo, hi);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if (bump(m, peak) > 0.5) == (bump(lo, peak) > 0.5) { lo = m } else { hi = m }
            }
            lo
        };
        let width = half(peak, 10.0) - half(1e-9, peak);
        assert!((width - 1.5).abs() < 1e-6, "{width}");
    }

    #[test]
    fn snapped_values_print_short() {
        assert_eq!(format!("{}", snap(1.0 / 120.0, 6)), "0.008333");
        assert_eq!(format!("{}", snap(0.1 + 0.2, 5)), "0.3");
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { pupil_latency_s: 2.0, ..small() }.validate().is_err());
        assert!(SynthConfig { n_activity_classes: 13, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }
}
