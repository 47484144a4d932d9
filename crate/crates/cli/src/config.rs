//! Run configuration: a flat `key = value` text format with `[section]`
//! headers.
//!
//! ```text
//! # comment
//! [scoring]
//! v_thresh = 0.5
//! [grid]
//! strategies = dual, gate_random
//! seeds = 0-9
//! ```
//!
//! A key inside `[scoring]` is addressed as `scoring.v_thresh`; keys may also
//! be written fully dotted outside any section. Lists are comma separated and
//! integer lists accept inclusive ranges (`0-9`). Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use eyecurate_core::experiment::Grid;
use eyecurate_core::probe::{ClassWeighting, Optimizer, ProbeConfig};
use eyecurate_core::seeding::sha256_hex;
use eyecurate_core::stats::StatsConfig;
use eyecurate_core::{PupilVariant, ScoringConfig, StrategyKind, Task};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    Value { key: String, value: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Paths {
    pub eye_dir: PathBuf,
    pub frames: PathBuf,
    pub embeddings: PathBuf,
    pub out_dir: PathBuf,
}

impl Paths {
    /// Standard layout of a dataset directory.
    pub fn for_data(data: &Path, out: &Path) -> Self {
        Paths {
            eye_dir: data.join("eye"),
            frames: data.join("frames.csv"),
            embeddings: data.join("embeddings.emb"),
            out_dir: out.to_path_buf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip)]
    pub paths: Paths,
    pub scoring: ScoringConfig,
    pub grid: Grid,
    pub stratify_task: Task,
    pub probe: ProbeConfig,
    pub split: SplitConfig,
    pub stats: StatsConfig,
    pub lags: (i64, i64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::for_data(Path::new("data"), Path::new("out")),
            scoring: ScoringConfig::default(),
            grid: Grid { variants: vec![PupilVariant::Delayed], ..Grid::default() },
            stratify_task: Task::Activity,
            probe: ProbeConfig::default(),
            split: SplitConfig { test_fraction: 0.25, seed: 0 },
            stats: StatsConfig::default(),
            lags: (-3, 5),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| value_err(key, v, "expected a number"))?;
    if !x.is_finite() {
        return Err(value_err(key, v, "must be finite"));
    }
    Ok(x)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| value_err(key, v, "expected an integer"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(value_err(key, v, "expected true or false")),
    }
}

fn value_err(key: &str, v: &str, message: &str) -> ConfigError {
    ConfigError::Value { key: key.into(), value: v.into(), message: message.into() }
}

fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>, ConfigError> {
    items(v).map(|s| f(s).ok_or_else(|| value_err(key, s, what))).collect()
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    items(v).map(|s| parse_f64(key, s)).collect()
}

fn parse_seed_list(key: &str, v: &str) -> Result<Vec<u64>, ConfigError> {
    let mut out = Vec::new();
    for item in items(v) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_int(key, a.trim())?, parse_int(key, b.trim())?);
                if a > b {
                    return Err(value_err(key, item, "empty range"));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_int(key, item)?),
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one dotted `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let k = key.trim();
        match k {
            "paths.eye_dir" => self.paths.eye_dir = PathBuf::from(v),
            "paths.frames" => self.paths.frames = PathBuf::from(v),
            "paths.embeddings" => self.paths.embeddings = PathBuf::from(v),
            "paths.out_dir" => self.paths.out_dir = PathBuf::from(v),
            "scoring.half_width_s" => self.scoring.half_width_s = parse_f64(k, v)?,
            "scoring.delayed_lo_s" => self.scoring.delayed_lo_s = parse_f64(k, v)?,
            "scoring.delayed_hi_s" => self.scoring.delayed_hi_s = parse_f64(k, v)?,
            "scoring.ramp_s" => self.scoring.gaze.ramp_s = parse_f64(k, v)?,
            "scoring.v_thresh" => self.scoring.gaze.v_thresh = parse_f64(k, v)?,
            "scoring.poly_degree" => self.scoring.pupil.poly_degree = parse_int(k, v)?,
            "scoring.rolling_window_s" => self.scoring.pupil.rolling_window_s = parse_f64(k, v)?,
            "scoring.mad_mode" => {
                self.scoring.pupil.mad_scale = match v {
                    "plain" => 1.0,
                    "normal" => 1.4826,
                    _ => return Err(value_err(k, v, "expected plain or normal")),
                }
            }
            "grid.tasks" => self.grid.tasks = parse_list(k, v, Task::parse, "unknown task")?,
            "grid.strategies" => self.grid.strategies = parse_list(k, v, StrategyKind::parse, "unknown strategy")?,
            "grid.gates" => self.grid.gates = parse_f64_list(k, v)?,
            "grid.sweep_gates" => self.grid.sweep_gates = parse_f64_list(k, v)?,
            "grid.budgets" => self.grid.budgets = parse_f64_list(k, v)?,
            "grid.seeds" => self.grid.seeds = parse_seed_list(k, v)?,
            "grid.variants" => self.grid.variants = parse_list(k, v, PupilVariant::parse, "unknown pupil variant")?,
            "grid.fusion_weights" => {
                let w = parse_f64_list(k, v)?;
                let [wg, wp] = w[..] else { return Err(value_err(k, v, "expected two weights")) };
                self.grid.fusion_weights = (wg, wp);
            }
            "grid.fusion_standardize" => self.grid.fusion_standardize = parse_bool(k, v)?,
            "grid.stratified" => self.grid.stratified = parse_bool(k, v)?,
            "grid.stratify_task" => self.stratify_task = Task::parse(v).ok_or_else(|| value_err(k, v, "unknown task"))?,
            "probe.l2_lambda" => self.probe.l2_lambda = parse_f64(k, v)?,
            "probe.max_iters" => self.probe.max_iters = parse_int(k, v)?,
            "probe.tol" => self.probe.tol = parse_f64(k, v)?,
            "probe.class_weighting" => {
                self.probe.class_weighting = match v {
                    "uniform" => ClassWeighting::Uniform,
                    "balanced" => ClassWeighting::Balanced,
                    _ => return Err(value_err(k, v, "expected uniform or balanced")),
                }
            }
            "probe.optimizer" => {
                self.probe.optimizer = match v {
                    "lbfgs" => Optimizer::Lbfgs,
                    "gradient_descent" | "gd" => Optimizer::GradientDescent,
                    _ => return Err(value_err(k, v, "expected lbfgs or gradient_descent")),
                }
            }
            "probe.standardize" => self.probe.standardize = parse_bool(k, v)?,
            "split.test_fraction" => self.split.test_fraction = parse_f64(k, v)?,
            "split.seed" => self.split.seed = parse_int(k, v)?,
            "stats.resamples" => self.stats.resamples = parse_int(k, v)?,
            "stats.level" => self.stats.level = parse_f64(k, v)?,
            "stats.seed" => self.stats.seed = parse_int(k, v)?,
            "stats.alpha" => self.stats.alpha = parse_f64(k, v)?,
            "stats.bonferroni_m" => self.stats.bonferroni_m = parse_int(k, v)?,
            "stats.trapezoid" => self.stats.trapezoid = parse_bool(k, v)?,
            "lags.min" => self.lags.0 = parse_int(k, v)?,
            "lags.max" => self.lags.1 = parse_int(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: "unterminated section header".into() })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: 0, message: format!("override {o:?} is not key=value") })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Checks value ranges and grid non-emptiness.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let g = &self.grid;
        if g.tasks.is_empty() || g.strategies.is_empty() || g.budgets.is_empty() || g.seeds.is_empty() || g.variants.is_empty()
        {
            return bad("grid must have at least one task, strategy, budget, seed and variant".into());
        }
        if g.strategies.iter().any(|k| k.is_gated()) && g.gates.is_empty() {
            return bad("gated strategies need at least one gate".into());
        }
        if let Some(b) = g.budgets.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return bad(format!("budget {b} outside (0, 1]"));
        }
        if let Some(k) = g.gates.iter().chain(&g.sweep_gates).find(|k| !(**k > 0.0 && **k <= 1.0)) {
            return bad(format!("gate {k} outside (0, 1]"));
        }
        if g.fusion_weights.0 < 0.0 || g.fusion_weights.1 < 0.0 {
            return bad("fusion weights must be non-negative".into());
        }
        let s = &self.scoring;
        if !(s.half_width_s > 0.0 && s.delayed_lo_s < s.delayed_hi_s && s.gaze.ramp_s > 0.0 && s.gaze.v_thresh > 0.0) {
            return bad("scoring windows, ramp_s and v_thresh must be positive and ordered".into());
        }
        if s.pupil.rolling_window_s <= 0.0 {
            return bad("scoring.rolling_window_s must be positive".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad("split.test_fraction must lie in (0, 1)".into());
        }
        if !(self.stats.level > 0.0 && self.stats.level < 1.0 && self.stats.resamples > 0) {
            return bad("stats.level must lie in (0, 1) and stats.resamples be positive".into());
        }
        if self.probe.l2_lambda < 0.0 || self.probe.max_iters == 0 {
            return bad("probe.l2_lambda must be non-negative and probe.max_iters positive".into());
        }
        if self.lags.0 > self.lags.1 {
            return bad("lags.min exceeds lags.max".into());
        }
        Ok(())
    }

    /// Hash of every setting except paths, so relocated runs share it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let mut c = RunConfig::default();
        c.apply_text("# top\n[scoring]\nv_thresh = 0.7  # inline\n\ngrid.seeds = 0-2, 7\n[grid]\nstrategies = dual,random\n")
            .unwrap();
        assert_eq!(c.scoring.gaze.v_thresh, 0.7);
        assert_eq!(c.grid.seeds, vec![0, 1, 2, 7]);
        assert_eq!(c.grid.strategies, vec![StrategyKind::Dual, StrategyKind::Random]);
    }

    #[test]
    fn errors_are_specific() {
        let mut c = RunConfig::default();
        assert_eq!(c.apply_text("[scoring]\nnope = 1\n"), Err(ConfigError::UnknownKey("scoring.nope".into())));
        assert!(matches!(c.apply_text("[grid\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.apply_text("grid.budgets = 0.1, x\n"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("just words\n"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.set("grid.budgets", "0.1, 1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("grid.strategies", "").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.set("paths.out_dir", "/elsewhere").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("probe.l2_lambda", "2").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["grid.gates=0.5,0.9".into()]).unwrap();
        assert_eq!(c.grid.gates, vec![0.5, 0.9]);
        assert!(c.apply_overrides(&["novalue".into()]).is_err());
    }
}
