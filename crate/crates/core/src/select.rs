//! Budgeted frame selection: the six strategies, their stratified variants,
//! and the JSON-lines manifest format.
//!
//! Every strategy sees the pool in one canonical order (session, time,
//! frame id). Ranking ties break by earlier time, then frame id, so results
//! never depend on input order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{self, BufRead, BufWriter, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::round_half_even;
use crate::pupil::PupilVariant;
use crate::scoring::ScoreRow;
use crate::seeding::{derive_seed, sha256_hex};

pub const DEFAULT_GATE_K: f64 = 0.75;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("budget {0} is outside (0, 1]")]
    BudgetOutOfRange(f64),
    #[error("gate fraction {0} is outside (0, 1]")]
    GateOutOfRange(f64),
    #[error("fusion weights ({0}, {1}) must be non-negative")]
    BadWeights(f64, f64),
    #[error("stratified selection needs class labels")]
    MissingLabels,
    #[error("label slice has {labels} entries for {rows} frames")]
    LabelLength { labels: usize, rows: usize },
    #[error("frame {0:?} has no label for stratified selection")]
    UnlabeledFrame(String),
    #[error("manifest line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    GazeOnly,
    PupilAbs,
    Fusion,
    Dual,
    GateRandom,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Random,
        StrategyKind::GazeOnly,
        StrategyKind::PupilAbs,
        StrategyKind::Fusion,
        StrategyKind::Dual,
        StrategyKind::GateRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::GazeOnly => "gaze_only",
            StrategyKind::PupilAbs => "pupil_abs",
            StrategyKind::Fusion => "fusion",
            StrategyKind::Dual => "dual",
            StrategyKind::GateRandom => "gate_random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_gated(self) -> bool {
        matches!(self, StrategyKind::Dual | StrategyKind::GateRandom)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, StrategyKind::Random | StrategyKind::GateRandom)
    }

    pub fn uses_pupil(self) -> bool {
        matches!(self, StrategyKind::PupilAbs | StrategyKind::Fusion | StrategyKind::Dual)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub gate_k: f64,
    /// (w_g, w_p)
    pub fusion_weights: (f64, f64),
    /// z-score g and |p| over the pool before fusing.
    pub fusion_standardize: bool,
    pub pupil_variant: PupilVariant,
    pub stratified: bool,
    pub seed: u64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            gate_k: DEFAULT_GATE_K,
            fusion_weights: (0.5, 0.5),
            fusion_standardize: false,
            pupil_variant: PupilVariant::Delayed,
            stratified: false,
            seed: 0,
        }
    }

    pub fn with_gate(mut self, k: f64) -> Self {
        self.gate_k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_variant(mut self, v: PupilVariant) -> Self {
        self.pupil_variant = v;
        self
    }

    pub fn with_weights(mut self, w_g: f64, w_p: f64) -> Self {
        self.fusion_weights = (w_g, w_p);
        self
    }

    fn validate(&self) -> Result<(), SelectError> {
        if !(self.gate_k > 0.0 && self.gate_k <= 1.0) {
            return Err(SelectError::GateOutOfRange(self.gate_k));
        }
        let (wg, wp) = self.fusion_weights;
        if !(wg >= 0.0 && wp >= 0.0) {
            return Err(SelectError::BadWeights(wg, wp));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedFrame {
    pub frame_id: String,
    pub session_id: String,
    pub g: f64,
    pub nov: f64,
    /// 1-based position in selection order.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionManifest {
    pub spec: StrategySpec,
    pub budget: f64,
    pub pool_size: usize,
    pub gated_size: usize,
    /// round(b * pool_size), at least 1.
    pub target_n: usize,
    /// The gated pool was smaller than `target_n`.
    pub capped: bool,
    /// Per-session gate threshold (lowest kept g); empty for ungated kinds.
    pub tau_k: BTreeMap<String, f64>,
    /// Classes with members that received no frames under stratification.
    pub minority_starved: Vec<usize>,
    pub selected: Vec<SelectedFrame>,
}

impl SelectionManifest {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.frame_id.as_str()).collect()
    }

    /// Hash of the selected set, independent of order.
    pub fn selection_digest(&self) -> String {
        let mut ids = self.frame_ids();
        ids.sort_unstable();
        sha256_hex(ids.join("\n").as_bytes())
    }
}

/// round_half_even(b * pool), at least 1 for a non-empty pool.
pub fn budget_count(b: f64, pool: usize) -> usize {
    if pool == 0 {
        return 0;
    }
    (round_half_even(b * pool as f64) as usize).max(1)
}

/// Number of frames a gate of fraction `k` keeps from `n` frames.
pub fn gate_count(k: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // The epsilon absorbs representation error in products like 0.9 * 10.
    ((k * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

fn canonical_cmp(rows: &[ScoreRow], a: usize, b: usize) -> Ordering {
    let (x, y) = (&rows[a], &rows[b]);
    x.session_id
        .cmp(&y.session_id)
        .then(x.t.total_cmp(&y.t))
        .then_with(|| x.frame_id.cmp(&y.frame_id))
}

fn rank_cmp(rows: &[ScoreRow], key: &[f64], a: usize, b: usize) -> Ordering {
    key[b]
        .total_cmp(&key[a])
        .then(rows[a].t.total_cmp(&rows[b].t))
        .then_with(|| rows[a].frame_id.cmp(&rows[b].frame_id))
}

pub fn canonical_order(rows: &[ScoreRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| canonical_cmp(rows, a, b));
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gated {
    /// Row indices in canonical order.
    pub kept: Vec<usize>,
    pub tau_k: BTreeMap<String, f64>,
}

/// Keeps the top ceil(k * n_s) frames by g within each session.
pub fn gate(rows: &[ScoreRow], k: f64) -> Gated {
    let mut by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_session.entry(r.session_id.as_str()).or_default().push(i);
    }
    let g: Vec<f64> = rows.iter().map(|r| r.g).collect();
    let mut kept = Vec::new();
    let mut tau_k = BTreeMap::new();
    for (session, mut idx) in by_session {
        idx.sort_by(|&a, &b| rank_cmp(rows, &g, a, b));
        let n_keep = gate_count(k, idx.len());
        if let Some(&last) = idx[..n_keep].last() {
            tau_k.insert(session.to_string(), rows[last].g);
        }
        kept.extend_from_slice(&idx[..n_keep]);
    }
    kept.sort_by(|&a, &b| canonical_cmp(rows, a, b));
    Gated { kept, tau_k }
}

/// Top `n` of `pool` by `key` (indexed by row), in rank order.
pub fn rank_select(rows: &[ScoreRow], pool: &[usize], key: &[f64], n: usize) -> Vec<usize> {
    let mut idx = pool.to_vec();
    idx.sort_by(|&a, &b| rank_cmp(rows, key, a, b));
    idx.truncate(n);
    idx
}

/// Seeded uniform draw of `n` from `pool` without replacement, returned in
/// the pool's order.
pub fn uniform_select(pool: &[usize], n: usize, seed: u64) -> Vec<usize> {
    let n = n.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| pool[i]).collect()
}

/// Seed for the uniform draw. Random and Gate+Random share it so that an
/// identity gate reproduces plain random selection.
pub fn uniform_seed(seed: u64, budget: f64, stratum: Option<usize>) -> u64 {
    let stratum = stratum.map_or(u64::MAX, |c| c as u64);
    derive_seed(&[b"uniform", &seed.to_le_bytes(), &budget.to_bits().to_le_bytes(), &stratum.to_le_bytes()])
}

fn zscore_population(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter().map(|x| (x - m) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Per-row ranking key for a rank-based kind; `None` for random kinds.
pub fn ranking_key(spec: &StrategySpec, rows: &[ScoreRow]) -> Option<Vec<f64>> {
    let g = || rows.iter().map(|r| r.g).collect::<Vec<f64>>();
    let p = || rows.iter().map(|r| r.novelty(spec.pupil_variant)).collect::<Vec<f64>>();
    match spec.kind {
        StrategyKind::Random | StrategyKind::GateRandom => None,
        StrategyKind::GazeOnly => Some(g()),
        StrategyKind::PupilAbs | StrategyKind::Dual => Some(p()),
        StrategyKind::Fusion => {
            let (wg, wp) = spec.fusion_weights;
            let (gv, pv) = if spec.fusion_standardize {
                (zscore_population(&g()), zscore_population(&p()))
            } else {
                (g(), p())
            };
            Some(gv.iter().zip(&pv).map(|(a, b)| wg * a + wp * b).collect())
        }
    }
}

/// Runs one strategy at budget fraction `b` over `rows`. Labels (aligned with
/// `rows`) are required only when `spec.stratified` is set.
pub fn select(
    spec: &StrategySpec,
    b: f64,
    rows: &[ScoreRow],
    labels: Option<&[Option<usize>]>,
) -> Result<SelectionManifest, SelectError> {
    if spec.stratified {
        let labels = labels.ok_or(SelectError::MissingLabels)?;
        return stratified_select(spec, b, rows, labels);
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(SelectError::BudgetOutOfRange(b));
    }
    spec.validate()?;
    let canonical = canonical_order(rows);
    let (pool, tau_k) = pool_for(spec, rows, canonical);
    let target_n = budget_count(b, rows.len());
    let key = ranking_key(spec, rows);
    let chosen = match &key {
        Some(key) => rank_select(rows, &pool, key, target_n),
        None => uniform_select(&pool, target_n, uniform_seed(spec.seed, b, None)),
    };
    Ok(manifest(spec, b, rows, pool.len(), target_n, tau_k, Vec::new(), chosen))
}

fn pool_for(spec: &StrategySpec, rows: &[ScoreRow], canonical: Vec<usize>) -> (Vec<usize>, BTreeMap<String, f64>) {
    if spec.kind.is_gated() {
        let gated = gate(rows, spec.gate_k);
        (gated.kept, gated.tau_k)
    } else {
        (canonical, BTreeMap::new())
    }
}

#[allow(clippy::too_many_arguments)]
fn manifest(
    spec: &StrategySpec,
    b: f64,
    rows: &[ScoreRow],
    gated_size: usize,
    target_n: usize,
    tau_k: BTreeMap<String, f64>,
    minority_starved: Vec<usize>,
    chosen: Vec<usize>,
) -> SelectionManifest {
    let selected = chosen
        .iter()
        .enumerate()
        .map(|(r, &i)| SelectedFrame {
            frame_id: rows[i].frame_id.clone(),
            session_id: rows[i].session_id.clone(),
            g: rows[i].g,
            nov: rows[i].novelty(spec.pupil_variant),
            rank: r + 1,
        })
        .collect();
    SelectionManifest {
        spec: spec.clone(),
        budget: b,
        pool_size: rows.len(),
        gated_size,
        target_n,
        capped: spec.kind.is_gated() && target_n > gated_size,
        tau_k,
        minority_starved,
        selected,
    }
}

/// Per-class selection: class c with n_c frames gets round_half_even(b * n_c)
/// frames chosen by the strategy's rule restricted to that class.
pub fn stratified_select(
    spec: &StrategySpec,
    b: f64,
    rows: &[ScoreRow],
    labels: &[Option<usize>],
) -> Result<SelectionManifest, SelectError> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(SelectError::BudgetOutOfRange(b));
    }
    spec.validate()?;
    if labels.len() != rows.len() {
        return Err(SelectError::LabelLength { labels: labels.len(), rows: rows.len() });
    }
    if let Some(i) = labels.iter().position(Option::is_none) {
        return Err(SelectError::UnlabeledFrame(rows[i].frame_id.clone()));
    }
    let class_of = |i: usize| labels[i].expect("checked above");
    let canonical = canonical_order(rows);
    let mut class_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..rows.len() {
        *class_sizes.entry(class_of(i)).or_default() += 1;
    }
    let (pool, tau_k) = pool_for(spec, rows, canonical);
    let key = ranking_key(spec, rows);
    let mut chosen = Vec::new();
    let mut starved = Vec::new();
    let mut target_n = 0;
    let mut capped = false;
    for (&class, &n_c) in &class_sizes {
        let want = round_half_even(b * n_c as f64) as usize;
        target_n += want;
        let class_pool: Vec<usize> = pool.iter().copied().filter(|&i| class_of(i) == class).collect();
        capped |= want > class_pool.len();
        let picked = match &key {
            Some(key) => rank_select(rows, &class_pool, key, want),
            None => uniform_select(&class_pool, want, uniform_seed(spec.seed, b, Some(class))),
        };
        if picked.is_empty() {
            starved.push(class);
        }
        chosen.extend(picked);
    }
    let mut m = manifest(spec, b, rows, pool.len(), target_n, tau_k, starved, chosen);
    m.capped = capped;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub tool_version: String,
    pub config_hash: String,
    pub spec: StrategySpec,
    pub budget: f64,
    pub pool_size: usize,
    pub gated_size: usize,
    pub target_n: usize,
    pub n_selected: usize,
    pub capped: bool,
    pub tau_k: BTreeMap<String, f64>,
    pub minority_starved: Vec<usize>,
    /// `SelectionManifest::selection_digest` of the body.
    #[serde(default)]
    pub selection_digest: String,
}

pub fn write_manifest<W: Write>(
    writer: W,
    m: &SelectionManifest,
    tool_version: &str,
    config_hash: &str,
) -> Result<(), SelectError> {
    let mut w = BufWriter::new(writer);
    let header = ManifestHeader {
        tool_version: tool_version.to_string(),
        config_hash: config_hash.to_string(),
        spec: m.spec.clone(),
        budget: m.budget,
        pool_size: m.pool_size,
        gated_size: m.gated_size,
        target_n: m.target_n,
        n_selected: m.selected.len(),
        capped: m.capped,
        tau_k: m.tau_k.clone(),
        minority_starved: m.minority_starved.clone(),
        selection_digest: m.selection_digest(),
    };
    writeln!(w, "{}", json_line(1, &header)?)?;
    for (i, s) in m.selected.iter().enumerate() {
        writeln!(w, "{}", json_line(i + 2, s)?)?;
    }
    w.flush()?;
    Ok(())
}

fn json_line<T: Serialize>(line: usize, v: &T) -> Result<String, SelectError> {
    serde_json::to_string(v).map_err(|source| SelectError::Json { line, source })
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<(ManifestHeader, SelectionManifest), SelectError> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or(SelectError::EmptyManifest)?;
    let header: ManifestHeader =
        serde_json::from_str(&first?).map_err(|source| SelectError::Json { line: 1, source })?;
    let mut selected = Vec::with_capacity(header.n_selected);
    for (i, line) in lines {
        let s: SelectedFrame = serde_json::from_str(&line?).map_err(|source| SelectError::Json { line: i + 1, source })?;
        selected.push(s);
    }
    let m = SelectionManifest {
        spec: header.spec.clone(),
        budget: header.budget,
        pool_size: header.pool_size,
        gated_size: header.gated_size,
        target_n: header.target_n,
        capped: header.capped,
        tau_k: header.tau_k.clone(),
        minority_starved: header.minority_starved.clone(),
        selected,
    };
    Ok((header, m))
}
