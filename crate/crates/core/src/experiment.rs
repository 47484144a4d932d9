//! In-memory orchestration of a full sweep: scoring every session, expanding
//! the strategy grid into manifests, evaluating each manifest with the probe
//! and computing lag profiles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{EmbeddingMatrix, FrameTable, Task};
use crate::numeric::mean;
use crate::probe::{session_split, EvalContext, LogisticTrainer, Matrix, ProbeConfig, ProbeError, SplitPlan, Trainer};
use crate::pupil::PupilVariant;
use crate::scoring::{score_session, ScoreRow, ScoreTable, ScoringConfig, SessionBundle};
use crate::select::{select, SelectError, SelectionManifest, StrategyKind, StrategySpec};
use crate::stats::{check_one_fps, feature_change, lag_profile, CellResult, LagPoint, StatsError, DEFAULT_BUDGETS};

/// The strategy grid of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub tasks: Vec<Task>,
    pub strategies: Vec<StrategyKind>,
    /// Gate fractions for gated kinds.
    pub gates: Vec<f64>,
    /// Extra gates evaluated for `dual` and `gate_random` only.
    pub sweep_gates: Vec<f64>,
    pub budgets: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<PupilVariant>,
    pub fusion_weights: (f64, f64),
    pub fusion_standardize: bool,
    pub stratified: bool,
}

pub const SWEEP_GATES: [f64; 5] = [0.25, 0.5, 0.75, 0.9, 1.0];

impl Default for Grid {
    fn default() -> Self {
        Grid {
            tasks: Task::ALL.to_vec(),
            strategies: StrategyKind::ALL.to_vec(),
            gates: vec![0.75],
            sweep_gates: Vec::new(),
            budgets: DEFAULT_BUDGETS.to_vec(),
            seeds: (0..10).collect(),
            variants: vec![PupilVariant::Delayed, PupilVariant::Centered],
            fusion_weights: (0.5, 0.5),
            fusion_standardize: false,
            stratified: false,
        }
    }
}

impl Grid {
    /// Every (spec, budget) pair, one per seed for every kind; ungated kinds
    /// get gate 1. Kinds that ignore the pupil are still listed under each
    /// variant so every variant has its own baselines. Identical selections
    /// are trained once during evaluation.
    pub fn cells(&self) -> Vec<(StrategySpec, f64)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &kind in &self.strategies {
            let mut gates: Vec<f64> = if kind.is_gated() { self.gates.clone() } else { vec![1.0] };
            if matches!(kind, StrategyKind::Dual | StrategyKind::GateRandom) {
                gates.extend(&self.sweep_gates);
            }
            for &variant in &self.variants {
                for &gate in &gates {
                    for &seed in &self.seeds {
                        for &b in &self.budgets {
                            if !seen.insert((kind, variant, gate.to_bits(), seed, b.to_bits())) {
                                continue;
                            }
                            let mut spec = StrategySpec::new(kind).with_gate(gate).with_seed(seed).with_variant(variant);
                            spec.fusion_weights = self.fusion_weights;
                            spec.fusion_standardize = self.fusion_standardize;
                            spec.stratified = self.stratified;
                            out.push((spec, b));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Scores every session in parallel; output order follows input order.
pub fn score_all(bundles: &[&SessionBundle], cfg: &ScoringConfig) -> Vec<ScoreTable> {
    bundles.par_iter().map(|b| score_session(b, cfg)).collect()
}

/// Label of every row for the stratification task, when stratifying.
fn row_labels(rows: &[ScoreRow], frames: &FrameTable, task: Task) -> Vec<Option<usize>> {
    let index: HashMap<&str, Option<usize>> =
        frames.values().flatten().map(|f| (f.frame_id.as_str(), f.label(task))).collect();
    rows.iter().map(|r| index.get(r.frame_id.as_str()).copied().flatten()).collect()
}

/// Builds one manifest per grid cell over the pooled rows of all sessions.
/// Stratified grids use labels of `stratify_task`.
pub fn build_manifests(
    grid: &Grid,
    rows: &[ScoreRow],
    frames: &FrameTable,
    stratify_task: Task,
) -> Result<Vec<SelectionManifest>, SelectError> {
    let labels = grid.stratified.then(|| row_labels(rows, frames, stratify_task));
    grid.cells().par_iter().map(|(spec, b)| select(spec, *b, rows, labels.as_deref())).collect()
}

/// Rows of the training sessions; selection never sees test sessions.
pub fn train_rows(rows: &[ScoreRow], split: &SplitPlan) -> Vec<ScoreRow> {
    rows.iter().filter(|r| split.train_sessions.contains(&r.session_id)).cloned().collect()
}

/// Per-session class tallies of both tasks, keyed so the two label spaces
/// never collide.
pub fn split_tallies(frames: &FrameTable) -> BTreeMap<String, BTreeMap<usize, usize>> {
    frames
        .iter()
        .map(|(session, list)| {
            let mut t: BTreeMap<usize, usize> = BTreeMap::new();
            for f in list {
                for (ti, task) in Task::ALL.iter().enumerate() {
                    if let Some(c) = f.label(*task) {
                        *t.entry(ti * 1000 + c).or_default() += 1;
                    }
                }
            }
            (session.clone(), t)
        })
        .collect()
}

pub fn default_split(frames: &FrameTable, test_fraction: f64, seed: u64) -> SplitPlan {
    session_split(&split_tallies(frames), test_fraction, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub task: Task,
    pub strategy: StrategyKind,
    pub budget: f64,
    pub gate: f64,
    pub pupil_variant: PupilVariant,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    /// Distinct trainings actually run (identical selections share one).
    pub trainings: usize,
}

/// Evaluates every manifest on every task. Manifests with identical frame
/// sets are trained once per task. Failed cells are recorded and skipped.
pub fn evaluate<T: Trainer>(
    tasks: &[Task],
    manifests: &[SelectionManifest],
    frames: &FrameTable,
    embeddings: &EmbeddingMatrix,
    split: &SplitPlan,
    trainer: &T,
) -> Result<SweepOutcome, ProbeError> {
    let digests: Vec<String> = manifests.par_iter().map(|m| m.selection_digest()).collect();
    let mut outcome = SweepOutcome::default();
    for &task in tasks {
        let ctx = EvalContext::new(task, split, frames, embeddings)?;
        let mut first: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, d) in digests.iter().enumerate() {
            first.entry(d.as_str()).or_insert(i);
        }
        let unique: Vec<usize> = first.values().copied().collect();
        let results: HashMap<usize, Result<(f64, usize), String>> = unique
            .par_iter()
            .map(|&i| {
                let m = &manifests[i];
                let start = Instant::now();
                let r = ctx.run_cell(m, trainer);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                match &r {
                    Ok(o) => info!(
                        "cell task={} strategy={} gate={} variant={} budget={} seed={} n_train={} f1={:.4} wall_ms={ms:.1}",
                        task, m.spec.kind, m.spec.gate_k, m.spec.pupil_variant, m.budget, m.spec.seed,
                        o.n_train_frames, o.f1.macro_f1
                    ),
                    Err(e) => warn!(
                        "cell task={} strategy={} gate={} variant={} budget={} seed={} failed: {e} wall_ms={ms:.1}",
                        task, m.spec.kind, m.spec.gate_k, m.spec.pupil_variant, m.budget, m.spec.seed
                    ),
                }
                (i, r.map(|o| (o.f1.macro_f1, o.n_train_frames)).map_err(|e| e.to_string()))
            })
            .collect();
        outcome.trainings += unique.len();
        for (m, d) in manifests.iter().zip(&digests) {
            match &results[&first[d.as_str()]] {
                Ok((f1, n)) => outcome.cells.push(CellResult {
                    task,
                    strategy: m.spec.kind,
                    budget: m.budget,
                    gate: m.spec.gate_k,
                    pupil_variant: m.spec.pupil_variant,
                    seed: m.spec.seed,
                    split_seed: split.seed,
                    f1: *f1,
                    n_train_frames: *n,
                }),
                Err(e) => outcome.failures.push(CellFailure {
                    task,
                    strategy: m.spec.kind,
                    budget: m.budget,
                    gate: m.spec.gate_k,
                    pupil_variant: m.spec.pupil_variant,
                    seed: m.spec.seed,
                    error: e.clone(),
                }),
            }
        }
    }
    Ok(outcome)
}

/// Convenience wrapper with the logistic probe.
pub fn evaluate_logistic(
    tasks: &[Task],
    manifests: &[SelectionManifest],
    frames: &FrameTable,
    embeddings: &EmbeddingMatrix,
    split: &SplitPlan,
    probe: &ProbeConfig,
) -> Result<SweepOutcome, ProbeError> {
    evaluate(tasks, manifests, frames, embeddings, split, &LogisticTrainer(*probe))
}

/// Macro F1 of a probe trained and scored on every labelled frame.
pub fn in_sample_f1(task: Task, frames: &FrameTable, embeddings: &EmbeddingMatrix, probe: &ProbeConfig) -> Result<f64, ProbeError> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for f in frames.values().flatten() {
        if let (Some(label), Some(row)) = (f.label(task), f.embedding_row) {
            rows.push(embeddings.row(row).iter().map(|&v| v as f64).collect::<Vec<f64>>());
            y.push(label);
        }
    }
    let x = Matrix::from_rows(&rows);
    let model = LogisticTrainer(*probe).fit(&x, &y)?;
    let classes: Vec<usize> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(crate::probe::macro_f1(&crate::probe::Classifier::predict(&model, &x), &y, &classes).macro_f1)
}

/// Lag profiles of |dp/dt| and g against frame-to-frame feature change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    pub pupil_derivative: Vec<LagPoint>,
    pub gaze: Vec<LagPoint>,
}

impl LagReport {
    pub fn mean_at(points: &[LagPoint], lag: i64) -> Option<f64> {
        points.iter().find(|p| p.lag == lag).map(|p| p.mean_rho)
    }
}

pub fn lag_analysis<S: AsRef<[ScoreRow]>>(
    sessions: &[S],
    frames: &FrameTable,
    embeddings: &EmbeddingMatrix,
    lags: impl IntoIterator<Item = i64> + Clone,
) -> Result<LagReport, StatsError> {
    let mut deriv = Vec::new();
    let mut gaze = Vec::new();
    for rows in sessions {
        let rows = rows.as_ref();
        let Some(first) = rows.first() else { continue };
        let Some(list) = frames.get(&first.session_id) else { continue };
        let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
        check_one_fps(&times)?;
        let by_id: HashMap<&str, Option<usize>> = list.iter().map(|f| (f.frame_id.as_str(), f.embedding_row)).collect();
        let emb: Vec<Option<&[f32]>> = rows
            .iter()
            .map(|r| by_id.get(r.frame_id.as_str()).copied().flatten().map(|i| embeddings.row(i)))
            .collect();
        let (delta, _) = feature_change(&emb);
        deriv.push((rows.iter().map(|r| r.deriv.abs()).collect::<Vec<f64>>(), delta.clone()));
        gaze.push((rows.iter().map(|r| r.g).collect::<Vec<f64>>(), delta));
    }
    Ok(LagReport { pupil_derivative: lag_profile(&deriv, lags.clone()), gaze: lag_profile(&gaze, lags) })
}

/// Mean F1 of one strategy at one budget across seeds.
pub fn mean_f1(cells: &[CellResult], task: Task, kind: StrategyKind, gate: f64, variant: PupilVariant, budget: f64) -> Option<f64> {
    let v: Vec<f64> = cells
        .iter()
        .filter(|c| {
            c.task == task && c.strategy == kind && c.gate == gate && c.pupil_variant == variant && c.budget == budget
        })
        .map(|c| c.f1)
        .collect();
    (!v.is_empty()).then(|| mean(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_counts() {
        let g = Grid { variants: vec![PupilVariant::Delayed], ..Grid::default() };
        let cells = g.cells();
        assert_eq!(cells.len(), 6 * 6 * 10);
    }

    #[test]
    fn sweep_gates_deduplicate() {
        let g = Grid {
            strategies: vec![StrategyKind::Dual],
            variants: vec![PupilVariant::Delayed],
            sweep_gates: SWEEP_GATES.to_vec(),
            ..Grid::default()
        };
        assert_eq!(g.cells().len(), 5 * 6 * 10);
    }

    #[test]
    fn single_strategy_gate_grid() {
        let g = Grid {
            strategies: vec![StrategyKind::Dual],
            variants: vec![PupilVariant::Delayed],
            ..Grid::default()
        };
        assert_eq!(g.cells().len(), 60);
    }
}
