//! The subcommands, operating on files.
//!
//! Output layout under `paths.out_dir`:
//!
//! ```text
//! scores/<session>.csv   qc.csv
//! manifests/<kind>_k<gate>_b<budget>_<variant>_s<seed>.jsonl
//! results.csv  failures.csv  curves.csv  aulc.csv  ablation.csv
//! decomposition.csv  task_summary.csv  wins.csv  gate_sweep.csv  split.json
//! lags.csv
//! plot_data.json  summary.txt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use eyecurate_core::experiment::{
    build_manifests, default_split, evaluate_logistic, lag_analysis, train_rows, CellFailure, LagReport,
};
use eyecurate_core::ingest::{load_embeddings, parse_eye_stream, parse_frames, EyeFormat, IngestError};
use eyecurate_core::probe::SplitPlan;
use eyecurate_core::scoring::{read_scores, write_scores};
use eyecurate_core::select::{read_manifest, write_manifest};
use eyecurate_core::stats::CellResult;
use eyecurate_core::synth::{directory_checksum, generate_dataset, SynthConfig};
use eyecurate_core::{score_session, select, EmbeddingMatrix, FrameTable, LabelDictionary, ScoreRow, SelectionManifest, SessionBundle, SessionReport, StrategySpec};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::report::{aggregate, lag_report_from_rows, lag_rows, read_csv, summary_text, write_csv, LagRow, PlotData};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{failed} of {total} cells failed; see failures.csv")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Partial { .. } => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Config plus run-level switches shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, force: bool) -> Result<Self, CliError> {
        cfg.validate()?;
        Ok(Context { cfg, force })
    }

    pub fn header(&self) -> String {
        format!("eyecurate {TOOL_VERSION} config={}", self.cfg.hash())
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(rel)
    }

    /// True when `path` exists, was written under the current config and
    /// `--force` was not given.
    fn up_to_date(&self, path: &Path) -> bool {
        !self.force && first_line(path).is_some_and(|l| l == format!("# {}", self.header()))
    }

    fn frames(&self) -> Result<FrameTable, CliError> {
        let p = &self.cfg.paths.frames;
        if !p.exists() {
            return Err(CliError::Config(format!("frames file {} does not exist", p.display())));
        }
        Ok(parse_frames(p, &LabelDictionary::activity(), &LabelDictionary::scene())?)
    }

    fn embeddings(&self) -> Result<EmbeddingMatrix, CliError> {
        let p = &self.cfg.paths.embeddings;
        if !p.exists() {
            return Err(CliError::Config(format!("embeddings file {} does not exist", p.display())));
        }
        Ok(load_embeddings(p)?)
    }
}

fn first_line(path: &Path) -> Option<String> {
    let f = File::open(path).ok()?;
    BufReader::new(f).lines().next()?.ok()
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn csv_bytes<T: Serialize>(header: &str, rows: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows).expect("writing to memory");
    buf
}

// ---------------------------------------------------------------- synth

/// Writes a synthetic dataset and returns its checksum. Refuses a non-empty
/// directory unless `force`, in which case previously generated files are
/// replaced.
pub fn cmd_synth(out: &Path, cfg: &SynthConfig, force: bool) -> Result<String, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let non_empty = out.read_dir().is_ok_and(|mut d| d.next().is_some());
    if non_empty {
        if !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            )));
        }
        for name in ["frames.csv", "embeddings.emb", "ground_truth.jsonl"] {
            let _ = fs::remove_file(out.join(name));
        }
        let _ = fs::remove_dir_all(out.join("eye"));
    }
    let ds = generate_dataset(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let sum = ds.write(out, TOOL_VERSION).map_err(|e| CliError::Data(e.to_string()))?;
    info!("synth sessions={} frames={} checksum={sum}", ds.sessions.len(), ds.frame_table().values().map(Vec::len).sum::<usize>());
    Ok(sum)
}

pub fn dataset_checksum(dir: &Path) -> Result<String, CliError> {
    directory_checksum(dir).map_err(|e| CliError::Data(e.to_string()))
}

// ---------------------------------------------------------------- score

fn eye_path(dir: &Path, session: &str) -> Option<PathBuf> {
    ["csv", "jsonl", "json"].iter().map(|ext| dir.join(format!("{session}.{ext}"))).find(|p| p.exists())
}

#[derive(Clone, Debug, Serialize)]
struct QcRow {
    session_id: String,
    n_frames: usize,
    n_samples: usize,
    dropout_frames: usize,
    dropout_rate: f64,
    pupil_valid_centered: usize,
    pupil_valid_delayed: usize,
    luminance_fallback_centered: bool,
    luminance_fallback_delayed: bool,
    scale_centered: String,
    scale_delayed: String,
}

impl From<&SessionReport> for QcRow {
    fn from(r: &SessionReport) -> Self {
        QcRow {
            session_id: r.session_id.clone(),
            n_frames: r.n_frames,
            n_samples: r.n_samples,
            dropout_frames: r.dropout_frames,
            dropout_rate: r.dropout_rate,
            pupil_valid_centered: r.pupil_valid_centered,
            pupil_valid_delayed: r.pupil_valid_delayed,
            luminance_fallback_centered: r.luminance_fallback_centered,
            luminance_fallback_delayed: r.luminance_fallback_delayed,
            scale_centered: format!("{:?}", r.scale_centered).to_lowercase(),
            scale_delayed: format!("{:?}", r.scale_delayed).to_lowercase(),
        }
    }
}

/// Scores every session in the frames table. Returns the number of sessions
/// written (0 when everything was up to date).
pub fn cmd_score(ctx: &Context) -> Result<usize, CliError> {
    let frames = ctx.frames()?;
    let eye_dir = &ctx.cfg.paths.eye_dir;
    if !eye_dir.is_dir() {
        return Err(CliError::Config(format!("eye stream directory {} does not exist", eye_dir.display())));
    }
    let qc_path = ctx.out("qc.csv");
    let stale: Vec<&String> = frames.keys().filter(|s| !ctx.up_to_date(&ctx.out(&format!("scores/{s}.csv")))).collect();
    if stale.is_empty() && ctx.up_to_date(&qc_path) {
        info!("score: outputs up to date");
        return Ok(0);
    }
    create_dir(&ctx.out("scores"))?;
    let header = ctx.header();
    let reports: Vec<SessionReport> = frames
        .par_iter()
        .map(|(session, list)| {
            let path = eye_path(eye_dir, session)
                .ok_or_else(|| CliError::Data(format!("no eye stream for session {session} in {}", eye_dir.display())))?;
            let samples = parse_eye_stream(&path, EyeFormat::from_path(&path))?;
            let bundle = SessionBundle { session_id: session.clone(), frames: list.clone(), samples };
            let table = score_session(&bundle, &ctx.cfg.scoring);
            let out = ctx.out(&format!("scores/{session}.csv"));
            let mut buf = Vec::new();
            write_scores(&mut buf, &table.rows, Some(&header)).expect("writing to memory");
            write_file(&out, &buf)?;
            Ok(table.report)
        })
        .collect::<Result<_, CliError>>()?;
    let qc: Vec<QcRow> = reports.iter().map(QcRow::from).collect();
    write_file(&qc_path, &csv_bytes(&header, &qc))?;
    info!("score: {} sessions", reports.len());
    Ok(reports.len())
}

/// Score rows of every session in the frames table, in session order.
fn load_scores(ctx: &Context, frames: &FrameTable) -> Result<Vec<Vec<ScoreRow>>, CliError> {
    frames
        .keys()
        .map(|s| {
            let p = ctx.out(&format!("scores/{s}.csv"));
            let f = File::open(&p).map_err(|_| CliError::Data(format!("missing {}; run `score` first", p.display())))?;
            Ok(read_scores(BufReader::new(f))?)
        })
        .collect()
}

// ---------------------------------------------------------------- select

pub fn manifest_name(spec: &StrategySpec, budget: f64) -> String {
    format!("{}_k{}_b{}_{}_s{}.jsonl", spec.kind, spec.gate_k, budget, spec.pupil_variant, spec.seed)
}

fn manifest_matches(path: &Path, hash: &str) -> bool {
    let Ok(f) = File::open(path) else { return false };
    match read_manifest(BufReader::new(f)) {
        Ok((h, m)) => h.config_hash == hash && h.tool_version == TOOL_VERSION && h.selection_digest == m.selection_digest(),
        Err(_) => false,
    }
}

/// Writes one manifest per grid cell. Returns (written, skipped).
pub fn cmd_select(ctx: &Context) -> Result<(usize, usize), CliError> {
    let frames = ctx.frames()?;
    let rows: Vec<ScoreRow> = load_scores(ctx, &frames)?.into_iter().flatten().collect();
    let split = default_split(&frames, ctx.cfg.split.test_fraction, ctx.cfg.split.seed);
    let rows = train_rows(&rows, &split);
    let dir = ctx.out("manifests");
    create_dir(&dir)?;
    let hash = ctx.cfg.hash();
    let cells = ctx.cfg.grid.cells();
    let todo: Vec<bool> =
        cells.par_iter().map(|(spec, b)| ctx.force || !manifest_matches(&dir.join(manifest_name(spec, *b)), &hash)).collect();
    if !todo.contains(&true) {
        info!("select: {} manifests up to date", cells.len());
        return Ok((0, cells.len()));
    }
    let manifests = build_manifests(&ctx.cfg.grid, &rows, &frames, ctx.cfg.stratify_task)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let written: usize = manifests
        .par_iter()
        .zip(&todo)
        .filter(|(_, t)| **t)
        .map(|(m, _)| {
            let path = dir.join(manifest_name(&m.spec, m.budget));
            let mut buf = Vec::new();
            write_manifest(&mut buf, m, TOOL_VERSION, &hash).map_err(|e| CliError::Data(e.to_string()))?;
            write_file(&path, &buf).map(|_| 1)
        })
        .sum::<Result<usize, CliError>>()?;
    info!("select: wrote {written} manifests, {} up to date", cells.len() - written);
    Ok((written, cells.len() - written))
}

/// Selects once from a single scores file and writes one manifest.
pub fn cmd_select_one(
    ctx: &Context,
    scores: &Path,
    spec: &StrategySpec,
    budget: f64,
    out: &Path,
) -> Result<SelectionManifest, CliError> {
    let f = File::open(scores).map_err(|_| CliError::Config(format!("scores file {} does not exist", scores.display())))?;
    let rows = read_scores(BufReader::new(f))?;
    if spec.stratified {
        return Err(CliError::Config("stratified selection needs the frames table; use grid mode".into()));
    }
    let m = select(spec, budget, &rows, None).map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    write_manifest(&mut buf, &m, TOOL_VERSION, &ctx.cfg.hash()).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(out, &buf)?;
    Ok(m)
}

fn load_manifests(ctx: &Context) -> Result<Vec<SelectionManifest>, CliError> {
    let dir = ctx.out("manifests");
    ctx.cfg
        .grid
        .cells()
        .par_iter()
        .map(|(spec, b)| {
            let p = dir.join(manifest_name(spec, *b));
            let f = File::open(&p).map_err(|_| CliError::Data(format!("missing {}; run `select` first", p.display())))?;
            let (_, m) = read_manifest(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(m)
        })
        .collect()
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub cells: usize,
    pub trainings: usize,
    pub failures: usize,
}

fn check_labels(frames: &FrameTable, ctx: &Context) -> Result<(), CliError> {
    for &task in &ctx.cfg.grid.tasks {
        if !frames.values().flatten().any(|f| f.label(task).is_some()) {
            return Err(CliError::Data(format!("no frame carries a label for task {task}")));
        }
    }
    Ok(())
}

/// Evaluates every manifest of the grid and writes the result tables.
/// Returns `Partial` when some cells failed; all other outputs are still
/// written.
pub fn cmd_eval(ctx: &Context) -> Result<EvalSummary, CliError> {
    let results_path = ctx.out("results.csv");
    if ctx.up_to_date(&results_path) && !ctx.out("failures.csv").exists() {
        info!("eval: results up to date");
        let cells: Vec<CellResult> = read_results(&results_path)?;
        return Ok(EvalSummary { cells: cells.len(), trainings: 0, failures: 0 });
    }
    let frames = ctx.frames()?;
    check_labels(&frames, ctx)?;
    let emb = ctx.embeddings()?;
    let manifests = load_manifests(ctx)?;
    let split = default_split(&frames, ctx.cfg.split.test_fraction, ctx.cfg.split.seed);
    let outcome = evaluate_logistic(&ctx.cfg.grid.tasks, &manifests, &frames, &emb, &split, &ctx.cfg.probe)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let header = ctx.header();
    write_split(ctx, &split)?;
    let failures_path = ctx.out("failures.csv");
    if outcome.failures.is_empty() {
        let _ = fs::remove_file(&failures_path);
    } else {
        write_file(&failures_path, &csv_bytes(&header, &outcome.failures))?;
    }
    write_aggregates(ctx, &outcome.cells)?;
    write_file(&results_path, &csv_bytes(&header, &outcome.cells))?;
    let summary = EvalSummary { cells: outcome.cells.len(), trainings: outcome.trainings, failures: outcome.failures.len() };
    info!("eval: {} cells, {} trainings, {} failures", summary.cells, summary.trainings, summary.failures);
    if summary.failures > 0 {
        return Err(CliError::Partial { failed: summary.failures, total: summary.failures + summary.cells });
    }
    Ok(summary)
}

fn write_split(ctx: &Context, split: &SplitPlan) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct SplitFile<'a> {
        tool_version: &'a str,
        config_hash: String,
        split: &'a SplitPlan,
    }
    let body = SplitFile { tool_version: TOOL_VERSION, config_hash: ctx.cfg.hash(), split };
    let mut json = serde_json::to_vec_pretty(&body).expect("serializes");
    json.push(b'\n');
    write_file(&ctx.out("split.json"), &json)
}

fn write_aggregates(ctx: &Context, cells: &[CellResult]) -> Result<(), CliError> {
    let header = ctx.header();
    let agg = aggregate(cells, &ctx.cfg.stats);
    write_file(&ctx.out("curves.csv"), &csv_bytes(&header, &agg.curve_rows()))?;
    write_file(&ctx.out("aulc.csv"), &csv_bytes(&header, &agg.aulc_rows()))?;
    write_file(&ctx.out("ablation.csv"), &csv_bytes(&header, &agg.ablation))?;
    write_file(&ctx.out("decomposition.csv"), &csv_bytes(&header, &agg.decomposition))?;
    write_file(&ctx.out("wins.csv"), &csv_bytes(&header, &agg.wins))?;
    write_file(&ctx.out("task_summary.csv"), &csv_bytes(&header, &agg.task_summary_rows()))?;
    let sweep = agg.gate_sweep_rows();
    if !sweep.is_empty() {
        write_file(&ctx.out("gate_sweep.csv"), &csv_bytes(&header, &sweep))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<CellResult>, CliError> {
    let bytes = fs::read(path).map_err(|_| CliError::Data(format!("missing {}; run `eval` first", path.display())))?;
    read_csv(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- lags

pub fn cmd_lags(ctx: &Context) -> Result<LagReport, CliError> {
    let frames = ctx.frames()?;
    let emb = ctx.embeddings()?;
    let scores = load_scores(ctx, &frames)?;
    let (lo, hi) = ctx.cfg.lags;
    let report = lag_analysis(&scores, &frames, &emb, lo..=hi).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&ctx.out("lags.csv"), &csv_bytes(&ctx.header(), &lag_rows(&report)))?;
    Ok(report)
}

// ---------------------------------------------------------------- report

/// Bundles the aggregates of `results.csv` (and `lags.csv` when present)
/// into `plot_data.json` and `summary.txt`.
pub fn cmd_report(ctx: &Context) -> Result<PathBuf, CliError> {
    let cells = read_results(&ctx.out("results.csv"))?;
    let lags_path = ctx.out("lags.csv");
    let lags = if lags_path.exists() {
        let bytes = fs::read(&lags_path).map_err(io_err(&lags_path))?;
        let rows: Vec<LagRow> = read_csv(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", lags_path.display())))?;
        Some(lag_report_from_rows(&rows))
    } else {
        None
    };
    let failures_path = ctx.out("failures.csv");
    let failures: Vec<CellFailure> = match fs::read(&failures_path) {
        Ok(bytes) => read_csv(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", failures_path.display())))?,
        Err(_) => Vec::new(),
    };
    let agg = aggregate(&cells, &ctx.cfg.stats);
    let hash = ctx.cfg.hash();
    let plot = PlotData {
        tool_version: TOOL_VERSION,
        config_hash: &hash,
        curves: agg.curve_rows(),
        aulc: agg.aulc_rows(),
        ablation: &agg.ablation,
        decomposition: &agg.decomposition,
        gate_sweep: agg.gate_sweep_rows(),
        task_summary: agg.task_summary_rows(),
        wins: &agg.wins,
        lags: lags.as_ref(),
        failures: &failures,
    };
    let path = ctx.out("plot_data.json");
    let mut json = serde_json::to_vec_pretty(&plot).expect("serializes");
    json.push(b'\n');
    write_file(&path, &json)?;
    write_file(&ctx.out("summary.txt"), summary_text(&ctx.header(), &agg).as_bytes())?;
    Ok(path)
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, CliError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = entry.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).map_err(io_err(&p))?);
            }
        }
    }
    Ok(out)
}

/// Runs score, select, eval, lags and report in order.
pub fn cmd_all(ctx: &Context) -> Result<(), CliError> {
    cmd_score(ctx)?;
    cmd_select(ctx)?;
    let eval = cmd_eval(ctx);
    cmd_lags(ctx)?;
    cmd_report(ctx)?;
    eval.map(|_| ())
}
