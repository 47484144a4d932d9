use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eyecurate_cli::commands::{
    cmd_all, cmd_eval, cmd_lags, cmd_report, cmd_score, cmd_select, cmd_select_one, cmd_synth, CliError, Context,
};
use eyecurate_cli::config::{Paths, RunConfig};
use eyecurate_core::synth::SynthConfig;
use eyecurate_core::{PupilVariant, StrategyKind, StrategySpec};

#[derive(Parser)]
#[command(name = "eyecurate", version, about = "Frame curation from gaze stability and pupil novelty")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Score every session.
    Score(RunArgs),
    /// Write selection manifests for the grid, or one manifest with --scores.
    Select(SelectArgs),
    /// Train probes on every manifest and aggregate.
    Eval(RunArgs),
    /// Lagged Spearman profiles of pupil and gaze against feature change.
    Lags(RunArgs),
    /// Bundle aggregates into plot_data.json and summary.txt.
    Report(RunArgs),
    /// score, select, eval, lags and report in sequence.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Golden,
    VedbShape,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "golden")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sessions: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` with `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory holding eye/, frames.csv and embeddings.emb.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override, repeatable: `--set grid.seeds=0-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated strategy kinds.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated gate fractions.
    #[arg(long)]
    gate: Option<String>,
    /// Comma-separated budget fractions.
    #[arg(long)]
    budget: Option<String>,
    /// Pupil window variants: delayed, centered.
    #[arg(long)]
    pupil: Option<String>,
    /// Seeds, e.g. `0-9` or `3,17`.
    #[arg(long)]
    seed: Option<String>,
    /// Recompute outputs even when they are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Single-manifest mode: select from this scores CSV and write to --out.
    #[arg(long)]
    scores: Option<PathBuf>,
}

impl RunArgs {
    fn context(&self) -> Result<Context, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(data) = &self.data {
            let out = cfg.paths.out_dir.clone();
            cfg.paths = Paths::for_data(data, &out);
        }
        if let Some(out) = &self.out {
            cfg.paths.out_dir = out.clone();
        }
        cfg.apply_overrides(&self.overrides)?;
        let flags = [
            ("grid.strategies", &self.strategy),
            ("grid.gates", &self.gate),
            ("grid.budgets", &self.budget),
            ("grid.variants", &self.pupil),
            ("grid.seeds", &self.seed),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                cfg.set(key, v)?;
            }
        }
        Context::new(cfg, self.force)
    }
}

fn single(v: &Option<String>, what: &str) -> Result<String, CliError> {
    match v {
        Some(s) if !s.contains(',') => Ok(s.trim().to_string()),
        Some(_) => Err(CliError::Config(format!("single-manifest mode takes one --{what}"))),
        None => Err(CliError::Config(format!("single-manifest mode needs --{what}"))),
    }
}

fn select_one(args: &SelectArgs, scores: &Path) -> Result<(), CliError> {
    let r = &args.run;
    let out = r.out.clone().ok_or_else(|| CliError::Config("single-manifest mode needs --out".into()))?;
    let ctx = r.context()?;
    let kind_s = single(&r.strategy, "strategy")?;
    let kind = StrategyKind::parse(&kind_s).ok_or_else(|| CliError::Config(format!("unknown strategy {kind_s:?}")))?;
    let budget: f64 = single(&r.budget, "budget")?
        .parse()
        .map_err(|_| CliError::Config("--budget must be a number".into()))?;
    let mut spec = StrategySpec::new(kind).with_weights(ctx.cfg.grid.fusion_weights.0, ctx.cfg.grid.fusion_weights.1);
    spec.fusion_standardize = ctx.cfg.grid.fusion_standardize;
    if kind.is_gated() {
        let g = r.gate.as_ref().map_or(Ok(ctx.cfg.grid.gates[0].to_string()), |_| single(&r.gate, "gate"))?;
        spec = spec.with_gate(g.parse().map_err(|_| CliError::Config("--gate must be a number".into()))?);
    } else {
        spec = spec.with_gate(1.0);
    }
    if let Some(p) = &r.pupil {
        let v = PupilVariant::parse(p).ok_or_else(|| CliError::Config(format!("unknown pupil variant {p:?}")))?;
        spec = spec.with_variant(v);
    }
    if let Some(s) = &r.seed {
        spec = spec.with_seed(s.parse().map_err(|_| CliError::Config("--seed must be one integer".into()))?);
    }
    let m = cmd_select_one(&ctx, scores, &spec, budget, &out)?;
    println!("{} frames selected -> {}", m.selected.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = match a.preset {
                Preset::Golden => SynthConfig::golden(),
                Preset::VedbShape => SynthConfig::vedb_shape(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(n) = a.sessions {
                cfg.n_sessions = n;
            }
            let sum = cmd_synth(&a.out, &cfg, a.force)?;
            println!("{sum}");
        }
        Command::Score(a) => {
            let n = cmd_score(&a.context()?)?;
            println!("scored {n} sessions");
        }
        Command::Select(a) => match &a.scores {
            Some(scores) => select_one(&a, scores)?,
            None => {
                let (written, skipped) = cmd_select(&a.run.context()?)?;
                println!("wrote {written} manifests, {skipped} up to date");
            }
        },
        Command::Eval(a) => {
            let s = cmd_eval(&a.context()?)?;
            println!("{} cells, {} trainings", s.cells, s.trainings);
        }
        Command::Lags(a) => {
            let r = cmd_lags(&a.context()?)?;
            println!("{} pupil lags, {} gaze lags", r.pupil_derivative.len(), r.gaze.len());
        }
        Command::Report(a) => {
            let p = cmd_report(&a.context()?)?;
            println!("{}", p.display());
        }
        Command::Run(a) => cmd_all(&a.context()?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
