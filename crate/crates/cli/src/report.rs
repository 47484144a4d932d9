//! Aggregate tables and their CSV / JSON renderings.

use std::io::{self, Write};

use eyecurate_core::experiment::{CellFailure, LagReport};
use eyecurate_core::stats::{
    ablation, aulc_records, decompositions, learning_curves, variant_wins, AblationRow, AulcRecord, CellResult,
    Decomposition, LagPoint, LearningCurve, StatsConfig, WinRecord,
};
use eyecurate_core::{PupilVariant, StrategyKind, Task};
use serde::{Deserialize, Serialize};

/// Every aggregate derived from a results table.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub curves: Vec<LearningCurve>,
    pub aulc: Vec<AulcRecord>,
    pub ablation: Vec<AblationRow>,
    pub decomposition: Vec<Decomposition>,
    pub wins: Vec<WinRecord>,
}

pub fn aggregate(cells: &[CellResult], stats: &StatsConfig) -> Aggregates {
    let curves = learning_curves(cells);
    let aulc = aulc_records(&curves, stats);
    Aggregates {
        ablation: ablation(&curves, stats),
        decomposition: decompositions(&aulc),
        wins: variant_wins(&curves),
        aulc,
        curves,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub task: Task,
    pub strategy: StrategyKind,
    pub gate: f64,
    pub pupil_variant: PupilVariant,
    pub budget: f64,
    pub mean_f1: f64,
    pub sd_f1: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AulcRow {
    pub task: Task,
    pub strategy: StrategyKind,
    pub gate: f64,
    pub pupil_variant: PupilVariant,
    pub aulc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub delta_vs_random: f64,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSweepRow {
    pub task: Task,
    pub pupil_variant: PupilVariant,
    pub gate: f64,
    pub budget: f64,
    pub dual_f1: f64,
    pub gate_random_f1: Option<f64>,
}

/// Per-task verdict: best strategy and whether pupil ranking adds value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummaryRow {
    pub task: Task,
    pub pupil_variant: PupilVariant,
    pub gate: f64,
    pub best_strategy: StrategyKind,
    pub best_gate: f64,
    pub best_aulc: f64,
    pub dual_vs_random: f64,
    pub p_value: Option<f64>,
    /// Dual beats both gate+random and gaze-only on AULC.
    pub pupil_helps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub signal: String,
    pub lag: i64,
    pub mean_rho: f64,
    pub sd_rho: Option<f64>,
    pub n_sessions: usize,
}

impl Aggregates {
    pub fn curve_rows(&self) -> Vec<CurveRow> {
        self.curves
            .iter()
            .flat_map(|c| {
                c.budgets.iter().enumerate().map(move |(i, &b)| CurveRow {
                    task: c.key.task,
                    strategy: c.key.strategy,
                    gate: c.key.gate,
                    pupil_variant: c.key.pupil_variant,
                    budget: b,
                    mean_f1: c.mean_f1[i],
                    sd_f1: c.sd_f1[i],
                    n_seeds: c.n_seeds,
                })
            })
            .collect()
    }

    pub fn aulc_rows(&self) -> Vec<AulcRow> {
        self.aulc
            .iter()
            .map(|r| AulcRow {
                task: r.key.task,
                strategy: r.key.strategy,
                gate: r.key.gate,
                pupil_variant: r.key.pupil_variant,
                aulc: r.aulc,
                ci_lo: r.ci_lo,
                ci_hi: r.ci_hi,
                delta_vs_random: r.delta_vs_baseline,
                p_value: (!r.p_value.is_nan()).then_some(r.p_value),
                significant: r.significant,
                n_seeds: r.n_seeds,
            })
            .collect()
    }

    pub fn task_summary_rows(&self) -> Vec<TaskSummaryRow> {
        let mut rows = Vec::new();
        for d in self.aulc.iter().filter(|r| r.key.strategy == StrategyKind::Dual) {
            let k = d.key;
            let same = |r: &&AulcRecord| r.key.task == k.task && r.key.pupil_variant == k.pupil_variant;
            let Some(best) = self.aulc.iter().filter(same).max_by(|a, b| a.aulc.total_cmp(&b.aulc)) else { continue };
            let beats = |kind: StrategyKind, gate: Option<f64>| {
                self.aulc
                    .iter()
                    .filter(same)
                    .filter(|r| r.key.strategy == kind && gate.is_none_or(|g| r.key.gate == g))
                    .all(|r| d.aulc > r.aulc)
            };
            rows.push(TaskSummaryRow {
                task: k.task,
                pupil_variant: k.pupil_variant,
                gate: k.gate,
                best_strategy: best.key.strategy,
                best_gate: best.key.gate,
                best_aulc: best.aulc,
                dual_vs_random: d.delta_vs_baseline,
                p_value: (!d.p_value.is_nan()).then_some(d.p_value),
                pupil_helps: beats(StrategyKind::GateRandom, Some(k.gate)) && beats(StrategyKind::GazeOnly, None),
            });
        }
        rows
    }

    /// Dual (and gate+random where present) per gate and budget; empty when
    /// only one gate was evaluated.
    pub fn gate_sweep_rows(&self) -> Vec<GateSweepRow> {
        let duals: Vec<&LearningCurve> = self.curves.iter().filter(|c| c.key.strategy == StrategyKind::Dual).collect();
        let gates: std::collections::BTreeSet<u64> = duals.iter().map(|c| c.key.gate.to_bits()).collect();
        if gates.len() < 2 {
            return Vec::new();
        }
        let mut rows = Vec::new();
        for d in duals {
            let gr = self.curves.iter().find(|c| {
                c.key.strategy == StrategyKind::GateRandom
                    && c.key.task == d.key.task
                    && c.key.gate == d.key.gate
                    && c.key.pupil_variant == d.key.pupil_variant
            });
            for (i, &b) in d.budgets.iter().enumerate() {
                rows.push(GateSweepRow {
                    task: d.key.task,
                    pupil_variant: d.key.pupil_variant,
                    gate: d.key.gate,
                    budget: b,
                    dual_f1: d.mean_f1[i],
                    gate_random_f1: gr.and_then(|g| g.at(b).map(|j| g.mean_f1[j])),
                });
            }
        }
        rows
    }
}

pub fn lag_rows(report: &LagReport) -> Vec<LagRow> {
    let rows = |name: &str, pts: &[LagPoint]| {
        pts.iter()
            .map(|p| LagRow {
                signal: name.to_string(),
                lag: p.lag,
                mean_rho: p.mean_rho,
                sd_rho: p.sd_rho,
                n_sessions: p.n_sessions,
            })
            .collect::<Vec<_>>()
    };
    let mut out = rows("pupil_derivative", &report.pupil_derivative);
    out.extend(rows("gaze", &report.gaze));
    out
}

pub fn lag_report_from_rows(rows: &[LagRow]) -> LagReport {
    let pick = |name: &str| {
        rows.iter()
            .filter(|r| r.signal == name)
            .map(|r| LagPoint { lag: r.lag, mean_rho: r.mean_rho, sd_rho: r.sd_rho, n_sessions: r.n_sessions })
            .collect()
    };
    LagReport { pupil_derivative: pick("pupil_derivative"), gaze: pick("gaze") }
}

/// Writes `# <header>` followed by a headed CSV of `rows`.
pub fn write_csv<W: Write, T: Serialize>(mut w: W, header: &str, rows: &[T]) -> io::Result<()> {
    writeln!(w, "# {header}")?;
    let mut csv = csv::WriterBuilder::new().has_headers(true).from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(io::Error::other)?;
    }
    csv.flush()
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, csv::Error> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes).deserialize().collect()
}

/// JSON bundle for external plotting.
#[derive(Clone, Debug, Serialize)]
pub struct PlotData<'a> {
    pub tool_version: &'a str,
    pub config_hash: &'a str,
    pub curves: Vec<CurveRow>,
    pub aulc: Vec<AulcRow>,
    pub ablation: &'a [AblationRow],
    pub decomposition: &'a [Decomposition],
    pub gate_sweep: Vec<GateSweepRow>,
    pub task_summary: Vec<TaskSummaryRow>,
    pub wins: &'a [WinRecord],
    pub lags: Option<&'a LagReport>,
    pub failures: &'a [CellFailure],
}

/// Plain-text summary of the AULC and ablation tables.
pub fn summary_text(header: &str, agg: &Aggregates) -> String {
    let mut s = format!("# {header}\n\nAULC (mean macro F1 over budgets)\n");
    s.push_str(&format!(
        "{:<9} {:<12} {:>5} {:<8} {:>7} {:>15} {:>8} {:>8}\n",
        "task", "strategy", "gate", "variant", "aulc", "95% CI", "delta", "p"
    ));
    for r in agg.aulc_rows() {
        s.push_str(&format!(
            "{:<9} {:<12} {:>5} {:<8} {:>7.4} [{:.4},{:.4}] {:>+8.4} {:>8}\n",
            r.task.as_str(),
            r.strategy.as_str(),
            r.gate,
            r.pupil_variant.as_str(),
            r.aulc,
            r.ci_lo,
            r.ci_hi,
            r.delta_vs_random,
            r.p_value.map_or("-".to_string(), |p| format!("{p:.4}")),
        ));
    }
    if !agg.ablation.is_empty() {
        s.push_str("\nDual versus gate+random per budget\n");
        s.push_str(&format!(
            "{:<9} {:<8} {:>5} {:>6} {:>7} {:>15} {:>8} {:>7}\n",
            "task", "variant", "gate", "budget", "dual", "gate_random", "p", "d"
        ));
        for r in &agg.ablation {
            s.push_str(&format!(
                "{:<9} {:<8} {:>5} {:>6} {:>7.4} {:>7.4}±{:<7.4} {:>8.4} {:>7}\n",
                r.task.as_str(),
                r.pupil_variant.as_str(),
                r.gate,
                r.budget,
                r.dual_f1,
                r.gate_random_mean,
                r.gate_random_sd,
                r.p_value,
                r.cohens_d.map_or("-".to_string(), |d| format!("{d:.2}")),
            ));
        }
    }
    let summary = agg.task_summary_rows();
    if !summary.is_empty() {
        s.push_str("\nPer-task verdict\n");
        for r in &summary {
            s.push_str(&format!(
                "{:<9} {:<8} gate {:<5} best {} (gate {}, aulc {:.4}); dual vs random {:+.4} p {}; pupil helps: {}\n",
                r.task.as_str(),
                r.pupil_variant.as_str(),
                r.gate,
                r.best_strategy.as_str(),
                r.best_gate,
                r.best_aulc,
                r.dual_vs_random,
                r.p_value.map_or("-".to_string(), |p| format!("{p:.4}")),
                if r.pupil_helps { "yes" } else { "no" },
            ));
        }
    }
    if !agg.wins.is_empty() {
        s.push_str("\nDelayed versus centered pupil window\n");
        for w in &agg.wins {
            s.push_str(&format!(
                "{:<9} delayed wins {} / centered wins {} of {}\n",
                w.task.as_str(),
                w.delayed_wins,
                w.centered_wins,
                w.comparisons
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(strategy: StrategyKind, gate: f64, budget: f64, seed: u64, f1: f64) -> CellResult {
        CellResult {
            task: Task::Activity,
            strategy,
            budget,
            gate,
            pupil_variant: PupilVariant::Delayed,
            seed,
            split_seed: 0,
            f1,
            n_train_frames: 10,
        }
    }

    #[test]
    fn results_roundtrip_through_csv() {
        let cells = vec![cell(StrategyKind::Dual, 0.75, 0.1, 0, 0.25), cell(StrategyKind::Random, 1.0, 0.1, 3, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_csv(&mut buf, "eyecurate test", &cells).unwrap();
        assert!(buf.starts_with(b"# eyecurate test\ntask,strategy,budget,gate,pupil_variant"));
        let back: Vec<CellResult> = read_csv(&buf).unwrap();
        assert_eq!(back, cells);
    }

    #[test]
    fn gate_sweep_needs_two_gates() {
        let mut cells = vec![cell(StrategyKind::Dual, 0.75, 0.1, 0, 0.3)];
        assert!(aggregate(&cells, &StatsConfig::default()).gate_sweep_rows().is_empty());
        cells.push(cell(StrategyKind::Dual, 1.0, 0.1, 0, 0.2));
        cells.push(cell(StrategyKind::GateRandom, 1.0, 0.1, 0, 0.1));
        let rows = aggregate(&cells, &StatsConfig::default()).gate_sweep_rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].gate_random_f1, Some(0.1));
        assert_eq!(rows[0].gate_random_f1, None);
    }

    #[test]
    fn lag_rows_roundtrip() {
        let r = LagReport {
            pupil_derivative: vec![LagPoint { lag: 0, mean_rho: 0.2, sd_rho: None, n_sessions: 1 }],
            gaze: vec![LagPoint { lag: 0, mean_rho: -0.1, sd_rho: Some(0.05), n_sessions: 2 }],
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, "h", &lag_rows(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("pupil_derivative,0,0.2,,1"));
        assert_eq!(lag_report_from_rows(&read_csv(&buf).unwrap()), r);
    }
}
