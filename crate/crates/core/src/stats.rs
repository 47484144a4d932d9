//! Aggregation of per-cell probe results: learning curves, AULC with
//! bootstrap intervals, t-tests, effect sizes, Bonferroni flags, win counts,
//! and the embedding-change lag analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Task;
use crate::numeric::{mean, quantile_sorted, sample_sd};
use crate::pupil::PupilVariant;
use crate::select::StrategyKind;

pub const DEFAULT_BUDGETS: [f64; 6] = [0.05, 0.10, 0.25, 0.50, 0.75, 1.00];
pub const DEFAULT_LAGS: std::ops::RangeInclusive<i64> = -3..=5;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("frame spacing {0:.3} s is not 1 fps; lag analysis needs integer-second shifts")]
    NotOneFps(f64),
}

// ---------------------------------------------------------------- special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for x > 0 (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta, evaluated with modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t)).min(1.0)
}

// ---------------------------------------------------------------- basic statistics

/// Mean across budgets of per-budget mean F1.
pub fn aulc(per_budget: &[f64]) -> f64 {
    mean(per_budget)
}

/// Trapezoid integral over budget fractions, divided by the covered span.
pub fn aulc_trapezoid(budgets: &[f64], values: &[f64]) -> f64 {
    assert_eq!(budgets.len(), values.len());
    match budgets.len() {
        0 => f64::NAN,
        1 => values[0],
        _ => {
            let area: f64 = budgets
                .windows(2)
                .zip(values.windows(2))
                .map(|(b, v)| (b[1] - b[0]) * (v[0] + v[1]) / 2.0)
                .sum();
            area / (budgets[budgets.len() - 1] - budgets[0])
        }
    }
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let n = values.len();
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = vec![0.0; n];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for d in draw.iter_mut() {
                *d = values[rng.random_range(0..n)];
            }
            mean(&draw)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// One-sample t-test of `samples` against `mu0`, two-sided.
pub fn one_sample_t(samples: &[f64], mu0: f64) -> TTest {
    let n = samples.len();
    let df = n as f64 - 1.0;
    if n < 2 {
        return TTest { t: f64::NAN, p: f64::NAN, df };
    }
    let diff = mean(samples) - mu0;
    let sd = sample_sd(samples);
    if sd == 0.0 {
        return if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, p: 0.0, df }
        };
    }
    let t = diff / (sd / (n as f64).sqrt());
    TTest { t, p: student_t_two_sided(t, df), df }
}

/// (mean - mu0) / sd; `None` when sd is zero or undefined.
pub fn cohens_d(samples: &[f64], mu0: f64) -> Option<f64> {
    cohens_d_summary(mean(samples), sample_sd(samples), mu0)
}

pub fn cohens_d_summary(mean: f64, sd: f64, mu0: f64) -> Option<f64> {
    (sd.is_finite() && sd > 0.0).then(|| (mean - mu0) / sd)
}

/// `p < alpha / m` for each p-value.
pub fn bonferroni(p_values: &[f64], m: usize, alpha: f64) -> Vec<bool> {
    let thresh = alpha / m.max(1) as f64;
    p_values.iter().map(|&p| p < thresh).collect()
}

/// Compares two per-seed value lists. A constant side is treated as a fixed
/// reference for a one-sample test; otherwise seeds are paired.
pub fn compare_seeds(a: &[f64], b: &[f64]) -> TTest {
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if a.is_empty() || b.is_empty() {
        return TTest { t: f64::NAN, p: f64::NAN, df: f64::NAN };
    }
    match (constant(a), constant(b)) {
        (true, true) => {
            let p = if a[0] == b[0] { 1.0 } else { 0.0 };
            let t = if p == 1.0 { 0.0 } else { (a[0] - b[0]).signum() * f64::INFINITY };
            TTest { t, p, df: f64::NAN }
        }
        (true, false) => {
            let r = one_sample_t(b, a[0]);
            TTest { t: -r.t, ..r }
        }
        (false, true) => one_sample_t(a, b[0]),
        (false, false) => {
            let n = a.len().min(b.len());
            let d: Vec<f64> = a[..n].iter().zip(&b[..n]).map(|(x, y)| x - y).collect();
            one_sample_t(&d, 0.0)
        }
    }
}

// ---------------------------------------------------------------- correlation and lags

/// 1 - cosine similarity between consecutive rows; NaN for the first row,
/// missing rows and zero-norm rows. The flag marks zero-norm rows.
pub fn feature_change(rows: &[Option<&[f32]>]) -> (Vec<f64>, Vec<bool>) {
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let zero: Vec<bool> = rows.iter().map(|r| r.is_some_and(|v| norm(v) == 0.0)).collect();
    let mut out = vec![f64::NAN; rows.len()];
    for i in 1..rows.len() {
        if let (Some(a), Some(b)) = (rows[i], rows[i - 1]) {
            let (na, nb) = (norm(a), norm(b));
            if na > 0.0 && nb > 0.0 {
                let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
                out[i] = 1.0 - dot / (na * nb);
            }
        }
    }
    (out, zero)
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman correlation with average ranks; pairs with a NaN are dropped.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    pearson(&average_ranks(&xs), &average_ranks(&ys))
}

/// Rejects frame clocks whose median spacing is not 1 s (within 5%).
pub fn check_one_fps(times: &[f64]) -> Result<(), StatsError> {
    if times.len() < 2 {
        return Ok(());
    }
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let med = crate::numeric::median_sorted(&gaps);
    if (med - 1.0).abs() > 0.05 {
        return Err(StatsError::NotOneFps(med));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagPoint {
    pub lag: i64,
    pub mean_rho: f64,
    /// `None` with fewer than two contributing sessions.
    pub sd_rho: Option<f64>,
    pub n_sessions: usize,
}

/// Spearman of signal[t + lag] against delta[t], per session, averaged over
/// sessions. Sessions shorter than |lag| + 2 or with an undefined rho are
/// skipped.
pub fn lag_profile(sessions: &[(Vec<f64>, Vec<f64>)], lags: impl IntoIterator<Item = i64>) -> Vec<LagPoint> {
    lags.into_iter()
        .map(|lag| {
            let rhos: Vec<f64> = sessions
                .iter()
                .filter_map(|(signal, delta)| {
                    let n = signal.len().min(delta.len());
                    let shift = lag.unsigned_abs() as usize;
                    if n < shift + 2 {
                        return None;
                    }
                    let (s, d) = if lag >= 0 {
                        (&signal[shift..n], &delta[..n - shift])
                    } else {
                        (&signal[..n - shift], &delta[shift..n])
                    };
                    Some(spearman(s, d)).filter(|r| r.is_finite())
                })
                .collect();
            LagPoint {
                lag,
                mean_rho: mean(&rhos),
                sd_rho: (rhos.len() >= 2).then(|| sample_sd(&rhos)),
                n_sessions: rhos.len(),
            }
        })
        .collect()
}

/// Cells where `a` beats `b` and where `b` beats `a`; ties count for neither.
pub fn win_count(a: &[f64], b: &[f64]) -> (usize, usize) {
    let a_wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let b_wins = a.iter().zip(b).filter(|(x, y)| y > x).count();
    (a_wins, b_wins)
}

// ---------------------------------------------------------------- result tables

/// One probe evaluation: a row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: Task,
    pub strategy: StrategyKind,
    pub budget: f64,
    pub gate: f64,
    pub pupil_variant: PupilVariant,
    pub seed: u64,
    pub split_seed: u64,
    pub f1: f64,
    pub n_train_frames: usize,
}

/// Identifies one learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveKey {
    pub task: Task,
    pub strategy: StrategyKind,
    pub gate: f64,
    pub pupil_variant: PupilVariant,
}

impl CurveKey {
    fn of(c: &CellResult) -> Self {
        CurveKey { task: c.task, strategy: c.strategy, gate: c.gate, pupil_variant: c.pupil_variant }
    }

    fn sort_key(&self) -> (Task, StrategyKind, u64, PupilVariant) {
        (self.task, self.strategy, self.gate.to_bits(), self.pupil_variant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub key: CurveKey,
    pub budgets: Vec<f64>,
    pub mean_f1: Vec<f64>,
    /// Zero for deterministic strategies.
    pub sd_f1: Vec<f64>,
    pub n_seeds: usize,
    /// seed -> F1 per budget, aligned with `budgets`.
    pub per_seed: BTreeMap<u64, Vec<f64>>,
}

impl LearningCurve {
    pub fn at(&self, budget: f64) -> Option<usize> {
        self.budgets.iter().position(|b| (b - budget).abs() < 1e-12)
    }

    /// Per-seed F1 values at one budget.
    pub fn seeds_at(&self, budget: f64) -> Vec<f64> {
        self.at(budget).map_or_else(Vec::new, |i| self.per_seed.values().map(|v| v[i]).collect())
    }

    /// Per-seed AULC.
    pub fn seed_aulcs(&self, trapezoid: bool) -> Vec<f64> {
        self.per_seed
            .values()
            .map(|v| if trapezoid { aulc_trapezoid(&self.budgets, v) } else { aulc(v) })
            .collect()
    }

    pub fn aulc(&self, trapezoid: bool) -> f64 {
        if trapezoid {
            aulc_trapezoid(&self.budgets, &self.mean_f1)
        } else {
            aulc(&self.mean_f1)
        }
    }
}

type CurveGroups<'a> = BTreeMap<(Task, StrategyKind, u64, PupilVariant), (CurveKey, Vec<&'a CellResult>)>;

/// Groups cells into learning curves. Seeds missing a budget are dropped
/// from that curve so every per-seed row is complete.
pub fn learning_curves(cells: &[CellResult]) -> Vec<LearningCurve> {
    let mut groups: CurveGroups = BTreeMap::new();
    for c in cells {
        let key = CurveKey::of(c);
        groups.entry(key.sort_key()).or_insert_with(|| (key, Vec::new())).1.push(c);
    }
    groups
        .into_values()
        .map(|(key, cs)| {
            let mut budgets: Vec<f64> = cs.iter().map(|c| c.budget).collect();
            budgets.sort_by(f64::total_cmp);
            budgets.dedup();
            let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for c in &cs {
                let i = budgets.iter().position(|b| *b == c.budget).expect("budget listed");
                per_seed.entry(c.seed).or_insert_with(|| vec![f64::NAN; budgets.len()])[i] = c.f1;
            }
            per_seed.retain(|_, v| v.iter().all(|x| !x.is_nan()));
            let col = |i: usize| per_seed.values().map(|v| v[i]).collect::<Vec<f64>>();
            let mean_f1 = (0..budgets.len()).map(|i| mean(&col(i))).collect();
            let sd_f1 = (0..budgets.len())
                .map(|i| {
                    let c = col(i);
                    if c.len() < 2 {
                        0.0
                    } else {
                        sample_sd(&c)
                    }
                })
                .collect();
            LearningCurve { key, budgets, mean_f1, sd_f1, n_seeds: per_seed.len(), per_seed }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AulcRecord {
    pub key: CurveKey,
    pub aulc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub delta_vs_baseline: f64,
    pub p_value: f64,
    pub significant: bool,
    pub n_seeds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub alpha: f64,
    /// Number of primary comparisons for the Bonferroni threshold.
    pub bonferroni_m: usize,
    pub trapezoid: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { resamples: 1000, level: 0.95, seed: 0, alpha: 0.05, bonferroni_m: 4, trapezoid: false }
    }
}

/// AULC summary per curve. The baseline for each curve is the `random` curve
/// of the same task and pupil variant.
pub fn aulc_records(curves: &[LearningCurve], cfg: &StatsConfig) -> Vec<AulcRecord> {
    let baseline = |k: &CurveKey| {
        curves
            .iter()
            .find(|c| c.key.task == k.task && c.key.strategy == StrategyKind::Random && c.key.pupil_variant == k.pupil_variant)
            .or_else(|| curves.iter().find(|c| c.key.task == k.task && c.key.strategy == StrategyKind::Random))
    };
    curves
        .iter()
        .map(|c| {
            let value = c.aulc(cfg.trapezoid);
            let seeds = c.seed_aulcs(cfg.trapezoid);
            let (lo, hi) = bootstrap_ci(&seeds, cfg.resamples, cfg.level, cfg.seed);
            let (delta, p) = match baseline(&c.key) {
                Some(b) if b.key != c.key => {
                    let bs = b.seed_aulcs(cfg.trapezoid);
                    (value - b.aulc(cfg.trapezoid), compare_seeds(&seeds, &bs).p)
                }
                _ => (0.0, f64::NAN),
            };
            AulcRecord {
                key: c.key,
                aulc: value,
                // The percentile interval of resampled means can miss the
                // point estimate by rounding when the spread is tiny.
                ci_lo: lo.min(value),
                ci_hi: hi.max(value),
                delta_vs_baseline: delta,
                p_value: p,
                significant: p < cfg.alpha / cfg.bonferroni_m.max(1) as f64,
                n_seeds: c.n_seeds,
            }
        })
        .collect()
}

/// One budget of the dual versus gate+random comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: Task,
    pub pupil_variant: PupilVariant,
    pub gate: f64,
    pub budget: f64,
    pub dual_f1: f64,
    pub gate_random_mean: f64,
    pub gate_random_sd: f64,
    pub t: f64,
    pub p_value: f64,
    /// `None` when gate+random has zero spread.
    pub cohens_d: Option<f64>,
    pub significant: bool,
}

pub fn ablation(curves: &[LearningCurve], cfg: &StatsConfig) -> Vec<AblationRow> {
    let mut out = Vec::new();
    for dual in curves.iter().filter(|c| c.key.strategy == StrategyKind::Dual) {
        let Some(gr) = curves.iter().find(|c| {
            c.key.strategy == StrategyKind::GateRandom
                && c.key.task == dual.key.task
                && c.key.gate == dual.key.gate
                && c.key.pupil_variant == dual.key.pupil_variant
        }) else {
            continue;
        };
        for (i, &b) in dual.budgets.iter().enumerate() {
            let Some(j) = gr.at(b) else { continue };
            let d = dual.mean_f1[i];
            let samples = gr.seeds_at(b);
            let test = one_sample_t(&samples, d);
            out.push(AblationRow {
                task: dual.key.task,
                pupil_variant: dual.key.pupil_variant,
                gate: dual.key.gate,
                budget: b,
                dual_f1: d,
                gate_random_mean: gr.mean_f1[j],
                gate_random_sd: gr.sd_f1[j],
                t: test.t,
                p_value: test.p,
                cohens_d: cohens_d(&samples, d),
                significant: test.p < cfg.alpha / cfg.bonferroni_m.max(1) as f64,
            });
        }
    }
    out
}

/// Splits the dual-over-random AULC gain into the gate's share and the
/// ranking's share. `total == gate_delta + rank_delta` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub task: Task,
    pub pupil_variant: PupilVariant,
    pub gate: f64,
    pub random: f64,
    pub gate_random: f64,
    pub dual: f64,
    pub gate_delta: f64,
    pub rank_delta: f64,
    pub total: f64,
}

pub fn decompositions(records: &[AulcRecord]) -> Vec<Decomposition> {
    let find = |task, kind, variant, gate: Option<f64>| {
        records.iter().find(|r| {
            r.key.task == task
                && r.key.strategy == kind
                && r.key.pupil_variant == variant
                && gate.is_none_or(|g| r.key.gate == g)
        })
    };
    records
        .iter()
        .filter(|r| r.key.strategy == StrategyKind::Dual)
        .filter_map(|d| {
            let k = d.key;
            let random = find(k.task, StrategyKind::Random, k.pupil_variant, None)?;
            let gr = find(k.task, StrategyKind::GateRandom, k.pupil_variant, Some(k.gate))?;
            let gate_delta = gr.aulc - random.aulc;
            let rank_delta = d.aulc - gr.aulc;
            Some(Decomposition {
                task: k.task,
                pupil_variant: k.pupil_variant,
                gate: k.gate,
                random: random.aulc,
                gate_random: gr.aulc,
                dual: d.aulc,
                gate_delta,
                rank_delta,
                total: gate_delta + rank_delta,
            })
        })
        .collect()
}

/// Delayed versus centered wins for one task over every pupil-using
/// strategy and budget present in both variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinRecord {
    pub task: Task,
    pub delayed_wins: usize,
    pub centered_wins: usize,
    pub comparisons: usize,
}

pub fn variant_wins(curves: &[LearningCurve]) -> Vec<WinRecord> {
    let mut by_task: BTreeMap<Task, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for d in curves.iter().filter(|c| c.key.pupil_variant == PupilVariant::Delayed && c.key.strategy.uses_pupil()) {
        let Some(c) = curves.iter().find(|c| {
            c.key.pupil_variant == PupilVariant::Centered
                && c.key.task == d.key.task
                && c.key.strategy == d.key.strategy
                && c.key.gate == d.key.gate
        }) else {
            continue;
        };
        let entry = by_task.entry(d.key.task).or_default();
        for (i, &b) in d.budgets.iter().enumerate() {
            if let Some(j) = c.at(b) {
                entry.0.push(d.mean_f1[i]);
                entry.1.push(c.mean_f1[j]);
            }
        }
    }
    by_task
        .into_iter()
        .map(|(task, (a, b))| {
            let (delayed_wins, centered_wins) = win_count(&a, &b);
            WinRecord { task, delayed_wins, centered_wins, comparisons: a.len() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn t_test_textbook_case() {
        let r = one_sample_t(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0);
        assert!((r.t - 4.242_640_687).abs() < 1e-8);
        assert_eq!(r.df, 4.0);
        assert!((r.p - 0.0132).abs() < 1e-3, "{}", r.p);
    }

    #[test]
    fn t_test_null_gives_p_one() {
        let r = one_sample_t(&[2.0, 2.0, 2.0], 2.0);
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn t_cdf_symmetry() {
        for &t in &[0.1, 1.0, 2.5, 7.0] {
            let s = student_t_cdf(t, 5.0) + student_t_cdf(-t, 5.0);
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(student_t_cdf(0.0, 3.0), 0.5);
    }

    #[test]
    fn cohens_d_cases() {
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], 2.0), Some(0.0));
        assert_eq!(cohens_d(&[0.228; 10], 0.2), None);
        let d = cohens_d_summary(0.188, 0.037, 0.228).unwrap();
        assert!((d.abs() - 1.08).abs() < 0.03);
    }

    #[test]
    fn bonferroni_thresholds() {
        assert_eq!(bonferroni(&[0.01, 0.02], 4, 0.05), vec![true, false]);
        assert_eq!(bonferroni(&[0.04], 1, 0.05), vec![true]);
    }

    #[test]
    fn aulc_rows() {
        let dual = aulc(&[0.205, 0.228, 0.220, 0.225, 0.228, 0.228]);
        assert!((dual - 0.223).abs() <= 0.001);
        assert_eq!(aulc(&[0.5; 6]), 0.5);
        assert!((aulc_trapezoid(&[0.0, 1.0], &[0.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_constant_collapses() {
        let (lo, hi) = bootstrap_ci(&[0.3; 10], 1000, 0.95, 7);
        assert_eq!((lo, hi), (0.3, 0.3));
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 1000, 0.95, 7);
        assert!(lo >= 0.0 && hi <= 1.0);
        assert_eq!(bootstrap_ci(&[0.1, 0.5], 50, 0.9, 3), bootstrap_ci(&[0.1, 0.5], 50, 0.9, 3));
    }

    #[test]
    fn feature_change_geometry() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let c = [-1.0f32, 0.0];
        let z = [0.0f32, 0.0];
        let (d, zero) = feature_change(&[Some(&a), Some(&a), Some(&b), Some(&c), Some(&z), None]);
        assert!(d[0].is_nan());
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 1.0).abs() < 1e-15);
        assert!((d[3] - 1.0).abs() < 1e-15);
        assert!(d[4].is_nan() && zero[4]);
        assert!(d[5].is_nan());
        let (d, _) = feature_change(&[Some(&a), Some(&c)]);
        assert!((d[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-15);
        let r: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &r) + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_nan());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn lag_profile_finds_shift() {
        let delta: Vec<f64> = (0..60).map(|i| ((i * 7919) % 101) as f64).collect();
        let mut signal = vec![0.0; 60];
        signal[2..60].copy_from_slice(&delta[..58]);
        let prof = lag_profile(&[(signal, delta)], DEFAULT_LAGS);
        let at2 = prof.iter().find(|p| p.lag == 2).unwrap();
        assert!((at2.mean_rho - 1.0).abs() < 1e-12);
        assert!(prof.iter().filter(|p| p.lag != 2).all(|p| p.mean_rho < 0.9));
        assert_eq!(at2.sd_rho, None);
    }

    #[test]
    fn one_fps_check() {
        assert!(check_one_fps(&[0.5, 1.5, 2.5]).is_ok());
        assert_eq!(check_one_fps(&[0.0, 0.5, 1.0]), Err(StatsError::NotOneFps(0.5)));
    }

    #[test]
    fn wins() {
        assert_eq!(win_count(&[0.5; 12], &[0.5; 12]), (0, 0));
        assert_eq!(win_count(&[0.6; 12], &[0.5; 12]), (12, 0));
    }

    fn cell(strategy: StrategyKind, budget: f64, seed: u64, f1: f64) -> CellResult {
        CellResult {
            task: Task::Activity,
            strategy,
            budget,
            gate: 0.75,
            pupil_variant: PupilVariant::Delayed,
            seed,
            split_seed: 0,
            f1,
            n_train_frames: 10,
        }
    }

    #[test]
    fn decomposition_is_additive() {
        let mut cells = Vec::new();
        for seed in 0..10u64 {
            for &b in &DEFAULT_BUDGETS {
                let noise = ((seed * 31 + (b * 100.0) as u64) % 7) as f64 * 0.003;
                cells.push(cell(StrategyKind::Random, b, seed, 0.19 + noise));
                cells.push(cell(StrategyKind::GateRandom, b, seed, 0.20 + noise));
                cells.push(cell(StrategyKind::Dual, b, seed, 0.223));
            }
        }
        let curves = learning_curves(&cells);
        let recs = aulc_records(&curves, &StatsConfig::default());
        for r in &recs {
            assert!(r.ci_lo <= r.aulc && r.aulc <= r.ci_hi);
        }
        let dec = decompositions(&recs);
        assert_eq!(dec.len(), 1);
        let d = &dec[0];
        assert_eq!(d.total, d.gate_delta + d.rank_delta);
        assert!((d.total - (d.dual - d.random)).abs() < 1e-15);
        let abl = ablation(&curves, &StatsConfig::default());
        assert_eq!(abl.len(), 6);
        assert!(abl.iter().all(|r| r.dual_f1 == 0.223 && r.t < 0.0));
    }
}
