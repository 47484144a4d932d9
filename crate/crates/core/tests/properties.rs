//! Property tests for the invariants of each module.

use std::collections::BTreeSet;

use eyecurate_core::gaze::{gaze_quality, GazeParams};
use eyecurate_core::ingest::{
    centered_window, delayed_window, in_window, read_eye_stream, window, windows_for_frames, write_eye_stream, EyeFormat,
};
use eyecurate_core::probe::{minimize_lbfgs, train, ClassWeighting, Classifier, Matrix, Objective, ProbeConfig};
use eyecurate_core::pupil::{clean_pupil, novelty, pupil_derivative, robust_zscore, rolling_median_detrend, PupilParams};
use eyecurate_core::select::{budget_count, gate_count};
use eyecurate_core::stats::{
    ablation, aulc, aulc_records, bootstrap_ci, decompositions, lag_profile, learning_curves, one_sample_t, spearman,
    CellResult, StatsConfig, DEFAULT_BUDGETS,
};
use eyecurate_core::{select, EyeSample, FrameFlags, PupilVariant, ScoreRow, StrategyKind, StrategySpec, Task};
use proptest::prelude::*;

// ---------------------------------------------------------------- streams

/// Sorted stream with occasional repeated timestamps and missing pupil.
fn stream() -> impl Strategy<Value = Vec<EyeSample>> {
    prop::collection::vec((0u32..3, 0.0..1.0f64, 0.0..1.0f64, 0.0..=1.0f64, prop::option::of(2.0..6.0f64)), 2..300)
        .prop_map(|steps| {
            let mut t = 0.0;
            steps
                .into_iter()
                .map(|(dt, x, y, c, p)| {
                    t += dt as f64 / 120.0;
                    EyeSample { t, gaze_x: x, gaze_y: y, confidence: c, pupil_mm: p.unwrap_or(f64::NAN) }
                })
                .collect()
        })
}

fn naive_indices(s: &[EyeSample], ft: f64, lo: f64, hi: f64) -> Vec<usize> {
    (0..s.len()).filter(|&i| in_window(s[i].t, ft, lo, hi)).collect()
}

fn offsets(s: &[EyeSample], w: &[EyeSample]) -> Vec<usize> {
    if w.is_empty() {
        return Vec::new();
    }
    let start = (w.as_ptr() as usize - s.as_ptr() as usize) / size_of::<EyeSample>();
    (start..start + w.len()).collect()
}

proptest! {
    #[test]
    fn streaming_windows_equal_naive_rescan(s in stream(), mut times in prop::collection::vec(0.0..3.0f64, 1..40)) {
        times.sort_by(f64::total_cmp);
        for (lo, hi) in [(-0.05, 0.05), (0.3, 1.5)] {
            let streamed = windows_for_frames(&s, &times, lo, hi);
            for (w, &ft) in streamed.iter().zip(&times) {
                prop_assert_eq!(offsets(&s, w.samples), naive_indices(&s, ft, lo, hi));
                prop_assert_eq!(offsets(&s, window(&s, ft, lo, hi).samples), naive_indices(&s, ft, lo, hi));
            }
        }
    }

    #[test]
    fn eye_stream_roundtrip_is_lossless(s in stream(), jsonl in any::<bool>()) {
        let format = if jsonl { EyeFormat::JsonLines } else { EyeFormat::Csv };
        let mut buf = Vec::new();
        write_eye_stream(&mut buf, &s, format).unwrap();
        let back = read_eye_stream(buf.as_slice(), format).unwrap();
        prop_assert_eq!(back.len(), s.len());
        for (a, b) in s.iter().zip(&back) {
            prop_assert!(a.t == b.t && a.gaze_x == b.gaze_x && a.gaze_y == b.gaze_y && a.confidence == b.confidence);
            prop_assert!(a.pupil_mm == b.pupil_mm || (a.pupil_mm.is_nan() && b.pupil_mm.is_nan()));
        }
    }

    #[test]
    fn centered_and_delayed_windows_are_disjoint(s in stream(), ft in 0.0..3.0f64, hw in 0.01..0.3f64, gap in 0.001..0.5f64) {
        let c = offsets(&s, centered_window(&s, ft, hw).samples);
        let d = offsets(&s, delayed_window(&s, ft, hw + gap, hw + gap + 1.0).samples);
        let c: BTreeSet<usize> = c.into_iter().collect();
        prop_assert!(d.iter().all(|i| !c.contains(i)));
    }
}

// ---------------------------------------------------------------- gaze

proptest! {
    #[test]
    fn g_is_bounded_by_window_width(s in stream(), ft in 0.0..3.0f64) {
        let p = GazeParams::default();
        let w = centered_window(&s, ft, 0.05);
        let q = gaze_quality(&w, &p);
        prop_assert!(q.g >= 0.0 && q.g <= 2.0 / 3.0 + 1e-12, "g = {}", q.g);
        prop_assert_eq!(q.g, q.f * q.c);
    }

    #[test]
    fn confidence_scaling_scales_g(s in stream(), ft in 0.0..3.0f64, alpha in 0.01..=1.0f64, e in 0i32..6) {
        let p = GazeParams::default();
        let scaled = |a: f64| s.iter().map(|x| EyeSample { confidence: x.confidence * a, ..*x }).collect::<Vec<_>>();
        let base = gaze_quality(&centered_window(&s, ft, 0.05), &p).g;
        let s_alpha = scaled(alpha);
        let g_alpha = gaze_quality(&centered_window(&s_alpha, ft, 0.05), &p).g;
        prop_assert!((g_alpha - alpha * base).abs() <= 1e-12);
        let pow2 = 0.5f64.powi(e);
        let s_pow2 = scaled(pow2);
        prop_assert_eq!(gaze_quality(&centered_window(&s_pow2, ft, 0.05), &p).g, pow2 * base);
    }

    #[test]
    fn g_ignores_order_within_equal_timestamps(s in stream(), ft in 0.0..3.0f64) {
        let mut shuffled = s.clone();
        for run in shuffled.chunk_by_mut(|a, b| a.t == b.t) {
            run.reverse();
        }
        let p = GazeParams::default();
        let a = gaze_quality(&centered_window(&s, ft, 0.05), &p);
        let b = gaze_quality(&centered_window(&shuffled, ft, 0.05), &p);
        prop_assert_eq!(a.g, b.g);
    }

    #[test]
    fn g_is_unchanged_by_concatenating_halves(s in stream(), ft in 0.0..3.0f64, cut in 0.0..1.0f64) {
        let k = (cut * s.len() as f64) as usize;
        let (a, b) = s.split_at(k);
        let joined: Vec<EyeSample> = a.iter().chain(b).copied().collect();
        let p = GazeParams::default();
        prop_assert_eq!(
            gaze_quality(&centered_window(&s, ft, 0.05), &p).g,
            gaze_quality(&windows_for_frames(&joined, &[ft], -0.05, 0.05)[0], &p).g
        );
    }
}

// ---------------------------------------------------------------- pupil

fn session_series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64, prop::bool::weighted(0.05)), 40..200).prop_map(|v| {
        let times: Vec<f64> = (0..v.len()).map(|i| i as f64 + 0.5).collect();
        let brightness: Vec<f64> = v.iter().map(|x| x.1).collect();
        let raw: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, &(n, b, missing))| if missing { f64::NAN } else { 4.0 - 0.8 * b + 0.3 * n + 0.002 * i as f64 })
            .collect();
        (raw, brightness, times)
    })
}

fn median_mad(v: &[f64]) -> (f64, f64) {
    let mut x: Vec<f64> = v.iter().copied().filter(|a| a.is_finite()).collect();
    x.sort_by(f64::total_cmp);
    let med = |s: &[f64]| if s.len() % 2 == 1 { s[s.len() / 2] } else { (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0 };
    let m = med(&x);
    let mut d: Vec<f64> = x.iter().map(|a| (a - m).abs()).collect();
    d.sort_by(f64::total_cmp);
    (m, med(&d))
}

proptest! {
    #[test]
    fn zscore_has_zero_median_and_unit_mad(v in prop::collection::vec(-50.0..50.0f64, 3..200)) {
        let z = robust_zscore(&v, 1.0);
        prop_assume!(z.scale > 0.0 && z.scale_used == eyecurate_core::ScaleUsed::Mad);
        let (m, mad) = median_mad(&z.values);
        prop_assert!(m.abs() < 1e-9 && (mad - 1.0).abs() < 1e-9, "median {m}, MAD {mad}");
    }

    #[test]
    fn cleaning_absorbs_affine_units((raw, b, t) in session_series(), a in 0.1..10.0f64, c in -5.0..5.0f64) {
        let p = PupilParams::default();
        let base = clean_pupil(&raw, &b, &t, &p);
        let moved: Vec<f64> = raw.iter().map(|x| a * x + c).collect();
        let other = clean_pupil(&moved, &b, &t, &p);
        for (x, y) in base.cleaned.iter().zip(&other.cleaned) {
            prop_assert!((x - y).abs() <= 1e-9 || (x.is_nan() && y.is_nan()), "{x} vs {y}");
        }
    }

    #[test]
    fn detrend_ignores_constant_offsets((raw, _, t) in session_series(), k in -100.0..100.0f64) {
        let shifted: Vec<f64> = raw.iter().map(|x| x + k).collect();
        let a = rolling_median_detrend(&raw, &t, 10.0);
        let b = rolling_median_detrend(&shifted, &t, 10.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn novelty_and_derivative_magnitude_ignore_sign((raw, _, t) in session_series()) {
        let flipped: Vec<f64> = raw.iter().map(|x| -x).collect();
        prop_assert_eq!(novelty(&raw), novelty(&flipped));
        let (d, e) = (pupil_derivative(&raw, &t), pupil_derivative(&flipped, &t));
        for (x, y) in d.iter().zip(&e) {
            prop_assert!(x.abs() == y.abs() || (x.is_nan() && y.is_nan()));
        }
    }
}

// ---------------------------------------------------------------- select

fn score_rows() -> impl Strategy<Value = Vec<ScoreRow>> {
    prop::collection::vec((0usize..3, 0u8..21, 0.0..4.0f64), 5..150).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, g, nov))| ScoreRow {
                frame_id: format!("f{i:04}"),
                session_id: format!("s{s}"),
                t: i as f64 + 0.5,
                g: g as f64 / 20.0,
                f: 1.0,
                c: 1.0,
                p_centered: nov,
                p_delayed: nov,
                nov_centered: nov,
                nov_delayed: nov,
                deriv: 0.0,
                flags: FrameFlags::empty(),
            })
            .collect()
    })
}

fn chosen(spec: &StrategySpec, b: f64, rows: &[ScoreRow]) -> BTreeSet<String> {
    select(spec, b, rows, None).unwrap().selected.into_iter().map(|s| s.frame_id).collect()
}

fn gated_size(rows: &[ScoreRow], k: f64) -> usize {
    let sessions: BTreeSet<&str> = rows.iter().map(|r| r.session_id.as_str()).collect();
    sessions.iter().map(|s| gate_count(k, rows.iter().filter(|r| r.session_id == *s).count())).sum()
}

proptest! {
    #[test]
    fn rank_kinds_ignore_monotone_transforms(rows in score_rows(), bi in 0usize..6) {
        let b = DEFAULT_BUDGETS[bi];
        let moved: Vec<ScoreRow> = rows
            .iter()
            .map(|r| ScoreRow { g: r.g.sqrt() * 3.0 + 1.0, nov_delayed: r.nov_delayed.powi(3), ..r.clone() })
            .collect();
        for spec in [
            StrategySpec::new(StrategyKind::GazeOnly).with_gate(1.0),
            StrategySpec::new(StrategyKind::PupilAbs).with_gate(1.0),
            StrategySpec::new(StrategyKind::Dual).with_gate(0.75),
        ] {
            prop_assert_eq!(chosen(&spec, b, &rows), chosen(&spec, b, &moved));
        }
    }

    #[test]
    fn rank_selections_nest_across_budgets(rows in score_rows(), k in 0.25..=1.0f64) {
        for spec in [
            StrategySpec::new(StrategyKind::GazeOnly).with_gate(1.0),
            StrategySpec::new(StrategyKind::PupilAbs).with_gate(1.0),
            StrategySpec::new(StrategyKind::Dual).with_gate(k),
            StrategySpec::new(StrategyKind::Fusion).with_gate(1.0),
        ] {
            for pair in DEFAULT_BUDGETS.windows(2) {
                prop_assert!(chosen(&spec, pair[0], &rows).is_subset(&chosen(&spec, pair[1], &rows)));
            }
        }
    }

    #[test]
    fn reductions_hold(rows in score_rows(), bi in 0usize..6, seed in 0u64..1000) {
        let b = DEFAULT_BUDGETS[bi];
        prop_assert_eq!(
            chosen(&StrategySpec::new(StrategyKind::Dual).with_gate(1.0), b, &rows),
            chosen(&StrategySpec::new(StrategyKind::PupilAbs).with_gate(1.0), b, &rows)
        );
        prop_assert_eq!(
            chosen(&StrategySpec::new(StrategyKind::GateRandom).with_gate(1.0).with_seed(seed), b, &rows),
            chosen(&StrategySpec::new(StrategyKind::Random).with_seed(seed), b, &rows)
        );
        prop_assert_eq!(
            chosen(&StrategySpec::new(StrategyKind::Fusion).with_weights(0.7, 0.0), b, &rows),
            chosen(&StrategySpec::new(StrategyKind::GazeOnly), b, &rows)
        );
    }

    #[test]
    fn selection_size_is_budget_capped_by_pool(rows in score_rows(), bi in 0usize..6, k in 0.1..=1.0f64) {
        let b = DEFAULT_BUDGETS[bi];
        let n = budget_count(b, rows.len());
        for kind in StrategyKind::ALL {
            let spec = StrategySpec::new(kind).with_gate(if kind.is_gated() { k } else { 1.0 });
            let pool = if kind.is_gated() { gated_size(&rows, k) } else { rows.len() };
            prop_assert_eq!(select(&spec, b, &rows, None).unwrap().len(), n.min(pool));
        }
    }
}

#[test]
fn fusion_is_not_rank_invariant() {
    let row = |id: &str, g: f64, nov: f64| ScoreRow {
        frame_id: id.into(),
        session_id: "s".into(),
        t: 0.5,
        g,
        f: 1.0,
        c: 1.0,
        p_centered: nov,
        p_delayed: nov,
        nov_centered: nov,
        nov_delayed: nov,
        deriv: 0.0,
        flags: FrameFlags::empty(),
    };
    let rows = vec![row("a", 0.9, 0.0), row("b", 0.5, 0.5)];
    let cubed: Vec<ScoreRow> = rows.iter().map(|r| ScoreRow { g: r.g.powi(3), ..r.clone() }).collect();
    let spec = StrategySpec::new(StrategyKind::Fusion);
    assert_ne!(chosen(&spec, 0.5, &rows), chosen(&spec, 0.5, &cubed));
}

// ---------------------------------------------------------------- probe

fn instance() -> impl Strategy<Value = (Matrix, Vec<usize>, usize)> {
    (2usize..5, 1usize..5, 6usize..40).prop_flat_map(|(k, d, n)| {
        (prop::collection::vec(-3.0..3.0f64, n * d), prop::collection::vec(0..k, n))
            .prop_map(move |(x, y)| (Matrix::new(n, d, x), y, k))
    })
}

proptest! {
    #[test]
    fn lbfgs_objective_never_increases((x, y, k) in instance(), lambda in 0.01..2.0f64) {
        let w = vec![1.0; y.len()];
        let obj = Objective { x: &x, y: &y, sample_weight: &w, k, lambda };
        let res = minimize_lbfgs(&obj, vec![0.0; obj.n_params()], 200, 1e-8);
        for pair in res.history.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn balanced_weights_change_nothing_on_balanced_data(
        x in prop::collection::vec(-3.0..3.0f64, 24), per in 2usize..5
    ) {
        let n = 3 * per;
        let d = x.len() / n;
        prop_assume!(d >= 1);
        let m = Matrix::new(n, d, x[..n * d].to_vec());
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let uniform = train(&m, &y, &ProbeConfig::default()).unwrap();
        let balanced =
            train(&m, &y, &ProbeConfig { class_weighting: ClassWeighting::Balanced, ..ProbeConfig::default() }).unwrap();
        prop_assert_eq!(uniform.predict(&m), balanced.predict(&m));
    }
}

// ---------------------------------------------------------------- stats

fn cells_for(values: &[f64]) -> Vec<CellResult> {
    let kinds = [StrategyKind::Random, StrategyKind::GateRandom, StrategyKind::Dual];
    let mut out = Vec::new();
    let mut it = values.iter().cycle();
    for kind in kinds {
        let (gate, seeds) = if kind == StrategyKind::Random { (1.0, 0..4) } else { (0.75, 0..4) };
        let seeds = if kind == StrategyKind::Dual { 0..1 } else { seeds };
        for seed in seeds {
            for &budget in &DEFAULT_BUDGETS {
                out.push(CellResult {
                    task: Task::Activity,
                    strategy: kind,
                    budget,
                    gate,
                    pupil_variant: PupilVariant::Delayed,
                    seed,
                    split_seed: 0,
                    f1: *it.next().unwrap(),
                    n_train_frames: 1,
                });
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn aulc_is_the_plain_mean(v in prop::collection::vec(0.0..1.0f64, 1..12)) {
        let brute = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((aulc(&v) - brute).abs() <= 1e-15);
    }

    #[test]
    fn single_resample_bootstrap_is_idempotent(v in prop::collection::vec(0.0..1.0f64, 1..20), seed in any::<u64>()) {
        prop_assert_eq!(bootstrap_ci(&v, 1, 0.95, seed), bootstrap_ci(&v, 1, 0.95, seed));
    }

    #[test]
    fn spearman_ignores_monotone_transforms(v in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..60)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let tx: Vec<f64> = x.iter().map(|a| a.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|a| a.powi(3) + a).collect();
        let (r, s) = (spearman(&x, &y), spearman(&tx, &ty));
        prop_assert!((r - s).abs() <= 1e-12 || (r.is_nan() && s.is_nan()));
    }

    #[test]
    fn lag_zero_is_direct_spearman(v in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..60)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let p = lag_profile(&[(x.clone(), y.clone())], [0]);
        let direct = spearman(&x, &y);
        prop_assert!(p[0].mean_rho == direct || (p[0].mean_rho.is_nan() && direct.is_nan()));
    }

    #[test]
    fn t_test_p_is_symmetric(v in prop::collection::vec(-5.0..5.0f64, 2..20), mu in -2.0..2.0f64) {
        let mirrored: Vec<f64> = v.iter().map(|x| 2.0 * mu - x).collect();
        let (a, b) = (one_sample_t(&v, mu).p, one_sample_t(&mirrored, mu).p);
        prop_assert!((a - b).abs() <= 1e-12 || (a.is_nan() && b.is_nan()));
    }

    #[test]
    fn decomposition_is_additive(v in prop::collection::vec(0.0..1.0f64, 54)) {
        let curves = learning_curves(&cells_for(&v));
        let records = aulc_records(&curves, &StatsConfig::default());
        let d = &decompositions(&records)[0];
        prop_assert_eq!(d.total, d.gate_delta + d.rank_delta);
        prop_assert!((d.total - (d.dual - d.random)).abs() <= 1e-15);
        prop_assert_eq!(ablation(&curves, &StatsConfig::default()).len(), DEFAULT_BUDGETS.len());
    }
}
