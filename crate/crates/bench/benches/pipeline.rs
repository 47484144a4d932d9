use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use eyecurate_bench::{probe_problem, score_rows, session};
use eyecurate_core::ingest::windows_for_frames;
use eyecurate_core::probe::{train, ProbeConfig};
use eyecurate_core::{score_session, select, ScoringConfig, StrategyKind, StrategySpec};

fn windows(c: &mut Criterion) {
    let bundle = session();
    let times: Vec<f64> = bundle.frames.iter().map(|f| f.t).collect();
    c.bench_function("windows/centered", |b| {
        b.iter(|| windows_for_frames(black_box(&bundle.samples), &times, -0.05, 0.05).len())
    });
    c.bench_function("windows/delayed", |b| {
        b.iter(|| windows_for_frames(black_box(&bundle.samples), &times, 0.3, 1.5).len())
    });
}

fn scoring(c: &mut Criterion) {
    let bundle = session();
    let cfg = ScoringConfig::default();
    c.bench_function("score_session", |b| b.iter(|| score_session(black_box(&bundle), &cfg)));
}

fn selection(c: &mut Criterion) {
    let rows = score_rows(8);
    let mut group = c.benchmark_group("select");
    for kind in [StrategyKind::GazeOnly, StrategyKind::Dual, StrategyKind::Fusion, StrategyKind::GateRandom] {
        let spec = StrategySpec::new(kind).with_gate(if kind.is_gated() { 0.75 } else { 1.0 });
        group.bench_function(kind.to_string(), |b| b.iter(|| select(&spec, 0.1, black_box(&rows), None).unwrap()));
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let (x, y) = probe_problem();
    let cfg = ProbeConfig::default();
    c.bench_function("probe/train", |b| b.iter(|| train(black_box(&x), &y, &cfg).unwrap()));
}

criterion_group!(benches, windows, scoring, selection, probe);
criterion_main!(benches);
