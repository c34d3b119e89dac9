//! Sequential against parallel execution on the batch-heavy stages.
//! Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pulseforge_core::cycles::{CardiacCyclePair, CycleConfig};
use pulseforge_core::exec::Exec;
use pulseforge_core::metrics::DirichletMode;
use pulseforge_core::p2e::{self, P2eConfig, P2eMode};
use pulseforge_core::synth::{generate, HrProfile, SynthConfig, SynthRecord};
use pulseforge_core::vitals::{estimate_series, VitalsConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn record(hr: f64, duration_s: f64, seed: u64) -> SynthRecord {
    generate(&SynthConfig {
        hr: HrProfile::Constant(hr),
        snr_db: Some(30.0),
        duration_s,
        seed,
        width_jitter: true,
        ..SynthConfig::default()
    })
    .expect("synth")
}

fn vitals(c: &mut Criterion) {
    let rec = record(75.0, 600.0, 1);
    let cfg = VitalsConfig::default();
    let mut g = c.benchmark_group("vitals_series_10min");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_series(black_box(&rec.ppg), &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn pairs(c: &mut Criterion) {
    let rec = record(80.0, 300.0, 2);
    let cfg = CycleConfig::default();
    let mut g = c.benchmark_group("record_pairs_5min");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| p2e::record_pairs(black_box(&rec.ppg), &rec.ecg, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let records: Vec<Vec<CardiacCyclePair>> = (0..12u64)
        .map(|i| {
            let rec = record(55.0 + 4.0 * i as f64, 60.0, 100 + i);
            p2e::record_pairs(&rec.ppg, &rec.ecg, &CycleConfig::default(), Exec::auto())
                .unwrap()
                .1
        })
        .collect();
    let split = p2e::split_records(&records, 0.8, 3, 7).unwrap();
    let cfg = P2eConfig {
        mode: P2eMode::Ridge,
        ..P2eConfig::default()
    };
    let ks = [10, 50, 100, 150, 300];
    let mut g = c.benchmark_group("ridge_sweep_k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| p2e::sweep_k(black_box(&split), &ks, &cfg, DirichletMode::Aligned, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, vitals, pairs, sweep);
criterion_main!(benches);
