//! Multistart solvers, sequential against rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qopers::qq::{solve_bethe, QQSpec, ShiftConvention, SolveOptions};
use qopers::toroidal::{solve_adhm_bethe, ToroidalSpec};
use qopers::{Ctx, Execution, Scalar};

const P: u32 = 192;

fn c(re: f64, im: f64) -> Scalar {
    Scalar::from_f64(P, re, im)
}

fn sl3_spec() -> QQSpec {
    QQSpec {
        r: 2,
        q: c(1.3, 0.45),
        zeta: vec![c(1.7, 0.2), c(-0.6, 0.9)],
        lambda_roots: vec![vec![c(1.0, 0.0), c(0.2, -0.7)], vec![c(-1.1, 0.4), c(0.5, 0.5)]],
        lambda_leading: vec![c(1.0, 0.0), c(2.0, 0.5)],
        q_degrees: vec![2, 1],
        convention: ShiftConvention::Qqall,
    }
}

fn adhm_spec() -> ToroidalSpec {
    ToroidalSpec::new(c(0.7, 0.4), c(0.9, -0.5), c(0.35, 0.2), vec![c(0.8, 0.3), c(-1.1, 0.6)], 3)
}

fn bench(cr: &mut Criterion) {
    let ctx = Ctx::new(P);
    let spec = sl3_spec();
    let ts = adhm_spec();
    let mut group = cr.benchmark_group("multistart");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let opts = SolveOptions { seeds: 64, exec, ..Default::default() };
        let name = format!("{exec:?}").to_lowercase();
        group.bench_with_input(BenchmarkId::new("solve_bethe", &name), &opts, |b, o| {
            b.iter(|| solve_bethe(&spec, o, &ctx))
        });
        group.bench_with_input(BenchmarkId::new("solve_adhm_bethe", &name), &opts, |b, o| {
            b.iter(|| solve_adhm_bethe(&ts, o, &ctx))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
