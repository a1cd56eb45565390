use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use weak_euler::{
    estimate_theta_lsmc, euler_delay, make_grid, psi_sample, terminal_gradient, verify_error_identity, CoupledPair,
    LsmcConfig, TestFunction,
};
use weak_euler_bench::{entry, path};

fn euler(c: &mut Criterion) {
    let mut g = c.benchmark_group("euler_delay");
    for name in ["bounded", "delay", "misaligned"] {
        let e = entry(name);
        for n in [16, 256] {
            let p = path(&e, n, 1, 0);
            let grid = *p.fine_grid();
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| euler_delay(&e.model, black_box(&p), &grid).unwrap())
            });
        }
    }
    g.finish();
}

fn pair_and_adjoint(c: &mut Criterion) {
    let e = entry("delay");
    let p = path(&e, 16, 16, 0);
    c.bench_function("coupled_pair/delay/16x16", |b| b.iter(|| CoupledPair::simulate(&e.model, black_box(&p)).unwrap()));
    let pair = CoupledPair::simulate(&e.model, &p).unwrap();
    c.bench_function("terminal_gradient/delay/256", |b| {
        b.iter(|| terminal_gradient(&e.model, black_box(&pair.fine), &p).unwrap())
    });
    c.bench_function("error_identity/delay/16x16", |b| b.iter(|| verify_error_identity(&e.model, black_box(&p)).unwrap()));
    let bounded = entry("bounded");
    let q = path(&bounded, 16, 32, 0);
    c.bench_function("psi_sample/bounded/16x32", |b| b.iter(|| psi_sample(&bounded.model, black_box(&q)).unwrap()));
}

fn lsmc(c: &mut Criterion) {
    let e = entry("delay");
    let grid = make_grid(e.model.r, 4, e.horizon).unwrap();
    let cfg = LsmcConfig::new(2, 2_000, 0.0).unwrap();
    let mut g = c.benchmark_group("lsmc");
    g.sample_size(10);
    g.bench_function("delay/n4/M2000", |b| {
        b.iter(|| estimate_theta_lsmc(&e.model, &TestFunction::cos(1.0), &cfg, &grid, 4, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, euler, pair_and_adjoint, lsmc);
criterion_main!(benches);
