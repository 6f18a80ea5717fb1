use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lexispray_bench::{box_qp, ik_case, scenario, spraying_step};
use lexispray_core::ptsc::LevelMode;
use lexispray_core::scenario::run_continuous;
use lexispray_core::{solve_pik, solve_ptsc, solve_qp, PikParams};

fn qp(c: &mut Criterion) {
    let mut g = c.benchmark_group("qp");
    for (n, m) in [(6, 4), (12, 8)] {
        let p = box_qp(n, m);
        g.bench_function(format!("n{n}_m{m}"), |b| b.iter(|| solve_qp(black_box(&p)).unwrap()));
    }
    g.finish();
}

fn ptsc(c: &mut Criterion) {
    let mut g = c.benchmark_group("ptsc");
    let three = spraying_step(LevelMode::ThreeLevel);
    let blend = spraying_step(LevelMode::TwoLevelBlend { weight: 0.1 });
    g.bench_function("three_level", |b| b.iter(|| solve_ptsc(black_box(&three)).unwrap()));
    g.bench_function("two_level_blend", |b| b.iter(|| solve_ptsc(black_box(&blend)).unwrap()));
    g.finish();
}

fn pik(c: &mut Criterion) {
    let mut g = c.benchmark_group("pik");
    for n in 1..=3 {
        let (l, tasks, q0) = ik_case(n);
        let p = PikParams::default();
        g.bench_function(format!("ik_example_{n}"), |b| {
            b.iter(|| solve_pik(&l.chain, black_box(&q0), &tasks, &p).unwrap())
        });
    }
    g.finish();
}

fn closed_loop(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    let l = scenario("spray_slow.json");
    g.bench_function("spray_slow_10s", |b| b.iter(|| run_continuous(black_box(&l)).unwrap()));
    g.finish();
}

criterion_group!(benches, qp, ptsc, pik, closed_loop);
criterion_main!(benches);
