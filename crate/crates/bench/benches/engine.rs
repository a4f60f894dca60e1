use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvperiodic_core::ips::Integrator;
use mvperiodic_core::metrics::{wasserstein_1d, wasserstein_assignment, EmpiricalMeasure};
use mvperiodic_core::noise::{gaussian_increment_into, Driver};
use mvperiodic_core::{InitLaw, NoiseBundle, Scenario, TimeGrid};

fn increments(c: &mut Criterion) {
    let mut out = [0.0; 1];
    c.bench_function("gaussian_increment_d1", |b| {
        let mut k = 0i64;
        b.iter(|| {
            k += 1;
            gaussian_increment_into(7, Driver::W, 3, k, 1e-3, &mut out);
            black_box(out[0])
        })
    });
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("ips_step");
    for (name, n) in [("mv_ou_periodic", 4096), ("piecewise_k1", 4096), ("double_well_partial", 256)] {
        let s = Scenario::builtin_default(name).unwrap();
        let grid = TimeGrid::aligned(s.tau(), 1e-3, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::new(1, s.dim(), grid.dt);
        let mut ens = InitLaw::Gaussian { mean: vec![0.0], sd: 0.5 }.sample(n, 1, 0, 0).unwrap();
        let integ = Integrator::new(&s, &grid, &noise);
        let mut buffer = Vec::new();
        group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
            b.iter(|| {
                integ.step_in_place(&mut ens, None, &mut buffer).unwrap();
                if ens.time_index > 500 {
                    ens.time_index = 0;
                }
            })
        });
    }
    group.finish();
}

fn distances(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein");
    for n in [64usize, 256] {
        let p: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64).collect();
        let q: Vec<f64> = (0..n).map(|i| ((i * 53 + 11) % n) as f64 / n as f64 + 0.1).collect();
        let (p, q) = (EmpiricalMeasure::from_1d(&p).unwrap(), EmpiricalMeasure::from_1d(&q).unwrap());
        group.bench_with_input(BenchmarkId::new("sorted_1d", n), &n, |b, _| b.iter(|| wasserstein_1d(&p, &q, 1).unwrap()));
        group.bench_with_input(BenchmarkId::new("assignment", n), &n, |b, _| {
            b.iter(|| wasserstein_assignment(&p, &q, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, increments, steps, distances);
criterion_main!(benches);
