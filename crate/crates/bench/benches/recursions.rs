use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spde_cov_bench::{advdiff_config, matern, wave_config};
use spde_cov_core::{
    advdiff_run, assemble_form, assemble_mass, assemble_q, err_hs_norm, err_trace_norm, wave_run, AdvDiffStepper,
    BoundaryCondition, CovMatrix, KernelSpec, Mesh1D, WaveSystem,
};
use std::hint::black_box;

fn advdiff(c: &mut Criterion) {
    let mut group = c.benchmark_group("advdiff");
    for n in [16usize, 64] {
        let cfg = advdiff_config(n, n * n);
        let mass = assemble_mass(&cfg.mesh);
        let form = assemble_form(&cfg.mesh, &cfg.coeffs, cfg.c0).unwrap();
        let q = assemble_q(&cfg.mesh, &cfg.kernel).unwrap();
        let stepper = AdvDiffStepper::new(&mass, &form, &q, cfg.dt(), cfg.c0).unwrap();
        let k = CovMatrix::zeros(cfg.mesh.n_dofs());
        group.bench_with_input(BenchmarkId::new("step", n), &k, |b, k| {
            b.iter(|| stepper.step(black_box(k)))
        });
        group.bench_with_input(BenchmarkId::new("run", n), &cfg, |b, cfg| {
            b.iter(|| advdiff_run(cfg).unwrap())
        });
    }
    group.finish();
}

fn wave(c: &mut Criterion) {
    let mut group = c.benchmark_group("wave");
    for n in [16usize, 64] {
        let cfg = wave_config(n, n, matern());
        let system = WaveSystem::assemble(&cfg).unwrap();
        let k = CovMatrix::zeros(2 * cfg.mesh.n_dofs());
        group.bench_with_input(BenchmarkId::new("step", n), &k, |b, k| {
            b.iter(|| system.stepper.step(black_box(k)))
        });
    }
    let cfg = wave_config(16, 16, KernelSpec::BrownianBridge);
    group.bench_function("run/16", |b| b.iter(|| wave_run(&cfg).unwrap()));
    group.finish();
}

fn norms(c: &mut Criterion) {
    let mut group = c.benchmark_group("error_norms");
    let coarse = advdiff_config(16, 256);
    let fine = advdiff_config(64, 4096);
    let (k, k_ref) = (advdiff_run(&coarse).unwrap(), advdiff_run(&fine).unwrap());
    group.bench_function("trace/16x64", |b| {
        b.iter(|| err_trace_norm(&k, &coarse.mesh, &k_ref, &fine.mesh).unwrap())
    });
    group.bench_function("hs/16x64", |b| {
        b.iter(|| err_hs_norm(&k, &coarse.mesh, &k_ref, &fine.mesh).unwrap())
    });
    group.finish();
}

fn noise_gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_q");
    let mesh = Mesh1D::new(64, BoundaryCondition::Dirichlet).unwrap();
    for (name, kernel) in [
        ("exponential", KernelSpec::Exponential { scale: 2.0 }),
        ("matern", matern()),
        ("brownian_bridge", KernelSpec::BrownianBridge),
    ] {
        group.bench_function(name, |b| b.iter(|| assemble_q(black_box(&mesh), &kernel).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, advdiff, wave, norms, noise_gram);
criterion_main!(benches);
