use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use floquet_bench::{cos_hill, decaying_perturbation, test_matrix};
use floquet_core::discretize::{assemble_operator, grid_eigenvalues, DEFAULT_UNKNOWN_CAP};
use floquet_core::hill::{band_structure, HillSpec};
use floquet_core::linalg::{default_cluster_radius, matrix_exp, matrix_log};
use floquet_core::periodic_ode::{monodromy, DEFAULT_TOL};
use floquet_core::resolvent::{apply_resolvent, RhsFunction};
use floquet_core::C64;

fn bench_monodromy(c: &mut Criterion) {
    let op = cos_hill(1.0);
    let mut group = c.benchmark_group("monodromy");
    for lambda in [1.0, 40.0, 400.0] {
        group.bench_with_input(BenchmarkId::from_parameter(lambda), &lambda, |b, &l| {
            b.iter(|| monodromy(&op, black_box(C64::new(l, 0.0)), DEFAULT_TOL).unwrap())
        });
    }
    group.finish();
}

fn bench_matrix_functions(c: &mut Criterion) {
    let mut group = c.benchmark_group("matrix_functions");
    for n in [2, 4, 8] {
        let m = test_matrix(n);
        group.bench_with_input(BenchmarkId::new("exp", n), &m, |b, m| b.iter(|| matrix_exp(black_box(m)).unwrap()));
        group.bench_with_input(BenchmarkId::new("log", n), &m, |b, m| {
            b.iter(|| matrix_log(black_box(m), default_cluster_radius(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_bands(c: &mut Criterion) {
    let spec = HillSpec::from_operator(cos_hill(1.0)).unwrap();
    let mut group = c.benchmark_group("band_structure");
    group.sample_size(10);
    group.bench_function("cos_hill_512", |b| b.iter(|| band_structure(&spec, -3.0, 30.0, 512, DEFAULT_TOL).unwrap()));
    group.finish();
}

fn bench_resolvent(c: &mut Criterion) {
    let op = cos_hill(1.0);
    let nu = RhsFunction::bump(0.5, 2.5, 4.0, 1.0 / 256.0).unwrap();
    let mut group = c.benchmark_group("resolvent");
    group.sample_size(20);
    group.bench_function("bump_h256", |b| b.iter(|| apply_resolvent(&op, C64::new(1.0, 0.0), &nu, DEFAULT_TOL).unwrap()));
    group.finish();
}

fn bench_discretize(c: &mut Criterion) {
    let op = cos_hill(1.0);
    let pert = decaying_perturbation();
    let mut group = c.benchmark_group("discretize");
    group.sample_size(10);
    for length in [5.0, 10.0] {
        group.bench_with_input(BenchmarkId::new("assemble_and_solve", length), &length, |b, &l| {
            b.iter(|| {
                let g = assemble_operator(&op, &pert, l, 1.0 / 64.0, DEFAULT_UNKNOWN_CAP).unwrap();
                grid_eigenvalues(&g).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_monodromy, bench_matrix_functions, bench_bands, bench_resolvent, bench_discretize);
criterion_main!(benches);
