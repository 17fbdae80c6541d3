use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wganpca::linalg::sym_eig;
use wganpca::r1pca::estimate_m_matrix;
use wganpca::train::critic_update_gp;
use wganpca::RngStream;
use wganpca_bench::{batch, covariance_with_basis, critic_with_adam, symmetric};

fn bench_sym_eig(c: &mut Criterion) {
    let mut g = c.benchmark_group("sym_eig");
    for d in [8, 16, 32, 64] {
        let a = symmetric(d, d as u64);
        g.bench_with_input(BenchmarkId::from_parameter(d), &a, |b, a| b.iter(|| sym_eig(black_box(a)).unwrap()));
    }
    g.finish();
}

fn bench_m_matrix(c: &mut Criterion) {
    let (cov, basis) = covariance_with_basis(8, 3);
    let rng = RngStream::new(0, 4);
    let mut g = c.benchmark_group("estimate_m_matrix");
    g.sample_size(10);
    for n_mc in [10_000, 100_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n_mc), &n_mc, |b, &n| {
            b.iter(|| estimate_m_matrix(&cov, &basis, n, &rng).unwrap())
        });
    }
    g.finish();
}

fn bench_critic_gp_step(c: &mut Criterion) {
    let (net, opt) = critic_with_adam(16, &[64, 64, 64]);
    let real = batch(200, 16, 1);
    let fake = batch(200, 16, 2);
    c.bench_function("critic_update_gp/d16_3x64_batch200", |b| {
        let (mut net, mut opt) = (net.clone(), opt.clone());
        let mut u = RngStream::new(0, 5).open();
        b.iter(|| critic_update_gp(&mut net, &mut opt, &real, &fake, 0.1, 1e-4, &mut u).unwrap())
    });
}

criterion_group!(benches, bench_sym_eig, bench_m_matrix, bench_critic_gp_step);
criterion_main!(benches);
