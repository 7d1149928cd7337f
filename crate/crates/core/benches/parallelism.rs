//! Compares the sequential kernels against their rayon counterparts:
//! matrix products, row-wise MLP application and multi-head summation.
//!
//! Run with `cargo bench -p tinygpt`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinygpt::kernels;
use tinygpt::{Activation, AttentionHead, Matrix, Mlp, MultiHead, SoftmaxMode, Vector};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 128, 256] {
        let a = random_matrix(&mut rng, n, n);
        let b = random_matrix(&mut rng, n, n);
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |bench, _| {
            bench.iter(|| kernels::matmul_seq(black_box(&a), black_box(&b)))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &n, |bench, _| {
            bench.iter(|| kernels::matmul_par(black_box(&a), black_box(&b)))
        });
    }
    group.finish();
}

fn bench_mlp_rows(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 64;
    let hidden = 256;
    let mlp = Mlp::new(
        vec![
            random_matrix(&mut rng, hidden, d),
            random_matrix(&mut rng, d, hidden),
        ],
        vec![Vector::zeros(hidden), Vector::zeros(d)],
        Activation::Gelu,
    )
    .unwrap();

    let mut group = c.benchmark_group("mlp_rows");
    for n in [32usize, 128, 512] {
        let x = random_matrix(&mut rng, n, d);
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |bench, _| {
            bench.iter(|| kernels::mlp_rows_seq(black_box(&mlp), black_box(&x)))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &n, |bench, _| {
            bench.iter(|| kernels::mlp_rows_par(black_box(&mlp), black_box(&x)))
        });
    }
    group.finish();
}

fn bench_heads_sum(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 64;
    let d_head = 16;
    let heads = MultiHead::new(
        (0..8)
            .map(|_| {
                AttentionHead::assemble(
                    random_matrix(&mut rng, d_head, d),
                    random_matrix(&mut rng, d_head, d),
                    random_matrix(&mut rng, d_head, d),
                    random_matrix(&mut rng, d, d_head),
                    SoftmaxMode::PaperGlobal,
                    false,
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();

    let mut group = c.benchmark_group("heads_sum");
    for n in [32usize, 128] {
        let x = random_matrix(&mut rng, n, d);
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |bench, _| {
            bench.iter(|| kernels::heads_sum_seq(black_box(&heads), black_box(&x)))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &n, |bench, _| {
            bench.iter(|| kernels::heads_sum_par(black_box(&heads), black_box(&x)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_mlp_rows, bench_heads_sum);
criterion_main!(benches);
