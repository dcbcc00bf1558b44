use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hazecycle::exec::{self, Exec};
use hazecycle::image::Image;
use hazecycle::metrics::ssim;
use hazecycle::mmd::{mmd2_empirical, KernelSpec, SampleSet};
use hazecycle::trainer::{train_step, RunSettings, TrainState};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::new(size, size, (0..size * size * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    // Shapes of the encoder's first layer: one row, and a small batch.
    for &(m, k, n) in &[(1, 3072, 512), (64, 3072, 512)] {
        let a = random_vec(&mut rng, m * k);
        let b = random_vec(&mut rng, k * n);
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, format!("{m}x{k}x{n}")), &mode, |bch, &mode| {
                bch.iter(|| exec::matmul(mode, black_box(&a), black_box(&b), m, k, n))
            });
        }
    }
    group.finish();
}

fn bench_mmd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = SampleSet::new(8, random_vec(&mut rng, 256 * 8)).unwrap();
    let y = SampleSet::new(8, random_vec(&mut rng, 256 * 8)).unwrap();
    let spec = KernelSpec::training_default(8);
    let mut group = c.benchmark_group("mmd2_empirical_256");
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            exec::set_mode(mode);
            b.iter(|| mmd2_empirical(black_box(&x), black_box(&y), &spec).unwrap())
        });
    }
    exec::set_mode(Exec::Parallel);
    group.finish();
}

fn bench_ssim(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_image(&mut rng, 32);
    let b = random_image(&mut rng, 32);
    c.bench_function("ssim_32", |bch| bch.iter(|| ssim(black_box(&a), black_box(&b)).unwrap()));
}

fn bench_train_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hazy = random_image(&mut rng, 32);
    let clear = random_image(&mut rng, 32);
    let mut group = c.benchmark_group("train_step_32");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            exec::set_mode(mode);
            let mut state = TrainState::new(RunSettings::new(32, 8, 0)).unwrap();
            b.iter(|| train_step(&mut state, black_box(&hazy), black_box(&clear)).unwrap())
        });
    }
    exec::set_mode(Exec::Parallel);
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_mmd, bench_ssim, bench_train_step);
criterion_main!(benches);
