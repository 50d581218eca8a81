use arw_bench::sign_image;
use arw_core::defenses::{
    bit_depth_reduce, default_denoiser, diffpir_restore, median_blur, randomize, train_denoiser,
    DiffusionSchedule,
};
use arw_core::scenegen::generate_sign_dataset;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_preprocess(c: &mut Criterion) {
    let img = sign_image();
    c.bench_function("median_blur_k3", |b| {
        b.iter(|| median_blur(black_box(&img), 3).unwrap())
    });
    c.bench_function("bit_depth_reduce_b3", |b| {
        b.iter(|| bit_depth_reduce(black_box(&img), 3).unwrap())
    });
    c.bench_function("randomize", |b| {
        b.iter(|| randomize(black_box(&img), 9).unwrap())
    });
}

fn bench_diffpir(c: &mut Criterion) {
    let img = sign_image();
    let data = generate_sign_dataset(8, 3).unwrap();
    let (model, _) = train_denoiser(&data, 0.1, 1, 0.05, 4).unwrap();
    let schedule = DiffusionSchedule::default_schedule();
    c.bench_function("diffpir_restore_10_steps", |b| {
        let denoiser = default_denoiser(&model);
        b.iter(|| diffpir_restore(black_box(&img), &schedule, &denoiser, 5).unwrap())
    });
}

criterion_group!(defenses, bench_preprocess, bench_diffpir);
criterion_main!(defenses);
