use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pixmix::fractal::{render_candidate, render_chaos_game, sample_ifs};
use pixmix::metrics::{aupr, auroc};
use pixmix::{pixmix, FractalConfig, ImageTensor, PictureCache, PixMixConfig, Preset, RngStream};

fn noise(size: usize, stream: &mut RngStream) -> ImageTensor {
    ImageTensor::from_fn(size, size, |_, _, _| stream.next_uniform() as f32).unwrap()
}

fn bench_pixmix(c: &mut Criterion) {
    let mut group = c.benchmark_group("pixmix");
    for (preset, size) in [(Preset::Cifar, 32), (Preset::Imagenet, 224)] {
        let mut s = RngStream::new(1);
        let pictures = PictureCache::new((0..16).map(|_| noise(size, &mut s)).collect());
        let input = noise(size, &mut s);
        let config = PixMixConfig::preset(preset);
        let root = RngStream::new(2);
        let mut i = 0u64;
        group.bench_function(BenchmarkId::from_parameter(size), |b| {
            b.iter(|| {
                i += 1;
                pixmix(black_box(&input), &pictures, &config, &mut root.split(i)).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_fractals(c: &mut Criterion) {
    let mut s = RngStream::new(3);
    let system = sample_ifs(&mut s, 4).unwrap();
    c.bench_function("chaos_game/100k_points_256", |b| {
        b.iter(|| render_chaos_game(&system, &mut s.split(0u64), 100_000, 256).unwrap())
    });
    let root = RngStream::new(4);
    let config = FractalConfig::new(256);
    let mut i = 0usize;
    c.bench_function("render_candidate/256", |b| {
        b.iter(|| {
            i += 1;
            render_candidate(&root, i, &config).unwrap()
        })
    });
}

fn bench_detection(c: &mut Criterion) {
    let mut s = RngStream::new(5);
    let ins: Vec<f64> = (0..10_000).map(|_| s.sample_normal() + 1.0).collect();
    let outs: Vec<f64> = (0..10_000).map(|_| s.sample_normal()).collect();
    c.bench_function("auroc/10k_vs_10k", |b| b.iter(|| auroc(black_box(&ins), black_box(&outs)).unwrap()));
    c.bench_function("aupr/10k_vs_10k", |b| b.iter(|| aupr(black_box(&ins), black_box(&outs)).unwrap()));
}

criterion_group!(benches, bench_pixmix, bench_fractals, bench_detection);
criterion_main!(benches);
