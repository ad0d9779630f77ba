use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ladder_hsi::hsi::{prepare, synthetic_cube, DataConfig, SyntheticSpec};
use ladder_hsi::ladder::LadderSpec;
use ladder_hsi::par;
use ladder_hsi::tensor::kernels::{self, ConvGeom};
use ladder_hsi::train::{TrainConfig, Trainer};
use ladder_hsi::Rng;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.normal()).collect()
}

/// Runs `f` once on the rayon path and once forced onto one thread.
fn both<F: FnMut()>(
    group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>,
    label: &str,
    mut f: F,
) {
    group.bench_function(BenchmarkId::new("parallel", label), |b| b.iter(&mut f));
    group.bench_function(BenchmarkId::new("serial", label), |b| {
        b.iter(|| par::with_serial(&mut f))
    });
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in [(200, 103, 300), (200, 300, 200)] {
        let a = random(m * k, 1);
        let b = random(k * n, 2);
        both(&mut group, &format!("{m}x{k}x{n}"), || {
            std::hint::black_box(kernels::matmul(&a, &b, m, k, n));
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let geom = ConvGeom {
        batch: 100,
        h: 7,
        w: 7,
        c_in: 15,
        kh: 3,
        kw: 3,
        c_out: 90,
    };
    let x = random(geom.batch * geom.h * geom.w * geom.c_in, 3);
    let k = random(geom.kh * geom.kw * geom.c_in * geom.c_out, 4);
    let y = random(geom.batch * geom.out_h() * geom.out_w() * geom.c_out, 5);
    both(&mut group, "forward", || {
        std::hint::black_box(kernels::conv2d(&x, &k, geom));
    });
    both(&mut group, "input_grad", || {
        std::hint::black_box(kernels::conv2d_transpose(&y, &k, geom));
    });
    both(&mut group, "kernel_grad", || {
        std::hint::black_box(kernels::conv2d_kernel_grad(&x, &y, geom));
    });
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    let cube = synthetic_cube(&SyntheticSpec::default()).unwrap();
    let data = prepare(
        &cube,
        &DataConfig {
            labels_per_class: Some(5),
            ..DataConfig::default()
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig::new(LadderSpec::fc(
        8,
        &[300, 200, 100],
        3,
        0.3,
        vec![1.0, 0.1, 0.1, 0.1, 0.0],
    ));
    let mut trainer = Trainer::<f64>::new(&cfg, &data).unwrap();
    both(&mut group, "fc", || {
        std::hint::black_box(trainer.step().unwrap());
    });
    group.finish();
}

criterion_group!(benches, matmul, conv, train_step);
criterion_main!(benches);
