use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use frameweave::loss::mse_pixel;
use frameweave::nn::{conv2d_backward, conv2d_forward, default_interpolator, ConvLayer, Mode, Network};
use frameweave::{Rng, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    for (name, c_in, c_out, k) in [("conv7x7_32_32", 32, 32, 7), ("conv3x3_128_128", 128, 128, 3), ("conv1x1_6_32", 6, 32, 1)] {
        let x: Tensor<f32> = rng.normal((1, c_in, 64, 64), 0.0, 1.0).unwrap();
        let layer = ConvLayer::he_init(c_in, c_out, (k, k), 0.1, &mut rng).unwrap();
        let g: Tensor<f32> = rng.normal((1, c_out, 64, 64), 0.0, 1.0).unwrap();
        c.bench_function(&format!("{name}/forward"), |b| b.iter(|| conv2d_forward(black_box(&x), &layer).unwrap()));
        c.bench_function(&format!("{name}/backward"), |b| b.iter(|| conv2d_backward(black_box(&x), &layer, &g).unwrap()));
    }
}

fn network(c: &mut Criterion) {
    let rng = Rng::new(2);
    let net = Network::<f32>::init(default_interpolator(), &rng).unwrap();
    let x: Tensor<f32> = Rng::new(3).uniform_tensor((1, 6, 64, 64), 0.0, 1.0).unwrap();
    let t: Tensor<f32> = Rng::new(4).uniform_tensor((1, 3, 64, 64), 0.0, 1.0).unwrap();
    let mut group = c.benchmark_group("interpolator_64x64");
    group.sample_size(10);
    group.bench_function("predict", |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
    group.bench_function("train_step", |b| {
        b.iter(|| {
            let (y, trace) = net.forward(&x, Mode::Train, &rng).unwrap();
            net.backward(&trace, &mse_pixel(&y, &t).unwrap().grad).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, conv, network);
criterion_main!(benches);
