use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use flowtrack::cost_model::{pairwise_layers, DEFAULT_GAMMA};
use flowtrack::nnet::{Activation, DenseNet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn pairwise_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = pairwise_layers();
    let net = DenseNet::mlp(
        &sizes,
        Activation::LeakyRelu,
        Activation::TanhScaled(DEFAULT_GAMMA),
        &mut rng,
    )
    .unwrap();
    let mut group = c.benchmark_group("pairwise_forward");
    for batch in [64, 512] {
        let inputs = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-1.0..1.0));
        group.throughput(Throughput::Elements(batch as u64));
        group.bench_with_input(BenchmarkId::from_parameter(batch), &inputs, |b, x| {
            b.iter(|| net.predict_batch(black_box(x.view())).unwrap())
        });
    }
    group.finish();
}

fn pairwise_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = pairwise_layers();
    let net = DenseNet::mlp(
        &sizes,
        Activation::LeakyRelu,
        Activation::TanhScaled(DEFAULT_GAMMA),
        &mut rng,
    )
    .unwrap();
    let batch = 256;
    let inputs = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-1.0..1.0));
    let upstream: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("pairwise_forward_backward_256", |b| {
        b.iter(|| {
            let cache = net.forward_batch(inputs.view()).unwrap();
            net.backward_batch(black_box(&upstream), &cache).unwrap()
        })
    });
}

criterion_group!(benches, pairwise_forward, pairwise_backward);
criterion_main!(benches);
