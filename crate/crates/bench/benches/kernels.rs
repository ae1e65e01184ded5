use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rced_core::dsp::{istft, stft};
use rced_core::models::Layer;
use rced_core::nn::{conv1d_backward, conv1d_forward, mse_loss};
use rced_core::train::{AdamConfig, AdamState};
use rced_core::{Network, NetworkConfig, StftConfig, Tensor, Waveform};

fn random_tensor(f: usize, c: usize, b: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(f, c, b, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn conv_layers(c: &mut Criterion) {
    let net = Network::<f32>::build(&NetworkConfig::preset("rced10").unwrap(), 1).unwrap();
    let mut group = c.benchmark_group("conv_b64");
    for layer in net.layers() {
        if let Layer::Conv(conv) = layer {
            let x = random_tensor(129, conv.c_in, 64, 2);
            let g = random_tensor(129, conv.c_out, 64, 3);
            let tag = format!("w{}_{}x{}", conv.width, conv.c_in, conv.c_out);
            group.bench_function(format!("forward_{tag}"), |b| b.iter(|| conv1d_forward(&x, conv).unwrap()));
            group.bench_function(format!("backward_{tag}"), |b| b.iter(|| conv1d_backward(&x, conv, &g).unwrap()));
        }
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Waveform::new((0..8000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000);
    let s = stft(&w, &cfg).unwrap();
    c.bench_function("stft_1s", |b| b.iter(|| stft(&w, &cfg).unwrap()));
    c.bench_function("istft_1s", |b| b.iter(|| istft(&s.magnitude, &s.phase, &cfg).unwrap()));
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_b64");
    group.sample_size(20);
    for arch in ["rced10", "crced16"] {
        let net = Network::<f32>::build(&NetworkConfig::preset(arch).unwrap(), 1).unwrap();
        let x = random_tensor(129, 8, 64, 5);
        let y = random_tensor(129, 1, 64, 6);
        let shapes: Vec<usize> = net.params().iter().map(|(p, _)| p.len()).collect();
        let kinds: Vec<_> = net.params().iter().map(|(_, k)| *k).collect();
        group.bench_function(arch, |b| {
            b.iter_batched(
                || (net.clone(), AdamState::<f32>::new(AdamConfig::default(), &shapes)),
                |(mut net, mut adam)| {
                    let p = net.forward(&x).unwrap();
                    let (_, g) = mse_loss(&p, &y).unwrap();
                    let grads = net.backward(&g).unwrap();
                    adam.step(net.params_mut(), &kinds, &grads.arrays).unwrap();
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, conv_layers, spectral, training_step);
criterion_main!(benches);
