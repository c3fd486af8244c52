use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sentinel_core::channel::{effective_channel, random_ris_phases, LinkChannels};
use sentinel_core::experiments::model_arch;
use sentinel_core::federated::{fedavg_aggregate, ClientUpdate};
use sentinel_core::nn::{forward, ModelParams, Tensor};
use sentinel_core::topology::NodeId;
use sentinel_core::ScenarioConfig;

fn complex_vec(rng: &mut StdRng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn bench_effective_channel(c: &mut Criterion) {
    let cfg = ScenarioConfig::desk();
    let (n_t, n, f) = (cfg.radio.ap_antennas, cfg.n_ris_elements(), cfg.radio.n_rb);
    let mut rng = StdRng::seed_from_u64(1);
    let link = LinkChannels {
        n_t,
        n,
        f,
        h_dir: complex_vec(&mut rng, n_t * f),
        h_ue_ris: complex_vec(&mut rng, n * f),
        g_ris_ap: complex_vec(&mut rng, n * n_t * f),
        los: [true; 3],
    };
    let ris = random_ris_phases(&mut rng, 0, n);
    c.bench_function("effective_channel", |b| {
        b.iter(|| effective_channel(black_box(&link), black_box(&ris)).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let arch = model_arch(&ScenarioConfig::desk());
    let mut rng = StdRng::seed_from_u64(2);
    let params = ModelParams::init(arch, &mut rng);
    let shape = [arch.in_c, arch.in_h, arch.in_w];
    let batch: Vec<Tensor> = (0..32)
        .map(|_| {
            let data = (0..shape.iter().product())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            Tensor::from_vec(&shape, data)
        })
        .collect();
    c.bench_function("forward_batch32", |b| {
        b.iter(|| forward(black_box(&params), black_box(&batch)).unwrap())
    });
}

fn bench_fedavg(c: &mut Criterion) {
    let arch = model_arch(&ScenarioConfig::desk());
    let mut rng = StdRng::seed_from_u64(3);
    let updates: Vec<ClientUpdate> = (0..8)
        .map(|k| ClientUpdate {
            client_ap: NodeId::ap(k),
            params: ModelParams::init(arch, &mut rng),
            n_samples: 10 + k,
            round: 0,
            mean_loss: 0.5,
        })
        .collect();
    c.bench_function("fedavg_aggregate_8_clients", |b| {
        b.iter(|| fedavg_aggregate(black_box(&updates)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_effective_channel,
    bench_forward,
    bench_fedavg
);
criterion_main!(benches);
