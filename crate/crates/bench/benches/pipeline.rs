use criterion::{black_box, criterion_group, criterion_main, Criterion};

use aenet::augment::{apply_eq, design_peaking_eq, EqParams};
use aenet::dsp::{add_deltas, log_mel_filterbank, Waveform, SAMPLE_RATE};
use aenet::nnet::{Network, Tensor};
use aenet::rng::seeded;
use aenet::zoo::{ArchId, ArchSpec};

fn five_seconds() -> Waveform {
    let samples = (0..5 * SAMPLE_RATE as usize).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    Waveform::new(samples, SAMPLE_RATE).unwrap()
}

fn dsp(c: &mut Criterion) {
    let w = five_seconds();
    c.bench_function("filterbank_5s", |b| b.iter(|| log_mel_filterbank(black_box(&w)).unwrap()));
    let fb = log_mel_filterbank(&w).unwrap();
    c.bench_function("deltas_5s", |b| b.iter(|| add_deltas(black_box(&fb)).unwrap()));
    let eq = design_peaking_eq(&EqParams::new(1000.0, 6.0, 2.0).unwrap(), SAMPLE_RATE as f64).unwrap();
    c.bench_function("peaking_eq_5s", |b| b.iter(|| apply_eq(black_box(&w), &eq)));
}

fn network(c: &mut Criterion) {
    let spec = ArchSpec::new(ArchId::AMini, 8, 200);
    let mut net: Network<f32> = spec.build().unwrap();
    net.init_he(&mut seeded(0));
    let mut shape = vec![8];
    shape.extend(spec.input_shape());
    let len: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..len).map(|i| (i % 17) as f32 / 17.0).collect());
    let mut group = c.benchmark_group("a_mini");
    group.sample_size(10);
    group.bench_function("infer_batch8", |b| b.iter(|| net.infer(black_box(x.clone())).unwrap()));
    group.finish();
}

criterion_group!(benches, dsp, network);
criterion_main!(benches);
