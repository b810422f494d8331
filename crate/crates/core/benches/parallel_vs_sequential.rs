use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mlcvae::conditioning::{Attribute, AttributeSpec, LabelCombo, Variant};
use mlcvae::data::LabeledDataset;
use mlcvae::model::{ImageShape, MlcVaeModel, ModeTag, ModelConfig, TrainConfig};
use mlcvae::par::Exec;
use rand::Rng;

fn dataset(n: usize) -> LabeledDataset {
    let spec = AttributeSpec::new(vec![
        Attribute::new("digit", &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"]),
        Attribute::new("color", &["red", "green", "blue"]),
    ])
    .unwrap();
    let mut r = mlcvae::rng::stream(0, mlcvae::rng::streams::DATA);
    let gray: Vec<u8> = (0..n * 784).map(|_| r.gen()).collect();
    let palette = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];
    let colors: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let tints = colors.iter().map(|&c| palette[c]).collect();
    let digits = (0..n).map(|i| i % 10).collect();
    LabeledDataset::new(spec, 28, 28, gray, tints, vec![digits, colors]).unwrap()
}

fn model(ds: &LabeledDataset) -> MlcVaeModel {
    let cfg = ModelConfig {
        mode: ModeTag::Mlc,
        variant: Variant::Tucker { ranks: [16, 16, 12] },
        latent_dim: 16,
        beta: 1.0,
        hidden: vec![512, 256],
        unlabeled: None,
    };
    let image = ImageShape { height: 28, width: 28, channels: 3 };
    MlcVaeModel::new(ds.spec().clone(), image, cfg, 0).unwrap()
}

fn execs() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_epoch(c: &mut Criterion) {
    let ds = dataset(512);
    let cfg = TrainConfig { lr: 5e-4, epochs: 1, batch_size: 64, seed: 0 };
    let mut g = c.benchmark_group("train_epoch_512");
    g.sample_size(10);
    for (name, exec) in execs() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(|| model(&ds), |mut m| m.train_epoch(&ds, &cfg, exec).unwrap(), criterion::BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn bench_batch_assembly(c: &mut Criterion) {
    let ds = dataset(2048);
    let idx: Vec<usize> = (0..2048).collect();
    let mut g = c.benchmark_group("image_batch_2048");
    for (name, exec) in execs() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| ds.image_batch(&idx, exec)));
    }
    g.finish();
}

fn bench_generation(c: &mut Criterion) {
    let ds = dataset(16);
    let m = model(&ds);
    let combos: Vec<LabelCombo> = ds.spec().combos();
    let mut g = c.benchmark_group("sample_all_combos_x32");
    g.sample_size(10);
    for (name, exec) in execs() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(combos.len(), |i| m.sample_combo(&combos[i], 32, i as u64).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_epoch, bench_batch_assembly, bench_generation);
criterion_main!(benches);
