use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use setlab_core::aggregate::{Aggregator, AttentionMode, AttentionParams, FeatureSet};
use setlab_core::assoc::{hungarian, soft_point_in_box, BBox, CostMatrix, SoftBoxParams};
use setlab_core::bonet::{infer_scene, BonetConfig, BonetModel, InferConfig};
use setlab_core::rng::derive_rng;
use setlab_core::synth::{make_scene, SynthConfig};
use setlab_core::Tensor;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = derive_rng(seed, 0);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32, 128, 512] {
        let (a, b) = (random(n, 64, 1), random(64, 64, 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| bch.iter(|| a.matmul(black_box(&b)).unwrap()));
    }
    g.finish();
}

fn aggregators(c: &mut Criterion) {
    let set = FeatureSet::new(random(24, 32, 3)).unwrap();
    let params = AttentionParams::new(AttentionMode::Feature, random(32, 32, 4)).unwrap();
    let mut g = c.benchmark_group("aggregate_24x32");
    for agg in Aggregator::ALL {
        let p = match agg.attention_mode() {
            Some(AttentionMode::Feature) => Some(params.clone()),
            Some(AttentionMode::Element) => Some(AttentionParams::zeros(AttentionMode::Element, 32)),
            None => None,
        };
        g.bench_function(agg.to_string(), |b| b.iter(|| agg.eval(black_box(&set), p.as_ref()).unwrap()));
    }
    g.finish();
}

fn assignment(c: &mut Criterion) {
    let mut rng = derive_rng(5, 0);
    let mut g = c.benchmark_group("hungarian");
    for (h, t) in [(6, 4), (24, 16), (64, 48)] {
        let m = CostMatrix::from_total(h, t, (0..h * t).map(|_| rng.gen_range(0.0..10.0)).collect()).unwrap();
        g.bench_function(format!("{h}x{t}"), |b| b.iter(|| hungarian(black_box(&m)).unwrap()));
    }
    g.finish();
}

fn point_in_box(c: &mut Criterion) {
    let scene = make_scene(&SynthConfig::default(), &mut derive_rng(6, 0)).unwrap();
    let bbox = BBox::new([1.0, 1.0, 0.2], [2.5, 2.0, 1.4]);
    c.bench_function("soft_point_in_box_512", |b| {
        b.iter(|| soft_point_in_box(black_box(&scene.points), &bbox, SoftBoxParams::default()).unwrap())
    });
}

fn bonet_inference(c: &mut Criterion) {
    let scene = make_scene(&SynthConfig::default(), &mut derive_rng(7, 0)).unwrap();
    let model = BonetModel::new(BonetConfig::default(), &mut derive_rng(7, 1)).unwrap();
    c.bench_function("bonet_infer_512", |b| {
        b.iter(|| infer_scene(&model, black_box(&scene), &InferConfig::default()).unwrap())
    });
}

criterion_group!(benches, matmul, aggregators, assignment, point_in_box, bonet_inference);
criterion_main!(benches);
