use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypalign_core::data::{generate_synthetic, SyntheticSpec};
use hypalign_core::eval::predict;
use hypalign_core::graph::Side;
use hypalign_core::model::{forward_channel, init_structure_channel, ChannelConfig};
use hypalign_core::train::{evaluate_loss, LossTerms, NegativeSampler, Objective};
use hypalign_core::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("serial", Exec::Serial), ("parallel", Exec::Parallel)];

fn bench_modes(c: &mut Criterion) {
    for n in [200, 1000] {
        let ds = generate_synthetic(&SyntheticSpec {
            n_entities: n,
            ..Default::default()
        })
        .unwrap();
        let u = ds.union().unwrap();
        let cfg = ChannelConfig::uniform(32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = init_structure_channel(u.num_nodes(), 32, &cfg, &mut rng).unwrap();
        let sampler = NegativeSampler::full(u.range(Side::Kg1), u.range(Side::Kg2)).unwrap();
        let terms = LossTerms::sample(ds.seeds.train(), &sampler, 6, &mut rng);
        let emb = forward_channel(&model, &u.graph, Exec::Serial).unwrap();
        let curvature = model.output_curvature();

        let mut group = c.benchmark_group(format!("n={n}"));
        group.sample_size(20);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new("forward", name), &exec, |b, &e| {
                b.iter(|| forward_channel(&model, &u.graph, e).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("loss_and_grad", name), &exec, |b, &e| {
                b.iter(|| evaluate_loss(&model, &u.graph, &terms, Objective::ranking(0.5), e).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("predict", name), &exec, |b, &e| {
                b.iter(|| {
                    predict(emb.view(), curvature, ds.seeds.test(), u.range(Side::Kg2), &[1, 10], e).unwrap()
                })
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
