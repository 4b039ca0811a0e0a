use super::*;
use crate::graph::{adjacency_from_edges, union_of, GraphUnion};
use crate::model::{init_structure_channel, ChannelConfig};
use ndarray::arr2;

fn two_rings(n: usize) -> GraphUnion {
    let ring: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let chords: Vec<(usize, usize)> = (0..n).step_by(3).map(|i| (i, (i + n / 2) % n)).collect();
    let all: Vec<_> = ring.iter().chain(&chords).copied().collect();
    let g = adjacency_from_edges(n, &all).unwrap();
    union_of(&g, &g)
}

#[test]
fn sampler_produces_k_corruptions() {
    let s = NegativeSampler::full(0..10, 10..20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let negs = s.sample((3, 13), 6, &mut rng);
    assert_eq!(negs.len(), 6);
    for (j, &(e, v)) in negs.iter().enumerate() {
        assert_ne!((e, v), (3, 13));
        if j % 2 == 0 {
            assert_eq!(v, 13);
            assert!((0..10).contains(&e) && e != 3);
        } else {
            assert_eq!(e, 3);
            assert!((10..20).contains(&v) && v != 13);
        }
    }
}

#[test]
fn two_entity_pool_forces_choice() {
    let s = NegativeSampler::full(0..2, 2..4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        assert_eq!(s.sample((0, 3), 2, &mut rng), vec![(1, 3), (0, 2)]);
    }
}

#[test]
fn single_entity_side_corrupts_the_other() {
    let s = NegativeSampler::full(0..1, 1..5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (e, v) in s.sample((0, 2), 6, &mut rng) {
        assert_eq!(e, 0);
        assert_ne!(v, 2);
    }
    assert!(NegativeSampler::full(0..1, 1..2).is_err());
}

#[test]
fn sampler_is_uniform() {
    // 101-entity KG1 pool minus the positive leaves 100 candidates.
    let s = NegativeSampler::full(0..101, 101..102 + 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = vec![0usize; 101];
    let draws = 10_000;
    let mut seen = 0;
    while seen < draws {
        for (e, _) in s.sample((50, 101), 2, &mut rng).into_iter().step_by(2) {
            counts[e] += 1;
            seen += 1;
        }
    }
    assert_eq!(counts[50], 0);
    let p = 1.0 / 100.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    // 3σ per candidate would flag ~24% of uniform runs over 100 candidates;
    // 4σ keeps the family-wise false alarm rate under 1%.
    for (i, &c) in counts.iter().enumerate() {
        if i != 50 {
            assert!((c as f64 - mean).abs() <= 4.0 * sigma, "candidate {i}: {c}");
        }
    }
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 50)
        .map(|(_, &c)| (c as f64 - mean).powi(2) / mean)
        .sum();
    // 99 degrees of freedom; the 0.999 quantile is ≈ 148
    assert!(chi2 < 148.0, "chi2 = {chi2}");
}

fn toy_embeddings() -> Array2<f64> {
    arr2(&[[0.0, 0.0], [0.5, 0.0], [0.2, 0.0], [0.0, 0.6]])
}

#[test]
fn hinge_arithmetic() {
    let emb = toy_embeddings();
    let terms = LossTerms {
        positives: vec![(0, 1)],
        negatives: vec![vec![(0, 2)]],
    };
    let out = ranking_loss(emb.view(), Curvature::ONE, &terms, 0.5, Exec::Serial).unwrap();
    assert!((out.value - 0.8).abs() < 1e-12);
    assert_eq!(out.active_terms, 1);

    let doubled = LossTerms {
        positives: vec![(0, 1)],
        negatives: vec![vec![(0, 2), (0, 2)]],
    };
    let out2 = ranking_loss(emb.view(), Curvature::ONE, &doubled, 0.5, Exec::Serial).unwrap();
    assert!((out2.value - 1.6).abs() < 1e-12);
}

#[test]
fn inactive_hinge_is_zero() {
    let emb = arr2(&[[0.1, 0.1], [0.1, 0.1], [0.8, 0.0], [-0.7, 0.0]]);
    let terms = LossTerms {
        positives: vec![(0, 1)],
        negatives: vec![vec![(0, 2), (0, 3)]],
    };
    let out = ranking_loss(emb.view(), Curvature::ONE, &terms, 0.5, Exec::Serial).unwrap();
    assert_eq!(out.value, 0.0);
    assert!(out.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn loss_rejects_out_of_range_pairs() {
    let emb = toy_embeddings();
    let terms = LossTerms {
        positives: vec![(0, 9)],
        negatives: vec![vec![]],
    };
    assert!(ranking_loss(emb.view(), Curvature::ONE, &terms, 0.5, Exec::Serial).is_err());
}

#[test]
fn loss_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let emb = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-0.5..0.5));
    let sampler = NegativeSampler::full(0..6, 6..12).unwrap();
    let positives: Vec<Pair> = (0..6).map(|i| (i, 6 + (i + 1) % 6)).collect();
    let terms = LossTerms::sample(&positives, &sampler, 4, &mut rng);
    let base = ranking_loss(emb.view(), Curvature::ONE, &terms, 0.3, Exec::Serial).unwrap().value;

    // monotone in the margin
    let mut prev = 0.0;
    for m in [0.0, 0.1, 0.3, 0.7, 1.5] {
        let v = ranking_loss(emb.view(), Curvature::ONE, &terms, m, Exec::Serial).unwrap().value;
        assert!(v >= prev);
        prev = v;
    }

    // permutation invariance
    let mut shuffled = terms.clone();
    shuffled.positives.reverse();
    shuffled.negatives.reverse();
    for ns in &mut shuffled.negatives {
        ns.rotate_left(1);
    }
    let perm = ranking_loss(emb.view(), Curvature::ONE, &shuffled, 0.3, Exec::Serial).unwrap().value;
    assert!((perm - base).abs() < 1e-12);

    // serial and parallel agree bit for bit
    let a = ranking_loss(emb.view(), Curvature::ONE, &terms, 0.3, Exec::Serial).unwrap();
    let b = ranking_loss(emb.view(), Curvature::ONE, &terms, 0.3, Exec::Parallel).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.grad, b.grad);
}

fn small_setup(seed: u64) -> (ChannelModel, GraphUnion, SeedAlignments) {
    let n = 12;
    let u = two_rings(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = init_structure_channel(2 * n, 8, &ChannelConfig::uniform(8, 2), &mut rng).unwrap();
    let train: Vec<Pair> = (0..n).step_by(2).map(|i| (i, n + i)).collect();
    let test: Vec<Pair> = (1..n).step_by(2).map(|i| (i, n + i)).collect();
    let seeds = SeedAlignments::new(train, test, 0..n, n..2 * n).unwrap();
    (model, u, seeds)
}

#[test]
fn seeds_validation() {
    assert!(SeedAlignments::new(vec![(0, 5)], vec![(0, 5)], 0..5, 5..10).is_err());
    assert!(SeedAlignments::new(vec![(5, 5)], vec![], 0..5, 5..10).is_err());
    assert!(SeedAlignments::new(vec![(0, 4)], vec![], 0..5, 5..10).is_err());
    assert!(SeedAlignments::new(vec![(0, 5)], vec![(1, 6)], 0..5, 5..10).is_ok());
}

#[test]
fn gradient_check_on_toy_instance() {
    let (model, u, seeds) = small_setup(7);
    let sampler = NegativeSampler::full(u.range(crate::graph::Side::Kg1), u.range(crate::graph::Side::Kg2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let terms = LossTerms::sample(seeds.train(), &sampler, 6, &mut rng);
    for objective in [
        Objective::ranking(0.5),
        Objective { margin: 0.5, feature_l2: 0.3 },
    ] {
        let report = gradient_check(
            &model,
            &u.graph,
            &terms,
            objective,
            &GradCheckOptions {
                coordinates: 250,
                ..Default::default()
            },
            Exec::Serial,
        )
        .unwrap();
        assert!(report.checked >= 150, "{report}");
        assert!(report.passes(1e-4), "{report}");
        assert!(report.worst.as_ref().unwrap().param.starts_with("structure."));
    }
}

#[test]
fn feature_penalty_adds_to_loss() {
    let (model, u, seeds) = small_setup(7);
    let sampler = NegativeSampler::full(0..12, 12..24).unwrap();
    let terms = LossTerms::sample(seeds.train(), &sampler, 6, &mut ChaCha8Rng::seed_from_u64(1));
    let plain = evaluate_loss(&model, &u.graph, &terms, Objective::ranking(0.5), Exec::Serial).unwrap();
    let lam = 0.25;
    let reg = evaluate_loss(&model, &u.graph, &terms, Objective { margin: 0.5, feature_l2: lam }, Exec::Serial).unwrap();
    let sq: f64 = model.features.iter().map(|v| v * v).sum();
    assert!((reg.loss - plain.loss - 0.5 * lam * sq).abs() < 1e-12);
    let diff = reg.tape.get("structure.features").unwrap() - plain.tape.get("structure.features").unwrap();
    for (d, x) in diff.iter().zip(model.features.iter()) {
        assert!((d - lam * x).abs() < 1e-12);
    }
    assert_eq!(
        reg.tape.get("structure.layers.0.weight"),
        plain.tape.get("structure.layers.0.weight")
    );
}

#[test]
fn corrupted_backward_is_caught() {
    let (model, u, seeds) = small_setup(7);
    let sampler = NegativeSampler::full(0..12, 12..24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let terms = LossTerms::sample(seeds.train(), &sampler, 6, &mut rng);
    let report = gradient_check_with(
        &model,
        &u.graph,
        &terms,
        Objective::ranking(0.5),
        &GradCheckOptions::default(),
        Exec::Serial,
        |m| {
            let mut tape = evaluate_loss(m, &u.graph, &terms, Objective::ranking(0.5), Exec::Serial)?.tape;
            tape.tensors_mut()[1].mapv_inplace(|g| 1.5 * g);
            Ok(tape)
        },
    )
    .unwrap();
    assert!(!report.passes(1e-4));
    assert_eq!(report.worst.unwrap().param, "structure.layers.0.weight");
}

#[test]
fn training_is_deterministic_and_improves() {
    let (model, u, seeds) = small_setup(3);
    let cfg = TrainingConfig {
        epochs: 40,
        rng_seed: 17,
        ..Default::default()
    };
    let run = || {
        train_channel(model.clone(), &u.graph, &seeds, 0..12, 12..24, &cfg, Exec::Parallel).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let serial =
        train_channel(model.clone(), &u.graph, &seeds, 0..12, 12..24, &cfg, Exec::Serial).unwrap();
    assert_eq!(a, serial);
    assert_eq!(a.loss_history.len(), 40);
    assert!(a.loss_history.iter().all(|v| v.is_finite()));
    let min = a.loss_history.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min <= a.loss_history[0]);
    assert!(a.loss_history.last().unwrap() < &a.loss_history[0]);
}

#[test]
fn no_training_pairs_is_an_error() {
    let (model, u, _) = small_setup(3);
    let seeds = SeedAlignments::new(vec![], vec![(0, 12)], 0..12, 12..24).unwrap();
    let err = train_channel(model, &u.graph, &seeds, 0..12, 12..24, &TrainingConfig::default(), Exec::Serial);
    assert!(matches!(err, Err(Error::NoTrainingPairs)));
}

#[test]
fn divergence_names_the_epoch() {
    let (model, u, seeds) = small_setup(3);
    let cfg = TrainingConfig {
        learning_rate: 1e308,
        epochs: 5,
        ..Default::default()
    };
    match train_channel(model, &u.graph, &seeds, 0..12, 12..24, &cfg, Exec::Serial) {
        Err(Error::Diverged { epoch, channel, .. }) => {
            assert_eq!(channel, "structure");
            assert!(epoch < 5);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation_names_fields() {
    let bad = TrainingConfig {
        margin_visual: 0.0,
        ..Default::default()
    };
    assert_eq!(bad.validate().unwrap_err().0, "margin_visual");
    let bad = TrainingConfig {
        negatives_per_positive: 0,
        ..Default::default()
    };
    assert_eq!(bad.validate().unwrap_err().0, "negatives_per_positive");
    assert!(TrainingConfig::default().validate().is_ok());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (model, ..) = small_setup(5);
    let ckpt = checkpoint::Checkpoint::new(model.clone(), 42);
    let back = checkpoint::Checkpoint::from_json(&ckpt.to_json()).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.model, model);
    assert_eq!(back.rng_seed, 42);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    ckpt.save(&path).unwrap();
    assert_eq!(checkpoint::Checkpoint::load(&path).unwrap(), ckpt);

    let tampered = ckpt.to_json().replace("\"version\":1", "\"version\":9");
    assert!(checkpoint::Checkpoint::from_json(&tampered).is_err());
    let mut wrong = ckpt.clone();
    wrong.layer_dims = vec![3, 3];
    assert!(checkpoint::Checkpoint::from_json(&wrong.to_json()).is_err());
}
