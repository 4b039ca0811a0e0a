use hypalign_core::data::{generate_synthetic, load_dataset, AlignmentDataset, SyntheticSpec};
use hypalign_core::eval::{evaluate_variants, predict};
use hypalign_core::graph::Side;
use hypalign_core::model::{forward_channel, init_structure_channel, init_visual_channel, ChannelConfig};
use hypalign_core::train::{train_channel, Checkpoint, TrainedChannel, TrainingConfig};
use hypalign_core::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_entities: 40,
        visual_dim: 8,
        rng_seed: 3,
        ..Default::default()
    }
}

fn cfg(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        rng_seed: 3,
        ..Default::default()
    }
}

fn train_structure(ds: &AlignmentDataset, epochs: usize, exec: Exec) -> TrainedChannel {
    let u = ds.union().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = init_structure_channel(u.num_nodes(), 8, &ChannelConfig::uniform(8, 2), &mut rng).unwrap();
    train_channel(model, &u.graph, &ds.seeds, u.range(Side::Kg1), u.range(Side::Kg2), &cfg(epochs), exec).unwrap()
}

#[test]
fn files_round_trip_into_the_same_dataset() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = ds.save(dir.path()).unwrap();
    let loaded = load_dataset(&paths, 0.3, 3).unwrap();
    assert_eq!(loaded.stats(), ds.stats());
    assert_eq!(loaded.entity_names(), ds.entity_names());
    assert_eq!(loaded.visual_vectors(), ds.visual_vectors());
    let mut a: Vec<_> = ds.seeds.train().iter().chain(ds.seeds.test()).copied().collect();
    let mut b: Vec<_> = loaded.seeds.train().iter().chain(loaded.seeds.test()).copied().collect();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);
}

#[test]
fn training_is_identical_across_exec_modes() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let s = train_structure(&ds, 15, Exec::Serial);
    let p = train_structure(&ds, 15, Exec::Parallel);
    assert_eq!(s.loss_history, p.loss_history);
    assert_eq!(s.model, p.model);
}

#[test]
fn training_reduces_loss_and_beats_chance() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let t = train_structure(&ds, 100, Exec::Parallel);
    let first = t.loss_history[0];
    let best = t.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best < first);
    let u = ds.union().unwrap();
    let emb = forward_channel(&t.model, &u.graph, Exec::Parallel).unwrap();
    let rep = predict(emb.view(), t.model.output_curvature(), ds.seeds.test(), u.range(Side::Kg2), &[10], Exec::Parallel)
        .unwrap();
    // Chance Hits@10 over 40 candidates is 0.25.
    assert!(rep.hits(10).unwrap() > 0.4, "hits@10 {}", rep.hits(10).unwrap());
}

#[test]
fn checkpoint_reproduces_embeddings() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let t = train_structure(&ds, 5, Exec::Serial);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt.json");
    Checkpoint::new(t.model.clone(), 3).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.model, t.model);
    let u = ds.union().unwrap();
    let a = forward_channel(&t.model, &u.graph, Exec::Serial).unwrap();
    let b = forward_channel(&back.model, &u.graph, Exec::Serial).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fused_variants_cover_both_channels() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let u = ds.union().unwrap();
    let s = train_structure(&ds, 10, Exec::Parallel);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vm = init_visual_channel(&ds.visual_vectors().unwrap(), &ChannelConfig::uniform(8, 2), &mut rng).unwrap();
    let v = train_channel(vm, &u.graph, &ds.seeds, u.range(Side::Kg1), u.range(Side::Kg2), &cfg(10), Exec::Parallel)
        .unwrap();
    let se = forward_channel(&s.model, &u.graph, Exec::Parallel).unwrap();
    let ve = forward_channel(&v.model, &u.graph, Exec::Parallel).unwrap();
    let table = evaluate_variants(
        Some(se.view()),
        Some(ve.view()),
        s.model.output_curvature(),
        ds.seeds.test(),
        u.range(Side::Kg2),
        &[0.5],
        &[1, 10],
        Exec::Parallel,
    )
    .unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["structure", "visual", "fused β=0.5"]);
    // The visual channel sees correlated vectors for each pair; chance Hits@10 is 0.25.
    let h = table.row("visual").unwrap().report.hits(10).unwrap();
    assert!(h > 0.5, "visual hits@10 {h}");
}
