//! Subcommand implementations. Each writes human-readable output to `out`
//! and files under the run directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use hypalign_core::data::{generate_synthetic, load_dataset, AlignmentDataset, SyntheticSpec};
use hypalign_core::eval::{evaluate_variants, export_embeddings, predict, VariantTable};
use hypalign_core::geometry::Curvature;
use hypalign_core::graph::{GraphUnion, Side};
use hypalign_core::model::{
    forward_channel, fuse_rows, init_structure_channel, init_visual_channel, ChannelConfig, ChannelModel,
    FusionConfig,
};
use hypalign_core::train::{
    evaluate_loss, gradient_check_with, train_channel, Checkpoint, GradCheckOptions, GradCheckReport, LossTerms,
    NegativeSampler, Objective,
};
use hypalign_core::{Error, Exec};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{manifest_info, RunConfig, MANIFEST_FILE};

/// Loads or generates the dataset a config points at.
pub fn dataset(cfg: &RunConfig) -> Result<AlignmentDataset> {
    match (&cfg.data, &cfg.synthetic) {
        (Some(d), _) => Ok(load_dataset(&d.paths(), d.split_fraction, cfg.seed)?),
        (None, Some(s)) => Ok(generate_synthetic(s)?),
        (None, None) => bail!("no dataset configured"),
    }
}

/// Weight-initialization RNG, independent of the training streams.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

/// Freshly initialized channels for `ds`; the visual one only if `ds` has
/// visual vectors.
pub fn init_channels(
    cfg: &RunConfig,
    ds: &AlignmentDataset,
    union: &GraphUnion,
) -> Result<(ChannelModel, Option<ChannelModel>)> {
    let ccfg = cfg.model.channel_config()?;
    let mut rng = init_rng(cfg.seed);
    let structure = init_structure_channel(union.num_nodes(), cfg.model.input_dim, &ccfg, &mut rng)?;
    let visual = match ds.visual_vectors() {
        Some(v) => Some(init_visual_channel(&v, &ccfg, &mut rng)?),
        None => None,
    };
    Ok((structure, visual))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub structure_loss: Vec<f64>,
    pub visual_loss: Option<Vec<f64>>,
}

pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    let start = Instant::now();
    let ds = dataset(cfg)?;
    let union = ds.union()?;
    let (structure, visual) = init_channels(cfg, &ds, &union)?;
    let tcfg = cfg.training();
    let exec = cfg.exec();
    let (kg1, kg2) = (union.range(Side::Kg1), union.range(Side::Kg2));

    writeln!(out, "{}", ds.stats())?;
    let s = train_channel(structure, &union.graph, &ds.seeds, kg1.clone(), kg2.clone(), &tcfg, exec)?;
    writeln!(out, "structure: loss {:.4} -> {:.4}", s.loss_history[0], last(&s.loss_history))?;
    let v = match visual {
        Some(m) => {
            let v = train_channel(m, &union.graph, &ds.seeds, kg1, kg2, &tcfg, exec)?;
            writeln!(out, "visual:    loss {:.4} -> {:.4}", v.loss_history[0], last(&v.loss_history))?;
            Some(v)
        }
        None => None,
    };

    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let info = manifest_info(v.is_some());
    Checkpoint::new(s.model, cfg.seed).save(&dir.join(&info.structure_checkpoint))?;
    if let (Some(v), Some(name)) = (&v, &info.visual_checkpoint) {
        Checkpoint::new(v.model.clone(), cfg.seed).save(&dir.join(name))?;
    }
    let visual_loss = v.map(|v| v.loss_history);
    write_loss_log(&dir.join(&info.loss_log), &s.loss_history, visual_loss.as_deref())?;

    let mut manifest = cfg.resolved();
    if let Some(d) = manifest.data.as_mut() {
        for p in [&mut d.kg1_triples, &mut d.kg2_triples, &mut d.alignments]
            .into_iter()
            .chain(d.kg1_visual.as_mut())
            .chain(d.kg2_visual.as_mut())
        {
            *p = std::fs::canonicalize(&*p).with_context(|| format!("cannot resolve {}", p.display()))?;
        }
    }
    manifest.output_dir = std::fs::canonicalize(&dir)?;
    manifest.manifest = Some(info);
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_toml()).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(out, "wrote {} ({:.1?})", dir.display(), start.elapsed())?;
    Ok(TrainOutcome {
        dir,
        structure_loss: s.loss_history,
        visual_loss,
    })
}

fn last(v: &[f64]) -> f64 {
    *v.last().expect("at least one epoch")
}

fn write_loss_log(path: &Path, structure: &[f64], visual: Option<&[f64]>) -> Result<()> {
    let mut s = String::from(if visual.is_some() { "epoch\tstructure\tvisual\n" } else { "epoch\tstructure\n" });
    for (i, l) in structure.iter().enumerate() {
        write!(s, "{i}\t{l}")?;
        if let Some(v) = visual {
            write!(s, "\t{}", v[i])?;
        }
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

/// A trained run loaded back from its directory.
pub struct Run {
    pub config: RunConfig,
    pub dataset: AlignmentDataset,
    pub union: GraphUnion,
    pub structure: ChannelModel,
    pub visual: Option<ChannelModel>,
}

impl Run {
    pub fn load(dir: &Path) -> Result<Run> {
        let config = RunConfig::load(Some(&dir.join(MANIFEST_FILE)), &[])?;
        let info = config
            .manifest
            .clone()
            .context("manifest.toml has no [manifest] section; was it written by `train`?")?;
        let dataset = dataset(&config)?;
        let union = dataset.union()?;
        let structure = Checkpoint::load(&dir.join(&info.structure_checkpoint))?;
        check_checkpoint(&structure, &config, union.num_nodes(), config.model.input_dim, "structure")?;
        let visual = match (&info.visual_checkpoint, &dataset.visual1, &dataset.visual2) {
            (Some(name), v1, v2) => {
                let ckpt = Checkpoint::load(&dir.join(name))?;
                let dv = v1.as_ref().or(v2.as_ref()).map(|v| v.dim()).unwrap_or(0);
                check_checkpoint(&ckpt, &config, union.num_nodes(), dv, "visual")?;
                Some(ckpt.model)
            }
            (None, _, _) => None,
        };
        Ok(Run {
            config,
            dataset,
            union,
            structure: structure.model,
            visual,
        })
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Ok(Curvature::new(self.config.model.output_curvature())?)
    }

    pub fn embeddings(&self, exec: Exec) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let s = forward_channel(&self.structure, &self.union.graph, exec)?;
        let v = match &self.visual {
            Some(m) => Some(forward_channel(m, &self.union.graph, exec)?),
            None => None,
        };
        Ok((s, v))
    }

    /// Embedding matrix for structure weight `beta`.
    pub fn fused(&self, beta: f64, exec: Exec) -> Result<Array2<f64>> {
        let (s, v) = self.embeddings(exec)?;
        if beta == 1.0 {
            return Ok(s);
        }
        let v = v.ok_or(Error::MissingChannel("visual"))?;
        if beta == 0.0 {
            return Ok(v);
        }
        Ok(fuse_rows(s.view(), v.view(), &FusionConfig::new(beta, self.curvature()?)?, exec)?)
    }
}

fn check_checkpoint(ckpt: &Checkpoint, cfg: &RunConfig, nodes: usize, input_dim: usize, which: &str) -> Result<()> {
    let m = &cfg.model;
    ensure!(
        ckpt.num_nodes == nodes,
        "{which} checkpoint has {} nodes but the dataset has {nodes}",
        ckpt.num_nodes
    );
    ensure!(
        ckpt.input_dim == input_dim,
        "{which} checkpoint input dim {} does not match {input_dim}",
        ckpt.input_dim
    );
    ensure!(
        ckpt.layer_dims == m.layer_dims,
        "{which} checkpoint layer dims {:?} do not match model.layer_dims {:?}",
        ckpt.layer_dims,
        m.layer_dims
    );
    ensure!(
        ckpt.curvatures == m.curvatures(),
        "{which} checkpoint curvatures {:?} do not match model.curvatures {:?}",
        ckpt.curvatures,
        m.curvatures()
    );
    Ok(())
}

/// Ablation table for a trained run. Writes `metrics.txt` and `metrics.kv`
/// into the run directory.
///
/// Without a visual channel the structure row is still written and printed,
/// then fused rows fail with a missing-channel error.
pub fn evaluate(dir: &Path, betas: Option<Vec<f64>>, k_list: Option<Vec<usize>>, out: &mut dyn Write) -> Result<VariantTable> {
    let run = Run::load(dir)?;
    let exec = run.config.exec();
    let betas = betas.unwrap_or_else(|| run.config.eval.betas.clone());
    ensure!(betas.iter().all(|b| (0.0..=1.0).contains(b)), "betas must be in [0, 1]");
    let fused: Vec<f64> = betas.iter().copied().filter(|b| *b > 0.0 && *b < 1.0).collect();
    let k_list = k_list.unwrap_or_else(|| run.config.eval.k_list.clone());
    let (s, v) = run.embeddings(exec)?;
    let c = run.curvature()?;
    let test = run.dataset.seeds.test();
    let kg2 = run.union.range(Side::Kg2);

    let fused_rows = if v.is_some() { fused.as_slice() } else { &[] };
    let table = evaluate_variants(Some(s.view()), v.as_ref().map(|v| v.view()), c, test, kg2, fused_rows, &k_list, exec)?;
    write!(out, "{table}")?;
    write_metrics(dir, &table)?;
    if v.is_none() && !fused.is_empty() {
        return Err(Error::MissingChannel("visual")).context("fused rows need a visual channel");
    }
    Ok(table)
}

fn row_key(label: &str) -> String {
    label.strip_prefix("fused β=").map_or_else(|| label.to_string(), |b| format!("fused@{b}"))
}

fn write_metrics(dir: &Path, table: &VariantTable) -> Result<()> {
    let mut text = String::new();
    let mut kv = String::new();
    for row in &table.rows {
        let key = row_key(&row.label);
        for (name, value) in row.report.metrics() {
            writeln!(text, "{:<24} {value:.6}", format!("{key}/{name}"))?;
            writeln!(kv, "{key}/{name}={value}")?;
        }
    }
    std::fs::write(dir.join("metrics.txt"), text)?;
    std::fs::write(dir.join("metrics.kv"), kv)?;
    Ok(())
}

/// Top-`top` KG2 candidates for every test query, as TSV:
/// `query  truth  rank  candidate,candidate,...`.
pub fn predict_top(dir: &Path, beta: Option<f64>, top: usize, out: &mut dyn Write) -> Result<()> {
    ensure!(top >= 1, "--top must be >= 1");
    let run = Run::load(dir)?;
    let exec = run.config.exec();
    let beta = beta.unwrap_or(if run.visual.is_some() { 0.5 } else { 1.0 });
    let emb = run.fused(beta, exec)?;
    let report = predict(emb.view(), run.curvature()?, run.dataset.seeds.test(), run.union.range(Side::Kg2), &[top], exec)?;
    let names = run.dataset.entity_names();
    writeln!(out, "query\ttruth\trank\ttop{top}")?;
    for q in &report.queries {
        let cands: Vec<&str> = q.top.iter().map(|&j| names[j].as_str()).collect();
        writeln!(out, "{}\t{}\t{}\t{}", names[q.query], names[q.truth], q.rank, cands.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportChannel {
    Structure,
    Visual,
    Fused,
}

pub fn export(dir: &Path, channel: ExportChannel, beta: f64, path: &Path) -> Result<usize> {
    let run = Run::load(dir)?;
    let exec = run.config.exec();
    let emb = match channel {
        ExportChannel::Structure => run.fused(1.0, exec)?,
        ExportChannel::Visual => run.fused(0.0, exec)?,
        ExportChannel::Fused => run.fused(beta, exec)?,
    };
    export_embeddings(emb.view(), &run.dataset.entity_names(), path)?;
    Ok(emb.nrows())
}

#[derive(Debug, Clone)]
pub struct GradcheckArgs {
    pub seed: u64,
    pub entities: usize,
    pub dim: usize,
    pub layers: usize,
    pub coordinates: usize,
    pub feature_l2: f64,
    /// Scales the first layer's weight gradient; 1 leaves it untouched.
    pub fault_scale: f64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            seed: 0,
            entities: 12,
            dim: 8,
            layers: 2,
            coordinates: 200,
            feature_l2: 0.0,
            fault_scale: 1.0,
        }
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Finite-difference check of the full structure-channel gradient on a
/// small synthetic pair of KGs.
pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<GradCheckReport> {
    ensure!(2 * args.entities <= 30, "gradcheck instances are limited to 30 nodes (entities <= 15)");
    ensure!(args.dim >= 1 && args.dim <= 8, "gradcheck dim must be in 1..=8");
    let ds = generate_synthetic(&SyntheticSpec {
        n_entities: args.entities,
        avg_degree: 3.0_f64.min(args.entities as f64 - 1.0),
        rng_seed: args.seed,
        visual_dim: 2,
        ..Default::default()
    })?;
    let union = ds.union()?;
    let ccfg = ChannelConfig::uniform(args.dim, args.layers);
    let mut rng = init_rng(args.seed);
    let model = init_structure_channel(union.num_nodes(), args.dim, &ccfg, &mut rng)?;
    let sampler = NegativeSampler::full(union.range(Side::Kg1), union.range(Side::Kg2))?;
    let terms = LossTerms::sample(ds.seeds.train(), &sampler, 6, &mut rng);
    let objective = Objective {
        margin: 0.5,
        feature_l2: args.feature_l2,
    };
    let opts = GradCheckOptions {
        coordinates: args.coordinates,
        seed: args.seed,
        ..Default::default()
    };
    let scale = args.fault_scale;
    let report = gradient_check_with(&model, &union.graph, &terms, objective, &opts, Exec::Serial, |m| {
        let mut tape = evaluate_loss(m, &union.graph, &terms, objective, Exec::Serial)?.tape;
        if scale != 1.0 {
            tape.tensors_mut()[1].mapv_inplace(|g| g * scale);
        }
        Ok(tape)
    })?;
    writeln!(out, "{report}")?;
    let verdict = if report.passes(GRADCHECK_TOLERANCE) { "PASS" } else { "FAIL" };
    writeln!(out, "{verdict} (tolerance {GRADCHECK_TOLERANCE:e})")?;
    Ok(report)
}

/// Writes a synthetic dataset into `dir` and prints its statistics.
pub fn generate(spec: &SyntheticSpec, dir: &Path, out: &mut dyn Write) -> Result<AlignmentDataset> {
    let ds = generate_synthetic(spec)?;
    let paths = ds.save(dir)?;
    writeln!(out, "{}", ds.stats())?;
    for p in paths.all() {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(ds)
}
