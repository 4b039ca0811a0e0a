//! Margin ranking loss over seed alignments, negative sampling and Adam.
//!
//! Each channel is trained on its own with full-batch updates:
//! forward → loss over positives and freshly sampled negatives → backward
//! → Adam step on the Euclidean parameters (weights and, for the structure
//! channel, the input features).

mod adam;
pub mod checkpoint;
mod gradcheck;

use std::borrow::Cow;
use std::collections::HashSet;
use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport, WorstCoordinate};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{kernels, Curvature};
use crate::graph::NormalizedGraph;
use crate::model::{backward_channel, forward_traced, ChannelKind, ChannelModel};

/// A known equivalent pair `(kg1_global, kg2_global)`.
pub type Pair = (usize, usize);

/// Train/test split of the known alignments, in global indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedAlignments {
    train: Vec<Pair>,
    test: Vec<Pair>,
}

impl SeedAlignments {
    /// Validates that every pair lies in the right KG range and that train
    /// and test share no pair.
    pub fn new(
        train: Vec<Pair>,
        test: Vec<Pair>,
        kg1: Range<usize>,
        kg2: Range<usize>,
    ) -> Result<Self> {
        for &(e, v) in train.iter().chain(&test) {
            if !kg1.contains(&e) || !kg2.contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "seed pair ({e}, {v}) outside KG ranges {kg1:?} / {kg2:?}"
                )));
            }
        }
        let train_set: HashSet<_> = train.iter().collect();
        if let Some(p) = test.iter().find(|p| train_set.contains(p)) {
            return Err(Error::InvalidInput(format!(
                "pair {p:?} is in both train and test"
            )));
        }
        Ok(SeedAlignments { train, test })
    }

    pub fn train(&self) -> &[Pair] {
        &self.train
    }

    pub fn test(&self) -> &[Pair] {
        &self.test
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub margin_struct: f64,
    pub margin_visual: f64,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of an optional `λ/2 · ‖X‖²` penalty on trainable input
    /// features; 0 trains on the ranking loss alone.
    pub feature_l2: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            margin_struct: 0.5,
            margin_visual: 1.5,
            negatives_per_positive: 6,
            learning_rate: 0.01,
            epochs: 300,
            rng_seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            feature_l2: 0.0,
        }
    }
}

impl TrainingConfig {
    /// Returns the name of the first invalid field, if any.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.margin_struct) {
            return Err(("margin_struct", "must be > 0".into()));
        }
        if !positive(self.margin_visual) {
            return Err(("margin_visual", "must be > 0".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(("negatives_per_positive", "must be >= 1".into()));
        }
        if !positive(self.learning_rate) {
            return Err(("learning_rate", "must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(("adam_beta1", "must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(("adam_beta2", "must be in [0, 1)".into()));
        }
        if !positive(self.adam_eps) {
            return Err(("adam_eps", "must be > 0".into()));
        }
        if !(self.feature_l2.is_finite() && self.feature_l2 >= 0.0) {
            return Err(("feature_l2", "must be >= 0".into()));
        }
        Ok(())
    }

    pub fn margin_for(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::Structure => self.margin_struct,
            ChannelKind::Visual => self.margin_visual,
        }
    }

    pub fn objective(&self, kind: ChannelKind) -> Objective {
        Objective {
            margin: self.margin_for(kind),
            feature_l2: self.feature_l2,
        }
    }
}

/// What [`evaluate_loss`] minimizes: the ranking loss with `margin`, plus
/// `feature_l2 / 2 · ‖X‖²` when the channel's features are trainable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub margin: f64,
    pub feature_l2: f64,
}

impl Objective {
    /// Ranking loss only.
    pub fn ranking(margin: f64) -> Self {
        Objective { margin, feature_l2: 0.0 }
    }

    fn penalty(&self, model: &ChannelModel) -> f64 {
        if self.feature_l2 > 0.0 && model.features_trainable() {
            0.5 * self.feature_l2 * model.features.iter().map(|v| v * v).sum::<f64>()
        } else {
            0.0
        }
    }
}

/// Candidate pools used to corrupt seed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampler {
    kg1: Vec<usize>,
    kg2: Vec<usize>,
}

impl NegativeSampler {
    pub fn new(kg1: Vec<usize>, kg2: Vec<usize>) -> Result<Self> {
        if kg1.is_empty() || kg2.is_empty() {
            return Err(Error::InvalidInput("negative sampling pool is empty".into()));
        }
        if kg1.len() == 1 && kg2.len() == 1 {
            return Err(Error::InvalidInput(
                "both pools have a single entity: no pair can be corrupted".into(),
            ));
        }
        Ok(NegativeSampler { kg1, kg2 })
    }

    /// Pools covering both KG ranges in full.
    pub fn full(kg1: Range<usize>, kg2: Range<usize>) -> Result<Self> {
        Self::new(kg1.collect(), kg2.collect())
    }

    /// `k` corrupted copies of `pair`. Sample `j` replaces the KG1 side when
    /// `j` is even and the KG2 side when odd; a side whose pool cannot offer
    /// a different entity is never corrupted.
    pub fn sample<R: Rng>(&self, pair: Pair, k: usize, rng: &mut R) -> Vec<Pair> {
        (0..k)
            .map(|j| {
                let first = j % 2 == 0;
                let can1 = can_replace(&self.kg1, pair.0);
                let can2 = can_replace(&self.kg2, pair.1);
                let corrupt_first = (first && can1) || !can2;
                if corrupt_first {
                    (draw_other(&self.kg1, pair.0, rng), pair.1)
                } else {
                    (pair.0, draw_other(&self.kg2, pair.1, rng))
                }
            })
            .collect()
    }
}

fn can_replace(pool: &[usize], current: usize) -> bool {
    pool.iter().any(|&e| e != current)
}

/// Uniform draw from `pool \ {current}`.
fn draw_other<R: Rng>(pool: &[usize], current: usize, rng: &mut R) -> usize {
    match pool.iter().position(|&e| e == current) {
        Some(pos) => {
            let i = rng.gen_range(0..pool.len() - 1);
            pool[if i >= pos { i + 1 } else { i }]
        }
        None => pool[rng.gen_range(0..pool.len())],
    }
}

/// Positives with their negative sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTerms {
    pub positives: Vec<Pair>,
    pub negatives: Vec<Vec<Pair>>,
}

impl LossTerms {
    pub fn sample<R: Rng>(positives: &[Pair], sampler: &NegativeSampler, k: usize, rng: &mut R) -> Self {
        LossTerms {
            positives: positives.to_vec(),
            negatives: positives.iter().map(|&p| sampler.sample(p, k, rng)).collect(),
        }
    }
}

/// Loss value and its gradient with respect to the embedding matrix.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Number of hinge terms with a strictly positive argument.
    pub active_terms: usize,
    /// Active flags of every hinge term and the sign pattern of every
    /// Möbius difference, in term order. Marks the loss's kinks.
    pub kink_pattern: Vec<i8>,
}

/// Row-major view of an embedding matrix with slice access to rows.
struct Rows<'a> {
    data: Cow<'a, [f64]>,
    width: usize,
}

impl<'a> Rows<'a> {
    fn new(emb: ArrayView2<'a, f64>) -> Self {
        let data = match emb.to_slice() {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(emb.iter().copied().collect()),
        };
        Rows {
            data,
            width: emb.ncols(),
        }
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Per-positive distances: `(d(pos), [d(neg)...])`.
fn term_distances(rows: &Rows<'_>, c: f64, terms: &LossTerms, exec: Exec) -> Vec<(f64, Vec<f64>)> {
    exec.map_range(terms.positives.len(), |p| {
        let (e, v) = terms.positives[p];
        let dp = kernels::distance(rows.get(e), rows.get(v), c);
        let dn = terms.negatives[p]
            .iter()
            .map(|&(e2, v2)| kernels::distance(rows.get(e2), rows.get(v2), c))
            .collect();
        (dp, dn)
    })
}

/// Margin ranking loss
/// `Σ_pos Σ_neg max(0, d(pos) + margin − d(neg))` with
/// `d(a, b) = ‖(−a) ⊕_c b‖₁`, and its gradient.
///
/// A hinge term whose argument is exactly 0 contributes no gradient.
pub fn ranking_loss(
    emb: ArrayView2<'_, f64>,
    c: Curvature,
    terms: &LossTerms,
    margin: f64,
    exec: Exec,
) -> Result<LossOutput> {
    if terms.positives.len() != terms.negatives.len() {
        return Err(Error::InvalidInput("each positive needs a negative set".into()));
    }
    let n = emb.nrows();
    let all_pairs = || terms.positives.iter().chain(terms.negatives.iter().flatten());
    for &(a, b) in all_pairs() {
        if a >= n || b >= n {
            return Err(Error::InvalidInput(format!(
                "pair ({a}, {b}) references an entity outside {n} embeddings"
            )));
        }
    }
    let cv = c.value();
    let rows = Rows::new(emb);
    let dists = term_distances(&rows, cv, terms, exec);

    // Coefficient of every distance term in the (sub)gradient.
    let mut value = 0.0;
    let mut active_terms = 0;
    let mut coeffs: Vec<(Pair, f64)> = Vec::new();
    let mut kink_pattern = Vec::new();
    for (p, (dp, dns)) in dists.iter().enumerate() {
        let mut pos_coeff = 0.0;
        for (j, dn) in dns.iter().enumerate() {
            let arg = dp + margin - dn;
            let active = arg > 0.0;
            kink_pattern.push(active as i8);
            if active {
                value += arg;
                active_terms += 1;
                pos_coeff += 1.0;
                coeffs.push((terms.negatives[p][j], -1.0));
            }
        }
        if pos_coeff != 0.0 {
            coeffs.push((terms.positives[p], pos_coeff));
        }
    }

    let d = emb.ncols();
    let contributions = exec.map_range(coeffs.len(), |t| {
        let ((a, b), g) = coeffs[t];
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        kernels::distance_vjp(rows.get(a), rows.get(b), cv, g, &mut ga, &mut gb);
        (ga, gb)
    });
    let mut grad = Array2::zeros(emb.dim());
    for (((a, b), _), (ga, gb)) in coeffs.iter().zip(contributions) {
        for (o, v) in grad.row_mut(*a).iter_mut().zip(ga) {
            *o += v;
        }
        for (o, v) in grad.row_mut(*b).iter_mut().zip(gb) {
            *o += v;
        }
    }

    for &(e, v) in all_pairs() {
        kink_pattern.extend(mobius_difference_signs(rows.get(e), rows.get(v), cv));
    }

    Ok(LossOutput {
        value,
        grad,
        active_terms,
        kink_pattern,
    })
}

fn mobius_difference_signs(a: &[f64], b: &[f64], c: f64) -> impl Iterator<Item = i8> {
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut m = vec![0.0; a.len()];
    kernels::mobius_add(&neg, b, c, &mut m);
    m.into_iter().map(|v| v.partial_cmp(&0.0).map_or(0, |o| o as i8))
}

/// Named gradients for every trainable tensor of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    entries: Vec<(String, Array2<f64>)>,
}

impl GradientTape {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.entries.iter().map(|(_, g)| g).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.entries.iter_mut().map(|(_, g)| g).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loss evaluation plus gradients for all trainable tensors.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub tape: GradientTape,
    pub kink_pattern: Vec<i8>,
}

/// Forward, loss and backward for one channel.
pub fn evaluate_loss(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    terms: &LossTerms,
    objective: Objective,
    exec: Exec,
) -> Result<Evaluation> {
    let trace = forward_traced(model, graph, exec)?;
    let out = ranking_loss(
        trace.output.view(),
        model.output_curvature(),
        terms,
        objective.margin,
        exec,
    )?;
    let mut grads = backward_channel(model, graph, &trace, out.grad.view(), exec)?;
    let penalty = objective.penalty(model);
    if penalty > 0.0 {
        if let Some(g) = grads.features.as_mut() {
            g.scaled_add(objective.feature_l2, &model.features);
        }
    }
    let entries = model
        .params()
        .into_iter()
        .map(|(name, _)| name)
        .zip(grads.tensors().into_iter().cloned())
        .collect();
    let mut kink_pattern = out.kink_pattern;
    kink_pattern.extend(trace.activation_pattern().into_iter().map(i8::from));
    Ok(Evaluation {
        loss: out.value + penalty,
        tape: GradientTape { entries },
        kink_pattern,
    })
}

/// Loss value only.
pub fn loss_value(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    terms: &LossTerms,
    objective: Objective,
    exec: Exec,
) -> Result<(f64, Vec<i8>)> {
    let trace = forward_traced(model, graph, exec)?;
    let out = ranking_loss(
        trace.output.view(),
        model.output_curvature(),
        terms,
        objective.margin,
        exec,
    )?;
    let mut pattern = out.kink_pattern;
    pattern.extend(trace.activation_pattern().into_iter().map(i8::from));
    Ok((out.value + objective.penalty(model), pattern))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedChannel {
    pub model: ChannelModel,
    /// Loss at the start of each epoch (before that epoch's update).
    pub loss_history: Vec<f64>,
}

/// RNG for one channel: seeded from the config, one stream per channel.
pub fn channel_rng(seed: u64, kind: ChannelKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match kind {
        ChannelKind::Structure => 1,
        ChannelKind::Visual => 2,
    });
    rng
}

/// Trains one channel on the training seeds.
///
/// For the visual channel, seed pairs and negative candidates are restricted
/// to entities that have a visual input vector.
pub fn train_channel(
    mut model: ChannelModel,
    graph: &NormalizedGraph,
    seeds: &SeedAlignments,
    kg1: Range<usize>,
    kg2: Range<usize>,
    cfg: &TrainingConfig,
    exec: Exec,
) -> Result<TrainedChannel> {
    if let Err((field, msg)) = cfg.validate() {
        return Err(Error::InvalidInput(format!("training.{field}: {msg}")));
    }
    let kind = model.kind;
    let usable = |i: usize| kind == ChannelKind::Structure || model.has_input(i);
    let positives: Vec<Pair> = seeds
        .train()
        .iter()
        .copied()
        .filter(|&(e, v)| usable(e) && usable(v))
        .collect();
    if positives.is_empty() {
        return Err(Error::NoTrainingPairs);
    }
    let sampler = NegativeSampler::new(
        kg1.filter(|&i| usable(i)).collect(),
        kg2.filter(|&i| usable(i)).collect(),
    )?;
    let objective = cfg.objective(kind);
    let mut rng = channel_rng(cfg.rng_seed, kind);
    let mut adam = Adam::new(&model, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let terms = LossTerms::sample(&positives, &sampler, cfg.negatives_per_positive, &mut rng);
        let eval = evaluate_loss(&model, graph, &terms, objective, exec)?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged {
                channel: kind.to_string(),
                epoch,
                loss: eval.loss,
            });
        }
        history.push(eval.loss);
        adam.step(&mut model, &eval.tape);
        if model.params().iter().any(|(_, p)| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                channel: kind.to_string(),
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok(TrainedChannel {
        model,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests;
