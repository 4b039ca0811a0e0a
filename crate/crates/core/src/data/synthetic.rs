//! Random graph pairs with a known isomorphism as ground truth.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AlignmentDataset, VisualFeatures};
use crate::error::{Error, Result};
use crate::graph::TripleStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    /// Expected degree of the Erdős–Rényi graph.
    pub avg_degree: f64,
    /// Fraction of KG2 edges rewired to random non-edges.
    pub edge_noise: f64,
    /// Correlation of aligned visual vectors: 1 = identical, 0 = independent.
    pub visual_signal: f64,
    pub rng_seed: u64,
    pub visual_dim: usize,
    pub num_relations: usize,
    pub split_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_entities: 100,
            avg_degree: 4.0,
            edge_noise: 0.0,
            visual_signal: 0.9,
            rng_seed: 0,
            visual_dim: 32,
            num_relations: 5,
            split_fraction: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.n_entities < 2 {
            return Err(("n_entities", "must be >= 2".into()));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree < self.n_entities as f64) {
            return Err(("avg_degree", "must be in (0, n_entities)".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_noise) {
            return Err(("edge_noise", "must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.visual_signal) {
            return Err(("visual_signal", "must be in [0, 1]".into()));
        }
        if self.visual_dim == 0 {
            return Err(("visual_dim", "must be >= 1".into()));
        }
        if self.num_relations == 0 {
            return Err(("num_relations", "must be >= 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(("split_fraction", "must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Oriented, typed edge `(head, relation, tail)`.
type Edge = (usize, usize, usize);

fn key(h: usize, t: usize) -> (usize, usize) {
    (h.min(t), h.max(t))
}

/// Connects every isolated node to a uniformly chosen other node, so each
/// entity appears in at least one triple.
fn attach_isolated<R: Rng>(n: usize, edges: &mut Vec<Edge>, present: &mut BTreeSet<(usize, usize)>, rels: usize, rng: &mut R) {
    let mut degree = vec![0usize; n];
    for &(h, _, t) in edges.iter() {
        degree[h] += 1;
        degree[t] += 1;
    }
    for i in 0..n {
        if degree[i] == 0 {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            edges.push((i, rng.gen_range(0..rels), j));
            present.insert(key(i, j));
            degree[i] += 1;
            degree[j] += 1;
        }
    }
}

/// Builds the KG pair, visual vectors and alignment for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<AlignmentDataset> {
    if let Err((field, msg)) = spec.validate() {
        return Err(Error::InvalidInput(format!("synthetic.{field}: {msg}")));
    }
    let n = spec.n_entities;
    let rels = spec.num_relations;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let p = spec.avg_degree / (n - 1) as f64;
    let mut edges: Vec<Edge> = Vec::new();
    let mut present = BTreeSet::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                let r = rng.gen_range(0..rels);
                let (h, t) = if rng.gen::<bool>() { (u, v) } else { (v, u) };
                edges.push((h, r, t));
                present.insert(key(u, v));
            }
        }
    }
    attach_isolated(n, &mut edges, &mut present, rels, &mut rng);

    // KG2 node π[i] is the counterpart of KG1 node i.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut edges2: Vec<Edge> = edges.iter().map(|&(h, r, t)| (perm[h], r, perm[t])).collect();
    let mut present2: BTreeSet<(usize, usize)> = edges2.iter().map(|&(h, _, t)| key(h, t)).collect();

    let rewire = (spec.edge_noise * edges2.len() as f64).round() as usize;
    let max_edges = n * (n - 1) / 2;
    if rewire > 0 && edges2.len() < max_edges {
        let mut picks = index::sample(&mut rng, edges2.len(), rewire).into_vec();
        picks.sort_unstable();
        for i in picks {
            let (h, _, t) = edges2[i];
            present2.remove(&key(h, t));
            let (a, b) = loop {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b && !present2.contains(&key(a, b)) && key(a, b) != key(h, t) {
                    break (a, b);
                }
            };
            present2.insert(key(a, b));
            edges2[i] = (a, rng.gen_range(0..rels), b);
        }
        attach_isolated(n, &mut edges2, &mut present2, rels, &mut rng);
    }
    // KG2 indices follow first appearance; shuffle so they do not mirror KG1.
    edges2.shuffle(&mut rng);

    let name1 = |i: usize| format!("kg1:e{i}");
    let name2 = |i: usize| format!("kg2:e{i}");
    let rel1 = |r: usize| format!("kg1:r{r}");
    let rel2 = |r: usize| format!("kg2:r{r}");
    let mut kg1 = TripleStore::new();
    for &(h, r, t) in &edges {
        kg1.insert(&name1(h), &rel1(r), &name1(t));
    }
    let mut kg2 = TripleStore::new();
    for &(h, r, t) in &edges2 {
        kg2.insert(&name2(h), &rel2(r), &name2(t));
    }

    let id1 = |i: usize| kg1.entity_id(&name1(i)).expect("every node has an edge");
    let id2 = |i: usize| kg2.entity_id(&name2(i)).expect("every node has an edge");
    let alignments: Vec<(usize, usize)> = (0..n).map(|i| (id1(i), id2(perm[i]))).collect();

    let dv = spec.visual_dim;
    let s = spec.visual_signal;
    let noise_w = (1.0 - s * s).max(0.0).sqrt();
    let mut v1 = vec![None; n];
    let mut v2 = vec![None; n];
    for i in 0..n {
        let base: Vec<f64> = (0..dv).map(|_| rng.sample(StandardNormal)).collect();
        let other: Vec<f64> = base
            .iter()
            .map(|&b| {
                let z: f64 = rng.sample(StandardNormal);
                s * b + noise_w * z
            })
            .collect();
        v1[id1(i)] = Some(base);
        v2[id2(perm[i])] = Some(other);
    }

    AlignmentDataset::new(
        kg1,
        kg2,
        Some(VisualFeatures::new(dv, v1)?),
        Some(VisualFeatures::new(dv, v2)?),
        alignments,
        spec.split_fraction,
        spec.rng_seed,
    )
}
