//! Dataset files, seed splitting and the synthetic benchmark generator.
//!
//! File formats (UTF-8, tab-separated, one record per line; blank lines are
//! ignored):
//!
//! - triples: `head<TAB>relation<TAB>tail`
//! - alignments: `kg1_entity<TAB>kg2_entity`
//! - visual features: `entity<TAB>f1<TAB>...<TAB>f_dv`; an entity without a
//!   line has no image.

mod formats;
mod synthetic;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use formats::{read_alignments, read_triples, read_visual, write_alignments, write_triples, write_visual};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::graph::{disjoint_union, GraphUnion, TripleStore};
use crate::train::{Pair, SeedAlignments};

/// Per-entity visual feature vectors for one KG, indexed by local entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

impl VisualFeatures {
    pub fn new(dim: usize, vectors: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if let Some(v) = vectors.iter().flatten().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
                context: "visual feature vector",
            });
        }
        Ok(VisualFeatures { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Option<Vec<f64>>] {
        &self.vectors
    }

    pub fn num_images(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }
}

/// Locations of the dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub kg1_triples: PathBuf,
    pub kg2_triples: PathBuf,
    pub alignments: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg1_visual: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg2_visual: Option<PathBuf>,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path, with_visual: bool) -> Self {
        DatasetPaths {
            kg1_triples: dir.join("kg1_triples.tsv"),
            kg2_triples: dir.join("kg2_triples.tsv"),
            alignments: dir.join("alignments.tsv"),
            kg1_visual: with_visual.then(|| dir.join("kg1_visual.tsv")),
            kg2_visual: with_visual.then(|| dir.join("kg2_visual.tsv")),
        }
    }

    /// Every path that must exist.
    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![
            self.kg1_triples.as_path(),
            self.kg2_triples.as_path(),
            self.alignments.as_path(),
        ];
        v.extend(self.kg1_visual.as_deref());
        v.extend(self.kg2_visual.as_deref());
        v
    }
}

/// Two knowledge graphs, optional visual features and the known alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDataset {
    pub kg1: TripleStore,
    pub kg2: TripleStore,
    pub visual1: Option<VisualFeatures>,
    pub visual2: Option<VisualFeatures>,
    /// All known pairs in local indices, in file order.
    pub alignments: Vec<Pair>,
    /// Train/test split in global indices (KG2 offset by `kg1.num_entities()`).
    pub seeds: SeedAlignments,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl AlignmentDataset {
    pub fn new(
        kg1: TripleStore,
        kg2: TripleStore,
        visual1: Option<VisualFeatures>,
        visual2: Option<VisualFeatures>,
        alignments: Vec<Pair>,
        split_fraction: f64,
        split_seed: u64,
    ) -> Result<Self> {
        let (n1, n2) = (kg1.num_entities(), kg2.num_entities());
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidInput("both KGs need at least one triple".into()));
        }
        for (v, n) in [(&visual1, n1), (&visual2, n2)] {
            if let Some(v) = v {
                if v.vectors.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: v.vectors.len(),
                        context: "visual rows vs entities",
                    });
                }
            }
        }
        if let (Some(a), Some(b)) = (&visual1, &visual2) {
            if a.dim != b.dim {
                return Err(Error::DimensionMismatch {
                    expected: a.dim,
                    actual: b.dim,
                    context: "visual dimension of KG2 vs KG1",
                });
            }
        }
        let seeds = split_alignments(&alignments, n1, n2, split_fraction, split_seed)?;
        Ok(AlignmentDataset {
            kg1,
            kg2,
            visual1,
            visual2,
            alignments,
            seeds,
            split_fraction,
            split_seed,
        })
    }

    pub fn union(&self) -> Result<GraphUnion> {
        disjoint_union(&self.kg1, &self.kg2)
    }

    pub fn num_entities(&self) -> usize {
        self.kg1.num_entities() + self.kg2.num_entities()
    }

    pub fn has_visual(&self) -> bool {
        self.visual1.is_some() || self.visual2.is_some()
    }

    /// Visual vectors in global order; `None` if neither KG has any.
    pub fn visual_vectors(&self) -> Option<Vec<Option<Vec<f64>>>> {
        if !self.has_visual() {
            return None;
        }
        let side = |v: &Option<VisualFeatures>, n: usize| match v {
            Some(v) => v.vectors.clone(),
            None => vec![None; n],
        };
        let mut out = side(&self.visual1, self.kg1.num_entities());
        out.extend(side(&self.visual2, self.kg2.num_entities()));
        Some(out)
    }

    /// Entity names in global order.
    pub fn entity_names(&self) -> Vec<String> {
        self.kg1
            .entities()
            .iter()
            .chain(self.kg2.entities())
            .cloned()
            .collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let kg = |s: &TripleStore, v: &Option<VisualFeatures>| KgStats {
            entities: s.num_entities(),
            relations: s.relations().len(),
            triples: s.triples().len(),
            images: v.as_ref().map_or(0, VisualFeatures::num_images),
        };
        DatasetStats {
            kg1: kg(&self.kg1, &self.visual1),
            kg2: kg(&self.kg2, &self.visual2),
            alignments: self.alignments.len(),
            train_pairs: self.seeds.train().len(),
            test_pairs: self.seeds.test().len(),
        }
    }

    /// Writes all files into `dir` under the names of [`DatasetPaths::in_dir`].
    pub fn save(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DatasetPaths::in_dir(dir, false);
        write_triples(&paths.kg1_triples, &self.kg1)?;
        write_triples(&paths.kg2_triples, &self.kg2)?;
        write_alignments(&paths.alignments, &self.alignments, &self.kg1, &self.kg2)?;
        let mut paths = paths;
        if let Some(v) = &self.visual1 {
            let p = dir.join("kg1_visual.tsv");
            write_visual(&p, v, &self.kg1)?;
            paths.kg1_visual = Some(p);
        }
        if let Some(v) = &self.visual2 {
            let p = dir.join("kg2_visual.tsv");
            write_visual(&p, v, &self.kg2)?;
            paths.kg2_visual = Some(p);
        }
        Ok(paths)
    }
}

/// Loads all files, validates them and splits the alignments.
pub fn load_dataset(paths: &DatasetPaths, split_fraction: f64, rng_seed: u64) -> Result<AlignmentDataset> {
    let kg1 = read_triples(&paths.kg1_triples)?;
    let kg2 = read_triples(&paths.kg2_triples)?;
    let alignments = read_alignments(&paths.alignments, &kg1, &kg2)?;
    let visual1 = paths
        .kg1_visual
        .as_deref()
        .map(|p| read_visual(p, &kg1))
        .transpose()?;
    let visual2 = paths
        .kg2_visual
        .as_deref()
        .map(|p| read_visual(p, &kg2))
        .transpose()?;
    AlignmentDataset::new(kg1, kg2, visual1, visual2, alignments, split_fraction, rng_seed)
}

/// Shuffles the alignments with `rng_seed` and takes the first
/// `round(fraction · N)` as training pairs.
pub fn split_alignments(
    alignments: &[Pair],
    n1: usize,
    n2: usize,
    fraction: f64,
    rng_seed: u64,
) -> Result<SeedAlignments> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut seen = HashSet::new();
    for &p in alignments {
        if p.0 >= n1 || p.1 >= n2 {
            return Err(Error::InvalidInput(format!("alignment {p:?} out of range")));
        }
        if !seen.insert(p) {
            return Err(Error::InvalidInput(format!("duplicate alignment {p:?}")));
        }
    }
    let mut shuffled: Vec<Pair> = alignments.iter().map(|&(a, b)| (a, n1 + b)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    shuffled.shuffle(&mut rng);
    let n_train = (fraction * shuffled.len() as f64).round() as usize;
    let test = shuffled.split_off(n_train);
    SeedAlignments::new(shuffled, test, 0..n1, n1..n1 + n2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub images: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub kg1: KgStats,
    pub kg2: KgStats,
    pub alignments: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "KG", "#Ent", "#Rel", "#Triples", "#Images", "#SameAs"
        )?;
        for (name, k) in [("KG1", self.kg1), ("KG2", self.kg2)] {
            writeln!(
                f,
                "{:<6} {:>10} {:>10} {:>10} {:>10} {:>10}",
                name, k.entities, k.relations, k.triples, k.images, self.alignments
            )?;
        }
        write!(f, "train pairs: {}  test pairs: {}", self.train_pairs, self.test_pairs)
    }
}
