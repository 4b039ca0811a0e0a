//! Ranking by hyperbolic distance, Hits@k, and embedding export.
//!
//! Queries always go from KG1 to KG2: the L1-Möbius distance is not symmetric
//! in general, so the direction is fixed rather than averaged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{kernels, Curvature};
use crate::model::{fuse_rows, FusionConfig};
use crate::train::Pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Kg1ToKg2,
}

/// Outcome for one test query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRanking {
    pub query: usize,
    pub truth: usize,
    /// Best candidates (global indices), nearest first, truncated to the
    /// largest requested k.
    pub top: Vec<usize>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub direction: Direction,
    pub queries: Vec<QueryRanking>,
    pub hits_at: BTreeMap<usize, f64>,
    pub mean_rank: f64,
    pub mrr: f64,
}

impl RankingReport {
    pub fn hits(&self, k: usize) -> Option<f64> {
        self.hits_at.get(&k).copied()
    }

    /// `(name, value)` pairs in report order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.hits_at.iter().map(|(k, v)| (format!("hits@{k}"), *v)).collect();
        out.push(("mean_rank".into(), self.mean_rank));
        out.push(("mrr".into(), self.mrr));
        out.push(("queries".into(), self.queries.len() as f64));
        out
    }

    /// One `name value` line per metric.
    pub fn metrics_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.metrics() {
            let _ = writeln!(s, "{name:<10} {v:.6}");
        }
        s
    }

    /// One `name=value` line per metric, values in round-trip precision.
    pub fn metrics_kv(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.metrics() {
            let _ = writeln!(s, "{name}={v}");
        }
        s
    }
}

/// 1-based rank of `truth` under ascending distance, ties broken towards the
/// smaller index (the truth loses every tie it can lose).
fn rank_of(dists: &[f64], truth: usize) -> usize {
    let dt = dists[truth];
    1 + dists
        .iter()
        .enumerate()
        .filter(|&(j, &d)| d < dt || (d == dt && j < truth))
        .count()
}

fn top_k(dists: &[f64], k: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| dists[*a].total_cmp(&dists[*b]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..dists.len()).collect();
    let k = k.min(idx.len());
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Ranks every KG2 entity (`candidates`, global rows of `emb`) for each test
/// query and aggregates Hits@k, mean rank and MRR.
pub fn predict(
    emb: ArrayView2<'_, f64>,
    curvature: Curvature,
    test_pairs: &[Pair],
    candidates: Range<usize>,
    k_list: &[usize],
    exec: Exec,
) -> Result<RankingReport> {
    if test_pairs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::InvalidInput("k values must be >= 1 and non-empty".into()));
    }
    if candidates.is_empty() || candidates.end > emb.nrows() {
        return Err(Error::InvalidInput(format!(
            "candidate range {candidates:?} invalid for {} rows",
            emb.nrows()
        )));
    }
    for &(q, t) in test_pairs {
        if q >= emb.nrows() || !candidates.contains(&t) {
            return Err(Error::InvalidInput(format!("test pair ({q}, {t}) out of range")));
        }
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("embeddings contain non-finite values".into()));
    }
    let emb = emb.as_standard_layout();
    let c = curvature.value();
    let keep = *k_list.iter().max().expect("non-empty");
    let base = candidates.start;
    let row = |i: usize| emb.row(i).to_slice().expect("standard layout");

    let queries = exec.map_range(test_pairs.len(), |qi| {
        let (q, t) = test_pairs[qi];
        let a = row(q);
        let dists: Vec<f64> = candidates.clone().map(|j| kernels::distance(a, row(j), c)).collect();
        QueryRanking {
            query: q,
            truth: t,
            top: top_k(&dists, keep).into_iter().map(|j| j + base).collect(),
            rank: rank_of(&dists, t - base),
        }
    });

    let n = queries.len() as f64;
    let hits_at = k_list
        .iter()
        .map(|&k| (k, queries.iter().filter(|r| r.rank <= k).count() as f64 / n))
        .collect();
    let mean_rank = queries.iter().map(|r| r.rank as f64).sum::<f64>() / n;
    let mrr = queries.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n;
    Ok(RankingReport {
        direction: Direction::Kg1ToKg2,
        queries,
        hits_at,
        mean_rank,
        mrr,
    })
}

/// Writes `name<TAB>x1<TAB>...` per row with 17 significant digits.
pub fn export_embeddings(emb: ArrayView2<'_, f64>, names: &[String], path: &Path) -> Result<()> {
    if names.len() != emb.nrows() {
        return Err(Error::DimensionMismatch {
            expected: emb.nrows(),
            actual: names.len(),
            context: "entity names vs embedding rows",
        });
    }
    let mut s = String::new();
    for (name, row) in names.iter().zip(emb.rows()) {
        s.push_str(name);
        for v in row {
            let _ = write!(s, "\t{v:.16e}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Inverse of [`export_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        names.push(fields.next().unwrap_or_default().to_string());
        let before = data.len();
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad number `{f}`")))?;
            data.push(v);
        }
        let w = data.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(parse_err(i + 1, format!("expected {} values, got {w}", width.unwrap())));
        }
    }
    let rows = names.len();
    let arr = Array2::from_shape_vec((rows, width.unwrap_or(0)), data)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((names, arr))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub label: String,
    /// Structure weight; 1 for structure-only, 0 for visual-only.
    pub beta: f64,
    pub report: RankingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantTable {
    pub k_list: Vec<usize>,
    pub rows: Vec<VariantRow>,
}

impl VariantTable {
    pub fn row(&self, label: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// The fused row (β strictly inside (0, 1)) with the highest Hits@k;
    /// the first one wins ties.
    pub fn best_fused(&self, k: usize) -> Option<&VariantRow> {
        let mut best: Option<&VariantRow> = None;
        for r in self.rows.iter().filter(|r| r.beta > 0.0 && r.beta < 1.0) {
            let h = r.report.hits(k)?;
            if best.is_none_or(|b| h > b.report.hits(k).unwrap_or(f64::NEG_INFINITY)) {
                best = Some(r);
            }
        }
        best
    }
}

impl std::fmt::Display for VariantTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<16}", "variant")?;
        for k in &self.k_list {
            write!(f, " {:>9}", format!("Hits@{k}"))?;
        }
        writeln!(f, " {:>9} {:>9}", "MR", "MRR")?;
        for r in &self.rows {
            write!(f, "{:<16}", r.label)?;
            for k in &self.k_list {
                write!(f, " {:>9.4}", r.report.hits(*k).unwrap_or(f64::NAN))?;
            }
            writeln!(f, " {:>9.2} {:>9.4}", r.report.mean_rank, r.report.mrr)?;
        }
        Ok(())
    }
}

/// Structure-only, visual-only and one fused row per β.
///
/// A missing channel drops its single-channel row; any β at all then fails
/// with [`Error::MissingChannel`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_variants(
    structure: Option<ArrayView2<'_, f64>>,
    visual: Option<ArrayView2<'_, f64>>,
    curvature: Curvature,
    test_pairs: &[Pair],
    candidates: Range<usize>,
    betas: &[f64],
    k_list: &[usize],
    exec: Exec,
) -> Result<VariantTable> {
    let run = |emb: ArrayView2<'_, f64>| predict(emb, curvature, test_pairs, candidates.clone(), k_list, exec);
    let mut rows = Vec::new();
    if let Some(s) = structure {
        rows.push(VariantRow { label: "structure".into(), beta: 1.0, report: run(s)? });
    }
    if let Some(v) = visual {
        rows.push(VariantRow { label: "visual".into(), beta: 0.0, report: run(v)? });
    }
    if !betas.is_empty() {
        let s = structure.ok_or(Error::MissingChannel("structure"))?;
        let v = visual.ok_or(Error::MissingChannel("visual"))?;
        for &beta in betas {
            let cfg = FusionConfig::new(beta, curvature)?;
            let fused = fuse_rows(s, v, &cfg, exec)?;
            rows.push(VariantRow {
                label: format!("fused β={beta}"),
                beta,
                report: run(fused.view())?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::MissingChannel("structure"));
    }
    Ok(VariantTable { k_list: k_list.to_vec(), rows })
}
