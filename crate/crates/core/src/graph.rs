//! Triple stores and the symmetric normalized adjacency `D^-1/2 (A + I) D^-1/2`.
//!
//! Relations are kept for statistics but ignored when building `A`: every
//! triple `(h, r, t)` contributes an undirected, unweighted edge `h - t`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Entities, relations and deduplicated `(head, relation, tail)` index triples.
///
/// Entities and relations are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripleStore {
    entities: Vec<String>,
    relations: Vec<String>,
    triples: Vec<(usize, usize, usize)>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    seen: HashSet<(usize, usize, usize)>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns the identifiers and records the triple. Returns `false` if the
    /// triple was already present.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = intern(&mut self.entities, &mut self.entity_index, head);
        let r = intern(&mut self.relations, &mut self.relation_index, relation);
        let t = intern(&mut self.entities, &mut self.entity_index, tail);
        if !self.seen.insert((h, r, t)) {
            return false;
        }
        self.triples.push((h, r, t));
        true
    }

    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut store = TripleStore::new();
        for (h, r, t) in triples {
            store.insert(h, r, t);
        }
        store
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    /// Iterates triples as identifier strings.
    pub fn named_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.triples.iter().map(|&(h, r, t)| {
            (
                self.entities[h].as_str(),
                self.relations[r].as_str(),
                self.entities[t].as_str(),
            )
        })
    }

    /// Sorted, deduplicated undirected neighbor sets (self excluded).
    fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.entities.len()];
        for &(h, _, t) in &self.triples {
            if h != t {
                adj[h].insert(t);
                adj[t].insert(h);
            }
        }
        adj
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&i) = index.get(name) {
        return i;
    }
    let i = names.len();
    names.push(name.to_string());
    index.insert(name.to_string(), i);
    i
}

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i` in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// `self · x`. Each output row is accumulated in ascending column order,
    /// so the result does not depend on `exec`.
    pub fn matmul(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "sparse matmul row mismatch");
        let width = x.ncols();
        let mut out = Array2::<f64>::zeros((self.n, width));
        let slice = out.as_slice_mut().expect("fresh array is contiguous");
        exec.for_each_row(slice, width, |i, row| {
            for (j, a) in self.row(i) {
                for (o, v) in row.iter_mut().zip(x.row(j)) {
                    *o += a * v;
                }
            }
        });
        out
    }

    fn block_diagonal(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
        let n = a.n + b.n;
        let mut row_ptr = a.row_ptr.clone();
        let base = a.nnz();
        row_ptr.extend(b.row_ptr[1..].iter().map(|p| p + base));
        let mut cols = a.cols.clone();
        cols.extend(b.cols.iter().map(|j| j + a.n));
        let mut values = a.values.clone();
        values.extend_from_slice(&b.values);
        CsrMatrix {
            n,
            row_ptr,
            cols,
            values,
        }
    }
}

/// The normalized adjacency `Â` with self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    adjacency: CsrMatrix,
}

impl NormalizedGraph {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.n
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// `Â · x`.
    pub fn propagate(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Array2<f64> {
        self.adjacency.matmul(x, exec)
    }
}

/// Builds `Â = D^-1/2 (A + I) D^-1/2` from a triple store.
pub fn build_adjacency(store: &TripleStore) -> Result<NormalizedGraph> {
    let n = store.num_entities();
    if n == 0 {
        return Err(Error::InvalidInput("triple store has no entities".into()));
    }
    Ok(normalize(store.neighbor_sets()))
}

/// Like [`build_adjacency`] but for a bare node count and edge list.
pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<NormalizedGraph> {
    if n == 0 {
        return Err(Error::InvalidInput("graph has no nodes".into()));
    }
    let mut adj = vec![BTreeSet::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::InvalidInput(format!(
                "edge ({u}, {v}) out of range for {n} nodes"
            )));
        }
        if u != v {
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    Ok(normalize(adj))
}

fn normalize(mut adj: Vec<BTreeSet<usize>>) -> NormalizedGraph {
    let n = adj.len();
    for (i, set) in adj.iter_mut().enumerate() {
        set.insert(i);
    }
    let deg: Vec<f64> = adj.iter().map(|s| s.len() as f64).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (i, set) in adj.iter().enumerate() {
        for &j in set {
            cols.push(j);
            values.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
        row_ptr.push(cols.len());
    }
    NormalizedGraph {
        adjacency: CsrMatrix {
            n,
            row_ptr,
            cols,
            values,
        },
    }
}

/// Which of the two knowledge graphs an entity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Kg1,
    Kg2,
}

/// Block-diagonal union of two graphs with a global entity numbering:
/// KG1 entity `i` is global `i`, KG2 entity `j` is global `n1 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUnion {
    pub graph: NormalizedGraph,
    n1: usize,
    n2: usize,
}

impl GraphUnion {
    pub fn range(&self, side: Side) -> Range<usize> {
        match side {
            Side::Kg1 => 0..self.n1,
            Side::Kg2 => self.n1..self.n1 + self.n2,
        }
    }

    pub fn to_global(&self, side: Side, local: usize) -> usize {
        match side {
            Side::Kg1 => {
                assert!(local < self.n1);
                local
            }
            Side::Kg2 => {
                assert!(local < self.n2);
                self.n1 + local
            }
        }
    }

    pub fn to_local(&self, global: usize) -> (Side, usize) {
        if global < self.n1 {
            (Side::Kg1, global)
        } else {
            assert!(global < self.n1 + self.n2, "global index out of range");
            (Side::Kg2, global - self.n1)
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n1 + self.n2
    }
}

pub fn disjoint_union(kg1: &TripleStore, kg2: &TripleStore) -> Result<GraphUnion> {
    let g1 = build_adjacency(kg1)?;
    let g2 = build_adjacency(kg2)?;
    Ok(union_of(&g1, &g2))
}

/// Block-diagonal union of two already-normalized graphs.
pub fn union_of(g1: &NormalizedGraph, g2: &NormalizedGraph) -> GraphUnion {
    GraphUnion {
        graph: NormalizedGraph {
            adjacency: CsrMatrix::block_diagonal(&g1.adjacency, &g2.adjacency),
        },
        n1: g1.num_nodes(),
        n2: g2.num_nodes(),
    }
}
