use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::VisualFeatures;
use crate::error::{Error, Result};
use crate::graph::TripleStore;
use crate::train::Pair;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with 1-based line numbers, split on tabs.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
}

fn check_ident(path: &Path, line: usize, s: &str) -> Result<()> {
    if s.is_empty() || s.trim() != s {
        return Err(parse_err(path, line, format!("invalid identifier `{s}`")));
    }
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<TripleStore> {
    let text = read(path)?;
    let mut store = TripleStore::new();
    for (line, fields) in records(&text) {
        let [h, r, t] = fields[..] else {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        for f in [h, r, t] {
            check_ident(path, line, f)?;
        }
        store.insert(h, r, t);
    }
    Ok(store)
}

pub fn write_triples(path: &Path, store: &TripleStore) -> Result<()> {
    let mut out = String::new();
    for (h, r, t) in store.named_triples() {
        writeln!(out, "{h}\t{r}\t{t}").expect("write to string");
    }
    write(path, &out)
}

/// Reads `kg1_id<TAB>kg2_id` lines into local index pairs. Identifiers that
/// appear in no triple are rejected.
pub fn read_alignments(path: &Path, kg1: &TripleStore, kg2: &TripleStore) -> Result<Vec<Pair>> {
    let text = read(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, fields) in records(&text) {
        let [a, b] = fields[..] else {
            return Err(parse_err(
                path,
                line,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        };
        let resolve = |store: &TripleStore, id: &str| {
            store.entity_id(id).ok_or_else(|| Error::UnknownEntity {
                file: path.to_path_buf(),
                id: id.to_string(),
            })
        };
        let pair = (resolve(kg1, a)?, resolve(kg2, b)?);
        if !seen.insert(pair) {
            return Err(parse_err(path, line, format!("duplicate alignment {a} / {b}")));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_alignments(path: &Path, pairs: &[Pair], kg1: &TripleStore, kg2: &TripleStore) -> Result<()> {
    let mut out = String::new();
    for &(a, b) in pairs {
        writeln!(out, "{}\t{}", kg1.entities()[a], kg2.entities()[b]).expect("write to string");
    }
    write(path, &out)
}

pub fn read_visual(path: &Path, store: &TripleStore) -> Result<VisualFeatures> {
    let text = read(path)?;
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; store.num_entities()];
    let mut dim = None;
    for (line, fields) in records(&text) {
        if fields.len() < 2 {
            return Err(parse_err(path, line, "expected an identifier and at least one value"));
        }
        let id = fields[0];
        let idx = store.entity_id(id).ok_or_else(|| Error::UnknownEntity {
            file: path.to_path_buf(),
            id: id.to_string(),
        })?;
        let values = fields[1..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(path, line, format!("invalid number `{f}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if vectors[idx].is_some() {
            return Err(parse_err(path, line, format!("duplicate entity `{id}`")));
        }
        vectors[idx] = Some(values);
    }
    let dim = dim.ok_or_else(|| parse_err(path, 0, "no feature vectors"))?;
    VisualFeatures::new(dim, vectors)
}

/// Shortest round-trip decimal form, so reading back is exact.
pub fn write_visual(path: &Path, features: &VisualFeatures, store: &TripleStore) -> Result<()> {
    let mut out = String::new();
    for (name, v) in store.entities().iter().zip(features.vectors()) {
        if let Some(v) = v {
            out.push_str(name);
            for x in v {
                write!(out, "\t{x}").expect("write to string");
            }
            out.push('\n');
        }
    }
    write(path, &out)
}
