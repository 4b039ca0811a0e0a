//! Run configuration: one TOML file plus `key=value` overrides.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//!
//! [synthetic]            # or [data] with file paths
//! n_entities = 100
//!
//! [model]
//! layer_dims = [32, 32]
//!
//! [training]
//! epochs = 300
//!
//! [eval]
//! betas = [0.0, 0.5, 0.9, 1.0]
//! k_list = [1, 10]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hypalign_core::data::{DatasetPaths, SyntheticSpec};
use hypalign_core::geometry::Curvature;
use hypalign_core::model::{Activation, ChannelConfig};
use hypalign_core::train::{TrainingConfig, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use hypalign_core::Exec;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the seed split, weight initialization and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub parallel: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalSection,
    /// Written by `train`; ignored on input apart from a version check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kg1_triples: PathBuf,
    pub kg2_triples: PathBuf,
    pub alignments: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg1_visual: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg2_visual: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
}

fn default_split() -> f64 {
    0.3
}

impl DataSection {
    pub fn paths(&self) -> DatasetPaths {
        DatasetPaths {
            kg1_triples: self.kg1_triples.clone(),
            kg2_triples: self.kg2_triples.clone(),
            alignments: self.alignments.clone(),
            kg1_visual: self.kg1_visual.clone(),
            kg2_visual: self.kg2_visual.clone(),
        }
    }

    /// Conventional file names in `dir`; visual files are used if present.
    pub fn in_dir(dir: &Path) -> Self {
        let p = DatasetPaths::in_dir(dir, true);
        let exists = |p: Option<PathBuf>| p.filter(|p| p.exists());
        DataSection {
            kg1_triples: p.kg1_triples,
            kg2_triples: p.kg2_triples,
            alignments: p.alignments,
            kg1_visual: exists(p.kg1_visual),
            kg2_visual: exists(p.kg2_visual),
            split_fraction: default_split(),
        }
    }
}

/// Architecture shared by both channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Width of the trainable structure features.
    pub input_dim: usize,
    pub layer_dims: Vec<usize>,
    /// `layer_dims.len() + 1` values; empty means 1 everywhere.
    pub curvatures: Vec<f64>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_dim: 64,
            layer_dims: vec![64, 64],
            curvatures: Vec::new(),
            activation: Activation::Relu,
            activate_last: true,
        }
    }
}

impl ModelSection {
    pub fn curvatures(&self) -> Vec<f64> {
        if self.curvatures.is_empty() {
            vec![1.0; self.layer_dims.len() + 1]
        } else {
            self.curvatures.clone()
        }
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        let curvatures = self
            .curvatures()
            .into_iter()
            .map(Curvature::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ChannelConfig {
            layer_dims: self.layer_dims.clone(),
            curvatures,
            activation: self.activation,
            activate_last: self.activate_last,
        })
    }

    pub fn output_curvature(&self) -> f64 {
        *self.curvatures().last().expect("at least one curvature")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Structure weights to report; 1 and 0 are the single-channel rows.
    pub betas: Vec<f64>,
    pub k_list: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            betas: vec![0.0, 0.5, 0.9, 1.0],
            k_list: vec![1, 10],
        }
    }
}

impl EvalSection {
    /// Betas strictly inside (0, 1), i.e. the rows that need both channels.
    pub fn fused_betas(&self) -> Vec<f64> {
        self.betas.iter().copied().filter(|b| *b > 0.0 && *b < 1.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub tool_version: String,
    pub checkpoint_format: String,
    pub checkpoint_version: u32,
    pub structure_checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_checkpoint: Option<String>,
    pub loss_log: String,
}

/// A config-file or override problem, reported with the dotted field path.
#[derive(Debug)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> anyhow::Error {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
    .into()
}

/// Parses `key.path=value`; the value is read as TOML, falling back to a
/// plain string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{s}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{s}` has an empty key");
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut table = root;
    for (i, part) in parts.iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| field_err(parts[..=i].join("."), "is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides in order, and validates.
    /// Relative data paths in the file resolve against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .with_context(|| format!("cannot parse config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        if let Some(base) = path.and_then(Path::parent) {
            resolve_data_paths(&mut table, base);
        }
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        // Round-trip through text so deserialization errors carry a span.
        let text = toml::to_string(&table).expect("table serializes");
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            field_err(error_field(&e, &text), e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Serial
        }
    }

    /// Checks ranges and path existence; errors name the field.
    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(field_err("data", "set either [data] or [synthetic], not both")),
            (None, None) => return Err(field_err("data", "missing: set [data] paths or a [synthetic] spec")),
            _ => {}
        }
        if let Some(d) = &self.data {
            let files = [
                ("data.kg1_triples", Some(&d.kg1_triples)),
                ("data.kg2_triples", Some(&d.kg2_triples)),
                ("data.alignments", Some(&d.alignments)),
                ("data.kg1_visual", d.kg1_visual.as_ref()),
                ("data.kg2_visual", d.kg2_visual.as_ref()),
            ];
            for (name, p) in files {
                if let Some(p) = p {
                    if !p.is_file() {
                        return Err(field_err(name, format!("file not found: {}", p.display())));
                    }
                }
            }
            if !(d.split_fraction > 0.0 && d.split_fraction < 1.0) {
                return Err(field_err("data.split_fraction", "must be in (0, 1)"));
            }
        }
        if let Some(s) = &self.synthetic {
            s.validate().map_err(|(f, m)| field_err(format!("synthetic.{f}"), m))?;
        }
        let m = &self.model;
        if m.input_dim == 0 {
            return Err(field_err("model.input_dim", "must be >= 1"));
        }
        if m.layer_dims.is_empty() || m.layer_dims.contains(&0) {
            return Err(field_err("model.layer_dims", "needs at least one positive width"));
        }
        if !m.curvatures.is_empty() && m.curvatures.len() != m.layer_dims.len() + 1 {
            return Err(field_err(
                "model.curvatures",
                format!("expected {} values (input + one per layer)", m.layer_dims.len() + 1),
            ));
        }
        if m.curvatures.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(field_err("model.curvatures", "must be finite and > 0"));
        }
        self.training
            .validate()
            .map_err(|(f, msg)| field_err(format!("training.{f}"), msg))?;
        if self.training.rng_seed != 0 && self.training.rng_seed != self.seed {
            return Err(field_err("training.rng_seed", "set the top-level `seed` instead"));
        }
        if self.eval.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(field_err("eval.betas", "every beta must be in [0, 1]"));
        }
        if self.eval.k_list.is_empty() || self.eval.k_list.contains(&0) {
            return Err(field_err("eval.k_list", "needs at least one k >= 1"));
        }
        if let Some(info) = &self.manifest {
            if info.checkpoint_format != CHECKPOINT_FORMAT || info.checkpoint_version != CHECKPOINT_VERSION {
                return Err(field_err(
                    "manifest.checkpoint_version",
                    format!(
                        "written for {} v{}, this build reads {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
                        info.checkpoint_format, info.checkpoint_version
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Training settings with the run seed filled in.
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            rng_seed: self.seed,
            ..self.training.clone()
        }
    }

    /// The config as it will be written to a manifest.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.training.rng_seed = self.seed;
        if cfg.model.curvatures.is_empty() {
            cfg.model.curvatures = cfg.model.curvatures();
        }
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Dotted key of the line a deserialization error points at, or the field
/// named in an unknown/missing-field message.
fn error_field(e: &toml::de::Error, text: &str) -> String {
    let mut section = String::new();
    if let Some(span) = e.span() {
        for line in text[..span.start.min(text.len())].lines() {
            let t = line.trim();
            if t.starts_with('[') && t.ends_with(']') {
                section = t.trim_matches(|c| c == '[' || c == ']').to_string();
            }
        }
    }
    let join = |key: &str| if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(name) = msg.split(marker).nth(1).and_then(|r| r.split('`').next()) {
            return join(name);
        }
    }
    if let Some(span) = e.span() {
        let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
        let line = &text[line_start..];
        let line = line.split('\n').next().unwrap_or("");
        if let Some((key, _)) = line.split_once('=') {
            return join(key.trim());
        }
    }
    if section.is_empty() { "config".to_string() } else { section }
}

fn resolve_data_paths(table: &mut toml::Table, base: &Path) {
    let Some(toml::Value::Table(data)) = table.get_mut("data") else {
        return;
    };
    for key in ["kg1_triples", "kg2_triples", "alignments", "kg1_visual", "kg2_visual"] {
        if let Some(toml::Value::String(s)) = data.get_mut(key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

pub fn manifest_info(has_visual: bool) -> ManifestInfo {
    ManifestInfo {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_format: CHECKPOINT_FORMAT.to_string(),
        checkpoint_version: CHECKPOINT_VERSION,
        structure_checkpoint: "structure.ckpt.json".into(),
        visual_checkpoint: has_visual.then(|| "visual.ckpt.json".into()),
        loss_log: "loss.tsv".into(),
    }
}
