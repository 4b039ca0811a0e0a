//! Versioned JSON container for a trained channel.
//!
//! Floats are written in shortest round-trip form, so loading a saved
//! checkpoint reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChannelModel;

pub const CHECKPOINT_FORMAT: &str = "hypalign-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub rng_seed: u64,
    pub num_nodes: usize,
    pub input_dim: usize,
    pub layer_dims: Vec<usize>,
    pub curvatures: Vec<f64>,
    pub model: ChannelModel,
}

impl Checkpoint {
    pub fn new(model: ChannelModel, rng_seed: u64) -> Self {
        let mut curvatures = vec![model.input_curvature().value()];
        curvatures.extend(model.layers.iter().map(|l| l.c_out.value()));
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            rng_seed,
            num_nodes: model.num_nodes(),
            input_dim: model.features.ncols(),
            layer_dims: model.layers.iter().map(|l| l.output_dim()).collect(),
            curvatures,
            model,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        let again = Checkpoint::new(self.model.clone(), self.rng_seed);
        if again.num_nodes != self.num_nodes
            || again.input_dim != self.input_dim
            || again.layer_dims != self.layer_dims
            || again.curvatures != self.curvatures
        {
            return Err(Error::Checkpoint(
                "header dimensions do not match the stored tensors".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
