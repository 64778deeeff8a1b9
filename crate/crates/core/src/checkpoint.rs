//! Self-describing JSON model checkpoints.
//!
//! Floats are written with round-trip precision, so save followed by load
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{graph_hash, Dataset};
use crate::error::{GgpError, Result};
use crate::features::KernelSpec;
use crate::svgp::{QuadratureRule, RobustMaxLikelihood, VariationalState};
use crate::train::{TrainConfig, TrainedModel};

pub const FORMAT: &str = "ggp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dataset_fingerprint: String,
    pub graph_hash: String,
    pub n_nodes: usize,
    pub kernel: KernelSpec,
    pub likelihood: RobustMaxLikelihood,
    pub quad_points: usize,
    pub tfidf: bool,
    pub tfidf_l2_normalize: bool,
    /// Labelled nodes the model was fitted on.
    pub trained_on: Vec<usize>,
    pub config: TrainConfig,
    pub final_elbo: f64,
    pub state: VariationalState,
}

impl Checkpoint {
    pub fn new(model: &TrainedModel, dataset: &Dataset, trained_on: &[usize], config: &TrainConfig) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            dataset_fingerprint: dataset.fingerprint(),
            graph_hash: graph_hash(&dataset.graph),
            n_nodes: dataset.n_nodes(),
            kernel: *model.prior.spec(),
            likelihood: model.likelihood,
            quad_points: model.quad.n_points(),
            tfidf: config.tfidf,
            tfidf_l2_normalize: config.tfidf,
            trained_on: trained_on.to_vec(),
            config: config.clone(),
            final_elbo: model.final_elbo,
            state: model.state.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| GgpError::Numerical(format!("checkpoint serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| GgpError::input(format!("malformed checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(GgpError::input(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != VERSION {
            return Err(GgpError::input(format!(
                "checkpoint version {} is not supported (expected {VERSION})",
                ck.version
            )));
        }
        ck.kernel.validated()?;
        ck.state.validate()?;
        if ck.state.n_classes() != ck.likelihood.n_classes {
            return Err(GgpError::input("checkpoint class count disagrees with its likelihood"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| GgpError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| GgpError::io(path, e))?)
    }

    /// Rebuilds the model on `dataset`, which must be the one it was trained
    /// on.
    pub fn restore(&self, dataset: &Dataset) -> Result<TrainedModel> {
        let fp = dataset.fingerprint();
        if fp != self.dataset_fingerprint {
            return Err(GgpError::input(format!(
                "dataset fingerprint {fp} does not match checkpoint {}",
                self.dataset_fingerprint
            )));
        }
        if graph_hash(&dataset.graph) != self.graph_hash {
            return Err(GgpError::input("graph hash does not match checkpoint"));
        }
        let prior = dataset.prior(self.kernel, self.tfidf)?;
        if prior.n_features() != self.state.z.ncols() {
            return Err(GgpError::input(format!(
                "checkpoint has {} feature columns, dataset {}",
                self.state.z.ncols(),
                prior.n_features()
            )));
        }
        Ok(TrainedModel {
            prior,
            state: self.state.clone(),
            likelihood: self.likelihood,
            quad: QuadratureRule::gauss_hermite(self.quad_points)?,
            elbo_trace: Vec::new(),
            final_elbo: self.final_elbo,
        })
    }
}
