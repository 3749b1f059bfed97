//! JSON run configs. Every field defaults to the paper value; unknown
//! fields are rejected with their line and column.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use srforge_core::models::{ModelKind, ModelSpec};
use srforge_core::train::{LossWeights, ScheduleSpec, TrainConfig};

use crate::error::{Error, IoContext, Result};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })
}

/// Loads `path` when given, otherwise the defaults; `check` runs on the
/// result and its failures are reported against the file.
pub fn load_or_default<T, F>(path: Option<&Path>, check: F) -> Result<T>
where
    T: DeserializeOwned + Default,
    F: FnOnce(&T) -> srforge_core::Result<()>,
{
    let cfg = match path {
        Some(p) => load_json(p)?,
        None => T::default(),
    };
    check(&cfg).map_err(|e| match path {
        Some(p) => Error::Config {
            path: p.to_path_buf(),
            line: 0,
            column: 0,
            msg: e.to_string(),
        },
        None => Error::Core(e),
    })?;
    Ok(cfg)
}

/// Architecture fields a config may override; unset fields keep the
/// defaults of the model kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub channels: Option<usize>,
    pub growth: Option<usize>,
    pub n_rrdb: Option<usize>,
    pub n_ub: Option<usize>,
    pub n_blocks: Option<usize>,
    pub res_scale: Option<f64>,
    pub input_size: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, kind: ModelKind) -> ModelSpec {
        let mut s = ModelSpec::new(kind);
        s.channels = self.channels.unwrap_or(s.channels);
        s.growth = self.growth.unwrap_or(s.growth);
        s.n_rrdb = self.n_rrdb.unwrap_or(s.n_rrdb);
        s.n_ub = self.n_ub.unwrap_or(s.n_ub);
        s.n_blocks = self.n_blocks.unwrap_or(s.n_blocks);
        s.res_scale = self.res_scale.unwrap_or(s.res_scale);
        s.input_size = self.input_size.unwrap_or(s.input_size);
        s
    }
}

/// `srforge train --config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub schedule: ScheduleSpec,
    pub weights: LossWeights,
    pub generator: ModelOverrides,
    pub discriminator: ModelOverrides,
    pub backbone: ModelOverrides,
}

impl TrainRunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn validate(&self) -> srforge_core::Result<()> {
        self.train_config().validate()
    }
}
