//! Run configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! hidden = 64
//!
//! [train]
//! lr = 1e-3
//! max_steps = 200
//!
//! [sample]
//! n_steps = 50
//! anneal = "10"
//!
//! [filter]
//! min_length = 12
//!
//! [reward]
//! entropy_sign = 1.0
//! ```
//!
//! Every key is optional. The run seed (flag, else the file, else 0) replaces `train.seed`
//! and `sample.seed`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use se3fm::data::FilterConfig;
use se3fm::metrics::RewardConfig;
use se3fm::model::ModelConfig;
use se3fm::sampling::SampleConfig;
use se3fm::training::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub filter: FilterConfig,
    pub reward: RewardConfig,
}

/// A parsed config together with the exact text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: Option<PathBuf>,
    pub text: String,
    pub config: RunConfig,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| {
            CliError::config(format!(
                "bad config {}: {e}",
                path.map(|p| p.display().to_string()).unwrap_or_default()
            ))
        })?;
        if let Some(s) = seed {
            config.seed = s;
        }
        config.train.seed = config.seed;
        config.sample.seed = config.seed;
        Ok(LoadedConfig {
            path: path.map(Path::to_path_buf),
            text,
            config,
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.config.model.validate().context("[model]")?;
        self.config.train.validate().context("[train]")?;
        self.config.sample.validate().context("[sample]")?;
        Ok(())
    }

    /// The effective settings after flags, as TOML.
    pub fn effective(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(&self.config)?)
    }
}
