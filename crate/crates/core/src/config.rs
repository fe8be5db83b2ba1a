//! Run configuration files.
//!
//! A run config is a JSON object with four sections. Only `data.archive` is
//! required; every other key falls back to the desk-scale default. Unknown
//! keys are rejected.
//!
//! ```json
//! {
//!   "data":  { "archive": "synthetic", "split_seed": 0, "test_fraction": 0.25 },
//!   "model": { "d_e": 32, "d_gd": 64, "d_int": 32, "d_dyn": 32, "g": 7, "m": 19,
//!              "k_occ": 5, "max_lookback": null, "heads": 1 },
//!   "train": { "learning_rate": 0.0001, "batch_size": 10, "omega1": "auto",
//!              "tta_weight_unit": "seconds", "epochs": 50, "seed": 0,
//!              "scheduler": { "factor": 0.5, "patience": 3 } },
//!   "eval":  { "q": 0.5, "r0": 0.8, "tta_convention": "standard" }
//! }
//! ```
//!
//! A relative archive path is resolved against the directory holding the
//! config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::scene::VideoSample;
use crate::training::{stratified_split, TrainConfig};

const MAX_EPOCHS: usize = 100_000;
const MAX_BATCH: usize = 100_000;
const MAX_WINDOW: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub archive: PathBuf,
    /// Seed of the stratified train/test split used by `ablate`.
    #[serde(default)]
    pub split_seed: u64,
    /// Share of each class held out as the test split.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn new(archive: impl Into<PathBuf>) -> Self {
        Self {
            data: DataConfig {
                archive: archive.into(),
                split_seed: 0,
                test_fraction: default_test_fraction(),
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.data.archive.is_relative() {
            if let Some(dir) = path.parent() {
                config.data.archive = dir.join(&config.data.archive);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.archive.as_os_str().is_empty() {
            return Err(Error::Config("data.archive must name a directory".into()));
        }
        if !(0.0..0.9).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction {} must lie in [0, 0.9)",
                self.data.test_fraction
            )));
        }
        self.model.validate()?;
        if self.model.k_occ > MAX_WINDOW || self.model.dyn_window > MAX_WINDOW {
            return Err(Error::Config(format!(
                "model.k_occ and model.dyn_window must be at most {MAX_WINDOW}"
            )));
        }
        if self.model.gat_hidden > 1 << 16 || self.model.d_node() > 1 << 16 {
            return Err(Error::Config("model widths out of range".into()));
        }
        self.train.validate()?;
        if self.train.epochs == 0 || self.train.epochs > MAX_EPOCHS {
            return Err(Error::Config(format!("train.epochs must lie in [1, {MAX_EPOCHS}]")));
        }
        if self.train.batch_size > MAX_BATCH {
            return Err(Error::Config(format!("train.batch_size must be at most {MAX_BATCH}")));
        }
        self.eval.validate()
    }

    /// Stratified train/test split of `videos` by `data.split_seed`.
    pub fn split<'a>(&self, videos: &'a [VideoSample]) -> (Vec<&'a VideoSample>, Vec<&'a VideoSample>) {
        let (train, test) = stratified_split(videos, self.data.test_fraction, self.data.split_seed);
        (
            train.iter().map(|&i| &videos[i]).collect(),
            test.iter().map(|&i| &videos[i]).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(r#"{"data": {"archive": "a"}}"#).unwrap();
        assert_eq!(c, RunConfig::new("a"));
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"data": {"archive": "a"}, "extra": 1}"#,
            r#"{"data": {"archive": "a", "path": "b"}}"#,
            r#"{"data": {"archive": "a"}, "model": {"depth": 3}}"#,
            r#"{"data": {"archive": "a"}, "train": {"lr": 0.1}}"#,
            r#"{"data": {"archive": "a"}, "eval": {"q": 0.5, "r": 0.8}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn ranges_checked() {
        for text in [
            r#"{"data": {"archive": ""}}"#,
            r#"{"data": {"archive": "a", "test_fraction": 1.5}}"#,
            r#"{"data": {"archive": "a"}, "model": {"d_e": 0}}"#,
            r#"{"data": {"archive": "a"}, "model": {"max_lookback": 0}}"#,
            r#"{"data": {"archive": "a"}, "train": {"learning_rate": -1}}"#,
            r#"{"data": {"archive": "a"}, "train": {"omega1": 0}}"#,
            r#"{"data": {"archive": "a"}, "train": {"epochs": 0}}"#,
            r#"{"data": {"archive": "a"}, "train": {"scheduler": {"factor": 2}}}"#,
            r#"{"data": {"archive": "a"}, "eval": {"q": 1.2}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::new("data/x");
        c.train.learning_rate = 1e-3;
        c.model.max_lookback = Some(12);
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}
