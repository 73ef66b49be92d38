//! Experiment description read from a single JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{mnist_load_dir, Dataset, MnistSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::seqmodel::{Architecture, ModelSpec};
use crate::trainer::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Mnist(MnistSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

/// Training data plus the held-out split when the source has one.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the line and column of the fault.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("{e}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.dataset, &self.model.architecture) {
            (DatasetSpec::Synthetic(s), Architecture::Gru { max_len, symbols, .. }) => {
                s.validate()?;
                if s.length > *max_len {
                    return Err(Error::Config(format!(
                        "strings of length {} exceed the model's max_len {max_len}",
                        s.length
                    )));
                }
                if symbols.len() != 2 {
                    return Err(Error::Config("bit strings need exactly two symbols".into()));
                }
            }
            (DatasetSpec::Mnist(_), Architecture::Mlp { input, .. }) => {
                if *input != 784 {
                    return Err(Error::Config(format!("MNIST images have 784 pixels, model input is {input}")));
                }
            }
            _ => {
                return Err(Error::Config(
                    "dataset and architecture do not match (synthetic needs gru, mnist needs mlp)".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&p, self.to_json() + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

pub fn load_data(spec: &DatasetSpec) -> Result<LoadedData> {
    match spec {
        DatasetSpec::Synthetic(s) => Ok(LoadedData {
            train: Dataset::synthetic(s)?,
            test: None,
        }),
        DatasetSpec::Mnist(m) => {
            let d = mnist_load_dir(m)?;
            Ok(LoadedData {
                train: Dataset::images(d.train)?,
                test: Some(Dataset::images(d.test)?),
            })
        }
    }
}
