use std::fs;
use std::path::Path;

use seisinv_core::{Error, ModelConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything one run can be configured with. Each section keeps the field
/// names of the library type it holds; missing fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Names a failing config field as `section.field`.
pub fn scoped(section: &str, r: seisinv_core::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| match e {
        Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
        other => other,
    })
    .map_err(CliError::from)
}

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Validates every section.
    pub fn validate(&self) -> Result<(), CliError> {
        scoped("synth", self.synth.validate())?;
        scoped("model", self.model.validate())?;
        scoped("train", self.train.validate())
    }

    pub fn pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.pretty()).map_err(|e| Error::io(path, e).into())
    }
}
