//! Config file schema: `[experiment]`, `[output]` and `[[sweep]]` tables.

use std::path::{Path, PathBuf};

use featreplay::continual::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    #[default]
    Both,
}

impl ReportFormat {
    pub fn text(self) -> bool {
        self != ReportFormat::Csv
    }

    pub fn csv(self) -> bool {
        self != ReportFormat::Text
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: ReportFormat,
}

/// One swept parameter. `param` is a dotted path into the experiment table,
/// e.g. `budget_bytes` or `maml.inner_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<toml::Value>,
    /// Seeds run at every value; defaults to the experiment seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
    pub sweep: Vec<SweepAxis>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| Failure::usage(format!("{}: {}", path.display(), f.message)))
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Failure::usage(e.to_string().trim_end().to_string()))?;
        cfg.experiment.validate().map_err(|e| Failure::usage(e.to_string()))?;
        for axis in &cfg.sweep {
            axis.check(&cfg.experiment)?;
        }
        Ok(cfg)
    }

    /// The sweep axis named `param`, or the only one declared.
    pub fn axis(&self, param: Option<&str>) -> Result<&SweepAxis, Failure> {
        match (param, self.sweep.as_slice()) {
            (_, []) => Err(Failure::usage("config declares no [[sweep]] axis")),
            (None, [only]) => Ok(only),
            (None, _) => Err(Failure::usage(format!(
                "config declares several sweep axes ({}); pick one with --axis",
                self.sweep
                    .iter()
                    .map(|a| a.param.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
            (Some(p), axes) => axes
                .iter()
                .find(|a| a.param == p)
                .ok_or_else(|| Failure::usage(format!("no sweep axis for `{p}`"))),
        }
    }
}

impl SweepAxis {
    fn check(&self, base: &ExperimentConfig) -> Result<(), Failure> {
        if self.values.is_empty() {
            return Err(Failure::usage(format!("sweep axis `{}` has no values", self.param)));
        }
        for v in &self.values {
            self.apply(base, v)?;
        }
        Ok(())
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: &toml::Value) -> Result<ExperimentConfig, Failure> {
        let mut root = toml::Value::try_from(base).map_err(|e| Failure::runtime(e.to_string()))?;
        let mut slot = &mut root;
        for key in self.param.split('.') {
            slot = slot
                .get_mut(key)
                .filter(|_| !key.is_empty())
                .ok_or_else(|| Failure::usage(format!("unknown sweep parameter `{}`", self.param)))?;
        }
        if slot.is_table() {
            return Err(Failure::usage(format!(
                "sweep parameter `{}` is a table, not a value",
                self.param
            )));
        }
        *slot = value.clone();
        let cfg: ExperimentConfig = root
            .try_into()
            .map_err(|e| Failure::usage(format!("sweep value {value} for `{}`: {e}", self.param)))?;
        cfg.validate()
            .map_err(|e| Failure::usage(format!("sweep value {value} for `{}`: {e}", self.param)))?;
        Ok(cfg)
    }

    pub fn label(value: &toml::Value) -> String {
        match value {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}
