//! Run configuration: a JSON document with data, model, training, eval and
//! sweep sections. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tcrnn::datagen::{ElastoPlasticParams, LoadingProgram, BENCHMARK_INCREMENTS, BENCHMARK_TRAIN_INCREMENT};
use tcrnn::eval::{HistorySeed, Role, SweepAxis, SweepSpec};
use tcrnn::thermo::TcrnnSpec;
use tcrnn::{Error, Result, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: TcrnnSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Exactly one data source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    #[serde(default)]
    pub material: ElastoPlasticParams,
    #[serde(default = "benchmark_paths")]
    pub paths: Vec<SyntheticPath>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPath {
    pub id: String,
    pub role: Role,
    pub program: LoadingProgram,
}

/// The five benchmark paths; the middle increment is the training path.
pub fn benchmark_paths() -> Vec<SyntheticPath> {
    BENCHMARK_INCREMENTS
        .iter()
        .map(|&inc| SyntheticPath {
            id: format!("inc_{inc:e}"),
            role: if inc == BENCHMARK_TRAIN_INCREMENT { Role::Train } else { Role::Test },
            program: LoadingProgram::benchmark(inc),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub files: Vec<CsvFiles>,
    /// Canonical column name to the name used in the files.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

/// Files matching `pattern` (relative to the config file), all with `role`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvFiles {
    pub pattern: String,
    pub role: Role,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub history_seed: HistorySeed,
    /// Role overrides by path id.
    #[serde(default)]
    pub roles: BTreeMap<String, Role>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingData(format!("config not found: {}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if let DataSection::Synthetic(s) = &self.data {
            s.material.validate()?;
            if s.paths.is_empty() {
                return Err(Error::Config("synthetic data needs at least one path".into()));
            }
            for p in &s.paths {
                p.program.strains()?;
            }
        }
        if let Some(s) = &self.sweep {
            self.sweep_spec(s, self.training.seed).validate()?;
        }
        Ok(())
    }

    pub fn sweep_spec(&self, s: &SweepSection, seed: u64) -> SweepSpec {
        SweepSpec {
            axis: s.axis,
            values: s.values.clone(),
            repetitions: s.repetitions,
            seed,
            model: self.model.clone(),
            train: self.training.clone(),
        }
    }
}
