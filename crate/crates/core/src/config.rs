//! One JSON file describing a whole pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::LstmHyperparams;
use crate::behaviorgen::{dataset_meta, CorpusConfig};
use crate::concepts::ConceptConfig;
use crate::hvae::{ModelConfig, ModelHyperparams};
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Environment variable that overrides every seed in a [`RunConfig`].
pub const SEED_ENV: &str = "MOHBA_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Clusters for `analyze cluster` when no `--k` is given.
    pub k: usize,
    /// Clusters used for ICTD.
    pub ictd_k: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: 3,
            ictd_k: 16,
            n_classes: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelHyperparams,
    pub train: TrainConfig,
    pub lstm: LstmHyperparams,
    /// Training settings for the baselines; `train` when absent.
    pub baseline_train: Option<TrainConfig>,
    pub analysis: AnalysisConfig,
    pub concepts: ConceptConfig,
    pub out_dir: Option<PathBuf>,
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) if m.starts_with(name) => Error::Config(m),
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        other => other,
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        section("corpus", self.corpus.validate())?;
        section("model", ModelConfig::new(&self.model, &dataset_meta(&self.corpus)).validate())?;
        section("train", self.train.validate())?;
        if let Some(b) = &self.baseline_train {
            section("baseline_train", b.validate().map_err(|e| match e {
                Error::Config(m) => Error::Config(m.replacen("train.", "baseline_train.", 1)),
                other => other,
            }))?;
        }
        if self.lstm.hidden == 0 || self.lstm.head_hidden == 0 {
            return Err(Error::Config("lstm.hidden and lstm.head_hidden must be >= 1".into()));
        }
        if self.analysis.k == 0 || self.analysis.ictd_k == 0 || self.analysis.n_classes == 0 {
            return Err(Error::Config("analysis.k, analysis.ictd_k and analysis.n_classes must be >= 1".into()));
        }
        section("concepts", self.concepts.validate())
    }

    pub fn baseline_train(&self) -> &TrainConfig {
        self.baseline_train.as_ref().unwrap_or(&self.train)
    }

    /// Sets every seed to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.train.seed = seed;
        if let Some(b) = &mut self.baseline_train {
            b.seed = seed;
        }
        self.analysis.seed = seed;
        self.concepts.seed = seed;
        self.concepts.head.seed = seed;
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                self.set_seed(seed);
                Ok(())
            }
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = RunConfig::from_json(r#"{"train": {"stepz": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("train"), "{err}");
        assert!(err.contains("stepz"), "{err}");
        let err = RunConfig::from_json(r#"{"corpus": {"n_runs": "many"}}"#).unwrap_err().to_string();
        assert!(err.contains("corpus.n_runs"), "{err}");
    }

    #[test]
    fn validation_names_the_section() {
        let mut cfg = RunConfig::default();
        cfg.model.d_omega = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("model.d_omega"));
        let mut cfg = RunConfig::default();
        cfg.corpus.n_runs = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("corpus"));
        let mut cfg = RunConfig::default();
        cfg.baseline_train = Some(TrainConfig { batch_size: 0, ..TrainConfig::default() });
        assert!(cfg.validate().unwrap_err().to_string().contains("baseline_train.batch_size"));
    }

    #[test]
    fn set_seed_reaches_every_section() {
        let mut cfg = RunConfig {
            baseline_train: Some(TrainConfig::default()),
            ..RunConfig::default()
        };
        cfg.set_seed(42);
        assert_eq!(cfg.corpus.seed, 42);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.baseline_train().seed, 42);
        assert_eq!(cfg.concepts.head.seed, 42);
    }
}
