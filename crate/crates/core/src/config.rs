//! Run configuration: a profile base, a JSON document merged over it, then
//! `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::Statistic;
use crate::model::ModelConfig;
use crate::schedule::NoiseSchedule;

/// Architecture settings; the gene count and embedding width come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub mlp_ratio: usize,
}

impl ModelSection {
    pub fn resolve(&self, genes: usize, cond_dim: usize) -> ModelConfig {
        ModelConfig {
            genes,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            heads: self.heads,
            cond_dim,
            time_dim: self.time_dim,
            mlp_ratio: self.mlp_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub n_samples: usize,
    pub statistic: Statistic,
    /// Sample with the averaged weights rather than the last iterate.
    pub use_ema: bool,
    /// Chains per network call.
    pub chunk: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    /// `panel.json` from `gene-select`; the dataset's own columns when absent.
    pub panel: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub train: TrainConfig,
    pub infer: InferSection,
    pub paths: PathsSection,
}

pub const PROFILES: [&str; 2] = ["paper", "desk"];

impl RunConfig {
    /// Full-scale settings: 12 blocks of width 384 with 6 heads, 250k
    /// iterations of batch 256, T = 1000.
    pub fn paper() -> RunConfig {
        RunConfig {
            profile: "paper".into(),
            model: ModelSection {
                hidden_dim: 384,
                depth: 12,
                heads: 6,
                time_dim: 256,
                mlp_ratio: 4,
            },
            schedule: ScheduleSection {
                steps: 1000,
                beta_min: 1e-4,
                beta_max: 0.02,
            },
            train: TrainConfig::default(),
            infer: InferSection {
                n_samples: 20,
                statistic: Statistic::Mean,
                use_ema: true,
                chunk: 256,
                seed: 0,
            },
            paths: PathsSection::default(),
        }
    }

    /// Single-core scale: 4 blocks of width 64, T = 200 with the β range
    /// scaled so `ᾱ_T` stays near zero, 20k iterations of batch 64.
    pub fn desk() -> RunConfig {
        let mut c = RunConfig::paper();
        c.profile = "desk".into();
        c.model.hidden_dim = 64;
        c.model.depth = 4;
        c.model.heads = 4;
        c.schedule = ScheduleSection {
            steps: 200,
            beta_min: 5e-4,
            beta_max: 0.1,
        };
        c.train.iterations = 20_000;
        c.train.batch_size = 64;
        c
    }

    pub fn profile(name: &str) -> Result<RunConfig> {
        match name {
            "paper" => Ok(RunConfig::paper()),
            "desk" => Ok(RunConfig::desk()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (known: {})",
                PROFILES.join(", ")
            ))),
        }
    }

    /// Merges `doc` over its `profile` base (default `desk`), then applies
    /// `overrides` of the form `section.key=value`. Values parse as JSON and
    /// fall back to plain strings.
    pub fn from_value(doc: Option<Value>, overrides: &[String]) -> Result<RunConfig> {
        let sets = parse_overrides(overrides)?;
        let profile = sets
            .iter()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.clone())
            .or_else(|| doc.as_ref().and_then(|d| d.get("profile").cloned()))
            .unwrap_or_else(|| Value::String("desk".into()));
        let profile = profile
            .as_str()
            .ok_or_else(|| Error::Config("profile must be a string".into()))?;
        RunConfig::profile(profile)?.layered(doc, &sets)
    }

    /// Like [`RunConfig::from_value`] but over an explicit base, e.g. the
    /// configuration stored in a checkpoint.
    pub fn with_overrides(&self, doc: Option<Value>, overrides: &[String]) -> Result<RunConfig> {
        self.layered(doc, &parse_overrides(overrides)?)
    }

    fn layered(&self, doc: Option<Value>, sets: &[(String, Value)]) -> Result<RunConfig> {
        let mut merged = serde_json::to_value(self)?;
        if let Some(doc) = doc {
            if !doc.is_object() {
                return Err(Error::Config("configuration must be a JSON object".into()));
            }
            merge(&mut merged, doc);
        }
        for (key, value) in sets {
            set_path(&mut merged, key, value.clone())?;
        }
        let config: RunConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read_document(path: &Path) -> Result<Value> {
        let text = crate::fsutil::read_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let doc = path.map(RunConfig::read_document).transpose()?;
        RunConfig::from_value(doc, overrides)
    }

    /// Every failure is reported as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let config_error = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.model.resolve(1, 1).validate().map_err(config_error)?;
        self.schedule.build().map_err(config_error)?;
        self.train.validate().map_err(config_error)?;
        if self.infer.n_samples == 0 {
            return Err(Error::Config("infer.n_samples must be at least 1".into()));
        }
        if self.infer.chunk == 0 {
            return Err(Error::Config("infer.chunk must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse_overrides(overrides: &[String]) -> Result<Vec<(String, Value)>> {
    overrides
        .iter()
        .map(|o| {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            Ok((key.trim().to_string(), value))
        })
        .collect()
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("{key}: no section {part:?}")))?;
    }
    Err(Error::Config("empty override key".into()))
}
