//! Run configuration: a JSON file, overridden field by field from the
//! command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tps_core::fixture::{load_images, load_weights};
use tps_core::policy::{FeatureType, SimilaritySource};
use tps_core::{ImageBatch, Mode, ModelConfig, ModelWeights, PruneSchedule, Variant};

use crate::error::{CliError, Result};

pub const DEFAULT_WEIGHTS_SEED: u64 = 7;
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Custom(ModelConfig),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let cfg = match self {
            ModelSpec::Preset(name) => ModelConfig::preset(name)?,
            ModelSpec::Custom(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Locations {
    List(Vec<usize>),
    Text(String),
}

impl Locations {
    pub fn resolve(&self) -> Result<Vec<usize>> {
        match self {
            Locations::List(v) => Ok(v.clone()),
            Locations::Text(t) => Ok(PruneSchedule::parse_locations(t)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_locations")]
    pub locations: Locations,
    #[serde(default = "default_keep_ratio")]
    pub keep_ratio: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_similarity")]
    pub similarity_source: SimilaritySource,
    #[serde(default = "default_feature")]
    pub feature_type: FeatureType,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_locations() -> Locations {
    Locations::List(vec![4, 7, 10])
}
fn default_keep_ratio() -> f64 {
    0.7
}
fn default_variant() -> Variant {
    Variant::Etps
}
fn default_similarity() -> SimilaritySource {
    SimilaritySource::Cosine
}
fn default_feature() -> FeatureType {
    FeatureType::Full
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            locations: default_locations(),
            keep_ratio: default_keep_ratio(),
            variant: default_variant(),
            similarity_source: default_similarity(),
            feature_type: default_feature(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InputSpec {
    /// Standard-normal pixels. Without a seed the run seed is used.
    Random {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Tensor fixture holding an `images` tensor of shape `[b, H, W, 3]`.
    Fixture { path: PathBuf },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Random { seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name or explicit geometry. Taken from the weight file when absent.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub input: InputSpec,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Weight fixture; seeded random weights are generated when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_weights_seed")]
    pub weights_seed: u64,
    /// Run seed. Also the base of per-trial seeds in robustness runs.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_mode() -> Mode {
    Mode::Tps
}
fn default_batch() -> usize {
    4
}
fn default_weights_seed() -> u64 {
    DEFAULT_WEIGHTS_SEED
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub weights: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub model: Option<String>,
    pub locations: Option<String>,
    pub keep_ratio: Option<f64>,
    pub mode: Option<String>,
    pub variant: Option<String>,
    pub similarity_source: Option<String>,
    pub feature_type: Option<String>,
    pub batch_size: Option<usize>,
    pub input: Option<PathBuf>,
    pub labels: Option<String>,
    pub trials: Option<usize>,
}

/// Parses a lowercase enum name through its serde representation.
pub fn parse_name<T: DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| CliError::Config(format!("unknown {what} {text:?}")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(v) = o.weights {
            self.weights = Some(v);
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.out {
            self.out = Some(v);
        }
        if let Some(v) = o.format {
            self.format = parse_name("format", &v)?;
        }
        if let Some(v) = o.model {
            self.model = Some(ModelSpec::Preset(v));
        }
        if let Some(v) = o.locations {
            self.schedule.locations = Locations::Text(v);
        }
        if let Some(v) = o.keep_ratio {
            self.schedule.keep_ratio = v;
        }
        if let Some(v) = o.mode {
            self.mode = parse_name("mode", &v)?;
        }
        if let Some(v) = o.variant {
            self.schedule.variant = parse_name("variant", &v)?;
        }
        if let Some(v) = o.similarity_source {
            self.schedule.similarity_source = parse_name("similarity source", &v)?;
        }
        if let Some(v) = o.feature_type {
            self.schedule.feature_type = parse_name("feature type", &v)?;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.input {
            self.input = InputSpec::Fixture { path: v };
        }
        if let Some(v) = o.labels {
            let labels = v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad label {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            self.labels = Some(labels);
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Output path and format are left
    /// out: they change where a report goes, not what it says.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.format = Format::Json;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn input_seed(&self) -> Option<u64> {
        match self.input {
            InputSpec::Random { seed } => Some(seed.unwrap_or(self.seed)),
            InputSpec::Fixture { .. } => None,
        }
    }

    pub fn schedule(&self, depth: usize) -> Result<PruneSchedule> {
        let s = &self.schedule;
        let mut schedule = PruneSchedule::new(s.locations.resolve()?, s.keep_ratio, s.variant)?;
        schedule.similarity_source = s.similarity_source;
        schedule.feature_type = s.feature_type;
        schedule.rng_seed = s.rng_seed;
        schedule.validate(depth)?;
        Ok(schedule)
    }

    /// Geometry without touching weight files.
    pub fn model_config(&self) -> Result<ModelConfig> {
        match &self.model {
            Some(spec) => spec.resolve(),
            None => Ok(ModelConfig::deit_small()),
        }
    }
}

/// Everything a command needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub weights: ModelWeights,
    pub schedule: PruneSchedule,
    pub images: ImageBatch,
}

impl Resolved {
    pub fn load(run: RunConfig) -> Result<Self> {
        let (model, weights) = match &run.weights {
            Some(path) => {
                let (file_cfg, weights) = load_weights(path)?;
                if let Some(spec) = &run.model {
                    let wanted = spec.resolve()?;
                    if wanted != file_cfg {
                        return Err(CliError::Config(format!(
                            "{} holds weights for a different model than configured",
                            path.display()
                        )));
                    }
                }
                (file_cfg, weights)
            }
            None => {
                let cfg = run.model_config()?;
                let w = ModelWeights::random(&cfg, run.weights_seed)?;
                (cfg, w)
            }
        };
        let schedule = run.schedule(model.depth)?;
        if run.batch_size == 0 {
            return Err(CliError::Config("batch size must be at least 1".into()));
        }
        let images = match &run.input {
            InputSpec::Random { .. } => {
                ImageBatch::random(run.batch_size, model.image_size, run.input_seed().expect("random input"))
            }
            InputSpec::Fixture { path } => load_images(path)?,
        };
        if images.size != model.image_size {
            return Err(CliError::Config(format!(
                "input images are {0}x{0}, model expects {1}x{1}",
                images.size, model.image_size
            )));
        }
        if let Some(labels) = &run.labels {
            if labels.len() != images.batch {
                return Err(CliError::Config(format!(
                    "{} labels for a batch of {}",
                    labels.len(),
                    images.batch
                )));
            }
        }
        Ok(Self {
            run,
            model,
            weights,
            schedule,
            images,
        })
    }
}
