use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archspace::{Metric, SearchSpaceSpec};
use crate::autodiff::Precision;
use crate::selector::{default_grid, ConstraintGrid};
use crate::trainer::{DatasetSpec, SamplerKind, TrainConfig};

use super::IoError;

pub const RUN_CONFIG_VERSION: u32 = 1;

/// One experiment: space, data, selection, training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Space file relative to the config file, or a preset name.
    pub space: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "f32_precision")]
    pub precision: Precision,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub select: SelectSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn f32_precision() -> Precision {
    Precision::F32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "one")]
    pub n: usize,
    /// Grid bounds and margin; all three or none.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub eps: Option<f64>,
    #[serde(default = "sixty_four")]
    pub saliency_batch: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { metric: Metric::Params, n: 1, a: None, b: None, eps: None, saliency_batch: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    #[serde(default = "decay")]
    pub weight_decay: f64,
    #[serde(default = "smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "balanced")]
    pub sampler: SamplerKind,
    /// Checkpoint period in steps; 0 saves only the final weights.
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "two_fifty_six")]
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { batch_size: 256 }
    }
}

fn one() -> usize {
    1
}
fn sixty_four() -> usize {
    64
}
fn two_fifty_six() -> usize {
    256
}
fn decay() -> f64 {
    0.05
}
fn smoothing() -> f64 {
    0.1
}
fn balanced() -> SamplerKind {
    SamplerKind::BalancedPreferred
}

impl RunConfig {
    /// Parses, versions and validates; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, IoError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(IoError::Version { found: cfg.version, supported: RUN_CONFIG_VERSION });
        }
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text =
            std::fs::read_to_string(path).map_err(|err| IoError::Io { path: path.to_path_buf(), err })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, dir).map_err(|e| match e {
            IoError::Config(msg) => IoError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), IoError> {
        self.space_spec()?;
        if let DatasetSpec::ImageFolder { train, eval } = &self.dataset {
            for p in [train, eval] {
                if !self.resolve(p).is_dir() {
                    return Err(IoError::Config(format!(
                        "dataset folder {} does not exist",
                        self.resolve(p).display()
                    )));
                }
            }
        }
        self.grid()?;
        if self.select.n == 0 || self.select.saliency_batch == 0 || self.eval.batch_size == 0 {
            return Err(IoError::Config(
                "select.n, select.saliency_batch and eval.batch_size must be positive".into(),
            ));
        }
        self.train_config().validate().map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn space_spec(&self) -> Result<SearchSpaceSpec, IoError> {
        let path = self.resolve(Path::new(&self.space));
        if path.is_file() {
            return SearchSpaceSpec::load(&path).map_err(|e| IoError::Config(e.to_string()));
        }
        SearchSpaceSpec::preset(&self.space).ok_or_else(|| {
            IoError::Config(format!("space `{}` is neither a file nor a preset name", self.space))
        })
    }

    pub fn grid(&self) -> Result<ConstraintGrid, IoError> {
        let s = &self.select;
        let grid = match (s.a, s.b, s.eps) {
            (Some(a), Some(b), Some(eps)) => ConstraintGrid::new(a, b, eps),
            (None, None, None) => default_grid(&self.space_spec()?, s.metric),
            _ => return Err(IoError::Config("select.a, select.b and select.eps go together".into())),
        };
        grid.map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_final: t.lr_final,
            weight_decay: t.weight_decay,
            label_smoothing: t.label_smoothing,
            seed: self.seed,
            sampler: t.sampler,
        }
    }
}
