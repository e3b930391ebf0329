use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{SpeedFactor, CANONICAL_SAMPLE_RATE};
use crate::augmentation::{FilterMode, FilterPolicy};
use crate::embedder::DEFAULT_EMBED_DIM;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::hash::{sha256_hex, split_seed};
use crate::losses::{ArcFaceConfig, TrainSchedule};
use crate::scoring::DcfConfig;

/// Everything a pipeline run depends on. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub paths: PathsConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub arcface: ArcFaceSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub dcf: DcfConfig,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    /// Base for audio paths of original utterances.
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub trials: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enrollments: Option<PathBuf>,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

fn default_data_root() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Defaults to a value derived from the top-level seed.
    pub seed: Option<u64>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            seed: None,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArcFaceSettings {
    pub scale: f64,
    pub margin: f64,
}

impl Default for ArcFaceSettings {
    fn default() -> Self {
        let d = ArcFaceConfig::new(1, 1);
        Self {
            scale: d.scale,
            margin: d.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr_init: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainSchedule::default();
        Self {
            lr_init: d.lr_init,
            epochs: d.epochs,
            momentum: d.momentum,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Empty disables speed perturbation.
    pub speed_factors: Vec<f64>,
    pub vc: VcConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            speed_factors: vec![0.9, 1.1],
            vc: VcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VcConfig {
    pub enabled: bool,
    /// Candidates generated per target speaker.
    pub per_speaker: usize,
    pub strength: f64,
}

impl Default for VcConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            per_speaker: crate::augmentation::default_budget(FilterMode::InSet),
            strength: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub in_set_threshold: f64,
    pub out_of_set_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            in_set_threshold: FilterPolicy::IN_SET_THRESHOLD,
            out_of_set_threshold: FilterPolicy::OUT_OF_SET_THRESHOLD,
        }
    }
}

impl FilterConfig {
    pub fn in_set(&self) -> FilterPolicy {
        FilterPolicy {
            mode: FilterMode::InSet,
            threshold: self.in_set_threshold,
        }
    }

    pub fn out_of_set(&self) -> FilterPolicy {
        FilterPolicy {
            mode: FilterMode::OutOfSet,
            threshold: self.out_of_set_threshold,
        }
    }
}

/// How trial scores are computed from embeddings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringBackend {
    /// Cosine between raw embeddings; independent of the trained head.
    Embedding,
    /// Cosine between vectors of per-class head cosines.
    #[default]
    HeadProfile,
    /// Enroll ids name trained classes; the score is the test embedding's
    /// cosine against that class row.
    SpeakerModel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub backend: ScoringBackend,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub work_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.paths.resolve(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(w) = &overrides.work_dir {
            self.paths.work_dir = w.clone();
        }
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        if let Some(j) = overrides.jobs {
            self.jobs = j;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.features.validate(CANONICAL_SAMPLE_RATE)?;
        if self.encoder.embed_dim < 8 {
            return Err(Error::Config(format!(
                "embed_dim {} is below the minimum of 8",
                self.encoder.embed_dim
            )));
        }
        self.arcface(2).validate()?;
        self.schedule().validate()?;
        self.speed_factors()?;
        if !(0.0..=1.0).contains(&self.augment.vc.strength) {
            return Err(Error::Config(format!(
                "vc strength {} outside [0, 1]",
                self.augment.vc.strength
            )));
        }
        self.filter.in_set().validate()?;
        self.filter.out_of_set().validate()?;
        self.dcf.validate()?;
        Ok(())
    }

    pub fn speed_factors(&self) -> Result<Vec<SpeedFactor>> {
        self.augment
            .speed_factors
            .iter()
            .map(|&f| {
                if f == 1.0 {
                    return Err(Error::Config("speed factor 1.0 produces no augmentation".into()));
                }
                SpeedFactor::new(f).map_err(|e| Error::Config(e.to_string()))
            })
            .collect()
    }

    pub fn arcface(&self, num_classes: usize) -> ArcFaceConfig {
        ArcFaceConfig {
            scale: self.arcface.scale,
            margin: self.arcface.margin,
            num_classes,
            embed_dim: self.encoder.embed_dim,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr_init: self.train.lr_init,
            epochs: self.train.epochs,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            seed: self.stage_seed("train"),
        }
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder.seed.unwrap_or_else(|| self.stage_seed("encoder"))
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        split_seed(self.seed, stage)
    }

    /// Hash of the settings that influence stage outputs. The worker count
    /// is excluded because results do not depend on it.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.jobs = 1;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        fix(&mut self.data_root);
        fix(&mut self.train_manifest);
        fix(&mut self.eval_manifest);
        fix(&mut self.trials);
        if let Some(e) = &mut self.enrollments {
            fix(e);
        }
    }
}
