use std::path::{Path, PathBuf};

use graspgen_core::cvae::{GeneratorConfig, TrainConfig};
use graspgen_core::evalsuite::DatasetConfig;
use graspgen_core::losses::{LossWeights, CONTACT_THRESHOLD};
use graspgen_core::refine::{RefineConfig, ResidualNetConfig, ResidualTrainConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// File locations. Relative paths are resolved against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Hand description (JSON); the built-in hand when absent.
    #[serde(default)]
    pub hand: Option<PathBuf>,
    /// Directory of `.obj` / `.ply` objects; the file stem is the object id.
    pub objects: PathBuf,
    /// Grasp record file written by `gen-dataset`.
    pub dataset: PathBuf,
    /// Directory holding `generator.ckpt` and `refiner.ckpt`.
    pub checkpoints: PathBuf,
    /// Directory for logs, reports and sampled grasps.
    pub output: PathBuf,
    /// Taxonomy file; the five shipped taxonomies when absent.
    #[serde(default)]
    pub taxonomies: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Every random stream is derived from this value (see [`sub_seed`]).
    /// The `seed` fields of `train` and `refiner_train` are ignored.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples_per_object: usize,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Contact-map distance for ground-truth grasps (m).
    #[serde(default = "default_contact_threshold")]
    pub contact_threshold: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Share of stable records held out to drive the learning-rate schedule.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub refine: RefineConfig,
    /// `feature_dim` must match the generator's object feature width.
    #[serde(default)]
    pub refiner: ResidualNetConfig,
    #[serde(default)]
    pub refiner_train: ResidualTrainConfig,
    /// Generator samples per object used as refiner training input.
    #[serde(default = "default_refiner_samples")]
    pub refiner_samples_per_object: usize,
}

fn default_samples() -> usize {
    100
}

fn default_contact_threshold() -> f64 {
    CONTACT_THRESHOLD
}

fn default_validation() -> f64 {
    0.1
}

fn default_refiner_samples() -> usize {
    64
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.dataset.validate()?;
        self.generator.validate()?;
        self.train.validate()?;
        self.refine.validate()?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Failure::input(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.contact_threshold > 0.0) {
            return Err(Failure::input("contact_threshold must be positive"));
        }
        let width = *self.generator.point_layers.last().unwrap();
        if self.refiner.feature_dim != width {
            return Err(Failure::input(format!(
                "refiner.feature_dim ({}) must equal the generator's object feature width ({width})",
                self.refiner.feature_dim
            )));
        }
        Ok(())
    }

    pub fn generator_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints.join("generator.ckpt")
    }

    pub fn refiner_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints.join("refiner.ckpt")
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.objects, &mut self.dataset, &mut self.checkpoints, &mut self.output] {
            fix(p);
        }
        for p in [&mut self.hand, &mut self.taxonomies].into_iter().flatten() {
            fix(p);
        }
    }
}

/// Independent seed for one subsystem: SplitMix64 of the run seed mixed
/// with the FNV-1a hash of a fixed label.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
