//! Flat experiment configuration with layered resolution:
//! built-in defaults, then a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{build_schedule, CurriculumSchedule};
use crate::data::SyntheticSpec;
use crate::error::{invalid, Error, Result};
use crate::model::{ConvStage, EncoderSpec};
use crate::tasks::{TaskKind, TransformConfig};
use crate::training::TrainerConfig;
use crate::transforms::JitterLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMode {
    Fixed,
    Curriculum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Stl10,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub grid_n: usize,
    pub n_perms: usize,
    pub perm_seed: u64,
    /// Load the permutation set from here instead of generating it.
    pub perms_file: Option<PathBuf>,

    pub mode: PretrainMode,
    pub retention: f64,
    pub schedule_start: f64,
    pub schedule_end: f64,
    pub schedule_step: f64,
    pub epochs_per_level: usize,
    /// Epochs of fixed-mode pretraining.
    pub pretrain_epochs: usize,

    pub greyscale_p: f64,
    pub normalize: bool,

    pub input_size: usize,
    pub encoder_filters: Vec<usize>,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub downstream_epochs: usize,
    pub downstream_learning_rate: f64,
    pub linear_probe: bool,
    pub classes: usize,

    pub dataset: DatasetSource,
    pub data_path: Option<PathBuf>,
    pub synthetic_unlabeled: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_image_size: usize,
    pub synthetic_seed: u64,
    /// Resize folder images to this side length.
    pub folder_image_size: usize,

    pub seeds: Vec<u64>,
    pub parallel: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Jigsaw,
            grid_n: 2,
            n_perms: 12,
            perm_seed: 0,
            perms_file: None,
            mode: PretrainMode::Curriculum,
            retention: 0.95,
            schedule_start: 1.0,
            schedule_end: 0.8,
            schedule_step: 0.05,
            epochs_per_level: 2,
            pretrain_epochs: 10,
            greyscale_p: 0.0,
            normalize: true,
            input_size: 32,
            encoder_filters: vec![32, 64, 128, 128],
            encoder_kernel: 3,
            encoder_stride: 2,
            learning_rate: 1e-3,
            batch_size: 64,
            downstream_epochs: 2,
            downstream_learning_rate: 1e-3,
            linear_probe: false,
            classes: 10,
            dataset: DatasetSource::Synthetic,
            data_path: None,
            synthetic_unlabeled: 2000,
            synthetic_train: 500,
            synthetic_test: 800,
            synthetic_image_size: 64,
            synthetic_seed: 0,
            folder_image_size: 96,
            seeds: vec![0],
            parallel: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, overlaid by `file` (if any), overlaid by `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &toml::Table) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default())
            .map_err(|e| Error::Format(format!("config: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let from_file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            merge(&mut table, from_file)?;
        }
        merge(&mut table, overrides.clone())?;
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        if self.encoder_filters.is_empty() {
            return Err(invalid("encoder_filters must not be empty"));
        }
        JitterLevel::new(self.retention)?;
        if self.task == TaskKind::PatchPair && self.grid_n != 3 {
            return Err(invalid("patch_pair uses a 3x3 grid; set grid_n = 3"));
        }
        self.trainer(0).validate()?;
        self.encoder().validate()
    }

    pub fn n_patches(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            input_size: self.input_size,
            channels: 3,
            stages: self
                .encoder_filters
                .iter()
                .map(|&f| ConvStage::new(f, self.encoder_kernel, self.encoder_stride))
                .collect(),
        }
    }

    pub fn transform(&self) -> TransformConfig {
        TransformConfig {
            jitter: JitterLevel::NONE,
            greyscale_p: self.greyscale_p,
            normalize: self.normalize,
            input_size: self.input_size,
        }
    }

    pub fn trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.pretrain_epochs,
            seed,
            ..TrainerConfig::default()
        }
    }

    pub fn downstream_trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.downstream_learning_rate,
            batch_size: self.batch_size,
            epochs: self.downstream_epochs,
            seed,
            train_encoder: !self.linear_probe,
            ..TrainerConfig::default()
        }
    }

    /// The level sequence of this config's mode.
    pub fn schedule(&self) -> Result<CurriculumSchedule> {
        match self.mode {
            PretrainMode::Fixed => Ok(CurriculumSchedule::fixed(JitterLevel::new(self.retention)?)),
            PretrainMode::Curriculum => {
                build_schedule(self.schedule_start, self.schedule_end, self.schedule_step)
            }
        }
    }

    /// Epochs spent at each schedule level.
    pub fn epochs_per_schedule_level(&self) -> usize {
        match self.mode {
            PretrainMode::Fixed => self.pretrain_epochs,
            PretrainMode::Curriculum => self.epochs_per_level,
        }
    }

    /// Label used to group runs in comparisons.
    pub fn condition(&self) -> String {
        match self.mode {
            PretrainMode::Fixed => format!("fixed-{:.2}", self.retention),
            PretrainMode::Curriculum => "curriculum".into(),
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_unlabeled: self.synthetic_unlabeled,
            n_train: self.synthetic_train,
            n_test: self.synthetic_test,
            image_size: self.synthetic_image_size,
            class_count: self.classes,
            seed: self.synthetic_seed,
        }
    }
}

/// Overlays `top` onto `base`, rejecting keys the config does not define.
fn merge(base: &mut toml::Table, top: toml::Table) -> Result<()> {
    for (key, value) in top {
        if !ExperimentConfig::is_key(&key) {
            return Err(invalid(format!("unknown config key `{key}`")));
        }
        base.insert(key, value);
    }
    Ok(())
}

impl ExperimentConfig {
    fn is_key(key: &str) -> bool {
        const KEYS: &[&str] = &[
            "task", "grid_n", "n_perms", "perm_seed", "perms_file", "mode", "retention",
            "schedule_start", "schedule_end", "schedule_step", "epochs_per_level",
            "pretrain_epochs", "greyscale_p", "normalize", "input_size", "encoder_filters",
            "encoder_kernel", "encoder_stride", "learning_rate", "batch_size",
            "downstream_epochs", "downstream_learning_rate", "linear_probe", "classes",
            "dataset", "data_path", "synthetic_unlabeled", "synthetic_train", "synthetic_test",
            "synthetic_image_size", "synthetic_seed", "folder_image_size", "seeds", "parallel",
            "out_dir",
        ];
        KEYS.contains(&key)
    }
}

/// Parses a `key=value` override; the value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{s}` is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}
