//! End-to-end steps shared by the `cssl` binary, the examples and the
//! acceptance tests: dataset loading, pretraining one seed, persisting a run
//! directory, and downstream transfer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::curriculum::PretextExperiment;
use crate::data::{generate_synthetic, load_image_folder, load_stl10_binary, DatasetSplit, SplitKind};
use crate::error::{invalid, Result};
use crate::evaluation::plot_pretext_curves;
use crate::model::{save_checkpoint, ModelState};
use crate::permutations::{generate_permutation_set, PermutationSet};
use crate::tasks::{PretextTask, TaskKind};
use crate::training::{train_downstream, RunRecord};
use crate::transforms::Image;

pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Clone)]
pub struct Datasets {
    /// Pretext training images; labels, if the source had any, are unused.
    pub unlabeled: Vec<Image>,
    pub train: DatasetSplit,
    pub test: DatasetSplit,
}

/// Loads the configured source.
///
/// STL-10 expects the official binary files inside `data_path`; a missing
/// `unlabeled_X.bin` falls back to the train images. Folder datasets expect
/// `train/` and `test/` class directories (and optionally `unlabeled/`).
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let root = || {
        cfg.data_path
            .as_deref()
            .ok_or_else(|| invalid(format!("dataset {:?} needs data_path", cfg.dataset)))
    };
    match cfg.dataset {
        DatasetSource::Synthetic => {
            let (unlabeled, train, test) = generate_synthetic(&cfg.synthetic())?;
            Ok(Datasets {
                unlabeled: unlabeled.images,
                train,
                test,
            })
        }
        DatasetSource::Stl10 => {
            let root = root()?;
            let labeled = |name: &str, kind| {
                load_stl10_binary(
                    root.join(format!("{name}_X.bin")),
                    Some(&root.join(format!("{name}_y.bin"))),
                    kind,
                )
            };
            let train = labeled("train", SplitKind::LabeledTrain)?;
            let test = labeled("test", SplitKind::LabeledTest)?;
            let unlabeled_path = root.join("unlabeled_X.bin");
            let unlabeled = if unlabeled_path.exists() {
                load_stl10_binary(unlabeled_path, None, SplitKind::Unlabeled)?.images
            } else {
                log::warn!("no unlabeled_X.bin under {}; pretraining on the train images", root.display());
                train.images.clone()
            };
            Ok(Datasets {
                unlabeled,
                train,
                test,
            })
        }
        DatasetSource::Folder => {
            let root = root()?;
            let train = load_image_folder(root.join("train"), cfg.folder_image_size)?;
            let test = load_image_folder(root.join("test"), cfg.folder_image_size)?;
            if train.class_names != test.class_names {
                return Err(invalid("train and test folders list different classes"));
            }
            let unlabeled_dir = root.join("unlabeled");
            let unlabeled = if unlabeled_dir.is_dir() {
                load_image_folder(unlabeled_dir, cfg.folder_image_size)?.split.images
            } else {
                log::warn!("no unlabeled/ under {}; pretraining on the train images", root.display());
                train.split.images.clone()
            };
            Ok(Datasets {
                unlabeled,
                train: train.split,
                test: test.split,
            })
        }
    }
}

pub fn build_task(cfg: &ExperimentConfig) -> Result<PretextTask> {
    match cfg.task {
        TaskKind::PatchPair => Ok(PretextTask::PatchPair),
        TaskKind::Jigsaw => {
            let perms = match &cfg.perms_file {
                Some(path) => PermutationSet::load(path)?,
                None => generate_permutation_set(cfg.n_patches(), cfg.n_perms, cfg.perm_seed)?,
            };
            if perms.n_patches() != cfg.n_patches() {
                return Err(invalid(format!(
                    "permutation set covers {} patches, grid has {}",
                    perms.n_patches(),
                    cfg.n_patches()
                )));
            }
            Ok(PretextTask::Jigsaw(perms))
        }
    }
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}-seed{seed}", cfg.condition())
}

/// Pretrains one encoder with `seed`. Pretext accuracy is measured on the
/// labeled test images with their labels ignored.
pub fn pretrain(
    cfg: &ExperimentConfig,
    data: &Datasets,
    seed: u64,
) -> Result<(ModelState, RunRecord)> {
    let task = build_task(cfg)?;
    let experiment = PretextExperiment {
        train_images: &data.unlabeled,
        eval_images: &data.test.images,
        task: &task,
        transform: cfg.transform(),
        encoder: cfg.encoder(),
        trainer: cfg.trainer(seed),
    };
    let (state, mut record) = experiment.run_curriculum(
        &cfg.schedule()?,
        cfg.epochs_per_schedule_level(),
        &run_id(cfg, seed),
    )?;
    record.condition = cfg.condition();
    Ok((state, record))
}

/// Writes `config.resolved`, `checkpoint.bin`, `metrics.jsonl` and
/// `plots/pretext_curves.png` into `dir`.
pub fn write_run_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    state: Option<&ModelState>,
    record: &RunRecord,
) -> Result<()> {
    fs::create_dir_all(dir.join(PLOTS_DIR))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    if let Some(state) = state {
        save_checkpoint(state, dir.join(CHECKPOINT_FILE))?;
    }
    record.write_jsonl(dir.join(METRICS_FILE))?;
    if !record.epochs.is_empty() {
        plot_pretext_curves(std::slice::from_ref(record), dir.join(PLOTS_DIR).join("pretext_curves.png"))?;
    }
    Ok(())
}

/// Fine-tunes (or linearly probes) a classifier and returns its test
/// accuracy and wall time. `None` trains from random initialization.
pub fn transfer(
    cfg: &ExperimentConfig,
    pretrained: Option<&ModelState>,
    data: &Datasets,
    downstream_seed: u64,
) -> Result<(f64, f64)> {
    let start = Instant::now();
    let outcome = train_downstream(
        pretrained,
        &cfg.encoder(),
        (&data.train.images, &data.train.labels),
        (&data.test.images, &data.test.labels),
        data.train.class_count,
        cfg.normalize,
        cfg.downstream_trainer(downstream_seed),
    )?;
    Ok((outcome.test_acc, start.elapsed().as_secs_f64()))
}

/// All `metrics.jsonl` files under `root`, sorted by path.
pub fn find_metrics_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}
