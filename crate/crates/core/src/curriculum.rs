//! Difficulty-ordered jitter schedules and staged pretext training.
//!
//! A schedule is the list of jitter levels sorted by a difficulty function.
//! [`PretextExperiment::run_curriculum`] trains one model through the levels
//! in that order, regenerating transformed samples on the fly at each epoch.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{EncoderSpec, ModelState};
use crate::tasks::{PretextTask, TransformConfig};
use crate::training::{PretextSource, RunRecord, SampleSource, Trainer, TrainerConfig};
use crate::transforms::{Image, JitterLevel};

/// Schedule retentions are rounded to this many steps per unit.
const RETENTION_SCALE: f64 = 1e9;

fn quantize(v: f64) -> f64 {
    (v * RETENTION_SCALE).round() / RETENTION_SCALE
}

/// Scores how hard a jitter level makes the pretext task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyFn {
    /// `1 − retention`.
    Jitter,
    /// `1 − measured pretext accuracy` for each listed `(retention, accuracy)`.
    Empirical(Vec<(f64, f64)>),
}

impl DifficultyFn {
    pub fn score(&self, level: JitterLevel) -> Result<f64> {
        match self {
            Self::Jitter => Ok(1.0 - level.retention()),
            Self::Empirical(table) => table
                .iter()
                .find(|(r, _)| (r - level.retention()).abs() < 1e-6)
                .map(|(_, acc)| 1.0 - acc)
                .ok_or_else(|| {
                    invalid(format!(
                        "no measured accuracy for retention {}",
                        level.retention()
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    levels: Vec<JitterLevel>,
    difficulties: Vec<f64>,
}

impl CurriculumSchedule {
    /// Sorts `levels` by ascending difficulty; scores must be distinct.
    pub fn sorted(levels: Vec<JitterLevel>, f: &DifficultyFn) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("curriculum schedule"));
        }
        let mut scored = levels
            .into_iter()
            .map(|l| Ok((f.score(l)?, l)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scored.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Validation(
                "schedule levels must have distinct difficulties".into(),
            ));
        }
        Ok(Self {
            difficulties: scored.iter().map(|(d, _)| *d).collect(),
            levels: scored.into_iter().map(|(_, l)| l).collect(),
        })
    }

    /// A one-level schedule, equivalent to fixed-jitter training.
    pub fn fixed(level: JitterLevel) -> Self {
        Self {
            levels: vec![level],
            difficulties: vec![1.0 - level.retention()],
        }
    }

    pub fn levels(&self) -> &[JitterLevel] {
        &self.levels
    }

    pub fn difficulties(&self) -> &[f64] {
        &self.difficulties
    }

    pub fn retentions(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.retention()).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Retentions `start, start − step, …` down to the last value `≥ end`, with
/// `end` appended when not reached exactly; ordered easiest first.
pub fn build_schedule(
    start_retention: f64,
    end_retention: f64,
    step: f64,
) -> Result<CurriculumSchedule> {
    if !(end_retention > 0.0 && end_retention <= start_retention && start_retention <= 1.0) {
        return Err(invalid(format!(
            "need 0 < end ({end_retention}) <= start ({start_retention}) <= 1"
        )));
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(invalid(format!("step must be in (0, 1), got {step}")));
    }
    let end = quantize(end_retention);
    let mut levels = Vec::new();
    for i in 0.. {
        let r = quantize(start_retention - i as f64 * step);
        if r < end {
            break;
        }
        levels.push(r);
    }
    if levels.last() != Some(&end) {
        levels.push(end);
    }
    let levels = levels
        .into_iter()
        .map(JitterLevel::new)
        .collect::<Result<Vec<_>>>()?;
    CurriculumSchedule::sorted(levels, &DifficultyFn::Jitter)
}

/// Greedy difficulty selection: the id with the highest downstream accuracy, ties
/// going to the smallest (easiest) id.
pub fn select_best_difficulty<I: Ord + Clone>(candidates: &[(I, f64)]) -> Result<I> {
    if let Some((_, acc)) = candidates.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(invalid(format!("accuracy {acc} outside [0, 1]")));
    }
    candidates
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _)| id.clone())
        .ok_or(Error::Empty("difficulty candidates"))
}

/// Everything needed to pretrain one encoder on a pretext task.
pub struct PretextExperiment<'a> {
    pub train_images: &'a [Image],
    pub eval_images: &'a [Image],
    pub task: &'a PretextTask,
    /// Jitter in this config is replaced by each schedule level.
    pub transform: TransformConfig,
    pub encoder: EncoderSpec,
    pub trainer: TrainerConfig,
}

impl PretextExperiment<'_> {
    pub fn init_model(&self) -> Result<ModelState> {
        ModelState::new(
            self.encoder.clone(),
            self.task.patches_per_sample(),
            self.task.label_space_size(),
            self.trainer.seed,
        )
    }

    fn sources(&self, level: JitterLevel) -> (PretextSource<'_>, PretextSource<'_>) {
        let transform = self.transform.with_jitter(level);
        let make = |images| PretextSource {
            images,
            task: self.task,
            transform,
            seed: self.trainer.seed,
        };
        (make(self.train_images), make(self.eval_images))
    }

    /// Trains at one jitter level for `epochs` epochs.
    pub fn run_fixed(
        &self,
        level: JitterLevel,
        epochs: usize,
        run_id: &str,
    ) -> Result<(ModelState, RunRecord)> {
        self.run_curriculum(&CurriculumSchedule::fixed(level), epochs, run_id)
    }

    /// Trains one model through `schedule` in order, `epochs_per_level`
    /// epochs per level, keeping parameters and optimiser moments across
    /// levels.
    pub fn run_curriculum(
        &self,
        schedule: &CurriculumSchedule,
        epochs_per_level: usize,
        run_id: &str,
    ) -> Result<(ModelState, RunRecord)> {
        if schedule.is_empty() {
            return Err(Error::Empty("curriculum schedule"));
        }
        if epochs_per_level == 0 {
            return Err(invalid("epochs_per_level must be >= 1"));
        }
        let mut state = self.init_model()?;
        let mut trainer = Trainer::new(&state, self.trainer)?;
        let condition = if schedule.len() == 1 {
            format!("fixed-{:.2}", schedule.levels[0].retention())
        } else {
            "curriculum".to_string()
        };
        let mut record = RunRecord::new(run_id, condition, self.trainer.seed);
        for (i, &level) in schedule.levels().iter().enumerate() {
            let (train, eval) = self.sources(level);
            let eval: Option<&dyn SampleSource> = if self.eval_images.is_empty() {
                None
            } else {
                Some(&eval)
            };
            let history = trainer
                .run(&mut state, &train, eval, epochs_per_level)
                .map_err(|e| Error::Level {
                    level: i,
                    source: Box::new(e),
                })?;
            log::info!(
                "{run_id}: level {i} (retention {:.2}) done, last test acc {:?}",
                level.retention(),
                history.last().and_then(|h| h.test_acc)
            );
            for stats in &history {
                record.push_epoch(level.retention(), stats)?;
            }
        }
        Ok((state, record))
    }

    /// Empirical difficulty table: a fresh model per level, scored by its
    /// final pretext test accuracy.
    pub fn measure_difficulty(
        &self,
        levels: &[JitterLevel],
        epochs: usize,
    ) -> Result<DifficultyFn> {
        let mut table = Vec::with_capacity(levels.len());
        for &level in levels {
            let (_, record) = self.run_fixed(level, epochs, "difficulty-probe")?;
            let acc = record
                .epochs
                .last()
                .map(|e| e.pretext_test_acc)
                .filter(|a| a.is_finite())
                .ok_or(Error::Empty("evaluation images"))?;
            table.push((level.retention(), acc));
        }
        Ok(DifficultyFn::Empirical(table))
    }
}
