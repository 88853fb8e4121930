//! Mini-batch cross-entropy training with Adam, accuracy evaluation and the
//! persisted per-epoch run record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{argmax, Batch, Gradients, ModelState, Scalar};
use crate::rng::{RngStream, EVAL_EPOCH, ORDER_INDEX};
use crate::tasks::{PretextTask, TransformConfig};
use crate::transforms::{normalize_patch, Image, Patch};

/// Evaluation batch size; does not affect results.
const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Unset for a frozen-encoder linear probe.
    pub train_encoder: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            train_encoder: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A finite, indexable stream of labelled inputs. `sample(epoch, i)` must be
/// a pure function of its arguments.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upper bound on labels this source emits.
    fn num_classes(&self) -> usize;

    fn sample(&self, epoch: u64, index: usize) -> Result<(Vec<Patch>, usize)>;
}

/// Pretext samples generated on the fly from unlabeled images. Sample `i` of
/// epoch `e` draws from the stream `(seed, e, i)`.
pub struct PretextSource<'a> {
    pub images: &'a [Image],
    pub task: &'a PretextTask,
    pub transform: TransformConfig,
    pub seed: u64,
}

impl SampleSource for PretextSource<'_> {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn num_classes(&self) -> usize {
        self.task.label_space_size()
    }

    fn sample(&self, epoch: u64, index: usize) -> Result<(Vec<Patch>, usize)> {
        let mut rng = RngStream::new(self.seed, epoch, index as u64);
        let s = self
            .task
            .make_sample(&self.images[index], &self.transform, &mut rng)?;
        Ok((s.patches, s.label))
    }
}

/// Labelled whole images, resized to the encoder input (single-patch path).
pub struct LabeledSource<'a> {
    images: &'a [Image],
    labels: &'a [usize],
    classes: usize,
    input_size: usize,
    normalize: bool,
}

impl<'a> LabeledSource<'a> {
    pub fn new(
        images: &'a [Image],
        labels: &'a [usize],
        classes: usize,
        input_size: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: images.len(),
                got: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
            input_size,
            normalize: false,
        })
    }

    /// Normalizes each resized image like a pretext patch.
    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }
}

impl SampleSource for LabeledSource<'_> {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn sample(&self, _epoch: u64, index: usize) -> Result<(Vec<Patch>, usize)> {
        let mut patch = self.images[index].resized(self.input_size);
        if self.normalize {
            patch = normalize_patch(&patch);
        }
        Ok((vec![patch], self.labels[index]))
    }
}

fn make_batch<F: Scalar>(
    state: &ModelState<F>,
    samples: &[(Vec<Patch>, usize)],
) -> Result<(Batch<F>, Vec<usize>)> {
    let batch = Batch::from_patches(samples.iter().map(|(p, _)| p.as_slice()), state.encoder_spec())?;
    Ok((batch, samples.iter().map(|(_, l)| *l).collect()))
}

/// Fraction of argmax-correct predictions over `source` at the evaluation
/// stream. Does not touch `state`.
pub fn evaluate_accuracy<F: Scalar>(state: &ModelState<F>, source: &dyn SampleSource) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let samples = chunk
            .iter()
            .map(|&i| source.sample(EVAL_EPOCH, i))
            .collect::<Result<Vec<_>>>()?;
        let (batch, labels) = make_batch(state, &samples)?;
        let logits = state.forward(&batch)?;
        correct += logits
            .chunks_exact(state.out_classes())
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / source.len() as f64)
}

/// Adam moment estimates for every parameter of a model.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Gradients<F>,
    v: Gradients<F>,
    step: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(state: &ModelState<F>) -> Self {
        let zeros = || Gradients {
            encoder: vec![F::zero(); state.encoder_params().len()],
            head: vec![F::zero(); state.head_params().len()],
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn update(
        &mut self,
        state: &mut ModelState<F>,
        grads: &Gradients<F>,
        cfg: &TrainerConfig,
    ) {
        self.step += 1;
        let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
        let c1 = F::one() - b1.powi(self.step);
        let c2 = F::one() - b2.powi(self.step);
        let lr = F::of(cfg.learning_rate);
        let eps = F::of(cfg.eps);
        let apply = |p: &mut [F], g: &[F], m: &mut [F], v: &mut [F]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        };
        if cfg.train_encoder {
            apply(
                state.encoder_params_mut(),
                &grads.encoder,
                &mut self.m.encoder,
                &mut self.v.encoder,
            );
        }
        apply(
            state.head_params_mut(),
            &grads.head,
            &mut self.m.head,
            &mut self.v.head,
        );
    }
}

/// Per-epoch statistics of a training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when no evaluation source was given.
    pub test_acc: Option<f64>,
    pub wall_time_s: f64,
}

/// Optimiser state plus configuration; reused across curriculum levels so
/// the model and its moments carry over.
pub struct Trainer<F = f32> {
    cfg: TrainerConfig,
    adam: Adam<F>,
    epochs_done: u64,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(state: &ModelState<F>, cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            adam: Adam::new(state),
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    /// Global index of the next epoch.
    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    /// Runs `epochs` epochs over `train`, evaluating on `eval` after each.
    pub fn run(
        &mut self,
        state: &mut ModelState<F>,
        train: &dyn SampleSource,
        eval: Option<&dyn SampleSource>,
        epochs: usize,
    ) -> Result<Vec<EpochStats>> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        for src in std::iter::once(train).chain(eval) {
            if src.num_classes() > state.out_classes() {
                return Err(Error::LabelOutOfRange {
                    label: src.num_classes() - 1,
                    classes: state.out_classes(),
                });
            }
        }
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let started = Instant::now();
            let epoch = self.epochs_done;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut RngStream::new(self.cfg.seed, epoch, ORDER_INDEX));

            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for chunk in order.chunks(self.cfg.batch_size) {
                let samples = chunk
                    .iter()
                    .map(|&i| train.sample(epoch, i))
                    .collect::<Result<Vec<_>>>()?;
                let (batch, labels) = make_batch(state, &samples)?;
                let out = state.loss_and_grad(&batch, &labels, self.cfg.train_encoder)?;
                loss_sum += out.loss.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
                correct += out
                    .predictions
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| p == y)
                    .count();
                self.adam.update(state, &out.grads, &self.cfg);
            }
            let test_acc = eval.map(|e| evaluate_accuracy(state, e)).transpose()?;
            self.epochs_done += 1;
            history.push(EpochStats {
                epoch,
                train_loss: loss_sum / train.len() as f64,
                train_acc: correct as f64 / train.len() as f64,
                test_acc,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        Ok(history)
    }
}

/// Trains `state` for `cfg.epochs` epochs from a fresh optimiser.
pub fn train<F: Scalar>(
    mut state: ModelState<F>,
    samples: &dyn SampleSource,
    cfg: TrainerConfig,
    eval_split: Option<&dyn SampleSource>,
) -> Result<(ModelState<F>, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(&state, cfg)?;
    let history = trainer.run(&mut state, samples, eval_split, cfg.epochs)?;
    Ok((state, history))
}

/// One persisted pretext epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub run_id: String,
    pub seed: u64,
    pub level_retention: f64,
    pub epoch: u64,
    pub pretext_train_acc: f64,
    pub pretext_test_acc: f64,
    pub wall_time_s: f64,
}

/// Final accuracy of one downstream fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamResult {
    pub run_id: String,
    pub condition: String,
    pub seed: u64,
    pub downstream_seed: u64,
    pub downstream_test_acc: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricRow {
    Epoch(EpochMetrics),
    Downstream(DownstreamResult),
}

/// Measured quantities of one run: pretext epochs and downstream accuracies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub condition: String,
    pub epochs: Vec<EpochMetrics>,
    pub downstream: Vec<DownstreamResult>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, condition: impl Into<String>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            condition: condition.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn push_epoch(&mut self, level_retention: f64, stats: &EpochStats) -> Result<()> {
        if let Some(last) = self.epochs.last() {
            if stats.epoch <= last.epoch {
                return Err(Error::Validation(format!(
                    "epoch {} does not follow {}",
                    stats.epoch, last.epoch
                )));
            }
        }
        self.epochs.push(EpochMetrics {
            run_id: self.run_id.clone(),
            seed: self.seed,
            level_retention,
            epoch: stats.epoch,
            pretext_train_acc: stats.train_acc,
            pretext_test_acc: stats.test_acc.unwrap_or(f64::NAN),
            wall_time_s: stats.wall_time_s,
        });
        Ok(())
    }

    pub fn push_downstream(&mut self, downstream_seed: u64, acc: f64, wall_time_s: f64) {
        self.downstream.push(DownstreamResult {
            run_id: self.run_id.clone(),
            condition: self.condition.clone(),
            seed: self.seed,
            downstream_seed,
            downstream_test_acc: acc,
            wall_time_s,
        });
    }

    /// Metric rows with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.wall_time_s = 0.0);
        r.downstream.iter_mut().for_each(|d| d.wall_time_s = 0.0);
        r
    }

    pub fn rows(&self) -> impl Iterator<Item = MetricRow> + '_ {
        self.epochs
            .iter()
            .cloned()
            .map(MetricRow::Epoch)
            .chain(self.downstream.iter().cloned().map(MetricRow::Downstream))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for row in self.rows() {
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`RunRecord::write_jsonl`]. The condition comes
    /// from downstream rows when present and defaults to the run id.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut record = RunRecord::default();
        let mut ids = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: MetricRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let (run_id, seed) = match &row {
                MetricRow::Epoch(e) => (e.run_id.clone(), e.seed),
                MetricRow::Downstream(d) => (d.run_id.clone(), d.seed),
            };
            match &ids {
                None => ids = Some((run_id.clone(), seed)),
                Some(prev) if *prev != (run_id.clone(), seed) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: format!("row belongs to run {run_id}, expected {}", prev.0),
                    })
                }
                Some(_) => {}
            }
            match row {
                MetricRow::Epoch(e) => record.epochs.push(e),
                MetricRow::Downstream(d) => {
                    record.condition = d.condition.clone();
                    record.downstream.push(d);
                }
            }
        }
        let (run_id, seed) = ids.ok_or(Error::Empty("metrics file"))?;
        if record.condition.is_empty() {
            record.condition = run_id.clone();
        }
        record.run_id = run_id;
        record.seed = seed;
        Ok(record)
    }
}

/// Outcome of fine-tuning a classifier on a labelled split.
#[derive(Debug, Clone)]
pub struct DownstreamOutcome {
    pub state: ModelState,
    pub history: Vec<EpochStats>,
    pub test_acc: f64,
}

/// Trains a downstream classifier on whole images and reports its final test
/// accuracy. With `pretrained` the encoder is transferred under a fresh head;
/// without it the encoder starts from random weights seeded like the head.
#[allow(clippy::too_many_arguments)]
pub fn train_downstream(
    pretrained: Option<&ModelState>,
    encoder: &crate::model::EncoderSpec,
    train_split: (&[Image], &[usize]),
    test_split: (&[Image], &[usize]),
    n_classes: usize,
    normalize: bool,
    cfg: TrainerConfig,
) -> Result<DownstreamOutcome> {
    let state = match pretrained {
        Some(p) => {
            if p.encoder_spec() != encoder {
                return Err(Error::FingerprintMismatch {
                    expected: encoder.fingerprint(),
                    found: p.encoder_spec().fingerprint(),
                });
            }
            p.transfer_encoder(n_classes, cfg.seed)?
        }
        None => ModelState::new(encoder.clone(), 1, n_classes, cfg.seed)?,
    };
    let train_src = LabeledSource::new(train_split.0, train_split.1, n_classes, encoder.input_size)?
        .normalized(normalize);
    let test_src = LabeledSource::new(test_split.0, test_split.1, n_classes, encoder.input_size)?
        .normalized(normalize);
    let (state, history) = train(state, &train_src, cfg, None)?;
    let test_acc = evaluate_accuracy(&state, &test_src)?;
    Ok(DownstreamOutcome {
        state,
        history,
        test_acc,
    })
}
