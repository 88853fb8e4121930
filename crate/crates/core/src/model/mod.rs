//! Shared-weight patch encoder, fully connected task heads and encoder
//! transfer.
//!
//! Every patch of a sample goes through the same encoder parameters; the
//! per-patch embeddings are concatenated in tuple order and fed to a single
//! dense head. The downstream classifier is the same encoder with a fresh
//! head consuming one input (the whole image resized to the encoder input).

mod checkpoint;
pub mod layers;
mod scalar;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::transforms::Patch;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{argmax, softmax_cross_entropy, Act, ConvGeom};
pub use scalar::{gemm, Mat, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvStage {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
        }
    }
}

/// Conv stages with ReLU, then global average pooling. The embedding
/// dimension is the last stage's filter count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_size: usize,
    pub channels: usize,
    pub stages: Vec<ConvStage>,
}

impl EncoderSpec {
    /// Four stride-2 3×3 stages of 32, 64, 128 and 128 filters (`D = 128`).
    pub fn standard(input_size: usize, channels: usize) -> Self {
        Self {
            input_size,
            channels,
            stages: vec![
                ConvStage::new(32, 3, 2),
                ConvStage::new(64, 3, 2),
                ConvStage::new(128, 3, 2),
                ConvStage::new(128, 3, 2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.channels == 0 {
            return Err(invalid("encoder input size and channels must be >= 1"));
        }
        if self.stages.is_empty() {
            return Err(invalid("encoder needs at least one conv stage"));
        }
        for s in &self.stages {
            if s.filters == 0 || s.kernel == 0 || s.kernel % 2 == 0 || s.stride == 0 {
                return Err(invalid(format!("invalid conv stage {s:?}")));
            }
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.filters)
    }

    pub fn geoms(&self) -> Vec<ConvGeom> {
        let mut in_channels = self.channels;
        self.stages
            .iter()
            .map(|s| {
                let g = ConvGeom {
                    in_channels,
                    out_channels: s.filters,
                    kernel: s.kernel,
                    stride: s.stride,
                };
                in_channels = s.filters;
                g
            })
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.geoms().iter().map(ConvGeom::param_len).sum()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// `k · D` for a head consuming `k` patch embeddings.
    pub in_dim: usize,
    pub out_classes: usize,
}

impl HeadSpec {
    pub fn param_len(&self) -> usize {
        self.in_dim * self.out_classes + self.out_classes
    }
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("spec serialises");
    hex::encode(Sha256::digest(json))
}

/// Encoder and head parameters stored as flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F = f32> {
    encoder_spec: EncoderSpec,
    head_spec: HeadSpec,
    encoder: Vec<F>,
    head: Vec<F>,
}

/// Gradients laid out like [`ModelState`]'s parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub encoder: Vec<F>,
    pub head: Vec<F>,
}

/// `batch` samples of `slots` patches each, packed for the encoder in
/// `C × (slot·batch + sample) × H × W` order.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    slots: usize,
    batch: usize,
    input: Act<F>,
}

impl<F: Scalar> Batch<F> {
    pub fn from_patches<'a, I>(samples: I, spec: &EncoderSpec) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [Patch]>,
    {
        let samples: Vec<&[Patch]> = samples.into_iter().collect();
        let batch = samples.len();
        let slots = samples.first().map_or(0, |s| s.len());
        if batch == 0 || slots == 0 {
            return Err(Error::Empty("batch"));
        }
        let (size, c) = (spec.input_size, spec.channels);
        let hw = size * size;
        let mut input = Act::zeros(c, slots * batch, size, size);
        let mut chw = vec![0.0f32; c * hw];
        for (b, sample) in samples.iter().enumerate() {
            if sample.len() != slots {
                return Err(Error::Shape(format!(
                    "sample {b} has {} patches, expected {slots}",
                    sample.len()
                )));
            }
            for (j, patch) in sample.iter().enumerate() {
                if patch.dims() != (size, size, c) {
                    return Err(Error::Shape(format!(
                        "patch is {:?}, encoder expects {size}x{size}x{c}",
                        patch.dims()
                    )));
                }
                patch.write_chw(&mut chw);
                let n = j * batch + b;
                for ch in 0..c {
                    let dst = (ch * slots * batch + n) * hw;
                    for (d, &v) in input.data[dst..dst + hw].iter_mut().zip(&chw[ch * hw..]) {
                        *d = F::of(v as f64);
                    }
                }
            }
        }
        Ok(Self {
            slots,
            batch,
            input,
        })
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn slots(&self) -> usize {
        self.slots
    }
}

/// Result of a training forward/backward pass.
pub struct StepOutput<F> {
    pub loss: F,
    pub predictions: Vec<usize>,
    pub grads: Gradients<F>,
}

impl<F: Scalar> ModelState<F> {
    /// Fresh encoder and head; `patches` is how many embeddings the head
    /// concatenates.
    pub fn new(
        encoder_spec: EncoderSpec,
        patches: usize,
        out_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        encoder_spec.validate()?;
        if patches == 0 || out_classes < 2 {
            return Err(invalid("head needs >= 1 input patch and >= 2 classes"));
        }
        let head_spec = HeadSpec {
            in_dim: patches * encoder_spec.embedding_dim(),
            out_classes,
        };
        let mut rng = RngStream::new(seed, crate::rng::INIT_EPOCH, 0);
        let mut encoder = Vec::with_capacity(encoder_spec.param_len());
        for g in encoder_spec.geoms() {
            // He-uniform weights, zero bias
            let bound = (6.0 / g.patch_len() as f64).sqrt();
            encoder.extend((0..g.weight_len()).map(|_| F::of(rng.gen_range(-bound..bound))));
            encoder.extend((0..g.out_channels).map(|_| F::zero()));
        }
        let head = init_head(&head_spec, seed);
        Ok(Self {
            encoder_spec,
            head_spec,
            encoder,
            head,
        })
    }

    pub fn from_parts(
        encoder_spec: EncoderSpec,
        head_spec: HeadSpec,
        encoder: Vec<F>,
        head: Vec<F>,
    ) -> Result<Self> {
        encoder_spec.validate()?;
        let d = encoder_spec.embedding_dim();
        if head_spec.in_dim == 0 || head_spec.in_dim % d != 0 {
            return Err(Error::Shape(format!(
                "head input {} is not a multiple of embedding dim {d}",
                head_spec.in_dim
            )));
        }
        if encoder.len() != encoder_spec.param_len() || head.len() != head_spec.param_len() {
            return Err(Error::Shape("parameter count does not match specs".into()));
        }
        Ok(Self {
            encoder_spec,
            head_spec,
            encoder,
            head,
        })
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        &self.encoder_spec
    }

    pub fn head_spec(&self) -> HeadSpec {
        self.head_spec
    }

    pub fn encoder_params(&self) -> &[F] {
        &self.encoder
    }

    pub fn head_params(&self) -> &[F] {
        &self.head
    }

    pub fn encoder_params_mut(&mut self) -> &mut [F] {
        &mut self.encoder
    }

    pub fn head_params_mut(&mut self) -> &mut [F] {
        &mut self.head
    }

    /// Number of patch embeddings the head consumes.
    pub fn slots(&self) -> usize {
        self.head_spec.in_dim / self.encoder_spec.embedding_dim()
    }

    pub fn out_classes(&self) -> usize {
        self.head_spec.out_classes
    }

    /// Hash of both specs; checkpoints with a different value are rejected.
    pub fn fingerprint(&self) -> String {
        fingerprint(&(&self.encoder_spec, &self.head_spec))
    }

    fn check_batch(&self, batch: &Batch<F>) -> Result<()> {
        if batch.slots != self.slots() {
            return Err(Error::Shape(format!(
                "head consumes {} patches, batch has {}",
                self.slots(),
                batch.slots
            )));
        }
        Ok(())
    }

    fn encode(&self, input: &Act<F>, tapes: Option<&mut Vec<layers::ConvTape<F>>>) -> Act<F> {
        let mut offset = 0;
        let mut tapes = tapes;
        let mut x: Option<Act<F>> = None;
        for g in self.encoder_spec.geoms() {
            let params = &self.encoder[offset..offset + g.param_len()];
            offset += g.param_len();
            let (y, tape) =
                layers::conv_relu_forward(x.as_ref().unwrap_or(input), &g, params, tapes.is_some());
            if let (Some(t), Some(tape)) = (tapes.as_deref_mut(), tape) {
                t.push(tape);
            }
            x = Some(y);
        }
        x.expect("encoder has stages")
    }

    /// Concatenates per-slot embeddings: row `b` is `[e(b,0) | e(b,1) | …]`.
    fn concat(&self, pooled: &[F], slots: usize, batch: usize) -> Vec<F> {
        let d = self.encoder_spec.embedding_dim();
        let mut feat = vec![F::zero(); batch * slots * d];
        for j in 0..slots {
            for b in 0..batch {
                let src = &pooled[(j * batch + b) * d..(j * batch + b + 1) * d];
                feat[(b * slots + j) * d..(b * slots + j + 1) * d].copy_from_slice(src);
            }
        }
        feat
    }

    /// Per-patch embeddings (`N × D`, slot-major) without the head.
    pub fn embed(&self, batch: &Batch<F>) -> Vec<F> {
        let out = self.encode(&batch.input, None);
        layers::global_avg_pool(&out)
    }

    /// Concatenated embeddings, one row of `k · D` per sample.
    pub fn features(&self, batch: &Batch<F>) -> Result<Vec<F>> {
        self.check_batch(batch)?;
        let pooled = self.embed(batch);
        Ok(self.concat(&pooled, batch.slots, batch.batch))
    }

    /// Logits, one row of `out_classes` per sample. Pure.
    pub fn forward(&self, batch: &Batch<F>) -> Result<Vec<F>> {
        let feat = self.features(batch)?;
        Ok(layers::linear_forward(
            &feat,
            batch.batch,
            self.head_spec.in_dim,
            self.head_spec.out_classes,
            &self.head,
        ))
    }

    /// Logits for one tuple of patches.
    pub fn forward_pretext(&self, patches: &[Patch]) -> Result<Vec<F>> {
        let batch = Batch::from_patches([patches], &self.encoder_spec)?;
        self.forward(&batch)
    }

    /// Mean cross-entropy and its gradients. With `train_encoder` unset the
    /// encoder gradient is left at zero and the backward pass stops at the head.
    pub fn loss_and_grad(
        &self,
        batch: &Batch<F>,
        labels: &[usize],
        train_encoder: bool,
    ) -> Result<StepOutput<F>> {
        self.check_batch(batch)?;
        if labels.len() != batch.batch {
            return Err(Error::LengthMismatch {
                expected: batch.batch,
                got: labels.len(),
            });
        }
        let classes = self.head_spec.out_classes;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut tapes = Vec::new();
        let out = self.encode(&batch.input, Some(&mut tapes));
        let pooled = layers::global_avg_pool(&out);
        let feat = self.concat(&pooled, batch.slots, batch.batch);
        let in_dim = self.head_spec.in_dim;
        let logits = layers::linear_forward(&feat, batch.batch, in_dim, classes, &self.head);
        let (loss, dlogits) = layers::softmax_cross_entropy(&logits, labels, classes);
        let predictions = logits.chunks_exact(classes).map(argmax).collect();

        let mut grads = Gradients {
            encoder: vec![F::zero(); self.encoder.len()],
            head: vec![F::zero(); self.head.len()],
        };
        let dfeat = layers::linear_backward(
            &feat,
            &dlogits,
            batch.batch,
            in_dim,
            classes,
            &self.head,
            &mut grads.head,
        );
        if train_encoder {
            // undo the concatenation back to slot-major rows
            let d = self.encoder_spec.embedding_dim();
            let mut dpooled = vec![F::zero(); pooled.len()];
            for j in 0..batch.slots {
                for b in 0..batch.batch {
                    dpooled[(j * batch.batch + b) * d..(j * batch.batch + b + 1) * d]
                        .copy_from_slice(
                            &dfeat[(b * batch.slots + j) * d..(b * batch.slots + j + 1) * d],
                        );
                }
            }
            let mut dx = layers::global_avg_pool_backward(
                &dpooled,
                out.channels,
                out.batch,
                out.height,
                out.width,
            );
            let geoms = self.encoder_spec.geoms();
            let mut offsets: Vec<usize> = geoms
                .iter()
                .scan(0, |acc, g| {
                    let start = *acc;
                    *acc += g.param_len();
                    Some(start)
                })
                .collect();
            for (i, (g, tape)) in geoms.iter().zip(&tapes).enumerate().rev() {
                let start = offsets.pop().expect("offset per stage");
                let end = start + g.param_len();
                let need_input = i > 0;
                let next = layers::conv_relu_backward(
                    tape,
                    g,
                    &self.encoder[start..end],
                    &dx,
                    &mut grads.encoder[start..end],
                    need_input,
                );
                if let Some(next) = next {
                    dx = next;
                }
            }
        }
        Ok(StepOutput {
            loss,
            predictions,
            grads,
        })
    }

    /// Keeps the encoder and attaches a freshly seeded head with `n_classes`
    /// outputs consuming a single embedding.
    pub fn transfer_encoder(&self, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(invalid(format!("n_classes must be >= 2, got {n_classes}")));
        }
        let head_spec = HeadSpec {
            in_dim: self.encoder_spec.embedding_dim(),
            out_classes: n_classes,
        };
        Ok(Self {
            encoder_spec: self.encoder_spec.clone(),
            head_spec,
            encoder: self.encoder.clone(),
            head: init_head(&head_spec, seed),
        })
    }
}

fn init_head<F: Scalar>(spec: &HeadSpec, seed: u64) -> Vec<F> {
    let mut rng = RngStream::new(seed, crate::rng::INIT_EPOCH, 1);
    let bound = 1.0 / (spec.in_dim as f64).sqrt();
    (0..spec.param_len())
        .map(|_| F::of(rng.gen_range(-bound..bound)))
        .collect()
}

/// Free-function form of [`ModelState::forward_pretext`].
pub fn forward_pretext<F: Scalar>(state: &ModelState<F>, patches: &[Patch]) -> Result<Vec<F>> {
    state.forward_pretext(patches)
}

/// Free-function form of [`ModelState::transfer_encoder`].
pub fn transfer_encoder<F: Scalar>(
    pretext: &ModelState<F>,
    n_classes: usize,
    seed: u64,
) -> Result<ModelState<F>> {
    pretext.transfer_encoder(n_classes, seed)
}
