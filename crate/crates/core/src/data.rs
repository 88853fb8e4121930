//! Dataset ingestion: STL-10 binary archives, class-per-folder image
//! directories and a deterministic synthetic dataset for desk-scale runs.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::permutations::generate_permutation_set;
use crate::rng::RngStream;
use crate::transforms::Image;

pub const STL10_SIDE: usize = 96;
pub const STL10_CHANNELS: usize = 3;
/// Bytes per STL-10 image record: `3 · 96 · 96`.
pub const STL10_RECORD: usize = STL10_CHANNELS * STL10_SIDE * STL10_SIDE;
pub const STL10_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Unlabeled,
    LabeledTrain,
    LabeledTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    pub images: Vec<Image>,
    /// Empty for unlabeled splits.
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl DatasetSplit {
    pub fn new(
        kind: SplitKind,
        images: Vec<Image>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        match kind {
            SplitKind::Unlabeled if !labels.is_empty() => {
                return Err(Error::Validation("unlabeled split carries labels".into()))
            }
            SplitKind::LabeledTrain | SplitKind::LabeledTest if labels.len() != images.len() => {
                return Err(Error::LengthMismatch {
                    expected: images.len(),
                    got: labels.len(),
                })
            }
            _ => {}
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            kind,
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Parses STL-10 `*_X.bin` records (channel-major, column-major pixels) and,
/// for labeled splits, the matching `*_y.bin` of 1-based class bytes.
pub fn load_stl10_binary(
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    kind: SplitKind,
) -> Result<DatasetSplit> {
    let bytes = fs::read(images_path)?;
    let images = decode_stl10_images(&bytes)?;
    let labels = match (kind, labels_path) {
        (SplitKind::Unlabeled, _) => Vec::new(),
        (_, Some(p)) => decode_stl10_labels(&fs::read(p)?, images.len())?,
        (_, None) => return Err(invalid("labeled STL-10 split needs a labels file")),
    };
    DatasetSplit::new(kind, images, labels, STL10_CLASSES)
}

pub fn decode_stl10_images(bytes: &[u8]) -> Result<Vec<Image>> {
    if bytes.len() % STL10_RECORD != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a multiple of the {STL10_RECORD}-byte record",
            bytes.len()
        )));
    }
    let plane = STL10_SIDE * STL10_SIDE;
    bytes
        .chunks_exact(STL10_RECORD)
        .map(|rec| {
            let mut pixels = vec![0.0f32; STL10_RECORD];
            for c in 0..STL10_CHANNELS {
                for x in 0..STL10_SIDE {
                    for y in 0..STL10_SIDE {
                        let v = rec[c * plane + x * STL10_SIDE + y];
                        pixels[(y * STL10_SIDE + x) * STL10_CHANNELS + c] = v as f32 / 255.0;
                    }
                }
            }
            Image::new(STL10_SIDE, STL10_SIDE, STL10_CHANNELS, pixels)
        })
        .collect()
}

pub fn decode_stl10_labels(bytes: &[u8], expected: usize) -> Result<Vec<usize>> {
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{} labels for {expected} images",
            bytes.len()
        )));
    }
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (1..=STL10_CLASSES as u8).contains(&b) {
                Ok(b as usize - 1)
            } else {
                Err(Error::Format(format!("label byte {b} at record {i} outside [1, 10]")))
            }
        })
        .collect()
}

/// Inverse of [`decode_stl10_images`] for 96×96 RGB images.
pub fn encode_stl10_images(images: &[Image]) -> Result<Vec<u8>> {
    let plane = STL10_SIDE * STL10_SIDE;
    let mut out = vec![0u8; images.len() * STL10_RECORD];
    for (img, rec) in images.iter().zip(out.chunks_exact_mut(STL10_RECORD)) {
        if (img.height(), img.width(), img.channels()) != (STL10_SIDE, STL10_SIDE, STL10_CHANNELS) {
            return Err(Error::Shape("STL-10 images are 96x96x3".into()));
        }
        for c in 0..STL10_CHANNELS {
            for x in 0..STL10_SIDE {
                for y in 0..STL10_SIDE {
                    rec[c * plane + x * STL10_SIDE + y] = (img.at(y, x, c) * 255.0).round() as u8;
                }
            }
        }
    }
    Ok(out)
}

/// Result of [`load_image_folder`]; `skipped` counts unreadable files.
#[derive(Debug, Clone)]
pub struct FolderDataset {
    pub split: DatasetSplit,
    pub class_names: Vec<String>,
    pub skipped: usize,
}

/// Loads `root/<class>/<image>` with labels assigned by sorted class name and
/// every image resized to `size × size` RGB.
pub fn load_image_folder(root: impl AsRef<Path>, size: usize) -> Result<FolderDataset> {
    let root = root.as_ref();
    let mut classes: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    classes.sort_by_key(|e| e.file_name());
    if classes.is_empty() {
        return Err(invalid(format!("{} has no class subfolders", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    let mut skipped = 0;
    for (label, class) in classes.iter().enumerate() {
        class_names.push(class.file_name().to_string_lossy().into_owned());
        let mut files: Vec<_> = fs::read_dir(class.path())?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            match image::open(&file) {
                Ok(img) => {
                    let rgb = image::imageops::resize(
                        &img.to_rgb8(),
                        size as u32,
                        size as u32,
                        image::imageops::FilterType::Triangle,
                    );
                    let pixels = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                    images.push(Image::new(size, size, 3, pixels)?);
                    labels.push(label);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                }
            }
        }
    }
    if images.is_empty() {
        return Err(invalid(format!("no readable images under {}", root.display())));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} unreadable files under {}", root.display());
    }
    let split = DatasetSplit::new(SplitKind::LabeledTrain, images, labels, classes.len())?;
    Ok(FolderDataset {
        split,
        class_names,
        skipped,
    })
}

/// Parameters of the synthetic quadrant dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_unlabeled: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub class_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// A small unlabeled pool plus modest labeled splits: 2,000 / 500 / 800.
    fn default() -> Self {
        Self {
            n_unlabeled: 2000,
            n_train: 500,
            n_test: 800,
            image_size: 64,
            class_count: 10,
            seed: 0,
        }
    }
}

/// Quadrant base colours; a class assigns each quadrant one of these.
const PALETTE: [[f32; 3]; 4] = [
    [0.80, 0.22, 0.20],
    [0.22, 0.70, 0.28],
    [0.20, 0.30, 0.82],
    [0.85, 0.80, 0.22],
];

/// Seed of the permutation code mapping classes to colour arrangements.
const ARRANGEMENT_SEED: u64 = 0x5EED_C01A;

/// Colour index of each quadrant (row-major) for every class.
pub fn class_arrangements(class_count: usize) -> Result<Vec<[usize; 4]>> {
    let set = generate_permutation_set(4, class_count, ARRANGEMENT_SEED)?;
    Ok(set
        .perms()
        .iter()
        .map(|p| {
            let o = p.order();
            [o[0], o[1], o[2], o[3]]
        })
        .collect())
}

/// Renders one synthetic image of `class`.
///
/// Each quadrant is tinted with the class arrangement's colour over a
/// sinusoidal texture that runs continuously across quadrant borders. A disc
/// centred near the image centre leaves a quarter-disc at each quadrant's
/// inner corner, and a thin line marks the quadrant seams.
pub fn render_synthetic(
    size: usize,
    arrangement: &[usize; 4],
    rng: &mut RngStream,
) -> Result<Image> {
    let half = size as f32 / 2.0;
    let s = size as f32;
    let brightness: f32 = rng.gen_range(0.85..1.1);
    let freq: f32 = rng.gen_range(3.0..7.0) * std::f32::consts::TAU / s;
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (fx, fy) = (freq * angle.cos(), freq * angle.sin());
    let tex_amp: f32 = rng.gen_range(0.06..0.14);
    let radius: f32 = rng.gen_range(0.22..0.36) * s;
    let (cy, cx) = (
        half + rng.gen_range(-0.04..0.04) * s,
        half + rng.gen_range(-0.04..0.04) * s,
    );
    let disc_shift: f32 = if rng.gen_bool(0.5) { 0.22 } else { -0.22 };
    let seam = (size / 2).saturating_sub(1)..=size / 2;

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
            let q = (y >= size / 2) as usize * 2 + (x >= size / 2) as usize;
            let base = PALETTE[arrangement[q]];
            let tex = tex_amp * (fx * xf + fy * yf + phase).sin();
            let noise: f32 = rng.gen_range(-0.05..0.05);
            let in_disc = (yf - cy).powi(2) + (xf - cx).powi(2) < radius * radius;
            let on_seam = seam.contains(&y) || seam.contains(&x);
            for c in base {
                let mut v = c * brightness + tex + noise;
                if in_disc {
                    v += disc_shift;
                }
                if on_seam {
                    v = 0.95;
                }
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(size, size, 3, pixels)
}

/// Unlabeled, labeled-train and labeled-test splits. Classes are balanced
/// (cyclic assignment, then shuffled within each split); each split draws
/// from its own RNG substream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    let total = spec.n_unlabeled + spec.n_train + spec.n_test;
    if total < spec.class_count {
        return Err(invalid(format!(
            "{total} images cannot cover {} classes",
            spec.class_count
        )));
    }
    if spec.image_size < 6 {
        return Err(invalid("synthetic images must be at least 6 pixels"));
    }
    let arrangements = class_arrangements(spec.class_count)?;
    let make = |split_id: u64, n: usize| -> Result<(Vec<Image>, Vec<usize>)> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.class_count).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut RngStream::new(spec.seed, split_id, u64::MAX));
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut rng = RngStream::new(spec.seed, split_id, i as u64);
                render_synthetic(spec.image_size, &arrangements[label], &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((images, labels))
    };
    let (unlabeled, _) = make(0, spec.n_unlabeled)?;
    let (train, train_labels) = make(1, spec.n_train)?;
    let (test, test_labels) = make(2, spec.n_test)?;
    Ok((
        DatasetSplit::new(SplitKind::Unlabeled, unlabeled, Vec::new(), spec.class_count)?,
        DatasetSplit::new(SplitKind::LabeledTrain, train, train_labels, spec.class_count)?,
        DatasetSplit::new(SplitKind::LabeledTest, test, test_labels, spec.class_count)?,
    ))
}
