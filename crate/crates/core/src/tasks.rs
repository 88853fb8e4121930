//! Pretext sample assembly: jigsaw tuples labelled by permutation index and
//! patch pairs labelled by the neighbour's position around the centre.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::permutations::PermutationSet;
use crate::rng::RngStream;
use crate::transforms::{
    extract_patches, jitter_patch, normalize_patch, random_greyscale, Image, JitterLevel, Patch,
};

/// Number of non-centre cells in a 3×3 grid.
pub const PATCH_PAIR_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Jigsaw,
    PatchPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextSample {
    pub patches: Vec<Patch>,
    pub label: usize,
    pub task_kind: TaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub jitter: JitterLevel,
    pub greyscale_p: f64,
    pub normalize: bool,
    /// Side length every patch is resampled to after jitter.
    pub input_size: usize,
}

impl TransformConfig {
    pub fn new(jitter: JitterLevel, input_size: usize) -> Self {
        Self {
            jitter,
            greyscale_p: 0.0,
            normalize: true,
            input_size,
        }
    }

    pub fn with_jitter(self, jitter: JitterLevel) -> Self {
        Self { jitter, ..self }
    }

    fn prepare(&self, patch: &Patch, rng: &mut RngStream) -> Result<Patch> {
        let p = jitter_patch(patch, self.jitter, self.input_size, rng)?;
        Ok(if self.normalize { normalize_patch(&p) } else { p })
    }
}

fn grid_side(n_patches: usize) -> Result<usize> {
    let side = (n_patches as f64).sqrt().round() as usize;
    if side * side != n_patches || side < 2 {
        return Err(invalid(format!(
            "{n_patches} patches do not form a square grid"
        )));
    }
    Ok(side)
}

/// greyscale → extract → jitter → normalise → shuffle; output slot `i` holds
/// original patch `perm.order()[i]` and the label is the permutation's index.
pub fn make_jigsaw_sample(
    image: &Image,
    perm_set: &PermutationSet,
    cfg: &TransformConfig,
    rng: &mut RngStream,
) -> Result<PretextSample> {
    let grid_n = grid_side(perm_set.n_patches())?;
    let image = random_greyscale(image, cfg.greyscale_p, rng)?;
    let patches = extract_patches(&image, grid_n)?
        .iter()
        .map(|p| cfg.prepare(p, rng))
        .collect::<Result<Vec<_>>>()?;
    let label = rng.gen_range(0..perm_set.len());
    let patches = perm_set.perms()[label].apply(&patches)?;
    Ok(PretextSample {
        patches,
        label,
        task_kind: TaskKind::Jigsaw,
    })
}

/// Grid cell of a patch-pair label: the eight non-centre cells in row-major order.
pub fn patch_pair_cell(label: usize) -> (usize, usize) {
    let idx = if label < 4 { label } else { label + 1 };
    (idx / 3, idx % 3)
}

/// Pair `(neighbour, centre)` from a 3×3 grid, labelled by the neighbour's
/// row-major index among the eight non-centre cells.
pub fn make_patch_pair_sample(
    image: &Image,
    cfg: &TransformConfig,
    rng: &mut RngStream,
) -> Result<PretextSample> {
    let image = random_greyscale(image, cfg.greyscale_p, rng)?;
    let grid = extract_patches(&image, 3)?;
    let label = rng.gen_range(0..PATCH_PAIR_CLASSES);
    let (row, col) = patch_pair_cell(label);
    let neighbour = cfg.prepare(&grid[row * 3 + col], rng)?;
    let centre = cfg.prepare(&grid[4], rng)?;
    Ok(PretextSample {
        patches: vec![neighbour, centre],
        label,
        task_kind: TaskKind::PatchPair,
    })
}

/// A pretext task bound to its label space.
#[derive(Debug, Clone, PartialEq)]
pub enum PretextTask {
    Jigsaw(PermutationSet),
    PatchPair,
}

impl PretextTask {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Jigsaw(_) => TaskKind::Jigsaw,
            Self::PatchPair => TaskKind::PatchPair,
        }
    }

    pub fn label_space_size(&self) -> usize {
        match self {
            Self::Jigsaw(set) => set.len(),
            Self::PatchPair => PATCH_PAIR_CLASSES,
        }
    }

    pub fn patches_per_sample(&self) -> usize {
        match self {
            Self::Jigsaw(set) => set.n_patches(),
            Self::PatchPair => 2,
        }
    }

    pub fn grid_n(&self) -> usize {
        match self {
            Self::Jigsaw(set) => grid_side(set.n_patches()).unwrap_or(0),
            Self::PatchPair => 3,
        }
    }

    pub fn make_sample(
        &self,
        image: &Image,
        cfg: &TransformConfig,
        rng: &mut RngStream,
    ) -> Result<PretextSample> {
        match self {
            Self::Jigsaw(set) => make_jigsaw_sample(image, set, cfg, rng),
            Self::PatchPair => make_patch_pair_sample(image, cfg, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutations::{generate_permutation_set, Permutation};
    use crate::transforms::reassemble;

    fn image(seed: u64, side: usize) -> Image {
        let mut rng = RngStream::from_seed(seed);
        let px = (0..side * side * 3).map(|_| rng.gen::<f32>()).collect();
        Image::new(side, side, 3, px).unwrap()
    }

    fn raw_cfg(size: usize) -> TransformConfig {
        TransformConfig {
            normalize: false,
            ..TransformConfig::new(JitterLevel::NONE, size)
        }
    }

    #[test]
    fn identity_set_keeps_order() {
        let set = PermutationSet::new(vec![Permutation::identity(4)]).unwrap();
        let img = image(1, 8);
        let s = make_jigsaw_sample(&img, &set, &raw_cfg(4), &mut RngStream::from_seed(0)).unwrap();
        assert_eq!(s.label, 0);
        let cells: Vec<_> = s.patches.iter().map(|p| p.source_cell()).collect();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(reassemble(&s.patches, 2).unwrap(), img);
    }

    #[test]
    fn inverse_permutation_restores_image() {
        let set = generate_permutation_set(4, 12, 3).unwrap();
        for i in 0..50 {
            let img = image(i, 12);
            let s = make_jigsaw_sample(&img, &set, &raw_cfg(6), &mut RngStream::new(9, 0, i))
                .unwrap();
            let restored = set.perms()[s.label].inverse().apply(&s.patches).unwrap();
            assert_eq!(reassemble(&restored, 2).unwrap(), img);
        }
    }

    #[test]
    fn patch_pair_label_convention() {
        assert_eq!(patch_pair_cell(0), (0, 0));
        assert_eq!(patch_pair_cell(3), (1, 0));
        assert_eq!(patch_pair_cell(4), (1, 2));
        assert_eq!(patch_pair_cell(7), (2, 2));
    }

    #[test]
    fn patch_pair_sample_shape() {
        let img = image(4, 9);
        for i in 0..30 {
            let s = make_patch_pair_sample(&img, &raw_cfg(3), &mut RngStream::new(0, 0, i)).unwrap();
            assert_eq!(s.patches.len(), 2);
            assert_eq!(s.patches[1].source_cell(), (1, 1));
            assert_eq!(s.patches[0].source_cell(), patch_pair_cell(s.label));
            assert_eq!(s.task_kind, TaskKind::PatchPair);
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let set = generate_permutation_set(4, 12, 0).unwrap();
        let cfg = TransformConfig {
            greyscale_p: 0.3,
            ..TransformConfig::new(JitterLevel::new(0.8).unwrap(), 8)
        };
        let img = image(2, 20);
        let a = make_jigsaw_sample(&img, &set, &cfg, &mut RngStream::new(1, 2, 3)).unwrap();
        let b = make_jigsaw_sample(&img, &set, &cfg, &mut RngStream::new(1, 2, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_square_patch_count_rejected() {
        let set = generate_permutation_set(3, 2, 0).unwrap();
        let img = image(0, 9);
        assert!(make_jigsaw_sample(&img, &set, &raw_cfg(3), &mut RngStream::from_seed(0)).is_err());
    }
}
