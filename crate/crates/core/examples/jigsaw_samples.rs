//! Builds jigsaw and patch-pair samples from one synthetic image and writes
//! them as PNG strips so the effect of jitter can be inspected.
//!
//!     cargo run --example jigsaw_samples -- [out_dir]

use std::path::PathBuf;

use curriculum_ssl::data::{generate_synthetic, SyntheticSpec};
use curriculum_ssl::permutations::generate_permutation_set;
use curriculum_ssl::rng::RngStream;
use curriculum_ssl::tasks::{PretextTask, TransformConfig};
use curriculum_ssl::transforms::{JitterLevel, Patch};

/// Lays patches side by side, mapping values from [lo, hi] to bytes.
fn strip(patches: &[Patch], lo: f32, hi: f32) -> image::RgbImage {
    let (h, w, _) = patches[0].dims();
    let gap = 2;
    let mut img = image::RgbImage::from_pixel(((w + gap) * patches.len()) as u32, h as u32, image::Rgb([255; 3]));
    for (k, p) in patches.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let px = &p.pixels()[(y * w + x) * 3..][..3];
                let byte = |v: f32| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0) as u8;
                img.put_pixel(((w + gap) * k + x) as u32, y as u32, image::Rgb([byte(px[0]), byte(px[1]), byte(px[2])]));
            }
        }
    }
    img
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "jigsaw-samples".into()));
    std::fs::create_dir_all(&out)?;
    let (unlabeled, _, _) = generate_synthetic(&SyntheticSpec { n_unlabeled: 10, n_train: 0, n_test: 0, ..Default::default() })?;
    let image = &unlabeled.images[0];

    let jigsaw = PretextTask::Jigsaw(generate_permutation_set(4, 12, 0)?);
    for retention in [1.0, 0.9, 0.8] {
        let cfg = TransformConfig {
            normalize: false,
            ..TransformConfig::new(JitterLevel::new(retention)?, 32)
        };
        let sample = jigsaw.make_sample(image, &cfg, &mut RngStream::new(7, 0, 0))?;
        let cells: Vec<_> = sample.patches.iter().map(|p| p.source_cell()).collect();
        println!("retention {retention:.2}: label {:>2}, slots hold cells {cells:?}", sample.label);
        strip(&sample.patches, 0.0, 1.0).save(out.join(format!("jigsaw-r{:03}.png", (retention * 100.0) as u32)))?;
    }

    // normalised patches as the network sees them, scaled from ±2σ
    let cfg = TransformConfig::new(JitterLevel::new(0.95)?, 32);
    let sample = jigsaw.make_sample(image, &cfg, &mut RngStream::new(7, 0, 0))?;
    strip(&sample.patches, -2.0, 2.0).save(out.join("jigsaw-normalized.png"))?;

    let cfg = TransformConfig { normalize: false, ..TransformConfig::new(JitterLevel::NONE, 21) };
    for i in 0..3 {
        let s = PretextTask::PatchPair.make_sample(image, &cfg, &mut RngStream::new(7, 0, i))?;
        println!("patch pair {i}: neighbour at {:?}, label {}", s.patches[0].source_cell(), s.label);
        strip(&s.patches, 0.0, 1.0).save(out.join(format!("pair-{i}.png")))?;
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
