use curriculum_ssl::rng::RngStream;
use curriculum_ssl::transforms::{
    extract_patches, greyscale, jitter_patch, normalize_patch, random_greyscale, reassemble,
    Image, JitterLevel, Patch,
};
use proptest::prelude::*;
use rand::Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = RngStream::from_seed(seed);
    Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn mean_std(px: &[f32]) -> (f64, f64) {
    let n = px.len() as f64;
    let mean = px.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = px.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn extraction_reassembles_bit_exactly() {
    let mut rng = RngStream::from_seed(99);
    for seed in 0..100 {
        let grid = rng.gen_range(2..=3);
        let side = grid * rng.gen_range(2..=20);
        let img = random_image(side, side, seed);
        let patches = extract_patches(&img, grid).unwrap();
        assert_eq!(reassemble(&patches, grid).unwrap(), img);
    }
}

#[test]
fn patch_geometry() {
    let p = extract_patches(&random_image(96, 96, 0), 2).unwrap();
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|q| q.dims() == (48, 48, 3)));
    assert_eq!(p[3].source_cell(), (1, 1));

    let img = random_image(97, 97, 1);
    let p = extract_patches(&img, 3).unwrap();
    assert_eq!(p.len(), 9);
    assert!(p.iter().all(|q| q.dims() == (32, 32, 3)));
    // the centre crop drops the last row and column
    assert_eq!(p[0].pixels()[0], img.at(0, 0, 0));

    assert!(extract_patches(&random_image(3, 3, 2), 4).is_err());
}

#[test]
fn crop_sides() {
    assert_eq!(JitterLevel::new(0.95).unwrap().crop_side(48), 45);
    assert_eq!(JitterLevel::new(0.80).unwrap().crop_side(40), 32);
    assert!(JitterLevel::new(0.0).is_err());
    assert!(JitterLevel::new(1.01).is_err());
    let tiny = Patch::new(2, 2, 3, vec![0.5; 12], (0, 0)).unwrap();
    let mut rng = RngStream::from_seed(0);
    assert!(jitter_patch(&tiny, JitterLevel::new(0.3).unwrap(), 2, &mut rng).is_err());
}

#[test]
fn full_retention_at_input_size_is_identity() {
    let p = &extract_patches(&random_image(64, 64, 3), 2).unwrap()[1];
    let mut rng = RngStream::from_seed(0);
    assert_eq!(&jitter_patch(p, JitterLevel::NONE, 32, &mut rng).unwrap(), p);
}

#[test]
fn jitter_crops_a_window_of_the_patch() {
    // at full input size a 0.5 crop of a patch whose columns encode x
    // resizes to a ramp covering half of the original range
    let side = 16;
    let px: Vec<f32> = (0..side * side).flat_map(|i| [(i % side) as f32 / 15.0; 3]).collect();
    let patch = Patch::new(side, side, 3, px, (0, 1)).unwrap();
    let mut rng = RngStream::from_seed(4);
    let out = jitter_patch(&patch, JitterLevel::new(0.5).unwrap(), 8, &mut rng).unwrap();
    assert_eq!(out.dims(), (8, 8, 3));
    assert_eq!(out.source_cell(), (0, 1));
    let row: Vec<f32> = (0..8).map(|x| out.pixels()[x * 3]).collect();
    assert!(row.windows(2).all(|w| (w[1] - w[0] - 1.0 / 15.0).abs() < 1e-5));
}

#[test]
fn normalization_examples() {
    let px: Vec<f32> = (0..12).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
    let out = normalize_patch(&Patch::new(2, 2, 3, px, (0, 0)).unwrap());
    assert!(out.pixels().iter().all(|&v| v == -1.0 || v == 1.0));

    let out = normalize_patch(&Patch::new(2, 2, 3, vec![0.3; 12], (0, 0)).unwrap());
    assert!(out.pixels().iter().all(|&v| v == 0.0));
}

#[test]
fn normalization_whitens_random_patches() {
    for seed in 0..100 {
        let p = &extract_patches(&random_image(40, 40, seed), 2).unwrap()[0];
        let (m, s) = mean_std(normalize_patch(p).pixels());
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6, "seed {seed}: {m} {s}");
    }
}

#[test]
fn greyscale_probabilities() {
    let img = random_image(4, 4, 0);
    let mut rng = RngStream::from_seed(1);
    for _ in 0..50 {
        assert_eq!(random_greyscale(&img, 0.0, &mut rng).unwrap(), img);
        let g = random_greyscale(&img, 1.0, &mut rng).unwrap();
        assert!(g.pixels().chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    }
    assert_eq!(random_greyscale(&img, 1.0, &mut rng).unwrap(), greyscale(&img));

    // binomial 3σ band: 0.3 ± 3·sqrt(0.3·0.7/10000) ≈ [0.2863, 0.3137]
    let hits = (0..10_000u64)
        .filter(|&i| {
            let mut rng = RngStream::new(5, 0, i);
            random_greyscale(&img, 0.3, &mut rng).unwrap() != img
        })
        .count();
    let frac = hits as f64 / 10_000.0;
    assert!((0.285..=0.315).contains(&frac), "{frac}");
}

proptest! {
    #[test]
    fn jitter_keeps_shape_and_values_in_range(
        side in 4usize..40, r in 0.3f64..=1.0, out in 1usize..20, seed in any::<u64>()
    ) {
        let img = random_image(side, side, seed);
        let patch = &img.resized(side);
        let mut rng = RngStream::from_seed(seed);
        let level = JitterLevel::new(r).unwrap();
        match jitter_patch(patch, level, out, &mut rng) {
            Ok(p) => {
                prop_assert_eq!(p.dims(), (out, out, 3));
                prop_assert!(p.pixels().iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
            }
            Err(_) => prop_assert!(level.crop_side(side) < 1),
        }
    }
}
