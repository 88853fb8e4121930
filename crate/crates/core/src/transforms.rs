//! Images, patches and the shortcut-suppressing transforms: per-patch
//! normalisation, random greyscale and random-crop jitter.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

/// Divisor guard for [`normalize_patch`].
pub const NORM_EPS: f64 = 1e-8;

/// `height × width × channels` intensities in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(invalid("image must be non-empty"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                got: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear resize of the whole image to `size × size`, as fed to the
    /// downstream classifier.
    pub fn resized(&self, size: usize) -> Patch {
        let pixels = resize_bilinear(
            &self.pixels,
            self.height,
            self.width,
            self.channels,
            size,
            size,
        );
        Patch {
            height: size,
            width: size,
            channels: self.channels,
            pixels,
            source_cell: (0, 0),
        }
    }

    fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Vec<f32> {
        let c = self.channels;
        let mut out = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let row = (y * self.width + left) * c;
            out.extend_from_slice(&self.pixels[row..row + w * c]);
        }
        out
    }
}

/// A grid cell cut from an image. Values are unbounded once normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    source_cell: (usize, usize),
}

impl Patch {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
        source_cell: (usize, usize),
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid("patch must be non-empty"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                got: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            source_cell,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn source_cell(&self) -> (usize, usize) {
        self.source_cell
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Writes the patch in channel-major (`C × H × W`) order into `out`.
    pub fn write_chw(&self, out: &mut [f32]) {
        let hw = self.height * self.width;
        debug_assert_eq!(out.len(), hw * self.channels);
        for (i, px) in self.pixels.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + i] = v;
            }
        }
    }
}

/// Fraction of the patch side kept by random-crop jitter; `1.0` is no jitter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct JitterLevel(f64);

impl JitterLevel {
    pub const NONE: JitterLevel = JitterLevel(1.0);

    pub fn new(retention: f64) -> Result<Self> {
        if retention > 0.0 && retention <= 1.0 {
            Ok(Self(retention))
        } else {
            Err(invalid(format!("retention must be in (0, 1], got {retention}")))
        }
    }

    pub fn retention(self) -> f64 {
        self.0
    }

    /// Side of the square crop for a patch whose shorter side is `side`.
    ///
    /// A small tolerance absorbs representation error, so `0.29 × 100` is 29.
    pub fn crop_side(self, side: usize) -> usize {
        (self.0 * side as f64 + 1e-9).floor() as usize
    }
}

impl TryFrom<f64> for JitterLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<JitterLevel> for f64 {
    fn from(j: JitterLevel) -> f64 {
        j.0
    }
}

/// Largest size `≤ len` divisible by `grid_n`, and the offset centring it.
fn centred_span(len: usize, grid_n: usize) -> (usize, usize) {
    let kept = len - len % grid_n;
    ((len - kept) / 2, kept)
}

/// Cuts `image` into `grid_n²` equal patches in row-major order, centre-cropping
/// first so both sides are divisible by `grid_n`.
pub fn extract_patches(image: &Image, grid_n: usize) -> Result<Vec<Patch>> {
    if grid_n < 2 {
        return Err(invalid(format!("grid_n must be >= 2, got {grid_n}")));
    }
    if grid_n > image.height.min(image.width) {
        return Err(invalid(format!(
            "grid_n {grid_n} exceeds image size {}x{}",
            image.height, image.width
        )));
    }
    let (top, h) = centred_span(image.height, grid_n);
    let (left, w) = centred_span(image.width, grid_n);
    let (ph, pw) = (h / grid_n, w / grid_n);
    let mut patches = Vec::with_capacity(grid_n * grid_n);
    for row in 0..grid_n {
        for col in 0..grid_n {
            patches.push(Patch {
                height: ph,
                width: pw,
                channels: image.channels,
                pixels: image.crop(top + row * ph, left + col * pw, ph, pw),
                source_cell: (row, col),
            });
        }
    }
    Ok(patches)
}

/// Inverse of [`extract_patches`] on a full row-major grid.
pub fn reassemble(patches: &[Patch], grid_n: usize) -> Result<Image> {
    if patches.len() != grid_n * grid_n || grid_n == 0 {
        return Err(Error::LengthMismatch {
            expected: grid_n * grid_n,
            got: patches.len(),
        });
    }
    let (ph, pw, c) = patches[0].dims();
    if patches.iter().any(|p| p.dims() != (ph, pw, c)) {
        return Err(Error::Shape("patches differ in size".into()));
    }
    let (h, w) = (ph * grid_n, pw * grid_n);
    let mut pixels = vec![0.0; h * w * c];
    for (i, p) in patches.iter().enumerate() {
        let (row, col) = (i / grid_n, i % grid_n);
        for y in 0..ph {
            let dst = ((row * ph + y) * w + col * pw) * c;
            pixels[dst..dst + pw * c].copy_from_slice(&p.pixels[y * pw * c..(y + 1) * pw * c]);
        }
    }
    Image::new(h, w, c, pixels)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(
    src: &[f32],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
                out.push(top + (bottom - top) * ty);
            }
        }
    }
    out
}

/// Random square crop keeping `level` of the patch side, resized back to
/// `input_size × input_size`.
pub fn jitter_patch(
    patch: &Patch,
    level: JitterLevel,
    input_size: usize,
    rng: &mut RngStream,
) -> Result<Patch> {
    if input_size == 0 {
        return Err(invalid("input_size must be >= 1"));
    }
    let side = level.crop_side(patch.height.min(patch.width));
    if side < 1 {
        return Err(invalid(format!(
            "retention {} leaves an empty crop of a {}x{} patch",
            level.retention(),
            patch.height,
            patch.width
        )));
    }
    let top = rng.gen_range(0..=patch.height - side);
    let left = rng.gen_range(0..=patch.width - side);
    let c = patch.channels;
    let mut crop = Vec::with_capacity(side * side * c);
    for y in top..top + side {
        let row = (y * patch.width + left) * c;
        crop.extend_from_slice(&patch.pixels[row..row + side * c]);
    }
    Ok(Patch {
        height: input_size,
        width: input_size,
        channels: c,
        pixels: resize_bilinear(&crop, side, side, c, input_size, input_size),
        source_cell: patch.source_cell,
    })
}

/// Zero-mean, unit-variance whitening over all pixels and channels jointly.
/// Constant patches map to zeros.
pub fn normalize_patch(patch: &Patch) -> Patch {
    let n = patch.pixels.len() as f64;
    let mean = patch.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch
        .pixels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let pixels = if std <= NORM_EPS {
        vec![0.0; patch.pixels.len()]
    } else {
        patch
            .pixels
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect()
    };
    Patch {
        pixels,
        ..patch.clone()
    }
}

/// With probability `p` replaces every pixel's channels by their mean.
/// The coin is always drawn, so the stream advances identically either way.
pub fn random_greyscale(image: &Image, p: f64, rng: &mut RngStream) -> Result<Image> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("greyscale probability {p} outside [0, 1]")));
    }
    let coin: f64 = rng.gen();
    if coin >= p || image.channels == 1 {
        return Ok(image.clone());
    }
    Ok(greyscale(image))
}

/// Equal-weight channel mean, keeping the channel count.
pub fn greyscale(image: &Image) -> Image {
    let c = image.channels;
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for px in image.pixels.chunks_exact(c) {
        let mean = (px.iter().sum::<f32>() / c as f32).clamp(0.0, 1.0);
        pixels.extend(std::iter::repeat(mean).take(c));
    }
    Image { pixels, ..image.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        let n = h * w * c;
        Image::new(h, w, c, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(Image::new(2, 1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn four_by_four_round_trip() {
        let img = ramp(4, 4, 3);
        let patches = extract_patches(&img, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert!(patches.iter().all(|p| p.dims() == (2, 2, 3)));
        assert_eq!(patches[1].source_cell(), (0, 1));
        assert_eq!(reassemble(&patches, 2).unwrap(), img);
    }

    #[test]
    fn stl_sized_quadrants() {
        let patches = extract_patches(&ramp(96, 96, 3), 2).unwrap();
        assert!(patches.iter().all(|p| p.dims() == (48, 48, 3)));
    }

    #[test]
    fn centre_crop_to_divisible() {
        let img = ramp(97, 97, 1);
        let patches = extract_patches(&img, 3).unwrap();
        assert_eq!(patches.len(), 9);
        assert!(patches.iter().all(|p| p.dims() == (32, 32, 1)));
        // crop offset is (97 - 96) / 2 = 0
        assert_eq!(patches[0].pixels()[0], img.at(0, 0, 0));
    }

    #[test]
    fn grid_errors() {
        assert!(extract_patches(&ramp(4, 4, 1), 1).is_err());
        assert!(extract_patches(&ramp(4, 3, 1), 4).is_err());
    }

    #[test]
    fn crop_side_arithmetic() {
        assert_eq!(JitterLevel::new(0.95).unwrap().crop_side(48), 45);
        assert_eq!(JitterLevel::new(0.80).unwrap().crop_side(40), 32);
        assert_eq!(JitterLevel::new(0.29).unwrap().crop_side(100), 29);
        assert!(JitterLevel::new(0.0).is_err());
        assert!(JitterLevel::new(1.01).is_err());
    }

    #[test]
    fn jitter_identity_at_full_retention() {
        let patch = extract_patches(&ramp(8, 8, 3), 2).unwrap().remove(3);
        let out = jitter_patch(&patch, JitterLevel::NONE, 4, &mut RngStream::from_seed(1)).unwrap();
        assert_eq!(out, patch);
    }

    #[test]
    fn jitter_output_is_input_size() {
        let patch = extract_patches(&ramp(96, 96, 3), 2).unwrap().remove(0);
        let mut rng = RngStream::from_seed(3);
        for r in [1.0, 0.95, 0.8, 0.5] {
            let out = jitter_patch(&patch, JitterLevel::new(r).unwrap(), 32, &mut rng).unwrap();
            assert_eq!(out.dims(), (32, 32, 3));
        }
    }

    #[test]
    fn jitter_empty_crop_errors() {
        let patch = extract_patches(&ramp(4, 4, 1), 2).unwrap().remove(0);
        let level = JitterLevel::new(0.4).unwrap();
        assert!(jitter_patch(&patch, level, 2, &mut RngStream::from_seed(0)).is_err());
    }

    #[test]
    fn normalize_two_level_patch() {
        let pixels = (0..16).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let out = normalize_patch(&Patch::new(4, 4, 1, pixels, (0, 0)).unwrap());
        for (i, v) in out.pixels().iter().enumerate() {
            let want = if i % 2 == 0 { -1.0 } else { 1.0 };
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_constant_is_zero() {
        let out = normalize_patch(&Patch::new(3, 3, 3, vec![0.3; 27], (0, 0)).unwrap());
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greyscale_extremes() {
        let img = ramp(5, 5, 3);
        let mut rng = RngStream::from_seed(0);
        for _ in 0..20 {
            assert_eq!(random_greyscale(&img, 0.0, &mut rng).unwrap(), img);
            let g = random_greyscale(&img, 1.0, &mut rng).unwrap();
            assert!(g.pixels().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        }
        assert!(random_greyscale(&img, 1.5, &mut rng).is_err());
    }

    #[test]
    fn resize_is_identity_at_same_size() {
        let img = ramp(6, 6, 3);
        assert_eq!(img.resized(6).pixels(), img.pixels());
        let half = img.resized(3);
        assert_eq!(half.dims(), (3, 3, 3));
    }

    #[test]
    fn chw_layout() {
        let p = Patch::new(1, 2, 3, vec![1., 2., 3., 4., 5., 6.], (0, 0)).unwrap();
        let mut out = vec![0.0; 6];
        p.write_chw(&mut out);
        assert_eq!(out, vec![1., 4., 2., 5., 3., 6.]);
    }
}
