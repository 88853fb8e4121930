//! Representation probes: exact nearest-neighbour retrieval in embedding or
//! pixel space, neighbour label agreement, and cross-run comparison tables
//! and charts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Batch, ModelState};
use crate::training::RunRecord;
use crate::transforms::{normalize_patch, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos(a, b)`.
    Cosine,
}

/// Exact (brute-force) index over `N × D` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    vectors: Vec<f64>,
    ids: Vec<usize>,
    metric: Metric,
}

impl EmbeddingIndex {
    pub fn new(vectors: Vec<Vec<f64>>, ids: Vec<usize>, metric: Metric) -> Result<Self> {
        if vectors.len() != ids.len() {
            return Err(Error::LengthMismatch {
                expected: vectors.len(),
                got: ids.len(),
            });
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("index vectors differ in dimension".into()));
        }
        Ok(Self {
            dim,
            vectors: vectors.concat(),
            ids,
            metric,
        })
    }

    /// Encoder embeddings of whole images resized to the encoder input and
    /// normalized like pretext patches; ids are positions in `images`.
    pub fn from_encoder(model: &ModelState, images: &[Image], metric: Metric) -> Result<Self> {
        let size = model.encoder_spec().input_size;
        let d = model.encoder_spec().embedding_dim();
        let mut vectors = Vec::with_capacity(images.len());
        for chunk in images.chunks(128) {
            let resized: Vec<_> = chunk.iter().map(|img| vec![normalize_patch(&img.resized(size))]).collect();
            let batch = Batch::<f32>::from_patches(
                resized.iter().map(Vec::as_slice),
                model.encoder_spec(),
            )?;
            let emb = model.embed(&batch);
            vectors.extend(emb.chunks_exact(d).map(|e| e.iter().map(|&v| v as f64).collect()));
        }
        Self::new(vectors, (0..images.len()).collect(), metric)
    }

    /// Flattened pixels of images resized to `size × size`; the baseline space.
    pub fn from_pixels(images: &[Image], size: usize, metric: Metric) -> Result<Self> {
        let vectors = images
            .iter()
            .map(|img| img.resized(size).pixels().iter().map(|&v| v as f64).collect())
            .collect();
        Self::new(vectors, (0..images.len()).collect(), metric)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.metric {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }

    /// Row positions and distances sorted by `(distance, id)`.
    fn ranked(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.distance(query, self.vector(i))))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(self.ids[a.0].cmp(&self.ids[b.0])));
        all
    }
}

/// The `k` indexed items closest to `query`, ascending by distance with ties
/// broken by id.
pub fn nearest_neighbors(
    index: &EmbeddingIndex,
    query: &[f64],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k > index.len() {
        return Err(invalid(format!("k = {k} exceeds index size {}", index.len())));
    }
    if query.len() != index.dim {
        return Err(Error::LengthMismatch {
            expected: index.dim,
            got: query.len(),
        });
    }
    Ok(index
        .ranked(query)
        .into_iter()
        .take(k)
        .map(|(i, d)| (index.ids[i], d))
        .collect())
}

/// Mean over items of the fraction of their `k` nearest other items that
/// share the item's label.
pub fn neighbor_class_agreement(index: &EmbeddingIndex, labels: &[usize], k: usize) -> Result<f64> {
    if labels.len() != index.len() {
        return Err(Error::LengthMismatch {
            expected: index.len(),
            got: labels.len(),
        });
    }
    if k == 0 || k >= index.len() {
        return Err(invalid(format!(
            "k must be in 1..{}, got {k}",
            index.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..index.len() {
        let same = index
            .ranked(index.vector(i))
            .into_iter()
            .filter(|&(j, _)| j != i)
            .take(k)
            .filter(|&(j, _)| labels[j] == labels[i])
            .count();
        total += same as f64 / k as f64;
    }
    Ok(total / index.len() as f64)
}

/// Final downstream accuracy statistics of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub n_seeds: usize,
    pub mean_acc: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_acc: f64,
}

/// Groups downstream accuracies by condition. Accuracies are sorted before
/// summation so the result does not depend on record order.
pub fn summarize_runs(records: &[RunRecord]) -> Result<Vec<ConditionSummary>> {
    if records.is_empty() {
        return Err(Error::Empty("run records"));
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Option<bool>)> = BTreeMap::new();
    for r in records {
        if r.downstream.is_empty() {
            return Err(Error::Validation(format!(
                "mismatched metric schemas: run {} has no downstream accuracy",
                r.run_id
            )));
        }
        let (accs, has_epochs) = groups.entry(r.condition.as_str()).or_default();
        let this = !r.epochs.is_empty();
        if has_epochs.is_some_and(|h| h != this) {
            return Err(Error::Validation(format!(
                "mismatched metric schemas within condition {}",
                r.condition
            )));
        }
        *has_epochs = Some(this);
        accs.extend(r.downstream.iter().map(|d| d.downstream_test_acc));
    }
    Ok(groups
        .into_iter()
        .map(|(condition, (mut accs, _))| {
            accs.sort_by(f64::total_cmp);
            let n = accs.len();
            let mean = accs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            ConditionSummary {
                condition: condition.to_string(),
                n_seeds: n,
                mean_acc: mean,
                std_acc: std,
            }
        })
        .collect())
}

/// Mean pretext test accuracy per epoch for each condition with epoch rows.
pub fn pretext_curves(records: &[RunRecord]) -> BTreeMap<String, Vec<(u64, f64)>> {
    let mut sums: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in records {
        for e in &r.epochs {
            sums.entry(r.condition.clone())
                .or_default()
                .entry(e.epoch)
                .or_default()
                .push(e.pretext_test_acc);
        }
    }
    sums.into_iter()
        .map(|(c, by_epoch)| {
            let curve = by_epoch
                .into_iter()
                .map(|(e, mut v)| {
                    v.sort_by(f64::total_cmp);
                    (e, v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            (c, curve)
        })
        .collect()
}

/// Files written by [`compare_runs`].
#[derive(Debug, Clone)]
pub struct ComparisonOutput {
    pub summary: Vec<ConditionSummary>,
    pub table_csv: PathBuf,
    pub bar_chart: PathBuf,
    pub curve_chart: PathBuf,
}

/// Writes `comparison.csv`, `downstream_bars.png` and `pretext_curves.png`
/// into `out_dir`.
pub fn compare_runs(records: &[RunRecord], out_dir: impl AsRef<Path>) -> Result<ComparisonOutput> {
    let out_dir = out_dir.as_ref();
    let summary = summarize_runs(records)?;
    std::fs::create_dir_all(out_dir)?;

    let table_csv = out_dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&table_csv).map_err(csv_err)?;
    for row in &summary {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;

    let bar_chart = out_dir.join("downstream_bars.png");
    draw_bars(&summary).save(&bar_chart)?;
    let curve_chart = out_dir.join("pretext_curves.png");
    draw_curves(&pretext_curves(records)).save(&curve_chart)?;
    Ok(ComparisonOutput {
        summary,
        table_csv,
        bar_chart,
        curve_chart,
    })
}

/// Saves the pretext accuracy chart of `records` alone, e.g. for one run.
pub fn plot_pretext_curves(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    draw_curves(&pretext_curves(records)).save(path)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

const CHART_W: u32 = 640;
const CHART_H: u32 = 400;
const MARGIN: u32 = 40;
const SERIES: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn blank_chart() -> RgbImage {
    let mut img = RgbImage::from_pixel(CHART_W, CHART_H, Rgb([255, 255, 255]));
    // gridlines at every 0.1 of accuracy, axes in black
    for tick in 0..=10 {
        let y = acc_to_y(tick as f64 / 10.0);
        let shade = if tick == 0 { 0 } else { 225 };
        for x in MARGIN..CHART_W - MARGIN / 2 {
            img.put_pixel(x, y, Rgb([shade; 3]));
        }
    }
    for y in MARGIN / 2..=acc_to_y(0.0) {
        img.put_pixel(MARGIN, y, Rgb([0; 3]));
    }
    img
}

fn acc_to_y(acc: f64) -> u32 {
    let top = MARGIN / 2;
    let bottom = CHART_H - MARGIN;
    bottom - ((bottom - top) as f64 * acc.clamp(0.0, 1.0)).round() as u32
}

fn fill_rect(img: &mut RgbImage, x0: u32, x1: u32, y0: u32, y1: u32, color: [u8; 3]) {
    for x in x0.min(x1)..=x0.max(x1) {
        for y in y0.min(y1)..=y0.max(y1) {
            if x < img.width() && y < img.height() {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        fill_rect(img, x as u32, x as u32 + 1, y as u32, y as u32 + 1, color);
    }
}

/// One bar per condition at its mean, with a ±1 std whisker.
fn draw_bars(summary: &[ConditionSummary]) -> RgbImage {
    let mut img = blank_chart();
    let n = summary.len().max(1) as u32;
    let slot = (CHART_W - MARGIN - MARGIN / 2) / n;
    let bar = (slot * 3 / 5).max(2);
    for (i, s) in summary.iter().enumerate() {
        let x0 = MARGIN + slot * i as u32 + (slot - bar) / 2;
        let color = SERIES[i % SERIES.len()];
        fill_rect(&mut img, x0, x0 + bar, acc_to_y(s.mean_acc), acc_to_y(0.0) - 1, color);
        let cx = x0 + bar / 2;
        let (lo, hi) = (acc_to_y(s.mean_acc - s.std_acc), acc_to_y(s.mean_acc + s.std_acc));
        fill_rect(&mut img, cx, cx, hi, lo, [0; 3]);
        fill_rect(&mut img, cx - bar / 6, cx + bar / 6, hi, hi, [0; 3]);
        fill_rect(&mut img, cx - bar / 6, cx + bar / 6, lo, lo, [0; 3]);
    }
    img
}

/// Pretext test accuracy against epoch, one polyline per condition.
fn draw_curves(curves: &BTreeMap<String, Vec<(u64, f64)>>) -> RgbImage {
    let mut img = blank_chart();
    let max_epoch = curves
        .values()
        .flat_map(|c| c.iter().map(|(e, _)| *e))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let width = (CHART_W - MARGIN - MARGIN / 2) as f64;
    let to_x = |e: u64| MARGIN as f64 + width * e as f64 / max_epoch;
    for (i, curve) in curves.values().enumerate() {
        let color = SERIES[i % SERIES.len()];
        for w in curve.windows(2) {
            draw_line(
                &mut img,
                (to_x(w[0].0), acc_to_y(w[0].1) as f64),
                (to_x(w[1].0), acc_to_y(w[1].1) as f64),
                color,
            );
        }
        for &(e, a) in curve {
            let (x, y) = (to_x(e) as u32, acc_to_y(a));
            fill_rect(&mut img, x.saturating_sub(2), x + 2, y.saturating_sub(2), y + 2, color);
        }
    }
    img
}
