//! Nearest-neighbour probe: retrieves the closest test images to a few
//! queries in raw-pixel space and in a pretrained encoder's embedding space,
//! and reports how often neighbours share the query's class.
//!
//!     cargo run --release --example nearest_neighbors

use curriculum_ssl::config::ExperimentConfig;
use curriculum_ssl::evaluation::{nearest_neighbors, neighbor_class_agreement, EmbeddingIndex, Metric};
use curriculum_ssl::pipeline;

fn main() -> curriculum_ssl::Result<()> {
    let cfg = ExperimentConfig {
        synthetic_unlabeled: 600,
        synthetic_train: 10,
        synthetic_test: 300,
        encoder_filters: vec![16, 32, 64, 64],
        epochs_per_level: 1,
        ..ExperimentConfig::default()
    };
    let data = pipeline::load_datasets(&cfg)?;
    let (model, _) = pipeline::pretrain(&cfg, &data, 0)?;
    let labels = &data.test.labels;

    let spaces = [
        ("pixels", EmbeddingIndex::from_pixels(&data.test.images, 16, Metric::Euclidean)?),
        ("encoder", EmbeddingIndex::from_encoder(&model, &data.test.images, Metric::Cosine)?),
    ];
    for (name, index) in &spaces {
        println!("{name} space ({} dims):", index.dim());
        for k in [1, 5, 10] {
            println!("  k={k:>2}: neighbour class agreement {:.3}", neighbor_class_agreement(index, labels, k)?);
        }
        for query in 0..3 {
            let hits = nearest_neighbors(index, index.vector(query), 6)?;
            let ids: Vec<String> = hits[1..]
                .iter()
                .map(|&(id, d)| format!("{id}(class {}, d={d:.2})", labels[id]))
                .collect();
            println!("  query {query} (class {}): {}", labels[query], ids.join(" "));
        }
    }
    Ok(())
}
