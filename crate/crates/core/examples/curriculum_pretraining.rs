//! Pretrains the same encoder twice on synthetic data — once with a fixed
//! 0.80 crop and once through the 1.0 → 0.80 jitter curriculum — and prints
//! both pretext test-accuracy curves.
//!
//!     cargo run --release --example curriculum_pretraining

use curriculum_ssl::config::{ExperimentConfig, PretrainMode};
use curriculum_ssl::pipeline;

fn main() -> curriculum_ssl::Result<()> {
    env_logger::init();
    // a quarter-size encoder and dataset keep this under a minute
    let base = ExperimentConfig {
        synthetic_unlabeled: 600,
        synthetic_train: 100,
        synthetic_test: 200,
        encoder_filters: vec![16, 32, 64, 64],
        epochs_per_level: 1,
        pretrain_epochs: 5,
        ..ExperimentConfig::default()
    };
    let data = pipeline::load_datasets(&base)?;

    for mode in [PretrainMode::Fixed, PretrainMode::Curriculum] {
        let cfg = ExperimentConfig { mode, retention: 0.8, ..base.clone() };
        let schedule = cfg.schedule()?;
        println!("{} over retentions {:?}", cfg.condition(), schedule.retentions());
        let (_, record) = pipeline::pretrain(&cfg, &data, 0)?;
        for e in &record.epochs {
            println!(
                "  epoch {} retention {:.2}: train {:.3} test {:.3}",
                e.epoch, e.level_retention, e.pretext_train_acc, e.pretext_test_acc
            );
        }
    }
    Ok(())
}
