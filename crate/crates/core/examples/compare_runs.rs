//! The full comparison loop in miniature: pretrain fixed and curriculum
//! conditions over several seeds, fine-tune each, add a no-pretraining
//! baseline, persist run directories and aggregate them into a CSV table
//! and charts.
//!
//!     cargo run --release --example compare_runs -- [out_dir]

use std::path::PathBuf;

use curriculum_ssl::config::{ExperimentConfig, PretrainMode};
use curriculum_ssl::evaluation::compare_runs;
use curriculum_ssl::pipeline;
use curriculum_ssl::training::RunRecord;

fn main() -> curriculum_ssl::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "compare-example".into()));
    let base = ExperimentConfig {
        synthetic_unlabeled: 300,
        synthetic_train: 100,
        synthetic_test: 200,
        encoder_filters: vec![8, 16, 32, 32],
        epochs_per_level: 1,
        pretrain_epochs: 5,
        downstream_epochs: 2,
        ..ExperimentConfig::default()
    };
    let data = pipeline::load_datasets(&base)?;
    let conditions = [
        ExperimentConfig { mode: PretrainMode::Fixed, retention: 1.0, ..base.clone() },
        ExperimentConfig { mode: PretrainMode::Fixed, retention: 0.8, ..base.clone() },
        ExperimentConfig { mode: PretrainMode::Curriculum, ..base.clone() },
    ];

    let mut records = Vec::new();
    for seed in 0..3 {
        for cfg in &conditions {
            let (model, mut record) = pipeline::pretrain(cfg, &data, seed)?;
            let (acc, secs) = pipeline::transfer(cfg, Some(&model), &data, seed)?;
            record.push_downstream(seed, acc, secs);
            pipeline::write_run_dir(&out.join("runs").join(&record.run_id), cfg, Some(&model), &record)?;
            records.push(record);
        }
        let (acc, secs) = pipeline::transfer(&base, None, &data, seed)?;
        let mut record = RunRecord::new(format!("no-pretraining-seed{seed}"), "no-pretraining", seed);
        record.push_downstream(seed, acc, secs);
        records.push(record);
    }

    let report = compare_runs(&records, out.join("report"))?;
    for s in &report.summary {
        println!("{:<16} n={} mean {:.3} ± {:.3}", s.condition, s.n_seeds, s.mean_acc, s.std_acc);
    }
    println!("table {}, charts {} and {}", report.table_csv.display(), report.bar_chart.display(), report.curve_chart.display());
    Ok(())
}
