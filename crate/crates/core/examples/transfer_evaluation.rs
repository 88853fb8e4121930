//! Pretrains with the curriculum, saves and reloads the checkpoint, then
//! fine-tunes a 10-class classifier on the labeled split next to one trained
//! from scratch. Pass `probe` to freeze the encoder instead.
//!
//!     cargo run --release --example transfer_evaluation -- [probe]

use curriculum_ssl::config::ExperimentConfig;
use curriculum_ssl::model::{load_checkpoint_expecting, save_checkpoint};
use curriculum_ssl::pipeline;

fn main() -> curriculum_ssl::Result<()> {
    let probe = std::env::args().any(|a| a == "probe");
    let cfg = ExperimentConfig {
        synthetic_unlabeled: 600,
        synthetic_train: 200,
        synthetic_test: 300,
        encoder_filters: vec![16, 32, 64, 64],
        epochs_per_level: 1,
        linear_probe: probe,
        ..ExperimentConfig::default()
    };
    let data = pipeline::load_datasets(&cfg)?;
    let (pretrained, _) = pipeline::pretrain(&cfg, &data, 0)?;

    let path = std::env::temp_dir().join("cssl-example-checkpoint.bin");
    save_checkpoint(&pretrained, &path)?;
    let restored = load_checkpoint_expecting(&path, &cfg.encoder())?;
    println!("checkpoint {} (fingerprint {})", path.display(), &restored.fingerprint()[..12]);

    let head = restored.transfer_encoder(10, 0)?;
    assert_eq!(head.encoder_params(), restored.encoder_params());
    println!("downstream head: {} -> {} classes", head.head_spec().in_dim, head.out_classes());

    let mode = if probe { "linear probe" } else { "fine-tune" };
    for seed in 0..2 {
        let (with, _) = pipeline::transfer(&cfg, Some(&restored), &data, seed)?;
        let (without, _) = pipeline::transfer(&cfg, None, &data, seed)?;
        println!("{mode}, seed {seed}: pretrained {with:.3}, from scratch {without:.3}");
    }
    Ok(())
}
