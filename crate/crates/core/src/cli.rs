//! Argument parsing and dispatch for the `cssl` binary.
//!
//! Exit codes: 0 on success, 1 when a command fails at runtime, 2 for usage
//! errors (bad flags, conflicting modes, missing dataset paths).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_override, DatasetSource, ExperimentConfig, PretrainMode};
use crate::error::{Error, Result};
use crate::evaluation::compare_runs;
use crate::model::load_checkpoint_expecting;
use crate::permutations::generate_permutation_set;
use crate::pipeline::{self, CONFIG_FILE, METRICS_FILE};
use crate::training::RunRecord;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cssl", version, about = "Curriculum self-supervised jigsaw pretraining")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a maximal-Hamming-distance permutation set.
    GenPerms(GenPermsArgs),
    /// Pretrain an encoder on the pretext task, one run directory per seed.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained (or fresh) encoder on the labeled split.
    TransferEval(TransferArgs),
    /// Aggregate run directories into a table and charts.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenPermsArgs {
    #[arg(long, default_value_t = 9)]
    pub n_patches: usize,
    #[arg(long)]
    pub set_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file overriding the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_parser = ["synthetic", "stl10", "folder"])]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_parser = ["fixed", "curriculum"])]
    pub mode: Option<String>,
    /// Retention of fixed-mode training.
    #[arg(long)]
    pub retention: Option<f64>,
    #[arg(long)]
    pub schedule_start: Option<f64>,
    #[arg(long)]
    pub schedule_end: Option<f64>,
    #[arg(long)]
    pub schedule_step: Option<f64>,
    /// Fixed-mode epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub epochs_per_level: Option<usize>,
    /// Comma-separated pretraining seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Run seeds on separate threads.
    #[arg(long)]
    pub parallel: bool,
    /// Parent of the per-seed run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to transfer; its run directory receives the results.
    /// Without it, a randomly initialized encoder is trained per seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated downstream seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub linear_probe: bool,
    /// Parent of the baseline run directories (required without --checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory searched recursively for metrics files.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::GenPerms(a) => gen_perms(a),
        Command::Pretrain(a) => pretrain(a),
        Command::TransferEval(a) => transfer_eval(a),
        Command::Compare(a) => compare(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn gen_perms(a: GenPermsArgs) -> std::result::Result<(), CliError> {
    let set = generate_permutation_set(a.n_patches, a.set_size, a.seed).map_err(|e| usage(e.to_string()))?;
    set.save(&a.out)?;
    match set.min_pairwise_distance() {
        Some(d) => println!("wrote {} permutations to {}; min pairwise distance {d}", set.len(), a.out.display()),
        None => println!("wrote 1 permutation to {}", a.out.display()),
    }
    Ok(())
}

/// Resolves defaults < file (`base_file` unless `--config` is given) < flags,
/// then checks dataset paths.
fn resolve(
    args: &ConfigArgs,
    base_file: Option<&Path>,
    mut flags: toml::Table,
) -> std::result::Result<ExperimentConfig, CliError> {
    for raw in &args.overrides {
        let (k, v) = parse_override(raw).map_err(|e| usage(e.to_string()))?;
        flags.insert(k, v);
    }
    if let Some(d) = &args.dataset {
        flags.insert("dataset".into(), d.clone().into());
    }
    if let Some(p) = &args.data_path {
        flags.insert("data_path".into(), p.display().to_string().into());
    }
    let file = args.config.as_deref().or(base_file);
    if let Some(f) = file {
        if !f.is_file() {
            return Err(usage(format!("config file {} not found", f.display())));
        }
    }
    let cfg = ExperimentConfig::resolve(file, &flags).map_err(|e| match e {
        Error::InvalidArgument(m) => usage(m),
        other => CliError::Runtime(other),
    })?;
    if cfg.dataset != DatasetSource::Synthetic {
        match &cfg.data_path {
            None => return Err(usage(format!("dataset {:?} requires --data-path", cfg.dataset))),
            Some(p) if !p.exists() => {
                return Err(usage(format!("dataset path {} does not exist", p.display())))
            }
            Some(_) => {}
        }
    }
    Ok(cfg)
}

fn pretrain(a: PretrainArgs) -> std::result::Result<(), CliError> {
    let mut flags = toml::Table::new();
    if let Some(m) = &a.mode {
        flags.insert("mode".into(), m.clone().into());
    }
    let float_flags = [
        ("retention", a.retention),
        ("schedule_start", a.schedule_start),
        ("schedule_end", a.schedule_end),
        ("schedule_step", a.schedule_step),
    ];
    for (k, v) in float_flags {
        if let Some(v) = v {
            flags.insert(k.into(), v.into());
        }
    }
    for (k, v) in [("pretrain_epochs", a.epochs), ("epochs_per_level", a.epochs_per_level)] {
        if let Some(v) = v {
            flags.insert(k.into(), (v as i64).into());
        }
    }
    if !a.seeds.is_empty() {
        let seeds: Vec<toml::Value> = a.seeds.iter().map(|&s| (s as i64).into()).collect();
        flags.insert("seeds".into(), seeds.into());
    }
    if a.parallel {
        flags.insert("parallel".into(), true.into());
    }
    if let Some(out) = &a.out {
        flags.insert("out_dir".into(), out.display().to_string().into());
    }
    let cfg = resolve(&a.config, None, flags)?;

    let schedule_flags = a.schedule_start.is_some() || a.schedule_end.is_some() || a.schedule_step.is_some();
    match cfg.mode {
        PretrainMode::Fixed if schedule_flags => {
            return Err(usage("--schedule-* flags conflict with --mode fixed"))
        }
        PretrainMode::Curriculum if a.retention.is_some() => {
            return Err(usage("--retention conflicts with --mode curriculum"))
        }
        _ => {}
    }
    cfg.schedule().map_err(|e| usage(e.to_string()))?;

    let data = pipeline::load_datasets(&cfg)?;
    let run_seed = |seed: u64| -> Result<PathBuf> {
        let (state, record) = pipeline::pretrain(&cfg, &data, seed)?;
        let dir = cfg.out_dir.join(pipeline::run_id(&cfg, seed));
        pipeline::write_run_dir(&dir, &cfg, Some(&state), &record)?;
        Ok(dir)
    };
    let results: Vec<Result<PathBuf>> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("pretraining thread panicked")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| run_seed(seed)).collect()
    };
    for r in results {
        println!("{}", r?.display());
    }
    Ok(())
}

fn transfer_eval(a: TransferArgs) -> std::result::Result<(), CliError> {
    let mut flags = toml::Table::new();
    if let Some(e) = a.epochs {
        flags.insert("downstream_epochs".into(), (e as i64).into());
    }
    if a.linear_probe {
        flags.insert("linear_probe".into(), true.into());
    }
    let run_dir = a.checkpoint.as_ref().map(|c| c.parent().unwrap_or(Path::new(".")).to_path_buf());
    let base = run_dir.as_ref().map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file());
    let cfg = resolve(&a.config, base.as_deref(), flags)?;
    if a.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }

    match (&a.checkpoint, run_dir) {
        (Some(ckpt), Some(dir)) => {
            if !ckpt.is_file() {
                return Err(usage(format!("checkpoint {} not found", ckpt.display())));
            }
            let state = load_checkpoint_expecting(ckpt, &cfg.encoder())?;
            let metrics = dir.join(METRICS_FILE);
            let mut record = if metrics.is_file() {
                let mut r = RunRecord::read_jsonl(&metrics)?;
                if r.downstream.is_empty() {
                    r.condition = cfg.condition();
                }
                r
            } else {
                RunRecord::new(pipeline::run_id(&cfg, cfg.seeds[0]), cfg.condition(), cfg.seeds[0])
            };
            let data = pipeline::load_datasets(&cfg)?;
            for &seed in &a.seeds {
                let (acc, secs) = pipeline::transfer(&cfg, Some(&state), &data, seed)?;
                println!("{} downstream seed {seed}: test accuracy {acc:.4}", record.run_id);
                record.push_downstream(seed, acc, secs);
            }
            record.write_jsonl(&metrics)?;
        }
        _ => {
            let out = a
                .out
                .ok_or_else(|| usage("transfer-eval needs --checkpoint or --out"))?;
            let data = pipeline::load_datasets(&cfg)?;
            for &seed in &a.seeds {
                let (acc, secs) = pipeline::transfer(&cfg, None, &data, seed)?;
                let mut record =
                    RunRecord::new(format!("no-pretraining-seed{seed}"), "no-pretraining", seed);
                record.push_downstream(seed, acc, secs);
                let dir = out.join(&record.run_id);
                pipeline::write_run_dir(&dir, &cfg, None, &record)?;
                println!("{} : test accuracy {acc:.4}", dir.display());
            }
        }
    }
    Ok(())
}

fn compare(a: CompareArgs) -> std::result::Result<(), CliError> {
    if !a.runs.is_dir() {
        return Err(usage(format!("runs directory {} not found", a.runs.display())));
    }
    let files = pipeline::find_metrics_files(&a.runs)?;
    let records = files
        .iter()
        .map(RunRecord::read_jsonl)
        .collect::<Result<Vec<_>>>()?;
    let out = compare_runs(&records, &a.out)?;
    println!("{:<20} {:>6} {:>10} {:>10}", "condition", "seeds", "mean", "std");
    for s in &out.summary {
        println!("{:<20} {:>6} {:>10.4} {:>10.4}", s.condition, s.n_seeds, s.mean_acc, s.std_acc);
    }
    println!("wrote {}", out.table_csv.display());
    Ok(())
}
