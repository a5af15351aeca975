//! `fdia` command-line tool: convert grid cases, synthesize attack datasets,
//! train detectors, and evaluate/benchmark them. Every artifact-writing
//! command drops a RunManifest JSON next to its outputs so runs can be
//! reproduced from the recorded configuration.

use clap::{Parser, Subcommand, ValueEnum};
use fdia::dataset::{generate_dataset, load_dataset, save_dataset, GenConfig};
use fdia::eval::{benchmark_inference, evaluate};
use fdia::grid::{build_weighted_adjacency, Grid};
use fdia::ingest::{parse_grid_json, parse_matpower_case, write_grid_json};
use fdia::nn::{
    load_model, save_model, train, CgcnArch, CgcnModel, FcnArch, FcnModel, Model, TrainConfig,
};
use fdia::spectral::{estimate_lambda_max, normalized_laplacian, scale_laplacian};
use fdia::{FdiaError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "fdia",
    version,
    about = "False-data-injection-attack detection pipeline: grid ingest, AC power flow dataset synthesis, Chebyshev graph-convolution training, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Cgcn,
    Fcn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MATPOWER-subset .m case file to the native grid JSON.
    Convert {
        /// Input .m case file.
        input: PathBuf,
        /// Output grid JSON path.
        output: PathBuf,
    },
    /// Generate a measurement dataset (clean + attacked) from a grid case.
    Gen {
        /// Grid case: .m (MATPOWER subset) or .json (native).
        #[arg(long)]
        case: PathBuf,
        /// Output directory for splits, meta.json, grid.json, manifest.
        #[arg(long)]
        out: PathBuf,
        /// Total number of samples across all splits.
        #[arg(long, default_value_t = 36000)]
        total: usize,
        /// Master seed; falls back to $FDIA_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Relative Gaussian measurement noise level.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Lower bound of the per-bus load/generation scaling range.
        #[arg(long = "load-lo", default_value_t = 0.8)]
        load_lo: f64,
        /// Upper bound of the per-bus load/generation scaling range.
        #[arg(long = "load-hi", default_value_t = 1.2)]
        load_hi: f64,
        /// Lower bound of the scale-attack multiplier.
        #[arg(long = "scale-lo", default_value_t = 0.9)]
        scale_lo: f64,
        /// Upper bound of the scale-attack multiplier.
        #[arg(long = "scale-hi", default_value_t = 1.1)]
        scale_hi: f64,
        /// Fraction of each split that is attacked.
        #[arg(long = "attack-frac", default_value_t = 0.5)]
        attack_frac: f64,
        /// Fraction of buses each attack touches.
        #[arg(long = "attack-bus-frac", default_value_t = 1.0)]
        attack_bus_frac: f64,
        /// Comma-separated train,validation,test fractions.
        #[arg(long, default_value = "0.666667,0.166667,0.166666")]
        splits: String,
        /// Worker threads for scenario generation (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train a detector on a generated dataset.
    Train {
        /// Dataset directory produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Model architecture.
        #[arg(long, value_enum, default_value_t = Arch::Cgcn)]
        arch: Arch,
        /// Number of hidden layers.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Channels per graph-conv layer (cgcn) / hidden units (fcn).
        /// Defaults: 32 for cgcn, 64 for fcn.
        #[arg(long)]
        channels: Option<usize>,
        /// Chebyshev filter order K (cgcn only).
        #[arg(long, default_value_t = 5)]
        order: usize,
        /// Mini-batch size.
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long = "max-epochs", default_value_t = 256)]
        max_epochs: usize,
        /// Early-stopping patience in epochs; 0 disables early stopping.
        #[arg(long, default_value_t = 16)]
        patience: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Training seed; falls back to $FDIA_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Parameter storage precision. Arithmetic is always f64; f32
        /// rounds weights after each optimizer step.
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        /// Checkpoint output path (default: <data>/model-<arch>.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Split to score: train, validation, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Decision threshold on the attack probability.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write the metrics JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write plot-ready CSV series (loss curves, DR/FA bars) here.
        #[arg(long = "plot-data")]
        plot_data: Option<PathBuf>,
    },
    /// Benchmark single-sample inference latency of a checkpoint.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Split to draw samples from.
        #[arg(long, default_value = "test")]
        split: String,
        /// Timed inference passes.
        #[arg(long, default_value_t = 200)]
        repeat: usize,
        /// Untimed warmup passes.
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        /// Also write the latency report JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Exit codes: 0 success, 1 runtime failure, 2 input/parse error.
fn exit_code(err: &FdiaError) -> i32 {
    match err {
        FdiaError::Divergence { .. }
        | FdiaError::SingularJacobian(_)
        | FdiaError::Generation(_) => 1,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    /// Full resolved configuration; re-running with it reproduces the
    /// outputs bit-identically (this timestamp excluded).
    config: serde_json::Value,
    input_digests: BTreeMap<String, String>,
    timestamp_unix: u64,
}

impl RunManifest {
    fn new(
        command: &'static str,
        config: serde_json::Value,
        input_digests: BTreeMap<String, String>,
    ) -> Self {
        RunManifest {
            tool: "fdia",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            config,
            input_digests,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Manifest path for a given output file: `model.bin` -> `model.manifest.json`.
fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("FDIA_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| FdiaError::Config(format!("FDIA_SEED='{v}' is not a valid u64"))),
        Err(_) => Ok(0),
    }
}

fn load_grid(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().map(|e| e == "json").unwrap_or(false)
        || text.trim_start().starts_with('{');
    if is_json {
        parse_grid_json(&text)
    } else {
        parse_matpower_case(&text)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert { input, output } => cmd_convert(&input, &output),
        Command::Gen {
            case,
            out,
            total,
            seed,
            noise,
            load_lo,
            load_hi,
            scale_lo,
            scale_hi,
            attack_frac,
            attack_bus_frac,
            splits,
            jobs,
        } => {
            let split_fractions = parse_splits(&splits)?;
            let config = GenConfig {
                total,
                split_fractions,
                attack_fraction: attack_frac,
                load_scale_lo: load_lo,
                load_scale_hi: load_hi,
                noise_level: noise,
                scale_attack_lo: scale_lo,
                scale_attack_hi: scale_hi,
                attack_bus_fraction: attack_bus_frac,
                master_seed: resolve_seed(seed)?,
            };
            cmd_gen(&case, &out, config, jobs)
        }
        Command::Train {
            data,
            arch,
            layers,
            channels,
            order,
            batch,
            max_epochs,
            patience,
            lr,
            seed,
            precision,
            out,
        } => {
            let config = TrainConfig {
                batch_size: batch,
                max_epochs,
                patience,
                lr,
                seed: resolve_seed(seed)?,
                round_params_to_f32: precision == Precision::F32,
                ..TrainConfig::default()
            };
            cmd_train(&data, arch, layers, channels, order, config, out)
        }
        Command::Eval {
            data,
            model,
            split,
            threshold,
            json,
            plot_data,
        } => cmd_eval(&data, &model, &split, threshold, json, plot_data),
        Command::Bench {
            data,
            model,
            split,
            repeat,
            warmup,
            json,
        } => cmd_bench(&data, &model, &split, repeat, warmup, json),
    }
}

fn parse_splits(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| FdiaError::Config(format!("bad split fraction '{p}'")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(FdiaError::Config(format!(
            "--splits needs 3 comma-separated fractions, got {}",
            parts.len()
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn cmd_convert(input: &Path, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    let grid = parse_matpower_case(&text)?;
    let json = write_grid_json(&grid);
    std::fs::write(output, &json)?;
    let mut digests = BTreeMap::new();
    digests.insert(input.display().to_string(), sha256_hex(text.as_bytes()));
    let manifest = RunManifest::new(
        "convert",
        serde_json::json!({ "input": input, "output": output }),
        digests,
    );
    manifest.write(&manifest_path_for(output))?;
    println!(
        "converted {} -> {} ({} buses, {} branches)",
        input.display(),
        output.display(),
        grid.buses.len(),
        grid.branches.len()
    );
    Ok(())
}

fn cmd_gen(case: &Path, out: &Path, config: GenConfig, jobs: Option<usize>) -> Result<()> {
    let grid = load_grid(case)?;
    let dataset = match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| FdiaError::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| generate_dataset(&grid, &config))?
        }
        None => generate_dataset(&grid, &config)?,
    };
    std::fs::create_dir_all(out)?;
    save_dataset(&dataset, out)?;
    // the grid travels with the dataset so train/eval can rebuild the
    // graph Laplacian for graph-convolution checkpoints
    std::fs::write(out.join("grid.json"), write_grid_json(&grid))?;
    let mut digests = BTreeMap::new();
    digests.insert(case.display().to_string(), file_digest(case)?);
    let manifest = RunManifest::new("gen", serde_json::to_value(&config)?, digests);
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "generated {} samples (train {}, validation {}, test {}) in {}",
        config.total,
        dataset.train.len(),
        dataset.validation.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    arch: Arch,
    layers: usize,
    channels: Option<usize>,
    order: usize,
    config: TrainConfig,
    out: Option<PathBuf>,
) -> Result<()> {
    let (dataset, meta) = load_dataset(data)?;
    let grid = parse_grid_json(&std::fs::read_to_string(data.join("grid.json"))?)?;
    let mut model = match arch {
        Arch::Cgcn => {
            let graph = build_weighted_adjacency(&grid)?;
            if graph.n != meta.n {
                return Err(FdiaError::Dimension(format!(
                    "grid has {} buses, dataset has {}",
                    graph.n, meta.n
                )));
            }
            let l = normalized_laplacian(&graph)?;
            let est = estimate_lambda_max(&l, 1e-9);
            let lap = Arc::new(scale_laplacian(&l, est.value)?);
            let cgcn_arch = CgcnArch {
                n: meta.n,
                layers,
                channels: channels.unwrap_or(32),
                order,
            };
            Model::Cgcn(CgcnModel::init(cgcn_arch, lap, config.seed, false)?)
        }
        Arch::Fcn => {
            let fcn_arch = FcnArch {
                n: meta.n,
                layers,
                units: channels.unwrap_or(64),
            };
            Model::Fcn(FcnModel::init(fcn_arch, config.seed, false)?)
        }
    };
    let history = train(
        &mut model,
        &dataset.scaler,
        &dataset.train,
        &dataset.validation,
        &config,
    )?;
    let out = out.unwrap_or_else(|| data.join(format!("model-{}.bin", model.kind())));
    save_model(&out, &model, &dataset.scaler.digest())?;
    let history_path = manifest_path_for(&out).with_file_name(format!(
        "{}.history.json",
        out.file_stem().unwrap().to_string_lossy()
    ));
    std::fs::write(&history_path, serde_json::to_string_pretty(&history)? + "\n")?;
    let mut digests = BTreeMap::new();
    digests.insert(
        data.join("meta.json").display().to_string(),
        file_digest(&data.join("meta.json"))?,
    );
    let config_echo = serde_json::json!({
        "arch": model.kind(),
        "layers": layers,
        "channels": channels,
        "order": if matches!(model, Model::Cgcn(_)) { order } else { 0 },
        "batch": config.batch_size,
        "max_epochs": config.max_epochs,
        "patience": config.patience,
        "lr": config.lr,
        "seed": config.seed,
        "precision": if config.round_params_to_f32 { "f32" } else { "f64" },
        "num_params": model.num_params(),
    });
    RunManifest::new("train", config_echo, digests).write(&manifest_path_for(&out))?;
    println!(
        "trained {} ({} params): {} epochs, best epoch {}, stop reason {:?}; checkpoint {}",
        model.kind(),
        model.num_params(),
        history.train_loss.len(),
        history.best_epoch,
        history.stop_reason,
        out.display()
    );
    Ok(())
}

fn load_model_for_data(data: &Path, model_path: &Path) -> Result<(Model, fdia::dataset::Dataset)> {
    let (dataset, _) = load_dataset(data)?;
    let grid = parse_grid_json(&std::fs::read_to_string(data.join("grid.json"))?)?;
    let (model, header) = load_model(model_path, Some(&grid))?;
    let digest = dataset.scaler.digest();
    if header.scaler_digest != digest {
        return Err(FdiaError::Format(format!(
            "checkpoint was trained with scaler {} but the dataset has scaler {digest}",
            header.scaler_digest
        )));
    }
    Ok((model, dataset))
}

fn cmd_eval(
    data: &Path,
    model_path: &Path,
    split: &str,
    threshold: f64,
    json: Option<PathBuf>,
    plot_data: Option<PathBuf>,
) -> Result<()> {
    let (model, dataset) = load_model_for_data(data, model_path)?;
    let samples = dataset
        .split(split)
        .ok_or_else(|| FdiaError::Config(format!("unknown split '{split}'")))?;
    let metrics = evaluate(&model, &dataset.scaler, samples, threshold)?;
    let rendered = serde_json::to_string_pretty(&metrics)? + "\n";
    print!("{rendered}");
    if let Some(path) = &json {
        std::fs::write(path, &rendered)?;
        let mut digests = BTreeMap::new();
        digests.insert(model_path.display().to_string(), file_digest(model_path)?);
        let config = serde_json::json!({ "split": split, "threshold": threshold });
        RunManifest::new("eval", config, digests).write(&manifest_path_for(path))?;
    }
    if let Some(dir) = plot_data {
        std::fs::create_dir_all(&dir)?;
        let mut bars = String::from("metric,value\n");
        bars.push_str(&format!("accuracy,{}\n", metrics.accuracy));
        if let Some(dr) = metrics.detection_rate {
            bars.push_str(&format!("detection_rate,{dr}\n"));
        }
        if let Some(fa) = metrics.false_alarm_rate {
            bars.push_str(&format!("false_alarm_rate,{fa}\n"));
        }
        std::fs::write(dir.join("metrics.csv"), bars)?;
        // loss curves come from the history file the trainer left next to
        // the checkpoint, when present
        let stem = model_path.file_stem().unwrap_or_default().to_string_lossy();
        let history_path = model_path.with_file_name(format!("{stem}.history.json"));
        if history_path.exists() {
            let history: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&history_path)?)?;
            let train_loss = history["train_loss"].as_array().cloned().unwrap_or_default();
            let val_loss = history["val_loss"].as_array().cloned().unwrap_or_default();
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            for (i, (t, v)) in train_loss.iter().zip(&val_loss).enumerate() {
                csv.push_str(&format!("{i},{t},{v}\n"));
            }
            std::fs::write(dir.join("loss.csv"), csv)?;
        }
    }
    Ok(())
}

fn cmd_bench(
    data: &Path,
    model_path: &Path,
    split: &str,
    repeat: usize,
    warmup: usize,
    json: Option<PathBuf>,
) -> Result<()> {
    let (model, dataset) = load_model_for_data(data, model_path)?;
    let samples = dataset
        .split(split)
        .ok_or_else(|| FdiaError::Config(format!("unknown split '{split}'")))?;
    let report = benchmark_inference(&model, &dataset.scaler, samples, repeat, warmup)?;
    let rendered = serde_json::to_string_pretty(&report)? + "\n";
    print!("{rendered}");
    if let Some(path) = &json {
        std::fs::write(path, &rendered)?;
        let mut digests = BTreeMap::new();
        digests.insert(model_path.display().to_string(), file_digest(model_path)?);
        let config = serde_json::json!({ "split": split, "repeat": repeat, "warmup": warmup });
        RunManifest::new("bench", config, digests).write(&manifest_path_for(path))?;
    }
    Ok(())
}
