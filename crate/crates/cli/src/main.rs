//! Command-line front end for the sector-classification toolkit: dataset
//! construction (carve/synth/import), image conversion, training,
//! evaluation, inference, and checkpoint/architecture inspection.

use std::io::Read as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use bytenet_core::augment::{apply_policy, AugmentError, AugmentPolicy};
use bytenet_core::byte2image::{emit_pgm, sector_to_image, ImageError};
use bytenet_core::corpus::{
    carve_file, generate_synthetic, import_benchmark, load_dataset, save_dataset, CorpusError,
    SectorDataset, Split, SynthSpec,
};
use bytenet_core::evaluator::{argmax, emit_report, evaluate, EvalError};
use bytenet_core::model::{
    bytes_to_tensor, count_params_and_macs, images_to_tensor, load_checkpoint, BranchMode,
    ByteNetModel, ModelConfig, ModelError, Preset, Variant,
};
use bytenet_core::trainer::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io error: {e}"))
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient(_) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "bytenet", version, about = "File-fragment classification toolkit")]
struct Cli {
    /// Omit wall-clock timestamps from generated run metadata.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Data-pipeline worker bound. Accepted for compatibility; this build
    /// processes sectors on a single thread regardless.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slice files into labeled fixed-size sectors and write a dataset.
    Carve {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        label: String,
        #[arg(long)]
        sector_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled dataset from a generator spec.
    Synth {
        /// JSON file: {"classes": [...], "per_class_count": N, "sector_size": N, "seed": N}
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Import a ZIP-of-arrays benchmark archive with a side-car label map.
    Import {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        sector_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one dataset record as grayscale PGM image(s).
    Convert {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 16)]
        ngram: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.jsonl plus best/last checkpoints.
    Train {
        /// JSON file: {"model": {...}, "train": {...}, "augment": {...}}
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an identical configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and emit report files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training metrics log; adds an accuracy-curve SVG to the report.
        #[arg(long)]
        train_log: Option<PathBuf>,
    },
    /// Classify the sectors of a file; one JSON line per sector.
    #[command(group(ArgGroup::new("source").required(true).args(["file", "stdin"])))]
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        stdin: bool,
    },
    /// Print a checkpoint's configuration, parameter count, and classes.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the parameter/MAC audit for a model configuration.
    Audit {
        /// JSON file: a full model config, or {"variant", "preset", "num_classes"?}
        #[arg(long)]
        config: PathBuf,
    },
}

/// A model description in a config file: either every architectural field,
/// or a named preset with an optional class count.
#[derive(Deserialize)]
#[serde(untagged)]
enum ModelSpec {
    Full(ModelConfig),
    Compact {
        variant: Variant,
        preset: Preset,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl ModelSpec {
    fn resolve(self, classes_hint: Option<usize>) -> Result<ModelConfig, CliError> {
        match self {
            ModelSpec::Full(c) => Ok(c),
            ModelSpec::Compact {
                variant,
                preset,
                num_classes,
            } => {
                let t = num_classes.or(classes_hint).ok_or_else(|| {
                    CliError::Usage("model spec needs num_classes (no dataset to infer it from)".into())
                })?;
                Ok(ModelConfig::preset(variant, preset, t))
            }
        }
    }
}

#[derive(Deserialize)]
struct TrainFile {
    model: ModelSpec,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    augment: Option<AugmentPolicy>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let body = std::fs::read(path)?;
    serde_json::from_slice(&body)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_sector_size(n: usize) -> Result<(), CliError> {
    if n == 512 || n == 4096 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--sector-size {n} (supported: 512, 4096)"
        )))
    }
}

fn load_model(path: &Path) -> Result<(bytenet_core::model::CheckpointData, ByteNetModel<f32>), CliError> {
    let ck = load_checkpoint(path)?;
    let model = ByteNetModel::<f32>::new(&ck.config, 0)?;
    model.load_state_blobs(&ck.tensors)?;
    Ok((ck, model))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Carve {
            input,
            label,
            sector_size,
            out,
        } => {
            check_sector_size(sector_size)?;
            let mut records = Vec::new();
            for path in &input {
                records.extend(carve_file(path, sector_size, 0)?);
            }
            let ds = SectorDataset::new(sector_size, vec![label], records, Split::Train)?;
            save_dataset(&ds, &out)?;
            println!("wrote {} sectors to {}", ds.len(), out.display());
        }
        Command::Synth { spec, out } => {
            let spec: SynthSpec = read_json(&spec)?;
            let ds = generate_synthetic(&spec)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} sectors across {} classes to {}",
                ds.len(),
                ds.num_classes(),
                out.display()
            );
        }
        Command::Import {
            archive,
            labels,
            sector_size,
            out,
        } => {
            check_sector_size(sector_size)?;
            let ds = import_benchmark(&archive, &labels, sector_size)?;
            save_dataset(&ds, &out)?;
            println!(
                "imported {} sectors across {} classes to {}",
                ds.len(),
                ds.num_classes(),
                out.display()
            );
        }
        Command::Convert {
            dataset,
            index,
            ngram,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let rec = ds.records.get(index).ok_or_else(|| {
                CliError::Data(format!(
                    "index {index} out of range for {}-record dataset",
                    ds.len()
                ))
            })?;
            let img = sector_to_image(&rec.bytes, ngram)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("sector_{index}.pgm"));
            emit_pgm(&img, &path)?;
            println!(
                "{}x{}x{} image for class {:?} -> {}",
                img.height,
                img.width,
                img.channels,
                ds.class_names[rec.label as usize],
                path.display()
            );
        }
        Command::Train {
            config,
            train: train_path,
            val,
            out,
            resume,
        } => {
            let started = now_unix();
            let file: TrainFile = read_json(&config)?;
            let train_ds = load_dataset(&train_path)?;
            let val_ds = val.as_deref().map(load_dataset).transpose()?;
            let model_cfg = file.model.resolve(Some(train_ds.num_classes()))?;
            let outcome = train(
                &model_cfg,
                &file.train,
                &file.augment.unwrap_or_default(),
                &train_ds,
                val_ds.as_ref(),
                &out,
                resume.as_deref(),
                None,
            )?;
            write_run_metadata(&out, "train", started, cli.no_timestamp)?;
            println!(
                "trained {} epochs ({} steps); best val acc {:.4}",
                outcome.epochs_run, outcome.steps, outcome.best_val_acc
            );
            println!("checkpoints: {} {}", outcome.best_path.display(), outcome.last_path.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            out,
            train_log,
        } => {
            let (ck, model) = load_model(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            if ds.class_names != ck.class_names {
                return Err(CliError::Data(format!(
                    "dataset classes {:?} differ from checkpoint classes {:?}",
                    ds.class_names, ck.class_names
                )));
            }
            let report = evaluate(&model, &ck.augment, &ds, 32, BranchMode::Both)?;
            emit_report(&report, train_log.as_deref(), &out)?;
            println!(
                "accuracy {:.4} over {} sectors ({} classes); report in {}",
                report.overall_accuracy,
                report.sample_count,
                report.class_names.len(),
                out.display()
            );
        }
        Command::Infer {
            checkpoint,
            file,
            stdin,
        } => {
            let (ck, model) = load_model(&checkpoint)?;
            let bytes = if stdin {
                let mut buf = Vec::new();
                std::io::stdin().read_to_end(&mut buf)?;
                buf
            } else {
                std::fs::read(file.expect("clap group guarantees a source"))?
            };
            infer_stream(&ck, &model, &bytes)?;
        }
        Command::Inspect { checkpoint } => {
            let ck = load_checkpoint(&checkpoint)?;
            let audit = count_params_and_macs(&ck.config);
            println!(
                "config: {}",
                serde_json::to_string_pretty(&ck.config).expect("config serializes")
            );
            println!("parameters: {}", audit.param_count);
            println!("classes ({}): {}", ck.class_names.len(), ck.class_names.join(", "));
            println!("trainer state: {}", ck.trainer_state);
        }
        Command::Audit { config } => {
            let spec: ModelSpec = read_json(&config)?;
            let cfg = spec.resolve(Some(75))?;
            cfg.validate()?;
            let audit = count_params_and_macs(&cfg);
            println!(
                "{:?} {:?} with {} classes",
                cfg.variant, cfg.preset, cfg.num_classes
            );
            println!(
                "parameters: {} ({:.2}M)",
                audit.param_count,
                audit.param_count as f64 / 1e6
            );
            println!(
                "MACs/sector: {} ({:.2}M)",
                audit.mac_count,
                audit.mac_count as f64 / 1e6
            );
            let chain: Vec<String> = audit
                .shape_chain
                .iter()
                .map(|(h, w)| format!("{h}x{w}"))
                .collect();
            println!("feature maps (embed, stages 1-4): {}", chain.join(" -> "));
        }
    }
    Ok(())
}

/// Sector-by-sector classification of a byte stream. A trailing partial
/// sector is ignored, matching the carving convention.
fn infer_stream(
    ck: &bytenet_core::model::CheckpointData,
    model: &ByteNetModel<f32>,
    bytes: &[u8],
) -> Result<(), CliError> {
    let ss = ck.config.sector_size;
    if bytes.len() < ss {
        return Err(CliError::Data(format!(
            "input is {} bytes, shorter than one {ss}-byte sector",
            bytes.len()
        )));
    }
    let t = ck.config.num_classes;
    let mut rng = bytenet_core::corpus::derive_rng(0, &[]); // eval mode: unused
    let sectors: Vec<&[u8]> = bytes.chunks_exact(ss).collect();
    let stdout = std::io::stdout();
    let mut w = std::io::BufWriter::new(stdout.lock());
    for (chunk_idx, batch) in sectors.chunks(32).enumerate() {
        let images = batch
            .iter()
            .map(|s| sector_to_image(s, ck.config.ngram_n))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = vec![0usize; batch.len()];
        let samples = apply_policy(&images, &labels, t, &ck.augment, false, &mut rng)?;
        let imgs: Vec<_> = samples.into_iter().map(|s| s.image).collect();
        let out = model.forward(
            &bytes_to_tensor(batch),
            &images_to_tensor(&imgs),
            false,
            BranchMode::Both,
        )?;
        for (i, row) in out.to_vec().chunks(t).enumerate() {
            let best = argmax(row);
            let line = serde_json::json!({
                "offset": (chunk_idx * 32 + i) * ss,
                "class": ck.class_names[best],
                "confidence": row[best].exp(),
            });
            use std::io::Write as _;
            writeln!(w, "{line}")?;
        }
    }
    use std::io::Write as _;
    w.flush()?;
    Ok(())
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `run.json` next to the training artifacts; the timestamp is the only
/// non-deterministic field and `--no-timestamp` drops it.
fn write_run_metadata(
    out: &Path,
    command: &str,
    started_at: u64,
    no_timestamp: bool,
) -> Result<(), CliError> {
    let meta = if no_timestamp {
        serde_json::json!({ "command": command })
    } else {
        serde_json::json!({ "command": command, "started_at": started_at })
    };
    std::fs::write(out.join("run.json"), format!("{meta}\n"))?;
    Ok(())
}
