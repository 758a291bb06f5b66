//! Training loop: AdamW with linear-warmup + cosine-decay schedule,
//! on-the-fly augmentation, JSON-lines metrics, best/last checkpoints,
//! and exact resume from epoch boundaries.

mod adamw;
mod schedule;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use schedule::lr_at;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_policy, AugmentError, AugmentPolicy, NormAccumulator, RealImage};
use crate::byte2image::{sector_to_image, ImageError};
use crate::corpus::{derive_rng, SectorDataset};
use crate::evaluator::{evaluate, EvalError};
use crate::model::{
    bytes_to_tensor, images_to_tensor, load_checkpoint, save_checkpoint, BranchMode, ByteNetModel,
    CheckpointData, ModelConfig, ModelError, TensorBlob,
};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {0}; step aborted")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    FormatError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Root seed for init, shuffling, augmentation, and the holdout split.
    pub seed: u64,
    /// Validate (and maybe save a best checkpoint) every this many epochs.
    pub eval_every: usize,
    /// Fraction of train records held out when no validation set is given.
    pub holdout_fraction: f64,
    pub branch: BranchMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 2,
            batch_size: 32,
            lr_start: 5e-7,
            lr_peak: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 1,
            holdout_fraction: 0.1,
            branch: BranchMode::Both,
        }
    }
}

/// Paths and headline numbers from a finished (or interrupted) run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    pub epochs_run: usize,
    pub best_val_acc: f64,
    pub final_val_acc: Option<f64>,
    pub metrics_path: PathBuf,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
}

/// The trainer's slice of the checkpoint header. `best_val_acc` starts at
/// -1.0 (not -inf: accuracies live in [0, 1] and JSON has no infinities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    train_config: TrainConfig,
    completed_epochs: usize,
    step: u64,
    best_val_acc: f64,
}

/// Train a fresh or resumed model over `train_ds`.
///
/// When `val_ds` is `None` a seeded `holdout_fraction` of the train records
/// becomes the validation split. `resume_from` must point at a checkpoint
/// written by this function with an identical train config; the run then
/// continues from its epoch boundary and reproduces the uninterrupted run
/// bit for bit. `epoch_limit` stops early after that many total completed
/// epochs without altering the schedule (the stopped run resumes cleanly).
pub fn train(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    base_policy: &AugmentPolicy,
    train_ds: &SectorDataset,
    val_ds: Option<&SectorDataset>,
    out_dir: &Path,
    resume_from: Option<&Path>,
    epoch_limit: Option<usize>,
) -> Result<TrainOutcome, TrainError> {
    model_config.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.eval_every == 0 {
        return Err(TrainError::InvalidConfig(
            "batch_size, epochs, and eval_every must be positive".into(),
        ));
    }
    if train_ds.num_classes() != model_config.num_classes {
        return Err(TrainError::DatasetMismatch(format!(
            "dataset has {} classes, model expects {}",
            train_ds.num_classes(),
            model_config.num_classes
        )));
    }
    if train_ds.sector_size != model_config.sector_size {
        return Err(TrainError::DatasetMismatch(format!(
            "dataset sector size {}, model expects {}",
            train_ds.sector_size, model_config.sector_size
        )));
    }
    if let Some(v) = val_ds {
        if v.class_names != train_ds.class_names {
            return Err(TrainError::DatasetMismatch(
                "validation class names differ from train".into(),
            ));
        }
        if v.sector_size != train_ds.sector_size {
            return Err(TrainError::DatasetMismatch(
                "validation sector size differs from train".into(),
            ));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let holdout;
    let (train_split, val_split) = match val_ds {
        Some(v) => (train_ds, v),
        None => {
            holdout = train_ds.split_holdout(cfg.holdout_fraction, cfg.seed);
            (&holdout.0, &holdout.1)
        }
    };
    if train_split.is_empty() || val_split.is_empty() {
        return Err(TrainError::DatasetMismatch("empty train or validation split".into()));
    }

    let steps_per_epoch = train_split.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    if warmup_steps >= total_steps {
        return Err(TrainError::InvalidConfig(format!(
            "warmup ({warmup_steps} steps) must end before the run ({total_steps} steps)"
        )));
    }

    let model = ByteNetModel::<f32>::new(model_config, cfg.seed)?;
    let params = model.parameters();
    let mut opt = AdamWState::new(&params);
    let opt_cfg = AdamWConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };

    let mut start_epoch = 0usize;
    let mut best_val_acc = -1.0f64;
    let policy = match resume_from {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config != *model_config {
                return Err(TrainError::InvalidConfig(
                    "checkpoint was written for a different model config".into(),
                ));
            }
            if ck.class_names != train_split.class_names {
                return Err(TrainError::DatasetMismatch(
                    "checkpoint class names differ from dataset".into(),
                ));
            }
            let state: TrainerState = serde_json::from_value(ck.trainer_state.clone())
                .map_err(|e| TrainError::FormatError(format!("trainer state: {e}")))?;
            if state.train_config != *cfg {
                return Err(TrainError::InvalidConfig(
                    "resume requires the original training config".into(),
                ));
            }
            model.load_state_blobs(&ck.tensors)?;
            restore_moments(&params, &ck.tensors, &mut opt)?;
            opt.step = state.step;
            start_epoch = state.completed_epochs;
            best_val_acc = state.best_val_acc;
            ck.augment
        }
        None => fit_policy(base_policy, train_split, model_config.ngram_n)?,
    };
    policy.validate()?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let best_path = out_dir.join("best.bnck");
    let last_path = out_dir.join("last.bnck");
    let log_file = if resume_from.is_some() {
        std::fs::OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        std::fs::File::create(&metrics_path)?
    };
    let mut log = std::io::BufWriter::new(log_file);

    // pair mixing is impossible in a trailing 1-sample batch
    let solo_policy = AugmentPolicy {
        p_cutmix: 0.0,
        p_mixup: 0.0,
        ..policy.clone()
    };

    let t = model_config.num_classes;
    let end_epoch = epoch_limit.map_or(cfg.epochs, |l| l.min(cfg.epochs));
    let mut final_val_acc = None;
    for epoch in start_epoch..end_epoch {
        let shuffle_seed: u64 = derive_rng(cfg.seed, &[0x73687566, epoch as u64]).gen();
        for (batch_idx, (bytes, labels)) in train_split
            .batch_iter(cfg.batch_size, Some(shuffle_seed))
            .enumerate()
        {
            let images = bytes
                .iter()
                .map(|s| sector_to_image(s, model_config.ngram_n))
                .collect::<Result<Vec<_>, _>>()?;
            let mut rng = derive_rng(cfg.seed, &[0x617567, epoch as u64, batch_idx as u64]);
            let pol = if bytes.len() < 2 { &solo_policy } else { &policy };
            let samples = apply_policy(&images, &labels, t, pol, true, &mut rng)?;
            let mut targets = Vec::with_capacity(samples.len() * t);
            let imgs: Vec<RealImage> = samples
                .into_iter()
                .map(|s| {
                    targets.extend_from_slice(&s.soft_label);
                    s.image
                })
                .collect();
            let out = model.forward(
                &bytes_to_tensor(&bytes),
                &images_to_tensor(&imgs),
                true,
                cfg.branch,
            )?;
            let loss = out.nll_loss(&targets)?;
            let loss_val = loss.item() as f64;
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: opt.step });
            }
            let lr = lr_at(opt.step as usize, warmup_steps, total_steps, cfg.lr_start, cfg.lr_peak);
            model.zero_grads();
            loss.backward()?;
            adamw_step(&params, &mut opt, lr, &opt_cfg)?;
            writeln!(
                log,
                "{}",
                serde_json::json!({"step": opt.step, "epoch": epoch, "lr": lr, "loss": loss_val})
            )?;
        }
        let completed = epoch + 1;
        if completed % cfg.eval_every == 0 || completed == cfg.epochs {
            let report = evaluate(&model, &policy, val_split, cfg.batch_size, cfg.branch)?;
            let acc = report.overall_accuracy;
            writeln!(
                log,
                "{}",
                serde_json::json!({"step": opt.step, "epoch": epoch, "val_acc": acc})
            )?;
            final_val_acc = Some(acc);
            if acc > best_val_acc {
                best_val_acc = acc;
                save_state(&best_path, &model, &policy, train_split, cfg, &params, &opt, completed, best_val_acc)?;
            }
        }
        save_state(&last_path, &model, &policy, train_split, cfg, &params, &opt, completed, best_val_acc)?;
        log.flush()?;
    }
    Ok(TrainOutcome {
        steps: opt.step,
        epochs_run: end_epoch.saturating_sub(start_epoch),
        best_val_acc,
        final_val_acc,
        metrics_path,
        best_path,
        last_path,
    })
}

/// Fill in normalization stats from the train split unless the caller
/// supplied them already.
fn fit_policy(
    base: &AugmentPolicy,
    train: &SectorDataset,
    ngram_n: usize,
) -> Result<AugmentPolicy, TrainError> {
    if !base.norm_mean.is_empty() {
        return Ok(base.clone());
    }
    let mut acc = NormAccumulator::new();
    for rec in &train.records {
        acc.add(&sector_to_image(&rec.bytes, ngram_n)?)?;
    }
    let (norm_mean, norm_std) = acc.finish()?;
    Ok(AugmentPolicy {
        norm_mean,
        norm_std,
        ..base.clone()
    })
}

#[allow(clippy::too_many_arguments)]
fn save_state(
    path: &Path,
    model: &ByteNetModel<f32>,
    policy: &AugmentPolicy,
    train: &SectorDataset,
    cfg: &TrainConfig,
    params: &[(String, crate::tensor::Tensor<f32>)],
    opt: &AdamWState<f32>,
    completed_epochs: usize,
    best_val_acc: f64,
) -> Result<(), TrainError> {
    let mut tensors = model.state_blobs();
    for ((name, _), (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
        tensors.push(TensorBlob {
            name: format!("opt.m.param.{name}"),
            shape: vec![m.len()],
            data: m.clone(),
        });
        tensors.push(TensorBlob {
            name: format!("opt.v.param.{name}"),
            shape: vec![v.len()],
            data: v.clone(),
        });
    }
    let state = TrainerState {
        train_config: cfg.clone(),
        completed_epochs,
        step: opt.step,
        best_val_acc,
    };
    let data = CheckpointData {
        config: model.config.clone(),
        augment: policy.clone(),
        class_names: train.class_names.clone(),
        trainer_state: serde_json::to_value(&state)
            .map_err(|e| TrainError::FormatError(e.to_string()))?,
        tensors,
    };
    save_checkpoint(&data, path)?;
    Ok(())
}

fn restore_moments(
    params: &[(String, crate::tensor::Tensor<f32>)],
    blobs: &[TensorBlob],
    opt: &mut AdamWState<f32>,
) -> Result<(), TrainError> {
    let by_name: std::collections::HashMap<&str, &TensorBlob> =
        blobs.iter().map(|b| (b.name.as_str(), b)).collect();
    for ((name, _), (m, v)) in params.iter().zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
        for (prefix, dst) in [("opt.m", &mut *m), ("opt.v", v)] {
            let key = format!("{prefix}.param.{name}");
            let blob = by_name.get(key.as_str()).ok_or_else(|| {
                TrainError::FormatError(format!("checkpoint has no optimizer moment {key}"))
            })?;
            if blob.data.len() != dst.len() {
                return Err(TrainError::FormatError(format!(
                    "moment {key}: {} values in file, model wants {}",
                    blob.data.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&blob.data);
        }
    }
    Ok(())
}
