//! Flag structures shared across subcommands, and their resolution into
//! datasets, models, and train configs.
//!
//! One `--seed` drives a whole run; independent streams for data generation,
//! splitting, model init, and batch order are derived from it with a fixed
//! mixer, so "same seed" means same data, same split, same init, same order.

use clap::{Args, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};

use dncc::data::{load_csv, load_idx, mix, synth_blobs, train_val_split, Dataset, SplitResult};
use dncc::loss::{DnccConfig, LambdaSchedule};
use dncc::model::{Activation, BackboneSpec, EnsembleConfig, EnsembleModel, FeatureMode};
use dncc::train::TrainConfig;

use crate::{usage, Failure};

/// Stream tags mixed with `--seed`.
const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Blobs,
    Idx,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModeArg {
    Split,
    ExpandSplit,
}

impl From<FeatureModeArg> for FeatureMode {
    fn from(v: FeatureModeArg) -> Self {
        match v {
            FeatureModeArg::Split => FeatureMode::Split,
            FeatureModeArg::ExpandSplit => FeatureMode::ExpandSplit,
        }
    }
}

/// Dataset selection flags.
#[derive(Args, Clone, Debug, Serialize)]
pub struct DataArgs {
    /// Dataset source: synthetic blobs, an IDX image/label pair, or a CSV.
    #[arg(long, value_enum, default_value = "blobs")]
    pub data: DataKind,

    /// Blobs: number of classes.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Blobs: samples per class.
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    /// Blobs: feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Blobs: isotropic cluster standard deviation.
    #[arg(long, default_value_t = 0.8)]
    pub spread: f64,

    /// IDX: images file.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX: labels file.
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// CSV: file path.
    #[arg(long)]
    pub csv_path: Option<PathBuf>,
    /// CSV: name of the label column.
    #[arg(long)]
    pub label_column: Option<String>,
}

impl DataArgs {
    /// Materialize the dataset and its 4:1 split.
    pub fn load(&self, seed: u64) -> Result<(Dataset, SplitResult), Failure> {
        let ds = match self.data {
            DataKind::Blobs => synth_blobs(
                mix(seed, DATA_STREAM),
                self.classes,
                self.per_class,
                self.dim,
                self.spread,
            )
            .map_err(usage)?,
            DataKind::Idx => {
                let images = self.images.as_ref().ok_or_else(|| {
                    usage("--data idx requires --images and --labels")
                })?;
                let labels = self.labels.as_ref().ok_or_else(|| {
                    usage("--data idx requires --images and --labels")
                })?;
                load_idx(images, labels).map_err(usage)?
            }
            DataKind::Csv => {
                let path = self.csv_path.as_ref().ok_or_else(|| {
                    usage("--data csv requires --csv-path and --label-column")
                })?;
                let column = self.label_column.as_ref().ok_or_else(|| {
                    usage("--data csv requires --csv-path and --label-column")
                })?;
                load_csv(path, column).map_err(usage)?
            }
        };
        let split = train_val_split(&ds, mix(seed, SPLIT_STREAM)).map_err(usage)?;
        if !split.stratified {
            eprintln!("warning: a class has fewer than 5 samples; split is unstratified");
        }
        Ok((ds, split))
    }
}

/// Model and optimization flags shared by `train` and `ablate`.
#[derive(Args, Clone, Debug, Serialize)]
pub struct ModelArgs {
    /// Ensemble size M.
    #[arg(long, default_value_t = 8)]
    pub heads: usize,

    /// How heads receive their features.
    #[arg(long, value_enum, default_value = "split")]
    pub feature_mode: FeatureModeArg,

    /// Trailing hidden layers replicated per head instead of shared.
    #[arg(long, default_value_t = 0)]
    pub branch_depth: usize,

    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,

    /// Penalty schedule: `const:<v>` or `ramp:<base>`.
    #[arg(long, default_value = "ramp:1e-2")]
    pub lambda: String,

    /// Treat the ensemble mean as a constant in the penalty gradient.
    #[arg(long, default_value_t = false)]
    pub detach: bool,

    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    #[arg(long, default_value_t = 128)]
    pub batch: usize,

    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,

    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,

    /// Epochs at which the learning rate decays, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20,27")]
    pub milestones: Vec<usize>,

    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
}

/// Parse `const:<v>` / `ramp:<base>`.
pub fn parse_lambda(s: &str) -> Result<LambdaSchedule, Failure> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("--lambda {s:?}: expected const:<v> or ramp:<base>")))?;
    let v: f64 = value
        .parse()
        .map_err(|_| usage(format!("--lambda {s:?}: {value:?} is not a number")))?;
    if !v.is_finite() {
        return Err(usage(format!("--lambda {s:?}: value must be finite")));
    }
    match kind {
        "const" => Ok(LambdaSchedule::Constant(v)),
        "ramp" => Ok(LambdaSchedule::LinearRamp(v)),
        other => Err(usage(format!(
            "--lambda {s:?}: unknown schedule {other:?} (expected const or ramp)"
        ))),
    }
}

impl ModelArgs {
    pub fn build_model(&self, input_dim: usize, num_classes: usize, seed: u64) -> Result<EnsembleModel, Failure> {
        let spec = BackboneSpec {
            input_dim,
            hidden_widths: self.hidden.clone(),
            activation: Activation::Relu,
            branch_depth: self.branch_depth,
        };
        let cfg = EnsembleConfig {
            num_heads: self.heads,
            feature_mode: self.feature_mode.into(),
            num_classes,
            seed: mix(seed, MODEL_STREAM),
        };
        EnsembleModel::init(spec, cfg).map_err(usage)
    }

    pub fn build_train_config(&self, seed: u64) -> Result<TrainConfig, Failure> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            initial_lr: self.lr,
            lr_decay_factor: self.lr_decay,
            lr_milestones: self.milestones.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            dncc: DnccConfig {
                lambda_schedule: parse_lambda(&self.lambda)?,
                detach_ensemble_mean: self.detach,
            },
            seed: mix(seed, BATCH_STREAM),
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

/// Resolve `--out` against the `DNCC_OUT_ROOT` environment variable: a
/// relative path lands under the root when the variable is set.
pub fn resolve_out(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os("DNCC_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(out),
        None => out.to_path_buf(),
    }
}
