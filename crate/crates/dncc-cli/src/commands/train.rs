//! `dncc train`: one experiment end to end.
//!
//! Writes `manifest.json` before training, then `metrics.jsonl`,
//! `metrics.csv`, and `last.ckpt` (rewritten after every epoch, so an abort
//! keeps the last good state). `--stop-after` truncates the run without
//! changing its schedules; `--resume` continues a truncated run to the full
//! horizon.

use clap::Args;
use std::path::PathBuf;

use dncc::checkpoint::load_checkpoint;
use dncc::train::{resume, train_until, MetricsLog};

use crate::args::{resolve_out, DataArgs, ModelArgs};
use crate::manifest::RunManifest;
use crate::{runtime, usage, CmdResult};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Master seed; data, split, init, and batch streams derive from it.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Output directory for manifest, metrics, and checkpoints.
    #[arg(long)]
    pub out: PathBuf,

    /// Continue from a checkpoint written by an earlier (stopped) run with
    /// identical flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Stop after this many epochs of the full schedule.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

pub fn run(args: &TrainArgs) -> CmdResult {
    let out = resolve_out(&args.out);
    let (ds, split) = args.data.load(args.seed)?;
    let cfg = args.model.build_train_config(args.seed)?;
    if let Some(stop) = args.stop_after {
        if stop == 0 || stop > cfg.epochs {
            return Err(usage(format!(
                "--stop-after must lie in [1, {}], got {stop}",
                cfg.epochs
            )));
        }
        if args.resume.is_some() {
            return Err(usage("--stop-after cannot be combined with --resume"));
        }
    }

    std::fs::create_dir_all(&out).map_err(runtime)?;
    let resolved = serde_json::json!({
        "data": args.data,
        "model": args.model,
        "seed": args.seed,
        "out": out.display().to_string(),
        "resume": args.resume.as_ref().map(|p| p.display().to_string()),
        "stop_after": args.stop_after,
    });
    let mut manifest = RunManifest::new("train", resolved, &ds);
    manifest
        .artifact("metrics_jsonl", &out.join("metrics.jsonl"))
        .artifact("metrics_csv", &out.join("metrics.csv"))
        .artifact("checkpoint", &out.join("last.ckpt"));
    manifest.write(&out.join("manifest.json")).map_err(runtime)?;

    let log: MetricsLog = match &args.resume {
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path).map_err(usage)?;
            let (_model, log) =
                resume(ckpt, &split.train, &split.val, &cfg, Some(&out)).map_err(runtime)?;
            log
        }
        None => {
            let mut model =
                args.model
                    .build_model(ds.num_features(), ds.num_classes(), args.seed)?;
            let stop = args.stop_after.unwrap_or(cfg.epochs);
            train_until(&mut model, &split.train, &split.val, &cfg, stop, Some(&out))
                .map_err(runtime)?
        }
    };

    log.write_jsonl(&out.join("metrics.jsonl")).map_err(runtime)?;
    log.write_csv(&out.join("metrics.csv")).map_err(runtime)?;

    for r in &log.records {
        println!(
            "epoch {:>3}  lambda {:.3e}  lr {:.3e}  train_ens {:.6}  val_ens {:.6}  val_acc {:.4}  ({:.2}s)",
            r.epoch,
            r.lambda,
            r.lr,
            r.train_ensemble_loss,
            r.val_ensemble_loss,
            r.val_ensemble_accuracy,
            r.wall_time_s
        );
    }
    if let Some(last) = log.records.last() {
        println!(
            "done: {} epochs, final val ensemble accuracy {:.4}",
            log.records.len(),
            last.val_ensemble_accuracy
        );
    }
    Ok(())
}
