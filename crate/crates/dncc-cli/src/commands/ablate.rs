//! `dncc ablate`: sweeps over ensemble size, penalty coefficient, or split
//! position, one training per (setting, seed), emitting one tidy CSV row per
//! run: `setting,seed,ensemble_accuracy,mean_head_accuracy,mean_diversity,shared_param_fraction`.
//!
//! A failed sub-run is recorded and the sweep continues; the command exits 1
//! at the end if anything failed.

use clap::{Args, Subcommand};
use std::io::Write;
use std::path::PathBuf;

use dncc::diversity::pairwise_report;
use dncc::train::{evaluate, train};

use crate::args::{resolve_out, DataArgs, ModelArgs};
use crate::manifest::{fingerprint, RunManifest};
use crate::{runtime, usage, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(subcommand)]
    pub study: Study,
}

#[derive(Subcommand, Debug)]
pub enum Study {
    /// Vary the ensemble size M.
    Size(SizeArgs),
    /// Vary a constant penalty coefficient.
    Lambda(LambdaArgs),
    /// Vary the branch depth (split position).
    Split(SplitArgs),
}

#[derive(Args, Debug)]
pub struct SweepBase {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Base seeds; every setting is trained once per seed.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SizeArgs {
    #[command(flatten)]
    pub base: SweepBase,

    /// Ensemble sizes to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m_list: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct LambdaArgs {
    #[command(flatten)]
    pub base: SweepBase,

    /// Constant lambda values to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_list: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub base: SweepBase,

    /// Branch depths to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub depth_list: Vec<usize>,
}

struct Row {
    setting: String,
    seed: u64,
    ensemble_accuracy: f64,
    mean_head_accuracy: f64,
    mean_diversity: f64,
    shared_param_fraction: f64,
}

fn run_one(base: &SweepBase, model_args: &ModelArgs, setting: &str, seed: u64) -> Result<Row, Failure> {
    let (_ds, split) = base.data.load(seed)?;
    let mut model = model_args.build_model(split.train.num_features(), split.train.num_classes(), seed)?;
    let cfg = model_args.build_train_config(seed)?;
    train(&mut model, &split.train, &split.val, &cfg, None).map_err(runtime)?;
    let eval = evaluate(&model, &split.val).map_err(runtime)?;
    let mean_diversity = if model.num_heads() >= 2 {
        pairwise_report(&model, &split.val).map_err(runtime)?.mean_diversity()
    } else {
        0.0
    };
    Ok(Row {
        setting: setting.to_string(),
        seed,
        ensemble_accuracy: eval.ensemble_accuracy,
        mean_head_accuracy: eval.per_head_accuracy.iter().sum::<f64>()
            / eval.per_head_accuracy.len() as f64,
        mean_diversity,
        shared_param_fraction: model.shared_param_fraction(),
    })
}

pub fn run(args: &AblateArgs) -> CmdResult {
    // (setting label, per-run model args) pairs.
    let (base, settings): (&SweepBase, Vec<(String, ModelArgs)>) = match &args.study {
        Study::Size(a) => {
            if a.m_list.is_empty() {
                return Err(usage("--m-list must be non-empty"));
            }
            let s = a
                .m_list
                .iter()
                .map(|&m| {
                    let mut ma = a.base.model.clone();
                    ma.heads = m;
                    (m.to_string(), ma)
                })
                .collect();
            (&a.base, s)
        }
        Study::Lambda(a) => {
            if a.lambda_list.is_empty() {
                return Err(usage("--lambda-list must be non-empty"));
            }
            let s = a
                .lambda_list
                .iter()
                .map(|&l| {
                    let mut ma = a.base.model.clone();
                    ma.lambda = format!("const:{l}");
                    (l.to_string(), ma)
                })
                .collect();
            (&a.base, s)
        }
        Study::Split(a) => {
            if a.depth_list.is_empty() {
                return Err(usage("--depth-list must be non-empty"));
            }
            let s = a
                .depth_list
                .iter()
                .map(|&d| {
                    let mut ma = a.base.model.clone();
                    ma.branch_depth = d;
                    (d.to_string(), ma)
                })
                .collect();
            (&a.base, s)
        }
    };
    if base.seeds.is_empty() {
        return Err(usage("--seeds must be non-empty"));
    }

    let out = resolve_out(&base.out);
    std::fs::create_dir_all(&out).map_err(runtime)?;
    let (first_ds, _) = base.data.load(base.seeds[0])?;
    let per_seed_fingerprints: Vec<serde_json::Value> = base
        .seeds
        .iter()
        .map(|&s| {
            let (ds, _) = base.data.load(s)?;
            Ok(serde_json::json!({ "seed": s, "fingerprint": fingerprint(&ds) }))
        })
        .collect::<Result<_, Failure>>()?;
    let resolved = serde_json::json!({
        "study": match args.study {
            Study::Size(_) => "size",
            Study::Lambda(_) => "lambda",
            Study::Split(_) => "split",
        },
        "settings": settings.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(),
        "seeds": base.seeds,
        "data": base.data,
        "model": base.model,
        "datasets": per_seed_fingerprints,
        "out": out.display().to_string(),
    });
    let mut manifest = RunManifest::new("ablate", resolved, &first_ds);
    manifest.artifact("ablation_csv", &out.join("ablation.csv"));
    manifest.write(&out.join("manifest.json")).map_err(runtime)?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (setting, model_args) in &settings {
        for &seed in &base.seeds {
            match run_one(base, model_args, setting, seed) {
                Ok(row) => {
                    println!(
                        "setting {setting} seed {seed}: acc {:.4}, mean head acc {:.4}, diversity {:.4}, shared {:.3}",
                        row.ensemble_accuracy,
                        row.mean_head_accuracy,
                        row.mean_diversity,
                        row.shared_param_fraction
                    );
                    rows.push(row);
                }
                Err(e) => {
                    eprintln!("setting {setting} seed {seed} failed: {}", e.message());
                    failures.push(format!("setting {setting} seed {seed}: {}", e.message()));
                }
            }
        }
    }

    let mut f = std::fs::File::create(out.join("ablation.csv")).map_err(runtime)?;
    writeln!(
        f,
        "setting,seed,ensemble_accuracy,mean_head_accuracy,mean_diversity,shared_param_fraction"
    )
    .map_err(runtime)?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.setting,
            r.seed,
            r.ensemble_accuracy,
            r.mean_head_accuracy,
            r.mean_diversity,
            r.shared_param_fraction
        )
        .map_err(runtime)?;
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} of {} sub-runs failed:\n  {}",
            failures.len(),
            settings.len() * base.seeds.len(),
            failures.join("\n  ")
        )))
    }
}
