//! `dncc diversity`: pairwise accuracy/diversity comparison of two trained
//! checkpoints (typically a DNCC run against its lambda = 0 baseline) on the
//! validation split of the given dataset.

use clap::Args;
use std::path::PathBuf;

use dncc::checkpoint::load_checkpoint;
use dncc::diversity::{compare_reports, pairwise_report};
use std::io::Write;

use crate::args::{resolve_out, DataArgs};
use crate::manifest::RunManifest;
use crate::{runtime, usage, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct DiversityArgs {
    /// Checkpoint of the DNCC-trained model.
    #[arg(long)]
    pub dncc: PathBuf,

    /// Checkpoint of the baseline model (for example a lambda = 0 run).
    #[arg(long)]
    pub baseline: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Seed the checkpoints were trained with (rebuilds the same split).
    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &DiversityArgs) -> CmdResult {
    let a = load_checkpoint(&args.dncc).map_err(usage)?;
    let b = load_checkpoint(&args.baseline).map_err(usage)?;
    if a.model.num_heads() != b.model.num_heads() {
        return Err(Failure::Usage(format!(
            "ensemble sizes differ: {} vs {}",
            a.model.num_heads(),
            b.model.num_heads()
        )));
    }
    let (ds, split) = args.data.load(args.seed)?;
    if split.val.num_features() != a.model.spec().input_dim {
        return Err(usage(format!(
            "dataset width {} does not match checkpoint input_dim {}",
            split.val.num_features(),
            a.model.spec().input_dim
        )));
    }

    let out = resolve_out(&args.out);
    std::fs::create_dir_all(&out).map_err(runtime)?;
    let resolved = serde_json::json!({
        "dncc": args.dncc.display().to_string(),
        "baseline": args.baseline.display().to_string(),
        "data": args.data,
        "seed": args.seed,
        "out": out.display().to_string(),
    });
    let mut manifest = RunManifest::new("diversity", resolved, &ds);
    manifest
        .artifact("dncc_report_csv", &out.join("dncc_report.csv"))
        .artifact("baseline_report_csv", &out.join("baseline_report.csv"))
        .artifact("deltas_csv", &out.join("deltas.csv"))
        .artifact("delta_summary_json", &out.join("delta_summary.json"));
    manifest.write(&out.join("manifest.json")).map_err(runtime)?;

    let report_a = pairwise_report(&a.model, &split.val).map_err(runtime)?;
    let report_b = pairwise_report(&b.model, &split.val).map_err(runtime)?;
    report_a.write_csv(&out.join("dncc_report.csv")).map_err(runtime)?;
    report_a
        .write_summary_json(&out.join("dncc_summary.json"))
        .map_err(runtime)?;
    report_b.write_csv(&out.join("baseline_report.csv")).map_err(runtime)?;
    report_b
        .write_summary_json(&out.join("baseline_summary.json"))
        .map_err(runtime)?;

    let deltas = compare_reports(&report_a, &report_b).map_err(runtime)?;
    let mut f = std::fs::File::create(out.join("deltas.csv")).map_err(runtime)?;
    writeln!(f, "pair_i,pair_j,accuracy_delta,diversity_delta").map_err(runtime)?;
    for d in &deltas {
        writeln!(f, "{},{},{},{}", d.i, d.j, d.accuracy_delta, d.diversity_delta).map_err(runtime)?;
    }
    let mean_acc = deltas.iter().map(|d| d.accuracy_delta).sum::<f64>() / deltas.len().max(1) as f64;
    let mean_div = deltas.iter().map(|d| d.diversity_delta).sum::<f64>() / deltas.len().max(1) as f64;
    let summary = serde_json::json!({
        "pairs": deltas.len(),
        "mean_accuracy_delta": mean_acc,
        "mean_diversity_delta": mean_div,
        "dncc_ensemble_accuracy": report_a.ensemble_accuracy,
        "baseline_ensemble_accuracy": report_b.ensemble_accuracy,
        "dncc_mean_diversity": report_a.mean_diversity(),
        "baseline_mean_diversity": report_b.mean_diversity(),
    });
    std::fs::write(
        out.join("delta_summary.json"),
        serde_json::to_string_pretty(&summary).map_err(runtime)?,
    )
    .map_err(runtime)?;

    println!(
        "{} pairs: mean diversity delta {mean_div:+.6}, mean accuracy delta {mean_acc:+.6}",
        deltas.len()
    );
    Ok(())
}
