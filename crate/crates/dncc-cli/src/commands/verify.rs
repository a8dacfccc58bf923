//! `dncc verify`: identity sweeps and a full-model gradient check.
//!
//! Four suites, each with its own tolerance:
//!
//! 1. decomposition identity on random ensembles (1e-9), with the Bregman
//!    information computed by a second route, independent of the loss code;
//! 2. Jensen-gap equality for -log, squared-norm, and x-log-x over random
//!    discrete distributions (1e-12);
//! 3. lambda = -1 head-loss average against the ensemble loss (1e-12);
//! 4. central-difference gradient check of the full objective on a
//!    2-hidden-layer, 4-head, 3-class model for both detach settings and
//!    lambda in {-1, 0, 1e-4, 1e-2} (1e-5).
//!
//! On any violation the offending case is serialized for replay and the
//! command exits 1. The hidden `--inject` flag flips the penalty sign inside
//! the verification routes; it exists so tests can confirm the verifier
//! actually catches a broken identity.

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use dncc::bregman::{
    bregman_information, itakura_saito_log_domain, jensen_gap, ConvexFunctional,
    DiscreteDistribution, NegLog, SquaredNorm, XLogX,
};
use dncc::data::Batch;
use dncc::loss::{dncc_head_loss, dncc_total_loss, ensemble_ce, individual_ce};
use dncc::model::{Activation, BackboneSpec, EnsembleConfig, EnsembleModel, FeatureMode};
use dncc::tensor::{gradient_check, Tape};

use crate::args::resolve_out;
use crate::{runtime, usage, CmdResult, Failure};

pub const PROP1_TOL: f64 = 1e-9;
pub const LEMMA1_TOL: f64 = 1e-12;
pub const LAMBDA_EQUIV_TOL: f64 = 1e-12;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Inject {
    None,
    /// Flip the sign of the penalty/information term inside the verifier.
    PenaltySignFlip,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random cases per suite.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    #[arg(long, default_value_t = 12345)]
    pub seed: u64,

    /// Directory for the failing-case dump (defaults to the out root).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Fault injection, for canary-testing the verifier itself.
    #[arg(long, value_enum, default_value = "none", hide = true)]
    pub inject: Inject,
}

struct Violation {
    suite: &'static str,
    deviation: f64,
    tolerance: f64,
    case: serde_json::Value,
}

fn random_ensemble(
    rng: &mut ChaCha8Rng,
    max_m: usize,
    max_k: usize,
) -> (usize, usize, usize, Vec<Vec<f64>>, Vec<usize>) {
    let m = rng.random_range(2..=max_m);
    let k = rng.random_range(2..=max_k);
    let n = rng.random_range(1..=4usize);
    let heads: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n * k).map(|_| rng.random_range(-6.0..6.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    (m, k, n, heads, labels)
}

/// Decomposition identity with the information term computed independently
/// of the loss module (directly from log-probabilities).
fn prop1_sweep(trials: usize, seed: u64, sign: f64) -> Result<f64, Violation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for trial in 0..trials {
        let (m, k, n, heads, labels) = random_ensemble(&mut rng, 16, 100);
        let mut tape = Tape::new();
        let ids: Vec<_> = heads
            .iter()
            .map(|h| tape.leaf(h.clone(), vec![n, k], false).unwrap())
            .collect();
        let ens = ensemble_ce(&mut tape, &ids, &labels).unwrap();
        let ensemble_loss = tape.scalar_value(ens).unwrap();
        let mut mean_individual = 0.0;
        let mut lp = vec![vec![0.0; n]; m];
        for (h, &id) in ids.iter().enumerate() {
            let ce = individual_ce(&mut tape, id, &labels).unwrap();
            mean_individual += tape.scalar_value(ce).unwrap();
            let ls = tape.log_softmax_rows(id).unwrap();
            let g = tape.gather_labels(ls, &labels).unwrap();
            lp[h].copy_from_slice(tape.value(g));
        }
        mean_individual /= m as f64;

        // Independent route: mean Itakura-Saito divergence from the mean.
        let mut info = 0.0;
        for i in 0..n {
            let max = (0..m).map(|h| lp[h][i]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..m).map(|h| (lp[h][i] - max).exp()).sum();
            let lpbar = max + s.ln() - (m as f64).ln();
            for head in lp.iter() {
                info += itakura_saito_log_domain(head[i], lpbar);
            }
        }
        info /= (n * m) as f64;

        let dev = (ensemble_loss - (mean_individual - sign * info)).abs();
        max_dev = max_dev.max(dev);
        if dev >= PROP1_TOL {
            return Err(Violation {
                suite: "prop1",
                deviation: dev,
                tolerance: PROP1_TOL,
                case: serde_json::json!({
                    "trial": trial, "m": m, "k": k, "n": n,
                    "per_head_logits": heads, "labels": labels,
                }),
            });
        }
    }
    Ok(max_dev)
}

fn lemma1_sweep(trials: usize, seed: u64) -> Result<f64, Violation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phis: [&dyn ConvexFunctional; 3] = [&NegLog, &SquaredNorm, &XLogX];
    let mut max_dev = 0.0f64;
    for (pi, phi) in phis.iter().enumerate() {
        for trial in 0..trials {
            let n = rng.random_range(1..=10usize);
            let dim = rng.random_range(1..=3usize);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            if pi == 1 {
                                rng.random_range(-2.0..2.0)
                            } else {
                                rng.random_range(0.05..2.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            let total: f64 = w.iter().sum();
            w[0] += 1.0 - total;
            let dist = DiscreteDistribution::new(points.clone(), w.clone()).unwrap();
            let info = bregman_information(*phi, &dist).unwrap();
            let gap = jensen_gap(*phi, &dist).unwrap();
            let dev = (info - gap).abs();
            max_dev = max_dev.max(dev);
            if dev >= LEMMA1_TOL {
                return Err(Violation {
                    suite: "lemma1",
                    deviation: dev,
                    tolerance: LEMMA1_TOL,
                    case: serde_json::json!({
                        "trial": trial, "phi": phi.name(),
                        "points": points, "weights": w,
                    }),
                });
            }
        }
    }
    Ok(max_dev)
}

fn lambda_equivalence_sweep(trials: usize, seed: u64, lambda: f64) -> Result<f64, Violation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for trial in 0..trials {
        let (m, k, n, heads, labels) = random_ensemble(&mut rng, 8, 10);
        let mut tape = Tape::new();
        let ids: Vec<_> = heads
            .iter()
            .map(|h| tape.leaf(h.clone(), vec![n, k], false).unwrap())
            .collect();
        let mut mean = 0.0;
        for h in 0..m {
            let l = dncc_head_loss(&mut tape, h, &ids, &labels, lambda, false).unwrap();
            mean += tape.scalar_value(l).unwrap();
        }
        mean /= m as f64;
        let ens = ensemble_ce(&mut tape, &ids, &labels).unwrap();
        let dev = (mean - tape.scalar_value(ens).unwrap()).abs();
        max_dev = max_dev.max(dev);
        if dev >= LAMBDA_EQUIV_TOL {
            return Err(Violation {
                suite: "lambda_minus_one",
                deviation: dev,
                tolerance: LAMBDA_EQUIV_TOL,
                case: serde_json::json!({
                    "trial": trial, "m": m, "k": k, "n": n,
                    "per_head_logits": heads, "labels": labels,
                }),
            });
        }
    }
    Ok(max_dev)
}

/// The gradient-check fixture: 2 hidden layers, 4 heads, 3 classes.
pub fn grad_check_model(seed: u64) -> EnsembleModel {
    EnsembleModel::init(
        BackboneSpec {
            input_dim: 5,
            hidden_widths: vec![16, 12],
            activation: Activation::Relu,
            branch_depth: 0,
        },
        EnsembleConfig {
            num_heads: 4,
            feature_mode: FeatureMode::Split,
            num_classes: 3,
            seed,
        },
    )
    .unwrap()
}

fn grad_sweep(seed: u64) -> Result<f64, Violation> {
    let model = grad_check_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let batch = Batch {
        features: (0..8 * 5).map(|_| rng.random_range(-1.5..1.5)).collect(),
        labels: (0..8).map(|_| rng.random_range(0..3usize)).collect(),
        num_features: 5,
    };
    let params: Vec<Vec<f64>> = model.params().iter().map(|p| p.data.clone()).collect();
    let mut max_rel = 0.0f64;
    for detach in [false, true] {
        for lambda in [-1.0, 0.0, 1e-4, 1e-2] {
            let report = gradient_check(
                |t, p| {
                    let mut m2 = model.clone();
                    for (dst, src) in m2.params_mut().iter_mut().zip(p) {
                        dst.data = src.clone();
                    }
                    let pass = m2.forward(t, &batch)?;
                    let (total, _) =
                        dncc_total_loss(t, &pass.per_head_logits, &batch.labels, lambda, detach)?;
                    Ok((total, pass.param_ids))
                },
                &params,
                GRAD_STEP,
                GRAD_TOL,
            )
            .unwrap();
            max_rel = max_rel.max(report.max_rel_err);
            if !report.pass {
                return Err(Violation {
                    suite: "gradient",
                    deviation: report.max_rel_err,
                    tolerance: GRAD_TOL,
                    case: serde_json::json!({
                        "lambda": lambda, "detach": detach,
                        "worst": report.worst.map(|w| serde_json::json!({
                            "param": w.param, "coord": w.coord,
                            "analytic": w.analytic, "numeric": w.numeric,
                            "rel_err": w.rel_err,
                        })),
                        "nan_sites": report.nan_sites.len(),
                    }),
                });
            }
        }
    }
    Ok(max_rel)
}

pub fn run(args: &VerifyArgs) -> CmdResult {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let sign = match args.inject {
        Inject::None => 1.0,
        Inject::PenaltySignFlip => -1.0,
    };
    let equiv_lambda = match args.inject {
        Inject::None => -1.0,
        Inject::PenaltySignFlip => 1.0,
    };

    let mut violations = Vec::new();
    let mut report_line = |name: &str, result: Result<f64, Violation>, tol: f64| match result {
        Ok(dev) => println!("{name}: max deviation {dev:.3e} (tol {tol:.0e}) — PASS"),
        Err(v) => {
            println!("{name}: deviation {:.3e} (tol {tol:.0e}) — FAIL", v.deviation);
            violations.push(v);
        }
    };

    report_line(
        "decomposition identity    ",
        prop1_sweep(args.trials, args.seed, sign),
        PROP1_TOL,
    );
    report_line(
        "jensen-gap identity       ",
        lemma1_sweep(args.trials, args.seed.wrapping_add(1)),
        LEMMA1_TOL,
    );
    report_line(
        "lambda=-1 equivalence     ",
        lambda_equivalence_sweep(args.trials, args.seed.wrapping_add(2), equiv_lambda),
        LAMBDA_EQUIV_TOL,
    );
    report_line(
        "full-model gradient check ",
        grad_sweep(args.seed.wrapping_add(3)),
        GRAD_TOL,
    );

    if violations.is_empty() {
        println!("all checks passed");
        return Ok(());
    }
    let dump_dir = resolve_out(args.out.as_deref().unwrap_or(std::path::Path::new(".")));
    std::fs::create_dir_all(&dump_dir).map_err(runtime)?;
    let dump = dump_dir.join("verify-failure.json");
    let body = serde_json::json!({
        "seed": args.seed,
        "trials": args.trials,
        "violations": violations.iter().map(|v| serde_json::json!({
            "suite": v.suite,
            "deviation": v.deviation,
            "tolerance": v.tolerance,
            "case": v.case,
        })).collect::<Vec<_>>(),
    });
    std::fs::write(&dump, serde_json::to_string_pretty(&body).map_err(runtime)?).map_err(runtime)?;
    Err(Failure::Runtime(format!(
        "{} verification suite(s) failed; failing case written to {}",
        violations.len(),
        dump.display()
    )))
}
