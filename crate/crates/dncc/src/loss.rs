//! Loss construction and its exact decomposition.
//!
//! For per-head correct-class probabilities `p_m` and their ensemble average
//! `pbar`, the ensemble cross-entropy decomposes exactly as
//!
//! `ensemble_ce = mean_m(individual_ce_m) - I`,
//!
//! where `I` is the Bregman information of the heads under `-log` (the mean
//! Itakura-Saito divergence of each head from `pbar`). The per-head training
//! objective is `individual_ce_m + lambda * d(p_m, pbar)`: `lambda = 0`
//! recovers independent heads and `lambda = -1` recovers the ensemble loss
//! exactly, which the tests exploit as an algebraic cross-check.
//!
//! All probability handling stays in the log domain: `pbar` comes from a
//! row-wise log-sum-exp minus `ln M`, and the penalty is evaluated in its
//! log-domain form. Inside the penalty, log-probabilities are floored at
//! [`LOG_PROB_FLOOR`] to bound the ratio exponent during pathological early
//! batches; the decomposition below never applies the floor, since the
//! identity it asserts must stay exact.

use serde::{Deserialize, Serialize};

use crate::bregman::itakura_saito_log_domain;
use crate::tensor::{Tape, TensorId};
use crate::{Error, Result};

/// Floor applied to correct-class log-probabilities inside the penalty term.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Tolerance for the decomposition identity.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

/// How the penalty coefficient evolves over training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant(f64),
    /// `(epoch + 1) / total_epochs * base`, counting epochs from zero, so the
    /// coefficient is nonzero from the first epoch and reaches `base` at the
    /// last one.
    LinearRamp(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnccConfig {
    pub lambda_schedule: LambdaSchedule,
    /// Treat the ensemble-mean probability as a constant in the penalty
    /// gradient. Off by default: gradients flow through the mean, including
    /// each head's own contribution.
    pub detach_ensemble_mean: bool,
}

impl DnccConfig {
    pub fn constant(lambda: f64) -> Self {
        DnccConfig { lambda_schedule: LambdaSchedule::Constant(lambda), detach_ensemble_mean: false }
    }
}

/// Penalty coefficient for a given epoch.
pub fn lambda_at(schedule: &LambdaSchedule, epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::Contract("total_epochs must be positive".into()));
    }
    if epoch >= total_epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside [0, {total_epochs})"
        )));
    }
    Ok(match *schedule {
        LambdaSchedule::Constant(v) => v,
        LambdaSchedule::LinearRamp(base) => (epoch + 1) as f64 / total_epochs as f64 * base,
    })
}

/// Correct-class log-probabilities of one head: a length-n vector.
fn correct_class_log_probs(tape: &mut Tape, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
    let ls = tape.log_softmax_rows(logits)?;
    tape.gather_labels(ls, labels)
}

/// `log pbar_i = logsumexp_m(log p_m_i) - ln M`.
fn ensemble_log_prob(tape: &mut Tape, head_log_probs: &[TensorId]) -> Result<TensorId> {
    let stacked = tape.stack_cols(head_log_probs)?;
    let lse = tape.row_logsumexp(stacked)?;
    tape.add_const(lse, -(head_log_probs.len() as f64).ln())
}

/// Mean softmax cross-entropy of one logit matrix: `-(1/n) sum log p_{y_i}`.
pub fn individual_ce(tape: &mut Tape, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
    let lp = correct_class_log_probs(tape, logits, labels)?;
    let mean = tape.mean(lp, None)?;
    tape.scale(mean, -1.0)
}

/// Ensemble cross-entropy: `-(1/n) sum log((1/M) sum_m p_m_{y_i})`, with the
/// inner average computed in the log domain.
pub fn ensemble_ce(tape: &mut Tape, per_head_logits: &[TensorId], labels: &[usize]) -> Result<TensorId> {
    if per_head_logits.is_empty() {
        return Err(Error::Contract("ensemble_ce needs at least one head".into()));
    }
    let lps = per_head_logits
        .iter()
        .map(|&l| correct_class_log_probs(tape, l, labels))
        .collect::<Result<Vec<_>>>()?;
    let lpbar = ensemble_log_prob(tape, &lps)?;
    let mean = tape.mean(lpbar, None)?;
    tape.scale(mean, -1.0)
}

/// Per-head training objective:
/// `(1/n) sum_i [ -log p_m_i + lambda * d_{-log}(p_m_i, pbar_i) ]`.
///
/// At `lambda = 0` this builds exactly the same tape nodes as
/// [`individual_ce`], so the reduction is bitwise. With `detach` set, the
/// ensemble mean is a constant in the gradient.
pub fn dncc_head_loss(
    tape: &mut Tape,
    m: usize,
    per_head_logits: &[TensorId],
    labels: &[usize],
    lambda: f64,
    detach: bool,
) -> Result<TensorId> {
    if m >= per_head_logits.len() {
        return Err(Error::Contract(format!(
            "head index {m} outside [0, {})",
            per_head_logits.len()
        )));
    }
    if lambda == 0.0 {
        return individual_ce(tape, per_head_logits[m], labels);
    }
    let lps = per_head_logits
        .iter()
        .map(|&l| correct_class_log_probs(tape, l, labels))
        .collect::<Result<Vec<_>>>()?;
    let lp_m = lps[m];
    let mut lpbar = ensemble_log_prob(tape, &lps)?;
    if detach {
        lpbar = tape.detach(lpbar)?;
    }
    // d(p, q) in the log domain: (lq - lp) + exp(lp - lq) - 1, floored inputs.
    let lp_f = tape.clamp_min(lp_m, LOG_PROB_FLOOR)?;
    let lq_f = tape.clamp_min(lpbar, LOG_PROB_FLOOR)?;
    let diff = tape.sub(lq_f, lp_f)?;
    let expo = tape.sub(lp_f, lq_f)?;
    let ratio = tape.exp(expo)?;
    let pen0 = tape.add(diff, ratio)?;
    let penalty = tape.add_const(pen0, -1.0)?;

    let neg_lp = tape.scale(lp_m, -1.0)?;
    let scaled_pen = tape.scale(penalty, lambda)?;
    let per_sample = tape.add(neg_lp, scaled_pen)?;
    tape.mean(per_sample, None)
}

/// All M head losses plus their sum (the quantity the trainer differentiates).
pub fn dncc_total_loss(
    tape: &mut Tape,
    per_head_logits: &[TensorId],
    labels: &[usize],
    lambda: f64,
    detach: bool,
) -> Result<(TensorId, Vec<TensorId>)> {
    if per_head_logits.is_empty() {
        return Err(Error::Contract("need at least one head".into()));
    }
    let head_losses = (0..per_head_logits.len())
        .map(|m| dncc_head_loss(tape, m, per_head_logits, labels, lambda, detach))
        .collect::<Result<Vec<_>>>()?;
    let mut total = head_losses[0];
    for &l in &head_losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok((total, head_losses))
}

/// One batch's loss quantities and the exact decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Ensemble cross-entropy.
    pub ensemble_loss: f64,
    /// Per-head cross-entropies.
    pub individual_losses: Vec<f64>,
    /// Bregman information of the heads under `-log`, batch-averaged.
    pub bregman_information: f64,
    /// Per-head mean Itakura-Saito divergence from the ensemble mean.
    pub per_head_penalty: Vec<f64>,
    /// Per-head objectives at the given lambda.
    pub dncc_losses: Vec<f64>,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn mean_individual_loss(&self) -> f64 {
        self.individual_losses.iter().sum::<f64>() / self.individual_losses.len() as f64
    }
}

/// Evaluate every [`LossBreakdown`] field from per-head logit values and
/// assert the decomposition identity to [`DECOMPOSITION_TOL`].
///
/// A violation means an implementation bug, not bad input, and surfaces as an
/// internal-consistency error.
pub fn decompose(
    tape: &Tape,
    per_head_logits: &[TensorId],
    labels: &[usize],
    lambda: f64,
) -> Result<LossBreakdown> {
    let values: Vec<&[f64]> = per_head_logits.iter().map(|&id| tape.value(id)).collect();
    let k = per_head_logits
        .first()
        .map(|&id| tape.shape(id)[1])
        .ok_or_else(|| Error::Contract("need at least one head".into()))?;
    decompose_logits(&values, k, labels, lambda)
}

/// [`decompose`] over raw row-major logit matrices.
pub fn decompose_logits(
    per_head_logits: &[&[f64]],
    num_classes: usize,
    labels: &[usize],
    lambda: f64,
) -> Result<LossBreakdown> {
    let m = per_head_logits.len();
    if m == 0 {
        return Err(Error::Contract("need at least one head".into()));
    }
    let n = labels.len();
    let k = num_classes;
    for (h, logits) in per_head_logits.iter().enumerate() {
        if logits.len() != n * k {
            return Err(Error::Dimension(format!(
                "head {h}: {} logit values for {n} rows of {k} classes",
                logits.len()
            )));
        }
    }
    if let Some(i) = labels.iter().position(|&y| y >= k) {
        return Err(Error::Contract(format!("label {} out of range at index {i}", labels[i])));
    }

    // Correct-class log-probabilities, [m][i].
    let mut lp = vec![vec![0.0; n]; m];
    for (h, logits) in per_head_logits.iter().enumerate() {
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            lp[h][i] = row[labels[i]] - lse;
        }
    }
    // log pbar_i via logsumexp over heads.
    let ln_m = (m as f64).ln();
    let mut lpbar = vec![0.0; n];
    for i in 0..n {
        let max = (0..m).map(|h| lp[h][i]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..m).map(|h| (lp[h][i] - max).exp()).sum();
        lpbar[i] = max + s.ln() - ln_m;
    }

    let ensemble_loss = -lpbar.iter().sum::<f64>() / n as f64;
    let individual_losses: Vec<f64> = lp
        .iter()
        .map(|head| -head.iter().sum::<f64>() / n as f64)
        .collect();
    let per_head_penalty: Vec<f64> = lp
        .iter()
        .map(|head| {
            head.iter()
                .zip(&lpbar)
                .map(|(&p, &q)| itakura_saito_log_domain(p, q))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let bregman_information = per_head_penalty.iter().sum::<f64>() / m as f64;
    let dncc_losses: Vec<f64> = individual_losses
        .iter()
        .zip(&per_head_penalty)
        .map(|(&l, &p)| l + lambda * p)
        .collect();

    let mean_individual = individual_losses.iter().sum::<f64>() / m as f64;
    let gap = (ensemble_loss - (mean_individual - bregman_information)).abs();
    if gap >= DECOMPOSITION_TOL {
        return Err(Error::Inconsistency(format!(
            "decomposition identity violated by {gap:e}: ensemble {ensemble_loss} vs mean {mean_individual} - info {bregman_information}"
        )));
    }
    Ok(LossBreakdown {
        ensemble_loss,
        individual_losses,
        bregman_information,
        per_head_penalty,
        dncc_losses,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, BackboneSpec, EnsembleConfig, EnsembleModel, FeatureMode};
    use crate::tensor::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Logit rows whose softmax reproduces the given probabilities exactly
    /// enough for 1e-12 assertions: row j = ln p_j.
    fn logits_for_probs(tape: &mut Tape, rows: &[Vec<f64>]) -> TensorId {
        let k = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|&p| p.ln())).collect();
        tape.leaf(data, vec![rows.len(), k], false).unwrap()
    }

    #[test]
    fn individual_ce_uniform_and_confident() {
        let mut t = Tape::new();
        let zeros = t.leaf(vec![0.0; 3 * 10], vec![3, 10], false).unwrap();
        let ce = individual_ce(&mut t, zeros, &[0, 5, 9]).unwrap();
        assert!((t.scalar_value(ce).unwrap() - 10.0f64.ln()).abs() < 1e-12);

        let confident = t.leaf(vec![100.0, 0.0, 0.0], vec![1, 3], false).unwrap();
        let ce = individual_ce(&mut t, confident, &[0]).unwrap();
        assert!(t.scalar_value(ce).unwrap().abs() < 1e-12);
    }

    #[test]
    fn individual_ce_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..15).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels = [0usize, 2, 1, 1, 0];
        let mut t = Tape::new();
        let logits = t.leaf(data.clone(), vec![5, 3], false).unwrap();
        let ce = individual_ce(&mut t, logits, &labels).unwrap();

        let mut expected = 0.0;
        for i in 0..5 {
            let row = &data[i * 3..(i + 1) * 3];
            let denom: f64 = row.iter().map(|&v| v.exp()).sum();
            expected -= (row[labels[i]].exp() / denom).ln();
        }
        expected /= 5.0;
        assert!((t.scalar_value(ce).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn individual_ce_rejects_out_of_range_label() {
        let mut t = Tape::new();
        let logits = t.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
        let err = individual_ce(&mut t, logits, &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn ensemble_ce_with_one_head_equals_individual_ce_bitwise() {
        let mut t = Tape::new();
        let logits = t
            .leaf(vec![0.3, -1.0, 2.0, 0.1, 0.0, -0.5], vec![2, 3], false)
            .unwrap();
        let a = individual_ce(&mut t, logits, &[2, 0]).unwrap();
        let b = ensemble_ce(&mut t, &[logits], &[2, 0]).unwrap();
        assert_eq!(
            t.scalar_value(a).unwrap().to_bits(),
            t.scalar_value(b).unwrap().to_bits()
        );
    }

    #[test]
    fn ensemble_ce_worked_example() {
        // Correct-class probabilities 0.5 and 0.25 give -ln 0.375.
        let mut t = Tape::new();
        let h0 = logits_for_probs(&mut t, &[vec![0.5, 0.5]]);
        let h1 = logits_for_probs(&mut t, &[vec![0.25, 0.75]]);
        let ce = ensemble_ce(&mut t, &[h0, h1], &[0]).unwrap();
        let v = t.scalar_value(ce).unwrap();
        assert!((v - (-(0.375f64.ln()))).abs() < 1e-12);
        assert!((v - 0.980829).abs() < 1e-6);
    }

    #[test]
    fn ensemble_ce_never_exceeds_mean_individual_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let m = rng.random_range(1..=6usize);
            let n = rng.random_range(1..=4usize);
            let k = rng.random_range(2..=8usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut t = Tape::new();
            let heads: Vec<TensorId> = (0..m)
                .map(|_| {
                    let d: Vec<f64> = (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect();
                    t.leaf(d, vec![n, k], false).unwrap()
                })
                .collect();
            let ens = ensemble_ce(&mut t, &heads, &labels).unwrap();
            let mut mean = 0.0;
            for &h in &heads {
                let ce = individual_ce(&mut t, h, &labels).unwrap();
                mean += t.scalar_value(ce).unwrap();
            }
            mean /= m as f64;
            assert!(t.scalar_value(ens).unwrap() <= mean + 1e-12);
        }
    }

    #[test]
    fn head_loss_at_lambda_zero_is_bitwise_individual_ce() {
        let mut t = Tape::new();
        let h0 = t.leaf(vec![0.4, -0.2, 1.0, 0.0], vec![2, 2], false).unwrap();
        let h1 = t.leaf(vec![-0.3, 0.9, 0.2, 0.6], vec![2, 2], false).unwrap();
        let labels = [1usize, 0];
        let dl = dncc_head_loss(&mut t, 1, &[h0, h1], &labels, 0.0, false).unwrap();
        let ce = individual_ce(&mut t, h1, &labels).unwrap();
        assert_eq!(
            t.scalar_value(dl).unwrap().to_bits(),
            t.scalar_value(ce).unwrap().to_bits()
        );
    }

    #[test]
    fn head_loss_worked_example() {
        // p0 = 0.5, p1 = 0.25, lambda = 1, head 0:
        // -ln 0.5 + d(0.5, 0.375) = 0.693147 + 0.045651.
        let mut t = Tape::new();
        let h0 = logits_for_probs(&mut t, &[vec![0.5, 0.5]]);
        let h1 = logits_for_probs(&mut t, &[vec![0.25, 0.75]]);
        let l0 = dncc_head_loss(&mut t, 0, &[h0, h1], &[0], 1.0, false).unwrap();
        let expected = -(0.5f64.ln()) + itakura_saito_log_domain(0.5f64.ln(), 0.375f64.ln());
        let v = t.scalar_value(l0).unwrap();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        assert!((v - 0.738798).abs() < 1e-6);
    }

    #[test]
    fn lambda_minus_one_recovers_ensemble_ce() {
        // Frozen worked example first.
        let mut t = Tape::new();
        let h0 = logits_for_probs(&mut t, &[vec![0.5, 0.5]]);
        let h1 = logits_for_probs(&mut t, &[vec![0.25, 0.75]]);
        let l0 = dncc_head_loss(&mut t, 0, &[h0, h1], &[0], -1.0, false).unwrap();
        let l1 = dncc_head_loss(&mut t, 1, &[h0, h1], &[0], -1.0, false).unwrap();
        let v0 = t.scalar_value(l0).unwrap();
        let v1 = t.scalar_value(l1).unwrap();
        assert!((v0 - 0.647496).abs() < 1e-6, "{v0}");
        assert!((v1 - 1.314162).abs() < 1e-6, "{v1}");
        assert!(((v0 + v1) / 2.0 - 0.980829).abs() < 1e-6);

        // Random sweep.
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..300 {
            let m = rng.random_range(2..=8usize);
            let n = rng.random_range(1..=4usize);
            let k = rng.random_range(2..=10usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut t = Tape::new();
            let heads: Vec<TensorId> = (0..m)
                .map(|_| {
                    let d: Vec<f64> = (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect();
                    t.leaf(d, vec![n, k], false).unwrap()
                })
                .collect();
            let mut mean = 0.0;
            for h in 0..m {
                let l = dncc_head_loss(&mut t, h, &heads, &labels, -1.0, false).unwrap();
                mean += t.scalar_value(l).unwrap();
            }
            mean /= m as f64;
            let ens = ensemble_ce(&mut t, &heads, &labels).unwrap();
            let ev = t.scalar_value(ens).unwrap();
            assert!((mean - ev).abs() < 1e-12, "mean {mean} vs ensemble {ev}");
        }
    }

    #[test]
    fn decompose_worked_example() {
        let mut t = Tape::new();
        let h0 = logits_for_probs(&mut t, &[vec![0.5, 0.5]]);
        let h1 = logits_for_probs(&mut t, &[vec![0.25, 0.75]]);
        let b = decompose(&t, &[h0, h1], &[0], 1.0).unwrap();

        // High-precision oracle values.
        let l_bar = -(0.375f64.ln());
        let mean_l = (-(0.5f64.ln()) - 0.25f64.ln()) / 2.0;
        let d1 = itakura_saito_log_domain(0.5f64.ln(), 0.375f64.ln());
        let d2 = itakura_saito_log_domain(0.25f64.ln(), 0.375f64.ln());
        assert!((b.ensemble_loss - l_bar).abs() < 1e-12);
        assert!((b.mean_individual_loss() - mean_l).abs() < 1e-12);
        assert!((b.per_head_penalty[0] - d1).abs() < 1e-12);
        assert!((b.per_head_penalty[1] - d2).abs() < 1e-12);
        assert!((b.bregman_information - (d1 + d2) / 2.0).abs() < 1e-12);

        // Six-decimal frozen values.
        assert!((b.ensemble_loss - 0.980829).abs() < 1e-6);
        assert!((b.mean_individual_loss() - 1.039721).abs() < 1e-6);
        assert!((b.bregman_information - 0.058891).abs() < 1e-6);
        assert!((b.per_head_penalty[0] - 0.045651).abs() < 1e-6);
        assert!((b.per_head_penalty[1] - 0.072132).abs() < 1e-6);
        assert!((b.dncc_losses[0] - 0.738798).abs() < 1e-6);
    }

    #[test]
    fn decompose_identical_heads_has_zero_information() {
        let mut t = Tape::new();
        let h = t.leaf(vec![0.7, -0.1, 0.2, 1.3], vec![2, 2], false).unwrap();
        let b = decompose(&t, &[h, h, h], &[0, 1], 0.0).unwrap();
        assert!(b.bregman_information.abs() < 1e-15);
        for &l in &b.individual_losses {
            assert!((l - b.ensemble_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_identity_holds_on_random_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let m = rng.random_range(2..=16usize);
            let k = rng.random_range(2..=100usize);
            let n = rng.random_range(1..=4usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let heads: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n * k).map(|_| rng.random_range(-6.0..6.0)).collect())
                .collect();
            let views: Vec<&[f64]> = heads.iter().map(|h| h.as_slice()).collect();
            let b = decompose_logits(&views, k, &labels, 0.0).unwrap();
            let gap = (b.ensemble_loss - (b.mean_individual_loss() - b.bregman_information)).abs();
            worst = worst.max(gap);
            assert!(b.bregman_information >= 0.0);
            for &p in &b.per_head_penalty {
                assert!(p >= 0.0, "negative penalty {p}");
            }
        }
        assert!(worst < 1e-9, "worst identity gap {worst:e}");
    }

    #[test]
    fn full_objective_passes_gradient_check() {
        let spec = BackboneSpec {
            input_dim: 5,
            hidden_widths: vec![12, 8],
            activation: Activation::Relu,
            branch_depth: 0,
        };
        let cfg = EnsembleConfig {
            num_heads: 4,
            feature_mode: FeatureMode::Split,
            num_classes: 3,
            seed: 61,
        };
        let model = EnsembleModel::init(spec, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let batch = crate::data::Batch {
            features: (0..6 * 5).map(|_| rng.random_range(-1.5..1.5)).collect(),
            labels: (0..6).map(|_| rng.random_range(0..3usize)).collect(),
            num_features: 5,
        };
        let params: Vec<Vec<f64>> = model.params().iter().map(|p| p.data.clone()).collect();
        for detach in [false, true] {
            let report = gradient_check(
                |t, p| {
                    let mut m2 = model.clone();
                    for (dst, src) in m2.params_mut().iter_mut().zip(p) {
                        dst.data = src.clone();
                    }
                    let pass = m2.forward(t, &batch)?;
                    let (total, _) =
                        dncc_total_loss(t, &pass.per_head_logits, &batch.labels, 1e-2, detach)?;
                    Ok((total, pass.param_ids))
                },
                &params,
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(
                report.pass,
                "detach={detach}: max rel err {} ({:?})",
                report.max_rel_err, report.worst
            );
        }
    }

    #[test]
    fn lambda_schedule_values() {
        let ramp = LambdaSchedule::LinearRamp(1e-2);
        assert!((lambda_at(&ramp, 49, 100).unwrap() - 5e-3).abs() < 1e-18);
        assert_eq!(lambda_at(&ramp, 99, 100).unwrap(), 1e-2);
        let c = LambdaSchedule::Constant(5e-4);
        assert_eq!(lambda_at(&c, 0, 10).unwrap(), 5e-4);
        assert_eq!(lambda_at(&c, 9, 10).unwrap(), 5e-4);
        assert!(matches!(lambda_at(&c, 0, 0), Err(Error::Contract(_))));
        assert!(matches!(lambda_at(&c, 10, 10), Err(Error::Contract(_))));
    }
}
