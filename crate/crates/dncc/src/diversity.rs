//! Pairwise diversity and accuracy analysis of trained heads.
//!
//! Diversity between two classifiers is one minus the mean per-class cosine
//! similarity of their weight vectors: 0 for identical hyper-planes, 1 at 90
//! degrees, 2 for antipodal ones. Heads consume disjoint feature slices of
//! equal width, so weight rows are compared in each head's own slice
//! coordinates.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::model::{argmax, EnsembleModel};
use crate::{Error, Result};

/// One unordered head pair with its diversity and mean standalone accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub diversity: f64,
    pub mean_accuracy: f64,
}

/// All C(M,2) pairs in lexicographic (i, j) order, plus ensemble and per-head
/// accuracies on the evaluation set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiversityReport {
    pub pairs: Vec<PairRecord>,
    pub ensemble_accuracy: f64,
    pub per_head_accuracy: Vec<f64>,
}

impl DiversityReport {
    pub fn num_heads(&self) -> usize {
        self.per_head_accuracy.len()
    }

    pub fn mean_diversity(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.diversity).sum::<f64>() / self.pairs.len() as f64
    }

    /// `pair_i,pair_j,diversity,mean_accuracy` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "pair_i,pair_j,diversity,mean_accuracy")?;
        for p in &self.pairs {
            writeln!(f, "{},{},{},{}", p.i, p.j, p.diversity, p.mean_accuracy)?;
        }
        Ok(())
    }

    /// `{ensemble_accuracy, per_head_accuracy, mean_diversity}`.
    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let summary = serde_json::json!({
            "ensemble_accuracy": self.ensemble_accuracy,
            "per_head_accuracy": self.per_head_accuracy,
            "mean_diversity": self.mean_diversity(),
        });
        std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// Per-pair differences between two reports, in the shared (i, j) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub i: usize,
    pub j: usize,
    pub accuracy_delta: f64,
    pub diversity_delta: f64,
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// `(1/K) sum_k (1 - cos(W_i[k], W_j[k]))`.
///
/// `head_i`/`head_j` only label the matrices for error reporting.
pub fn pairwise_diversity(
    head_i: usize,
    w_i: &[Vec<f64>],
    head_j: usize,
    w_j: &[Vec<f64>],
) -> Result<f64> {
    if w_i.len() != w_j.len() || w_i.is_empty() {
        return Err(Error::Dimension(format!(
            "class counts differ: {} vs {}",
            w_i.len(),
            w_j.len()
        )));
    }
    let mut total = 0.0;
    for (k, (u, v)) in w_i.iter().zip(w_j).enumerate() {
        if u.len() != v.len() {
            return Err(Error::Dimension(format!(
                "class {k}: weight dims {} vs {}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateWeight { head: head_i, class: k });
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateWeight { head: head_j, class: k });
        }
        // cos(u, u) is 1 by definition; skip the rounding of the norms.
        if u != v {
            total += 1.0 - cosine(u, v);
        }
    }
    Ok(total / w_i.len() as f64)
}

/// Full pairwise report for a model on an evaluation set.
///
/// Standalone head accuracy is each head's own softmax argmax; ties resolve
/// to the lowest class index.
pub fn pairwise_report(model: &EnsembleModel, eval: &Dataset) -> Result<DiversityReport> {
    if eval.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let m = model.num_heads();
    let k = model.num_classes();
    let n = eval.len();
    let mut head_correct = vec![0usize; m];
    let mut ensemble_correct = 0usize;
    let mut offset = 0;
    while offset < n {
        let indices: Vec<usize> = (offset..(offset + 256).min(n)).collect();
        let batch = eval.gather(&indices);
        let logits = model.forward_values(&batch)?;
        let pred = model.predict(&batch)?;
        for (r, &y) in batch.labels.iter().enumerate() {
            if pred.labels[r] == y {
                ensemble_correct += 1;
            }
            for (h, head) in logits.iter().enumerate() {
                if argmax(&head[r * k..(r + 1) * k]) == y {
                    head_correct[h] += 1;
                }
            }
        }
        offset += indices.len();
    }
    let per_head_accuracy: Vec<f64> = head_correct.iter().map(|&c| c as f64 / n as f64).collect();
    let ensemble_accuracy = ensemble_correct as f64 / n as f64;

    let weights = model.head_weight_matrices();
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(PairRecord {
                i,
                j,
                diversity: pairwise_diversity(i, &weights[i], j, &weights[j])?,
                mean_accuracy: (per_head_accuracy[i] + per_head_accuracy[j]) / 2.0,
            });
        }
    }
    Ok(DiversityReport { pairs, ensemble_accuracy, per_head_accuracy })
}

/// Elementwise `a - b` over the shared pair ordering.
pub fn compare_reports(a: &DiversityReport, b: &DiversityReport) -> Result<Vec<PairDelta>> {
    if a.num_heads() != b.num_heads() {
        return Err(Error::Contract(format!(
            "head counts differ: {} vs {}",
            a.num_heads(),
            b.num_heads()
        )));
    }
    Ok(a.pairs
        .iter()
        .zip(&b.pairs)
        .map(|(pa, pb)| {
            debug_assert_eq!((pa.i, pa.j), (pb.i, pb.j));
            PairDelta {
                i: pa.i,
                j: pa.j,
                accuracy_delta: pa.mean_accuracy - pb.mean_accuracy,
                diversity_delta: pa.diversity - pb.diversity,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::model::{Activation, BackboneSpec, EnsembleConfig, EnsembleModel, FeatureMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_orthogonal_and_antipodal_cases() {
        let w = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        assert_eq!(pairwise_diversity(0, &w, 1, &w).unwrap(), 0.0);

        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let b = vec![vec![0.0, 3.0], vec![-1.0, 0.0]];
        assert!((pairwise_diversity(0, &a, 1, &b).unwrap() - 1.0).abs() < 1e-15);

        let neg: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        assert!((pairwise_diversity(0, &w, 1, &neg).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_row_names_head_and_class() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let b = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        match pairwise_diversity(3, &a, 5, &b).unwrap_err() {
            Error::DegenerateWeight { head, class } => {
                assert_eq!((head, class), (3, 1));
            }
            e => panic!("unexpected error {e}"),
        }
        match pairwise_diversity(5, &b, 3, &a).unwrap_err() {
            Error::DegenerateWeight { head, class } => {
                assert_eq!((head, class), (3, 1));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn symmetry_is_exact_and_scaling_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100 {
            let k = rng.random_range(1..=5usize);
            let d = rng.random_range(1..=6usize);
            let sample = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..k)
                    .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0) + 0.01).collect())
                    .collect()
            };
            let a = sample(&mut rng);
            let b = sample(&mut rng);
            let ab = pairwise_diversity(0, &a, 1, &b).unwrap();
            let ba = pairwise_diversity(1, &b, 0, &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert!((0.0..=2.0).contains(&ab));

            let scale: f64 = rng.random_range(0.1..10.0);
            let row = rng.random_range(0..k);
            let mut scaled = a.clone();
            for v in &mut scaled[row] {
                *v *= scale;
            }
            let s = pairwise_diversity(0, &scaled, 1, &b).unwrap();
            assert!((s - ab).abs() < 1e-12, "{s} vs {ab}");
        }
    }

    fn small_model(m: usize, seed: u64) -> EnsembleModel {
        EnsembleModel::init(
            BackboneSpec {
                input_dim: 4,
                hidden_widths: vec![8 * m],
                activation: Activation::Relu,
                branch_depth: 0,
            },
            EnsembleConfig {
                num_heads: m,
                feature_mode: FeatureMode::Split,
                num_classes: 3,
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn clone_heads_give_one_zero_diversity_pair() {
        let mut model = small_model(2, 81);
        let w0 = model.params()[model.param_index("head0.weight").unwrap()].data.clone();
        let i1 = model.param_index("head1.weight").unwrap();
        model.params_mut()[i1].data = w0;
        let ds = synth_blobs(82, 3, 20, 4, 1.0).unwrap();
        let report = pairwise_report(&model, &ds).unwrap();
        assert_eq!(report.pairs.len(), 1);
        assert_eq!(report.pairs[0].diversity, 0.0);
        let expected = (report.per_head_accuracy[0] + report.per_head_accuracy[1]) / 2.0;
        assert_eq!(report.pairs[0].mean_accuracy, expected);
    }

    #[test]
    fn eight_heads_give_28_pairs() {
        let model = small_model(8, 83);
        let ds = synth_blobs(84, 3, 10, 4, 1.0).unwrap();
        let report = pairwise_report(&model, &ds).unwrap();
        assert_eq!(report.pairs.len(), 28);
        for p in &report.pairs {
            assert!(p.i < p.j);
            assert!((0.0..=2.0).contains(&p.diversity));
            assert!((0.0..=1.0).contains(&p.mean_accuracy));
        }
        for &a in &report.per_head_accuracy {
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn compare_reports_deltas() {
        let model = small_model(4, 85);
        let ds = synth_blobs(86, 3, 10, 4, 1.0).unwrap();
        let a = pairwise_report(&model, &ds).unwrap();
        let zero = compare_reports(&a, &a).unwrap();
        assert!(zero.iter().all(|d| d.accuracy_delta == 0.0 && d.diversity_delta == 0.0));

        let other = small_model(4, 87);
        let b = pairwise_report(&other, &ds).unwrap();
        let ab = compare_reports(&a, &b).unwrap();
        let ba = compare_reports(&b, &a).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert_eq!(x.diversity_delta, -y.diversity_delta);
            assert_eq!(x.accuracy_delta, -y.accuracy_delta);
        }

        let mismatched = small_model(2, 88);
        let c = pairwise_report(&mismatched, &ds).unwrap();
        assert!(matches!(compare_reports(&a, &c), Err(Error::Contract(_))));
    }

    #[test]
    fn csv_and_summary_round_trip() {
        let model = small_model(3, 89);
        let ds = synth_blobs(90, 3, 10, 4, 1.0).unwrap();
        let report = pairwise_report(&model, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("report.csv");
        let json_path = dir.path().join("summary.json");
        report.write_csv(&csv_path).unwrap();
        report.write_summary_json(&json_path).unwrap();

        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "pair_i,pair_j,diversity,mean_accuracy");
        let parsed: Vec<PairRecord> = lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                PairRecord {
                    i: f[0].parse().unwrap(),
                    j: f[1].parse().unwrap(),
                    diversity: f[2].parse().unwrap(),
                    mean_accuracy: f[3].parse().unwrap(),
                }
            })
            .collect();
        assert_eq!(parsed, report.pairs);

        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(
            summary["ensemble_accuracy"].as_f64().unwrap(),
            report.ensemble_accuracy
        );
        assert_eq!(
            summary["mean_diversity"].as_f64().unwrap(),
            report.mean_diversity()
        );
    }
}
