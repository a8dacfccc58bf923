//! Shared-backbone multi-head ensemble classifier.
//!
//! The backbone is a cascade of ReLU linear layers. Its leading layers are
//! shared by every head; the trailing `branch_depth` layers are replicated
//! per head, which trades shared parameters for extra diversity (branching at
//! the input reproduces fully independent networks). Each head classifies a
//! private, disjoint slice of its penultimate feature vector: either a
//! 1/M-width slice of the features as-is, or an equal-width slice after a
//! learned linear expansion to M times the feature width.
//!
//! Prediction averages the heads' softmax outputs and takes the argmax, with
//! ties broken toward the lowest class index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::tensor::{Tape, TensorId};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Architecture of the feature cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub input_dim: usize,
    /// Widths of the hidden layers; the last entry is the penultimate
    /// feature width the heads consume.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Number of trailing hidden layers replicated per head instead of shared.
    pub branch_depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Split the penultimate features into M disjoint equal slices.
    Split,
    /// Linearly expand the penultimate features to M times their width,
    /// then split into M equal slices.
    ExpandSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub num_heads: usize,
    pub feature_mode: FeatureMode,
    pub num_classes: usize,
    pub seed: u64,
}

/// One named parameter block.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub shared: bool,
}

#[derive(Clone, Debug)]
struct HeadLayout {
    /// (weight, bias) parameter indices per branched layer.
    branch_layers: Vec<(usize, usize)>,
    expand: Option<(usize, usize)>,
    classifier: (usize, usize),
}

#[derive(Clone, Debug)]
struct Layout {
    shared_layers: Vec<(usize, usize)>,
    shared_expand: Option<(usize, usize)>,
    heads: Vec<HeadLayout>,
}

/// The ensemble: spec, config, and all parameter blocks in declaration order.
#[derive(Clone, Debug)]
pub struct EnsembleModel {
    spec: BackboneSpec,
    cfg: EnsembleConfig,
    params: Vec<Param>,
    layout: Layout,
    slice_width: usize,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// One n-by-K logit matrix per head.
    pub per_head_logits: Vec<TensorId>,
    /// Leaf ids aligned with [`EnsembleModel::params`].
    pub param_ids: Vec<TensorId>,
}

/// Averaged-softmax prediction for a batch.
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Row-major n-by-K ensemble probabilities.
    pub ensemble_probs: Vec<f64>,
    pub num_classes: usize,
}

impl EnsembleModel {
    /// Build and initialize a model. Weights are Glorot-uniform
    /// (`U[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`), biases zero, drawn
    /// from a single seeded stream in declaration order.
    pub fn init(spec: BackboneSpec, cfg: EnsembleConfig) -> Result<Self> {
        if spec.hidden_widths.is_empty() {
            return Err(Error::Config("hidden_widths must be non-empty".into()));
        }
        if spec.hidden_widths.iter().any(|&w| w == 0) || spec.input_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if spec.branch_depth > spec.hidden_widths.len() {
            return Err(Error::Config(format!(
                "branch_depth {} exceeds the {} hidden layers",
                spec.branch_depth,
                spec.hidden_widths.len()
            )));
        }
        if cfg.num_heads == 0 {
            return Err(Error::Config("num_heads must be at least 1".into()));
        }
        if cfg.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                cfg.num_classes
            )));
        }
        let feat_width = *spec.hidden_widths.last().unwrap();
        let slice_width = match cfg.feature_mode {
            FeatureMode::Split => {
                if feat_width % cfg.num_heads != 0 {
                    return Err(Error::Config(format!(
                        "split mode requires the last hidden width ({feat_width}) to be divisible by num_heads ({})",
                        cfg.num_heads
                    )));
                }
                feat_width / cfg.num_heads
            }
            FeatureMode::ExpandSplit => feat_width,
        };

        let h = spec.hidden_widths.len();
        let shared_count = h - spec.branch_depth;
        let mut dims = Vec::with_capacity(h + 1);
        dims.push(spec.input_dim);
        dims.extend_from_slice(&spec.hidden_widths);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params: Vec<Param> = Vec::new();
        let linear = |params: &mut Vec<Param>,
                          name: String,
                          fan_in: usize,
                          fan_out: usize,
                          shared: bool,
                          rng: &mut ChaCha8Rng|
         -> (usize, usize) {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-s..s)).collect();
            let wi = params.len();
            params.push(Param {
                name: format!("{name}.weight"),
                shape: vec![fan_in, fan_out],
                data: w,
                shared,
            });
            params.push(Param {
                name: format!("{name}.bias"),
                shape: vec![fan_out],
                data: vec![0.0; fan_out],
                shared,
            });
            (wi, wi + 1)
        };

        let shared_layers: Vec<(usize, usize)> = (0..shared_count)
            .map(|q| linear(&mut params, format!("backbone.{q}"), dims[q], dims[q + 1], true, &mut rng))
            .collect();
        let shared_expand = if cfg.feature_mode == FeatureMode::ExpandSplit && spec.branch_depth == 0 {
            Some(linear(
                &mut params,
                "expand".into(),
                feat_width,
                cfg.num_heads * feat_width,
                true,
                &mut rng,
            ))
        } else {
            None
        };
        let heads: Vec<HeadLayout> = (0..cfg.num_heads)
            .map(|m| {
                let branch_layers: Vec<(usize, usize)> = (shared_count..h)
                    .map(|q| {
                        linear(
                            &mut params,
                            format!("head{m}.branch.{q}"),
                            dims[q],
                            dims[q + 1],
                            false,
                            &mut rng,
                        )
                    })
                    .collect();
                let expand = if cfg.feature_mode == FeatureMode::ExpandSplit && spec.branch_depth > 0 {
                    Some(linear(
                        &mut params,
                        format!("head{m}.expand"),
                        feat_width,
                        cfg.num_heads * feat_width,
                        false,
                        &mut rng,
                    ))
                } else {
                    None
                };
                let classifier = linear(
                    &mut params,
                    format!("head{m}"),
                    slice_width,
                    cfg.num_classes,
                    false,
                    &mut rng,
                );
                HeadLayout { branch_layers, expand, classifier }
            })
            .collect();

        Ok(EnsembleModel {
            spec,
            cfg,
            params,
            layout: Layout { shared_layers, shared_expand, heads },
            slice_width,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn cfg(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn num_heads(&self) -> usize {
        self.cfg.num_heads
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Width of each head's private feature slice.
    pub fn slice_width(&self) -> usize {
        self.slice_width
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Shared parameter count divided by total parameter count.
    pub fn shared_param_fraction(&self) -> f64 {
        let shared: usize = self.params.iter().filter(|p| p.shared).map(|p| p.data.len()).sum();
        shared as f64 / self.num_parameters() as f64
    }

    fn linear(
        tape: &mut Tape,
        x: TensorId,
        w: TensorId,
        b: TensorId,
    ) -> Result<TensorId> {
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    /// Run the cascade on a batch, registering every parameter as a gradient
    /// leaf. Shared layers are evaluated once; each head sees only its slice.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<ForwardPass> {
        if batch.num_features != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "batch width {} does not match input_dim {}",
                batch.num_features, self.spec.input_dim
            )));
        }
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let n = batch.len();
        let x = tape.leaf(batch.features.clone(), vec![n, self.spec.input_dim], false)?;
        let param_ids: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), p.shape.clone(), true))
            .collect::<Result<_>>()?;

        let mut h = x;
        for &(wi, bi) in &self.layout.shared_layers {
            h = Self::linear(tape, h, param_ids[wi], param_ids[bi])?;
            h = tape.relu(h)?;
        }
        let shared_features = h;

        let expanded_shared = match self.layout.shared_expand {
            Some((wi, bi)) => Some(Self::linear(tape, shared_features, param_ids[wi], param_ids[bi])?),
            None => None,
        };

        let mut per_head_logits = Vec::with_capacity(self.cfg.num_heads);
        for (m, head) in self.layout.heads.iter().enumerate() {
            let mut hb = shared_features;
            for &(wi, bi) in &head.branch_layers {
                hb = Self::linear(tape, hb, param_ids[wi], param_ids[bi])?;
                hb = tape.relu(hb)?;
            }
            let features = match (expanded_shared, head.expand) {
                (Some(f), _) => f,
                (None, Some((wi, bi))) => Self::linear(tape, hb, param_ids[wi], param_ids[bi])?,
                (None, None) => hb,
            };
            let slice = tape.slice_cols(features, m * self.slice_width, self.slice_width)?;
            let (wi, bi) = head.classifier;
            per_head_logits.push(Self::linear(tape, slice, param_ids[wi], param_ids[bi])?);
        }
        Ok(ForwardPass { per_head_logits, param_ids })
    }

    /// Per-head logit matrices as plain values (no gradient bookkeeping).
    pub fn forward_values(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, batch)?;
        Ok(pass
            .per_head_logits
            .iter()
            .map(|&id| tape.value(id).to_vec())
            .collect())
    }

    /// Average the heads' softmax outputs and take the per-row argmax.
    pub fn predict(&self, batch: &Batch) -> Result<Prediction> {
        let logits = self.forward_values(batch)?;
        let n = batch.len();
        let k = self.cfg.num_classes;
        let m = self.cfg.num_heads as f64;
        let mut ensemble = vec![0.0; n * k];
        for head in &logits {
            for r in 0..n {
                let row = &head[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                for j in 0..k {
                    ensemble[r * k + j] += (row[j] - max).exp() / denom / m;
                }
            }
        }
        let labels = (0..n).map(|r| argmax(&ensemble[r * k..(r + 1) * k])).collect();
        Ok(Prediction { labels, ensemble_probs: ensemble, num_classes: k })
    }

    /// Head classifier weights in class-major layout: element `[m][k]` is the
    /// k-th class's weight vector over head m's feature slice. Biases are
    /// excluded.
    pub fn head_weight_matrices(&self) -> Vec<Vec<Vec<f64>>> {
        self.layout
            .heads
            .iter()
            .map(|head| {
                let w = &self.params[head.classifier.0];
                let (d, k) = (w.shape[0], w.shape[1]);
                (0..k)
                    .map(|class| (0..d).map(|j| w.data[j * k + class]).collect())
                    .collect()
            })
            .collect()
    }
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
