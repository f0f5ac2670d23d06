//! Softmax classifiers trained with Adam under three objectives: plain ERM,
//! inverse-group-frequency reweighting, and GroupDRO.

mod adam;
mod loss;
mod model;

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{gradient, group_losses, weighted_nll};
pub use model::{clip_prob, Architecture, Dense, ModelParams, PROB_CLIP};

use crate::datagen::{GroupId, GroupedDataset, Split, SplitData};
use crate::error::{Error, Result};

pub const N_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Erm,
    Reweight,
    GroupDro,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Erm => "erm",
            Objective::Reweight => "reweight",
            Objective::GroupDro => "groupdro",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Objective::Erm),
            "reweight" => Ok(Objective::Reweight),
            "groupdro" => Ok(Objective::GroupDro),
            other => Err(Error::config("objective", format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Full,
    Minibatch(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub batch_mode: BatchMode,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub groupdro_step: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Erm,
            learning_rate: 1e-3,
            batch_mode: BatchMode::Full,
            max_epochs: 500,
            patience: 10,
            min_delta: 1e-4,
            groupdro_step: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be >= 1"));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::config("min_delta", "must be finite and >= 0"));
        }
        if !(self.groupdro_step.is_finite() && self.groupdro_step >= 0.0) {
            return Err(Error::config("groupdro_step", "must be finite and >= 0"));
        }
        if self.batch_mode == BatchMode::Minibatch(0) {
            return Err(Error::config("batch_mode", "minibatch size must be >= 1"));
        }
        Ok(())
    }

    pub fn with_objective(&self, objective: Objective) -> Self {
        Self {
            objective,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Validation loss after each epoch, in the objective's own form.
    pub val_loss: Vec<f64>,
    /// Training objective after each epoch.
    pub train_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// GroupDRO group weights after each epoch, indexed by `GroupId::index`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_weights: Option<Vec<[f64; 4]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub objective: Objective,
    pub config: TrainConfig,
    pub convergence: Convergence,
    pub seed: u64,
    pub dataset_fingerprint: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEval {
    pub count: usize,
    pub accuracy: f64,
    pub mean_log_likelihood: f64,
}

fn inverse_frequency(data: &SplitData) -> Vec<f64> {
    let counts = data.group_counts();
    let n = data.len() as f64;
    data.groups.iter().map(|g| n / counts[g.index()] as f64).collect()
}

/// `w_i = N / N_{a_i, y_i}` over the given split, so every group carries the
/// same total weight `N`.
pub fn sample_weights(ds: &GroupedDataset, split: Split) -> Result<Vec<f64>> {
    let data = ds.split(split);
    if data.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    require_all_groups(&data, split)?;
    Ok(inverse_frequency(&data))
}

fn require_all_groups(data: &SplitData, split: Split) -> Result<()> {
    let counts = data.group_counts();
    for g in GroupId::ALL {
        if counts[g.index()] == 0 {
            return Err(Error::EmptyGroup {
                group: g.to_string(),
                split: split.to_string(),
            });
        }
    }
    Ok(())
}

fn validation_loss(params: &ModelParams, data: &SplitData, objective: Objective) -> Result<f64> {
    let probs = params.forward(data.features.view())?;
    match objective {
        Objective::Erm => weighted_nll(probs.view(), &data.labels, &vec![1.0; data.len()]),
        Objective::Reweight => weighted_nll(probs.view(), &data.labels, &inverse_frequency(data)),
        Objective::GroupDro => Ok(group_losses(probs.view(), data)
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))),
    }
}

fn groupdro_weights(groups: &[GroupId], q: &[f64; 4]) -> Vec<f64> {
    let mut counts = [0usize; 4];
    for g in groups {
        counts[g.index()] += 1;
    }
    groups.iter().map(|g| q[g.index()] / counts[g.index()] as f64).collect()
}

/// One exponentiated-gradient step on the group weights, renormalized onto
/// the simplex. Groups absent from the batch keep their mass.
fn update_group_weights(q: &mut [f64; 4], losses: &[Option<f64>; 4], step: f64) {
    // Shift by the max exponent so large losses cannot overflow.
    let max_exp = losses.iter().flatten().fold(f64::NEG_INFINITY, |m, &l| m.max(step * l));
    if !max_exp.is_finite() {
        return;
    }
    let mut logq = [f64::NEG_INFINITY; 4];
    for k in 0..4 {
        if q[k] > 0.0 {
            logq[k] = q[k].ln() + losses[k].map_or(0.0, |l| step * l) - max_exp;
        }
    }
    let z: f64 = logq.iter().map(|l| l.exp()).sum();
    for k in 0..4 {
        q[k] = logq[k].exp() / z;
    }
}

struct Batch<'a> {
    features: ndarray::CowArray<'a, f64, ndarray::Ix2>,
    labels: Vec<u8>,
    groups: Vec<GroupId>,
    base_weights: Vec<f64>,
}

pub fn train(ds: &GroupedDataset, architecture: Architecture, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if let Architecture::Mlp1 { hidden: 0 } = architecture {
        return Err(Error::config("hidden", "must be >= 1"));
    }
    let train_data = ds.split(Split::Train);
    let val_data = ds.split(Split::Val);
    if train_data.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_data.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let base_weights = match cfg.objective {
        Objective::Erm => vec![1.0; train_data.len()],
        Objective::Reweight => {
            require_all_groups(&train_data, Split::Train)?;
            inverse_frequency(&train_data)
        }
        Objective::GroupDro => {
            require_all_groups(&train_data, Split::Train)?;
            vec![1.0; train_data.len()]
        }
    };

    let mut params = ModelParams::init(architecture, ds.n_features(), N_CLASSES, cfg.seed);
    let mut opt = Adam::new(params.n_params(), cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(202);
    let mut q = [0.25f64; 4];

    let mut convergence = Convergence {
        val_loss: Vec::new(),
        train_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        group_weights: (cfg.objective == Objective::GroupDro).then(Vec::new),
    };
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut patience_ref = f64::INFINITY;
    let mut waited = 0usize;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let batches: Vec<Batch> = match cfg.batch_mode {
            BatchMode::Full => vec![Batch {
                features: train_data.features.view().into(),
                labels: train_data.labels.clone(),
                groups: train_data.groups.clone(),
                base_weights: base_weights.clone(),
            }],
            BatchMode::Minibatch(size) => {
                order.shuffle(&mut shuffle_rng);
                order
                    .chunks(size)
                    .map(|idx| Batch {
                        features: train_data.features.select(Axis(0), idx).into(),
                        labels: idx.iter().map(|&i| train_data.labels[i]).collect(),
                        groups: idx.iter().map(|&i| train_data.groups[i]).collect(),
                        base_weights: idx.iter().map(|&i| base_weights[i]).collect(),
                    })
                    .collect()
            }
        };

        for (b, batch) in batches.iter().enumerate() {
            let ctx = || format!("epoch {epoch}, batch {b}");
            let weights = if cfg.objective == Objective::GroupDro {
                let probs = params.forward(batch.features.view())?;
                let view = SplitData {
                    features: ndarray::Array2::zeros((0, 0)),
                    labels: batch.labels.clone(),
                    groups: batch.groups.clone(),
                };
                let losses = group_losses(probs.view(), &view);
                update_group_weights(&mut q, &losses, cfg.groupdro_step);
                groupdro_weights(&batch.groups, &q)
            } else {
                batch.base_weights.clone()
            };
            let grad =
                gradient(&params, batch.features.view(), &batch.labels, &weights).map_err(|e| e.with_context(ctx()))?;
            opt.update(&mut params, &grad);
        }

        let train_loss = training_objective(&params, &train_data, cfg.objective, &base_weights, &q)?;
        let val_loss = validation_loss(&params, &val_data, cfg.objective)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        convergence.train_loss.push(train_loss);
        convergence.val_loss.push(val_loss);
        if let Some(trace) = convergence.group_weights.as_mut() {
            trace.push(q);
        }

        if val_loss < best_loss {
            best_loss = val_loss;
            best_params = params.clone();
            convergence.best_epoch = epoch;
        }
        if val_loss < patience_ref - cfg.min_delta {
            patience_ref = val_loss;
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                convergence.stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainedModel {
        params: best_params,
        objective: cfg.objective,
        config: cfg.clone(),
        convergence,
        seed: cfg.seed,
        dataset_fingerprint: ds.fingerprint(),
    })
}

fn training_objective(
    params: &ModelParams,
    data: &SplitData,
    objective: Objective,
    base_weights: &[f64],
    q: &[f64; 4],
) -> Result<f64> {
    let probs = params.forward(data.features.view())?;
    match objective {
        Objective::Erm | Objective::Reweight => weighted_nll(probs.view(), &data.labels, base_weights),
        Objective::GroupDro => Ok(group_losses(probs.view(), data)
            .iter()
            .zip(q)
            .filter_map(|(l, w)| l.map(|l| l * w))
            .sum()),
    }
}

/// Per-group accuracy (argmax, ties to the lower class) and mean clipped
/// log-likelihood of the true label.
pub fn evaluate_groups(
    params: &ModelParams,
    ds: &GroupedDataset,
    split: Split,
) -> Result<BTreeMap<GroupId, GroupEval>> {
    let data = ds.split(split);
    if data.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    require_all_groups(&data, split)?;
    evaluate_split(params, data.features.view(), &data.labels, &data.groups)
}

pub(crate) fn evaluate_split(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: &[u8],
    groups: &[GroupId],
) -> Result<BTreeMap<GroupId, GroupEval>> {
    let probs = params.forward(features)?;
    let mut correct = [0usize; 4];
    let mut ll = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for ((row, &y), g) in probs.rows().into_iter().zip(labels).zip(groups) {
        let k = g.index();
        let pred = model::argmax(row.iter().copied());
        correct[k] += usize::from(pred == y as usize);
        ll[k] += clip_prob(row[y as usize]).ln();
        counts[k] += 1;
    }
    Ok(GroupId::ALL
        .iter()
        .filter(|g| counts[g.index()] > 0)
        .map(|&g| {
            let k = g.index();
            let n = counts[k] as f64;
            (
                g,
                GroupEval {
                    count: counts[k],
                    accuracy: correct[k] as f64 / n,
                    mean_log_likelihood: ll[k] / n,
                },
            )
        })
        .collect())
}
