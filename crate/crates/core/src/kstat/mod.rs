//! Task difficulty due to spurious correlation.
//!
//! `K` is the log Bayes factor between a model penalized for using the
//! spurious attribute (reweighted or GroupDRO) and an ERM model, evaluated on
//! the worst test group of the ERM model. Log-likelihoods are per-sample
//! means so that `K` is comparable across test sets of different sizes.

mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use sweep::{
    k_pipeline, k_robustness, k_run, k_sweep, median_k_by_value, reference_agreement, robustness_from_csv,
    robustness_to_csv, sweep_from_csv, sweep_to_csv, Hyper, KRun, Knob, PipelineConfig, RobustnessRow, SweepRow,
};

use crate::datagen::{GroupId, GroupedDataset, Split};
use crate::error::{Error, Result};
use crate::training::{evaluate_groups, GroupEval, ModelParams, Objective, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub k: f64,
    pub ll_rw: f64,
    pub ll_erm: f64,
    pub worst_group: GroupId,
    pub n_worst: usize,
    pub reference: Objective,
    pub seed: u64,
}

/// Argmin of accuracy; ties go to the lexicographically smallest group.
pub fn worst_group_from_accuracies(evals: &BTreeMap<GroupId, GroupEval>) -> Result<GroupId> {
    // BTreeMap iterates in (a, y) order, so a strict `<` keeps the first minimum.
    let mut best: Option<(GroupId, f64)> = None;
    for (&g, e) in evals {
        if best.is_none_or(|(_, acc)| e.accuracy < acc) {
            best = Some((g, e.accuracy));
        }
    }
    best.map(|(g, _)| g)
        .ok_or_else(|| Error::degenerate("no groups to select a worst group from"))
}

pub fn worst_group(model_erm: &TrainedModel, ds: &GroupedDataset, split: Split) -> Result<GroupId> {
    let evals = evaluate_groups(&model_erm.params, ds, split)?;
    worst_group_from_accuracies(&evals)
}

/// Mean log-likelihood of `group` in `split` under `params`.
pub fn group_log_likelihood(
    params: &ModelParams,
    ds: &GroupedDataset,
    split: Split,
    group: GroupId,
) -> Result<(f64, usize)> {
    let evals = evaluate_groups(params, ds, split)?;
    let e = evals.get(&group).ok_or_else(|| Error::EmptyGroup {
        group: group.to_string(),
        split: split.to_string(),
    })?;
    Ok((e.mean_log_likelihood, e.count))
}

/// Per-sample log-likelihood ratio of `numerator` over `denominator` on one
/// group. Swapping the two arguments negates the result exactly.
pub fn log_likelihood_ratio(
    numerator: &ModelParams,
    denominator: &ModelParams,
    ds: &GroupedDataset,
    split: Split,
    group: GroupId,
) -> Result<f64> {
    let (num, _) = group_log_likelihood(numerator, ds, split, group)?;
    let (den, _) = group_log_likelihood(denominator, ds, split, group)?;
    Ok(num - den)
}

pub fn bayes_factor_k(m_rw: &TrainedModel, m_erm: &TrainedModel, ds: &GroupedDataset) -> Result<KEstimate> {
    if m_erm.objective != Objective::Erm {
        return Err(Error::degenerate(format!(
            "baseline model must be trained with erm, got {}",
            m_erm.objective.as_str()
        )));
    }
    if m_rw.objective == Objective::Erm {
        return Err(Error::degenerate(
            "reference model must be trained with reweight or groupdro",
        ));
    }
    let fp = ds.fingerprint();
    if m_rw.dataset_fingerprint != fp || m_erm.dataset_fingerprint != fp {
        return Err(Error::degenerate(
            "dataset fingerprint mismatch between models and dataset",
        ));
    }
    let erm_evals = evaluate_groups(&m_erm.params, ds, Split::Test)?;
    let worst = worst_group_from_accuracies(&erm_evals)?;
    let ll_erm = erm_evals[&worst].mean_log_likelihood;
    let n_worst = erm_evals[&worst].count;
    let (ll_rw, _) = group_log_likelihood(&m_rw.params, ds, Split::Test, worst)?;
    let k = ll_rw - ll_erm;
    if !k.is_finite() {
        return Err(Error::NonFinite {
            context: "bayes factor".into(),
        });
    }
    Ok(KEstimate {
        k,
        ll_rw,
        ll_erm,
        worst_group: worst,
        n_worst,
        reference: m_rw.objective,
        seed: m_erm.seed,
    })
}

/// Plug-in mutual information (nats) of a 2×2 joint table indexed `[y][a]`.
/// Zero cells contribute zero.
pub fn mutual_information_from_joint(joint: &[[f64; 2]; 2]) -> Result<f64> {
    let total: f64 = joint.iter().flatten().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::degenerate("joint table has zero mass"));
    }
    let p = joint.map(|row| row.map(|v| v / total));
    let py = [p[0][0] + p[0][1], p[1][0] + p[1][1]];
    let pa = [p[0][0] + p[1][0], p[0][1] + p[1][1]];
    let mut mi = 0.0;
    for y in 0..2 {
        for a in 0..2 {
            let pya = p[y][a];
            if pya > 0.0 {
                mi += pya * (pya / (py[y] * pa[a])).ln();
            }
        }
    }
    Ok(mi)
}

/// Empirical I(Y; A) over the recorded attributes of one split.
pub fn mutual_information(ds: &GroupedDataset, split: Split) -> Result<f64> {
    let mut joint = [[0.0f64; 2]; 2];
    let mut n = 0usize;
    for i in 0..ds.len() {
        if ds.splits[i] == split {
            joint[ds.labels[i] as usize][ds.attributes[i] as usize] += 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySplit(split.to_string()));
    }
    mutual_information_from_joint(&joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::GroupEval;

    fn evals(accs: [f64; 4]) -> BTreeMap<GroupId, GroupEval> {
        GroupId::ALL
            .iter()
            .map(|&g| {
                (
                    g,
                    GroupEval {
                        count: 10,
                        accuracy: accs[g.index()],
                        mean_log_likelihood: -0.1,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn worst_group_is_argmin() {
        // (0,0):0.9, (0,1):0.4, (1,0):0.95, (1,1):0.88
        let g = worst_group_from_accuracies(&evals([0.9, 0.4, 0.95, 0.88])).unwrap();
        assert_eq!(g, GroupId::new(0, 1));
    }

    #[test]
    fn worst_group_ties_pick_first() {
        let g = worst_group_from_accuracies(&evals([0.7; 4])).unwrap();
        assert_eq!(g, GroupId::new(0, 0));
        let g = worst_group_from_accuracies(&evals([0.9, 0.5, 0.5, 0.9])).unwrap();
        assert_eq!(g, GroupId::new(0, 1));
    }

    #[test]
    fn independent_table_has_zero_information() {
        let mi = mutual_information_from_joint(&[[0.25, 0.25], [0.25, 0.25]]).unwrap();
        assert_eq!(mi, 0.0);
    }

    #[test]
    fn binary_symmetric_channel_information() {
        // joint[y][a]: a = y with prob 0.9
        let joint = [[0.45, 0.05], [0.05, 0.45]];
        let direct = mutual_information_from_joint(&joint).unwrap();
        let hb = -(0.9f64 * 0.9f64.ln() + 0.1f64 * 0.1f64.ln());
        let closed_form = std::f64::consts::LN_2 - hb;
        assert!((direct - closed_form).abs() < 1e-15);
        assert!((direct - 0.36807).abs() < 1e-5);
    }

    #[test]
    fn deterministic_attribute_has_ln2_information() {
        let mi = mutual_information_from_joint(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
