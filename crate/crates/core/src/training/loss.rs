//! Weighted negative log-likelihood and its exact gradient.

use ndarray::{Array2, ArrayView2, Axis};

use super::model::{clip_prob, ModelParams};
use crate::datagen::{GroupId, SplitData};
use crate::error::{Error, Result};

fn check_weights(n: usize, labels: &[u8], weights: &[f64]) -> Result<f64> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::degenerate(format!(
            "sample weights must be finite and >= 0, found {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::degenerate("total sample weight is zero"));
    }
    Ok(total)
}

/// `Σ w_i · (−log p_i[y_i]) / Σ w_i`, with probabilities clipped to
/// `[1e-12, 1 − 1e-12]`.
pub fn weighted_nll(probs: ArrayView2<f64>, labels: &[u8], weights: &[f64]) -> Result<f64> {
    let total = check_weights(probs.nrows(), labels, weights)?;
    let sum: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .zip(weights)
        .map(|((row, &y), &w)| {
            let p = *row.get(y as usize).ok_or(Error::DimensionMismatch {
                expected: row.len(),
                actual: y as usize + 1,
            })?;
            Ok(-w * clip_prob(p).ln())
        })
        .sum::<Result<f64>>()?;
    Ok(sum / total)
}

/// Exact gradient of [`weighted_nll`] with respect to every parameter.
///
/// The clip is treated as inactive, i.e. this is the gradient of the
/// unclipped softmax cross-entropy.
pub fn gradient(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: &[u8],
    weights: &[f64],
) -> Result<ModelParams> {
    let total = check_weights(features.nrows(), labels, weights)?;
    let cache = params.forward_cached(features)?;
    let n_classes = params.n_classes();

    // dL/dlogits = w_i (p_i − onehot(y_i)) / Σw
    let mut delta: Array2<f64> = cache.probs;
    for (i, mut row) in delta.axis_iter_mut(Axis(0)).enumerate() {
        let y = labels[i] as usize;
        if y >= n_classes {
            return Err(Error::DimensionMismatch {
                expected: n_classes,
                actual: y + 1,
            });
        }
        row[y] -= 1.0;
        let scale = weights[i] / total;
        row.mapv_inplace(|v| v * scale);
    }

    let mut grad = params.zeros_like();
    for k in (0..params.layers.len()).rev() {
        let input = &cache.inputs[k];
        grad.layers[k].weights = delta.t().dot(input);
        grad.layers[k].bias = delta.sum_axis(Axis(0));
        if k > 0 {
            // back through tanh: input = tanh(pre)
            let upstream = delta.dot(&params.layers[k].weights);
            delta = upstream * input.mapv(|h| 1.0 - h * h);
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient".into(),
        });
    }
    Ok(grad)
}

/// Mean NLL per group, over the groups present in `data`.
pub fn group_losses(probs: ArrayView2<f64>, data: &SplitData) -> [Option<f64>; 4] {
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for ((row, &y), g) in probs.rows().into_iter().zip(&data.labels).zip(&data.groups) {
        sums[g.index()] -= clip_prob(row[y as usize]).ln();
        counts[g.index()] += 1;
    }
    let mut out = [None; 4];
    for g in GroupId::ALL {
        let k = g.index();
        if counts[k] > 0 {
            out[k] = Some(sums[k] / counts[k] as f64);
        }
    }
    out
}
