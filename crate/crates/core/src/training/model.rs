use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clip applied to probabilities before taking logarithms.
pub const PROB_CLIP: f64 = 1e-12;

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Architecture {
    Linear,
    /// One tanh hidden layer of the given width.
    Mlp1 {
        hidden: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out × in]`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }
}

/// Softmax classifier parameters. `layers` are applied in order with a tanh
/// between consecutive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub layers: Vec<Dense>,
}

/// Intermediate activations kept for backpropagation.
pub(crate) struct ForwardCache {
    /// Inputs to each layer (the first is the feature matrix itself).
    pub inputs: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

impl ModelParams {
    pub fn zeros(architecture: Architecture, n_features: usize, n_classes: usize) -> Self {
        let layers = match architecture {
            Architecture::Linear => vec![Dense::zeros(n_features, n_classes)],
            Architecture::Mlp1 { hidden } => vec![Dense::zeros(n_features, hidden), Dense::zeros(hidden, n_classes)],
        };
        Self { architecture, layers }
    }

    /// Seeded initialization: N(0, 0.01²) weights for the linear model,
    /// N(0, 1/fan_in) for MLP layers, zero biases.
    pub fn init(architecture: Architecture, n_features: usize, n_classes: usize, seed: u64) -> Self {
        let mut params = Self::zeros(architecture, n_features, n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(101);
        for layer in &mut params.layers {
            let scale = match architecture {
                Architecture::Linear => 0.01,
                Architecture::Mlp1 { .. } => 1.0 / (layer.weights.ncols() as f64).sqrt(),
            };
            for w in layer.weights.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        }
        params
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map(|l| l.weights.nrows()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Same shape as `self` with all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            architecture: self.architecture,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.ncols(), l.weights.nrows()))
                .collect(),
        }
    }

    fn check_width(&self, features: ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: features.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, features: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_width(features)?;
        let mut inputs = vec![features.to_owned()];
        let last = self.layers.len() - 1;
        let mut logits = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(inputs[k].view());
            if k == last {
                logits = Some(z);
            } else {
                inputs.push(z.mapv(f64::tanh));
            }
        }
        let probs = softmax_rows(logits.expect("at least one layer"));
        Ok(ForwardCache { inputs, probs })
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(features)?.probs)
    }

    /// Argmax predictions; ties go to the lowest class index.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<u8>> {
        let probs = self.forward(features)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()) as u8)
            .collect())
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

// ---------------------------------------------------------------------------
// JSON form

#[derive(Serialize, Deserialize)]
struct DenseJson {
    rows: usize,
    cols: usize,
    /// Row-major `[rows × cols]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelParamsJson {
    architecture: Architecture,
    layers: Vec<DenseJson>,
}

impl From<&ModelParams> for ModelParamsJson {
    fn from(p: &ModelParams) -> Self {
        Self {
            architecture: p.architecture,
            layers: p
                .layers
                .iter()
                .map(|l| DenseJson {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelParamsJson> for ModelParams {
    type Error = Error;

    fn try_from(j: ModelParamsJson) -> Result<Self> {
        let expected_layers = match j.architecture {
            Architecture::Linear => 1,
            Architecture::Mlp1 { .. } => 2,
        };
        if j.layers.len() != expected_layers {
            return Err(Error::DimensionMismatch {
                expected: expected_layers,
                actual: j.layers.len(),
            });
        }
        let layers = j
            .layers
            .into_iter()
            .map(|l| {
                if l.bias.len() != l.rows {
                    return Err(Error::DimensionMismatch {
                        expected: l.rows,
                        actual: l.bias.len(),
                    });
                }
                let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                    .map_err(|e| Error::degenerate(format!("weight shape: {e}")))?;
                Ok(Dense {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams {
            architecture: j.architecture,
            layers,
        };
        if !params.is_finite() {
            return Err(Error::NonFinite {
                context: "deserialized parameters".into(),
            });
        }
        Ok(params)
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelParamsJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ModelParamsJson::deserialize(d)?;
        ModelParams::try_from(j).map_err(serde::de::Error::custom)
    }
}
