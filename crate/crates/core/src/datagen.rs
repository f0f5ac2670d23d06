//! Seeded synthetic grouped classification data.
//!
//! Each sample has a binary label `y`, a binary attribute `a`, and a feature
//! vector made of two Gaussian blocks: a *core* block whose mean depends on
//! `y` and a *spurious* block whose mean depends on `a`. The knobs of
//! [`DataConfig`] control the three drivers of spurious-correlation
//! difficulty:
//!
//! * association strength via `confounder_strength` (P(a = y)),
//! * attribute learnability via `spurious_separation` / `bg_noise`,
//! * target learnability via `core_separation` / `fg_noise`,
//!
//! plus annotation quality via `attr_noise`, which flips recorded attributes
//! without touching the attribute used to generate features.
//!
//! Labels, attributes, features and annotation flips are drawn from
//! independent ChaCha substreams so that changing one knob never perturbs the
//! draws of another.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub core_dim: usize,
    pub spurious_dim: usize,
    pub confounder_strength: f64,
    pub core_separation: f64,
    pub spurious_separation: f64,
    pub fg_noise: f64,
    pub bg_noise: f64,
    pub attr_noise: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_val: 1000,
            n_test: 2000,
            core_dim: 10,
            spurious_dim: 10,
            confounder_strength: 0.9,
            core_separation: 1.0,
            spurious_separation: 1.0,
            fg_noise: 0.0,
            bg_noise: 0.0,
            attr_noise: 0.0,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("core_dim", self.core_dim),
            ("spurious_dim", self.spurious_dim),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        // The balanced test split needs at least one sample per group.
        if self.n_test < 4 {
            return Err(Error::config("n_test", format!("must be >= 4, got {}", self.n_test)));
        }
        let rho = self.confounder_strength;
        if !(0.5..=1.0).contains(&rho) {
            return Err(Error::config(
                "confounder_strength",
                format!("must lie in [0.5, 1.0], got {rho}"),
            ));
        }
        if !(0.0..=0.5).contains(&self.attr_noise) {
            return Err(Error::config(
                "attr_noise",
                format!("must lie in [0, 0.5], got {}", self.attr_noise),
            ));
        }
        let positive = [
            ("core_separation", self.core_separation),
            ("spurious_separation", self.spurious_separation),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        let nonneg = [("fg_noise", self.fg_noise), ("bg_noise", self.bg_noise)];
        for (field, value) in nonneg {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {value}")));
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.core_dim + self.spurious_dim
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DataConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 16,
            Split::Test => 32,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::degenerate(format!("unknown split `{other}`"))),
        }
    }
}

/// A group is the (attribute, label) pair. Ordering is lexicographic on
/// `(a, y)`, which is the tie-break order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId {
    pub a: u8,
    pub y: u8,
}

impl GroupId {
    pub const ALL: [GroupId; 4] = [
        GroupId { a: 0, y: 0 },
        GroupId { a: 0, y: 1 },
        GroupId { a: 1, y: 0 },
        GroupId { a: 1, y: 1 },
    ];

    pub fn new(a: u8, y: u8) -> Self {
        Self { a, y }
    }

    pub fn index(self) -> usize {
        (self.a as usize) * 2 + self.y as usize
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}_y{}", self.a, self.y)
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::degenerate(format!("malformed group id `{s}` (expected a<0|1>_y<0|1>)"));
        let (a, y) = s.split_once('_').ok_or_else(bad)?;
        let a = a.strip_prefix('a').and_then(|v| v.parse::<u8>().ok()).ok_or_else(bad)?;
        let y = y.strip_prefix('y').and_then(|v| v.parse::<u8>().ok()).ok_or_else(bad)?;
        if a > 1 || y > 1 {
            return Err(bad());
        }
        Ok(GroupId { a, y })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    /// Recorded (possibly noisy) attribute annotations.
    pub attributes: Vec<u8>,
    pub splits: Vec<Split>,
    /// Attributes used to generate the spurious block. Equal to `attributes`
    /// when there is no annotation noise; not serialized.
    pub latent_attributes: Vec<u8>,
}

/// A copied-out view of one split.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<GroupId>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn group_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for g in &self.groups {
            counts[g.index()] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GroupShare {
    pub count: usize,
    pub frequency: f64,
}

impl GroupedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn group(&self, i: usize) -> GroupId {
        GroupId::new(self.attributes[i], self.labels[i])
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> SplitData {
        let idx = self.indices(split);
        let features = self.features.select(ndarray::Axis(0), &idx);
        SplitData {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.group(i)).collect(),
        }
    }

    /// SHA-256 over labels, recorded attributes, splits and feature bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.n_features() as u64).to_le_bytes());
        hasher.update(&self.labels);
        hasher.update(&self.attributes);
        hasher.update(self.splits.iter().map(|s| *s as u8).collect::<Vec<_>>());
        for v in self.features.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["split".to_string(), "y".to_string(), "a".to_string()];
        header.extend((0..self.n_features()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut rec = Vec::with_capacity(3 + row.len());
            rec.push(self.splits[i].as_str().to_string());
            rec.push(self.labels[i].to_string());
            rec.push(self.attributes[i].to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("dataset csv", e))?;
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R, name: &str) -> Result<Self> {
        let schema = |row: usize, message: String| Error::Schema {
            file: name.to_string(),
            row,
            message,
        };
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 4 || &header[0] != "split" || &header[1] != "y" || &header[2] != "a" {
            return Err(schema(1, "expected header `split,y,a,x_0,...`".into()));
        }
        for (j, col) in header.iter().skip(3).enumerate() {
            if col != format!("x_{j}") {
                return Err(schema(1, format!("expected column `x_{j}`, found `{col}`")));
            }
        }
        let d = header.len() - 3;
        let mut data = Vec::new();
        let (mut labels, mut attributes, mut splits) = (Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in r.records().enumerate() {
            let row = k + 2;
            let rec = rec?;
            if rec.len() != d + 3 {
                return Err(schema(row, format!("expected {} fields, found {}", d + 3, rec.len())));
            }
            splits.push(rec[0].parse::<Split>().map_err(|e| schema(row, e.to_string()))?);
            let bit = |s: &str, what: &str| match s {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(schema(row, format!("{what} must be 0 or 1, found `{other}`"))),
            };
            labels.push(bit(&rec[1], "y")?);
            attributes.push(bit(&rec[2], "a")?);
            for field in rec.iter().skip(3) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| schema(row, format!("non-numeric feature `{field}`")))?;
                data.push(v);
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), data).map_err(|e| Error::degenerate(e.to_string()))?;
        Ok(Self {
            features,
            latent_attributes: attributes.clone(),
            labels,
            attributes,
            splits,
        })
    }
}

const STREAM_LABEL: u64 = 0;
const STREAM_ATTR: u64 = 1;
const STREAM_FEATURE: u64 = 2;
const STREAM_FLIP: u64 = 3;

fn substream(seed: u64, split: Split, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream_base() + stream);
    rng
}

struct Block {
    labels: Vec<u8>,
    latent: Vec<u8>,
    recorded: Vec<u8>,
    features: Vec<f64>,
}

fn draw_features(cfg: &DataConfig, split: Split, labels: &[u8], latent: &[u8]) -> Vec<f64> {
    let mut rng = substream(cfg.seed, split, STREAM_FEATURE);
    let core_sd = (1.0 + cfg.fg_noise * cfg.fg_noise).sqrt();
    let spur_sd = (1.0 + cfg.bg_noise * cfg.bg_noise).sqrt();
    let d = cfg.n_features();
    let mut out = Vec::with_capacity(labels.len() * d);
    for (&y, &a) in labels.iter().zip(latent) {
        let core_mean = (2.0 * y as f64 - 1.0) * cfg.core_separation;
        let spur_mean = (2.0 * a as f64 - 1.0) * cfg.spurious_separation;
        for _ in 0..cfg.core_dim {
            let z: f64 = rng.sample(StandardNormal);
            out.push(core_mean + core_sd * z);
        }
        for _ in 0..cfg.spurious_dim {
            let z: f64 = rng.sample(StandardNormal);
            out.push(spur_mean + spur_sd * z);
        }
    }
    out
}

fn flip_annotations(cfg: &DataConfig, split: Split, latent: &[u8]) -> Vec<u8> {
    let mut rng = substream(cfg.seed, split, STREAM_FLIP);
    latent
        .iter()
        .map(|&a| if rng.random_bool(cfg.attr_noise) { 1 - a } else { a })
        .collect()
}

fn sample_block(cfg: &DataConfig, split: Split, n: usize) -> Block {
    let mut label_rng = substream(cfg.seed, split, STREAM_LABEL);
    let mut attr_rng = substream(cfg.seed, split, STREAM_ATTR);
    let labels: Vec<u8> = (0..n).map(|_| label_rng.random_bool(0.5) as u8).collect();
    let latent: Vec<u8> = labels
        .iter()
        .map(|&y| {
            if attr_rng.random_bool(cfg.confounder_strength) {
                y
            } else {
                1 - y
            }
        })
        .collect();
    let features = draw_features(cfg, split, &labels, &latent);
    let recorded = flip_annotations(cfg, split, &latent);
    Block {
        labels,
        latent,
        recorded,
        features,
    }
}

/// Group-balanced block: `n / 4` samples per true group, remainder assigned
/// to the lowest groups in `(a, y)` order.
fn balanced_block(cfg: &DataConfig, split: Split, n: usize) -> Block {
    let mut labels = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for (k, g) in GroupId::ALL.iter().enumerate() {
        let size = n / 4 + usize::from(k < n % 4);
        labels.extend(std::iter::repeat_n(g.y, size));
        latent.extend(std::iter::repeat_n(g.a, size));
    }
    let features = draw_features(cfg, split, &labels, &latent);
    let recorded = flip_annotations(cfg, split, &latent);
    Block {
        labels,
        latent,
        recorded,
        features,
    }
}

pub fn generate(cfg: &DataConfig) -> Result<GroupedDataset> {
    cfg.validate()?;
    let blocks = [
        (Split::Train, sample_block(cfg, Split::Train, cfg.n_train)),
        (Split::Val, sample_block(cfg, Split::Val, cfg.n_val)),
        (Split::Test, balanced_block(cfg, Split::Test, cfg.n_test)),
    ];
    let n = cfg.n_train + cfg.n_val + cfg.n_test;
    let mut ds = GroupedDataset {
        features: Array2::zeros((0, 0)),
        labels: Vec::with_capacity(n),
        attributes: Vec::with_capacity(n),
        splits: Vec::with_capacity(n),
        latent_attributes: Vec::with_capacity(n),
    };
    let mut data = Vec::with_capacity(n * cfg.n_features());
    for (split, block) in blocks {
        ds.splits.extend(std::iter::repeat_n(split, block.labels.len()));
        ds.labels.extend(block.labels);
        ds.attributes.extend(block.recorded);
        ds.latent_attributes.extend(block.latent);
        data.extend(block.features);
    }
    ds.features = Array2::from_shape_vec((n, cfg.n_features()), data).expect("feature buffer sized from config");
    Ok(ds)
}

pub fn empirical_group_distribution(ds: &GroupedDataset, split: Split) -> Result<BTreeMap<GroupId, GroupShare>> {
    let mut counts = [0usize; 4];
    let mut total = 0usize;
    for i in 0..ds.len() {
        if ds.splits[i] == split {
            counts[ds.group(i).index()] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptySplit(split.to_string()));
    }
    Ok(GroupId::ALL
        .iter()
        .map(|&g| {
            let count = counts[g.index()];
            (
                g,
                GroupShare {
                    count,
                    frequency: count as f64 / total as f64,
                },
            )
        })
        .collect())
}
