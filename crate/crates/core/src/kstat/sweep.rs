use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bayes_factor_k, KEstimate};
use crate::datagen::{generate, DataConfig, GroupId};
use crate::error::{Error, Result};
use crate::training::{train, Architecture, BatchMode, Convergence, Objective, TrainConfig};
use crate::validity::stats::{median, pearson_r};

/// Architecture and optimizer settings shared by both models of a K run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub architecture: Architecture,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            train: TrainConfig::default(),
        }
    }
}

/// A K estimate together with both models' training traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRun {
    pub estimate: KEstimate,
    pub erm_convergence: Convergence,
    pub reference_convergence: Convergence,
}

/// generate → train ERM → train reference → K. Both models share the seed
/// and therefore the initialization.
pub fn k_pipeline(data: &DataConfig, pipeline: &PipelineConfig, reference: Objective, seed: u64) -> Result<KEstimate> {
    k_run(data, pipeline, reference, seed).map(|run| run.estimate)
}

pub fn k_run(data: &DataConfig, pipeline: &PipelineConfig, reference: Objective, seed: u64) -> Result<KRun> {
    if reference == Objective::Erm {
        return Err(Error::config("reference", "must be reweight or groupdro"));
    }
    let data_cfg = DataConfig { seed, ..data.clone() };
    let ds = generate(&data_cfg)?;
    let base = TrainConfig {
        seed,
        ..pipeline.train.clone()
    };
    let m_erm = train(&ds, pipeline.architecture, &base.with_objective(Objective::Erm))?;
    let m_ref = train(&ds, pipeline.architecture, &base.with_objective(reference))?;
    Ok(KRun {
        estimate: bayes_factor_k(&m_ref, &m_erm, &ds)?,
        erm_convergence: m_erm.convergence,
        reference_convergence: m_ref.convergence,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Confounder,
    BgNoise,
    FgNoise,
    AttrNoise,
}

impl Knob {
    pub fn as_str(self) -> &'static str {
        match self {
            Knob::Confounder => "confounder",
            Knob::BgNoise => "bg_noise",
            Knob::FgNoise => "fg_noise",
            Knob::AttrNoise => "attr_noise",
        }
    }

    pub fn apply(self, base: &DataConfig, value: f64) -> DataConfig {
        let mut cfg = base.clone();
        match self {
            Knob::Confounder => cfg.confounder_strength = value,
            Knob::BgNoise => cfg.bg_noise = value,
            Knob::FgNoise => cfg.fg_noise = value,
            Knob::AttrNoise => cfg.attr_noise = value,
        }
        cfg
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confounder" => Ok(Knob::Confounder),
            "bg_noise" => Ok(Knob::BgNoise),
            "fg_noise" => Ok(Knob::FgNoise),
            "attr_noise" => Ok(Knob::AttrNoise),
            other => Err(Error::config("knob", format!("unknown knob `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: Knob,
    pub value: f64,
    pub seed: u64,
    pub estimate: KEstimate,
}

pub fn k_sweep(
    base: &DataConfig,
    knob: Knob,
    values: &[f64],
    seeds: &[u64],
    reference: Objective,
    pipeline: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "must be nonempty"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "must be nonempty"));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("values", "must be sorted ascending"));
    }
    let cells: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(value, seed)| {
            let cfg = knob.apply(base, value);
            k_pipeline(&cfg, pipeline, reference, seed)
                .map(|estimate| SweepRow {
                    knob,
                    value,
                    seed,
                    estimate,
                })
                .map_err(|e| e.with_context(format!("{knob}={value}, seed={seed}")))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

/// Median K per knob value, in ascending value order.
pub fn median_k_by_value(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let ks: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.estimate.k).collect();
            (v, median(&ks).expect("every value has at least one row"))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyper {
    LearningRate,
    BatchSize,
}

impl Hyper {
    pub fn as_str(self) -> &'static str {
        match self {
            Hyper::LearningRate => "learning_rate",
            Hyper::BatchSize => "batch_size",
        }
    }

    fn apply(self, base: &TrainConfig, setting: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            Hyper::LearningRate => cfg.learning_rate = setting,
            Hyper::BatchSize => {
                if !(setting >= 1.0 && setting.fract() == 0.0) {
                    return Err(Error::config(
                        "batch_size",
                        format!("must be a positive integer, got {setting}"),
                    ));
                }
                cfg.batch_mode = BatchMode::Minibatch(setting as usize);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for Hyper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learning_rate" => Ok(Hyper::LearningRate),
            "batch_size" => Ok(Hyper::BatchSize),
            other => Err(Error::config("hyper", format!("unknown hyperparameter `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub hyper: Hyper,
    pub setting: f64,
    pub pearson_r: f64,
    /// K per probe config, in probe order.
    pub k_values: Vec<f64>,
}

/// K across `probes` for every hyperparameter setting (applied to both
/// models in lockstep), correlated against the K vector of
/// `reference_setting`. Each probe uses its own `seed`.
pub fn k_robustness(
    hyper: Hyper,
    settings: &[f64],
    reference_setting: f64,
    probes: &[DataConfig],
    reference: Objective,
    pipeline: &PipelineConfig,
) -> Result<Vec<RobustnessRow>> {
    if probes.len() < 3 {
        return Err(Error::config("probe_configs", "need at least 3 probe configs"));
    }
    if !settings.contains(&reference_setting) {
        return Err(Error::config("settings", "must include the reference setting"));
    }
    let cells: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..probes.len()).map(move |p| (s, p)))
        .collect();
    let ks = cells
        .par_iter()
        .map(|&(s, p)| {
            let train_cfg = hyper.apply(&pipeline.train, settings[s])?;
            let pl = PipelineConfig {
                architecture: pipeline.architecture,
                train: train_cfg,
            };
            k_pipeline(&probes[p], &pl, reference, probes[p].seed)
                .map(|e| e.k)
                .map_err(|e| e.with_context(format!("{}={}, probe {p}", hyper.as_str(), settings[s])))
        })
        .collect::<Result<Vec<f64>>>()?;
    let per_setting: Vec<Vec<f64>> = ks.chunks(probes.len()).map(<[f64]>::to_vec).collect();
    let ref_idx = settings
        .iter()
        .position(|&s| s == reference_setting)
        .expect("checked above");
    let reference_ks = &per_setting[ref_idx];
    settings
        .iter()
        .zip(&per_setting)
        .map(|(&setting, k_values)| {
            let r = pearson_r(reference_ks, k_values)
                .map_err(|e| e.with_context(format!("{}={setting}", hyper.as_str())))?;
            Ok(RobustnessRow {
                hyper,
                setting,
                pearson_r: r,
                k_values: k_values.clone(),
            })
        })
        .collect()
}

/// Pearson r between K(reweight) and K(groupdro) over `configs`, with the
/// two K vectors.
pub fn reference_agreement(configs: &[DataConfig], pipeline: &PipelineConfig) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let pairs = configs
        .par_iter()
        .map(|cfg| {
            let rw = k_pipeline(cfg, pipeline, Objective::Reweight, cfg.seed)?.k;
            let gdro = k_pipeline(cfg, pipeline, Objective::GroupDro, cfg.seed)?.k;
            Ok((rw, gdro))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rw, gdro): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let r = pearson_r(&rw, &gdro)?;
    Ok((r, rw, gdro))
}

const SWEEP_HEADER: [&str; 9] = [
    "knob",
    "value",
    "seed",
    "reference",
    "k",
    "ll_rw",
    "ll_erm",
    "worst_group",
    "n_worst",
];

pub fn sweep_to_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            r.knob.to_string(),
            r.value.to_string(),
            r.seed.to_string(),
            e.reference.as_str().to_string(),
            e.k.to_string(),
            e.ll_rw.to_string(),
            e.ll_erm.to_string(),
            e.worst_group.to_string(),
            e.n_worst.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("sweep csv", e))?;
    Ok(())
}

fn read_records<R: Read>(reader: R, file: &str, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let schema = |row: usize, message: String| Error::Schema {
        file: file.to_string(),
        row,
        message,
    };
    let mut r = csv::Reader::from_reader(reader);
    let found = r.headers().map_err(|e| schema(1, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(schema(1, format!("expected header `{}`", header.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(k, rec)| rec.map(|rec| (k + 2, rec)).map_err(|e| schema(k + 2, e.to_string())))
        .collect()
}

fn field<T: FromStr>(file: &str, row: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec[i].parse().map_err(|_| Error::Schema {
        file: file.to_string(),
        row,
        message: format!("{name}: cannot parse `{}`", &rec[i]),
    })
}

pub fn sweep_from_csv<R: Read>(reader: R, file: &str) -> Result<Vec<SweepRow>> {
    read_records(reader, file, &SWEEP_HEADER)?
        .into_iter()
        .map(|(row, rec)| {
            let f = |i, name| -> Result<f64> { field(file, row, &rec, i, name) };
            Ok(SweepRow {
                knob: field(file, row, &rec, 0, "knob")?,
                value: f(1, "value")?,
                seed: field(file, row, &rec, 2, "seed")?,
                estimate: KEstimate {
                    reference: field(file, row, &rec, 3, "reference")?,
                    k: f(4, "k")?,
                    ll_rw: f(5, "ll_rw")?,
                    ll_erm: f(6, "ll_erm")?,
                    worst_group: field::<GroupId>(file, row, &rec, 7, "worst_group")?,
                    n_worst: field(file, row, &rec, 8, "n_worst")?,
                    seed: field(file, row, &rec, 2, "seed")?,
                },
            })
        })
        .collect()
}

const ROBUSTNESS_HEADER: [&str; 5] = ["hyper", "setting", "pearson_r", "probe", "k"];

/// Long form: one line per (setting, probe).
pub fn robustness_to_csv<W: Write>(rows: &[RobustnessRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROBUSTNESS_HEADER)?;
    for r in rows {
        for (probe, k) in r.k_values.iter().enumerate() {
            w.write_record([
                r.hyper.as_str().to_string(),
                r.setting.to_string(),
                r.pearson_r.to_string(),
                probe.to_string(),
                k.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("robustness csv", e))?;
    Ok(())
}

pub fn robustness_from_csv<R: Read>(reader: R, file: &str) -> Result<Vec<RobustnessRow>> {
    let mut rows: Vec<RobustnessRow> = Vec::new();
    for (row, rec) in read_records(reader, file, &ROBUSTNESS_HEADER)? {
        let hyper: Hyper = field(file, row, &rec, 0, "hyper")?;
        let setting: f64 = field(file, row, &rec, 1, "setting")?;
        let pearson_r: f64 = field(file, row, &rec, 2, "pearson_r")?;
        let probe: usize = field(file, row, &rec, 3, "probe")?;
        let k: f64 = field(file, row, &rec, 4, "k")?;
        let continues = rows
            .last()
            .is_some_and(|last| last.hyper == hyper && last.setting == setting);
        if !continues {
            rows.push(RobustnessRow {
                hyper,
                setting,
                pearson_r,
                k_values: Vec::new(),
            });
        }
        let current = rows.last_mut().expect("pushed above");
        if probe != current.k_values.len() {
            return Err(Error::Schema {
                file: file.to_string(),
                row,
                message: format!("probe index {probe} out of sequence"),
            });
        }
        current.k_values.push(k);
    }
    Ok(rows)
}
