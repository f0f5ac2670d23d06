//! Benchmark validity desiderata and benchmark-agreement analyses.
//!
//! A benchmark is considered valid when it shows
//!
//! * **ERM failure**: ERM per-group accuracies spread out (sample SD ≥ t1),
//! * **discriminative power**: methods' worst-group accuracies spread out
//!   (sample SD ≥ t2),
//! * **convergent validity**: its agreement (Pearson r over methods) with
//!   other benchmarks of the same model family decays with the distance in
//!   K. The coefficient is the negated OLS slope of r against |ΔK| and must
//!   be ≥ t3. Only benchmarks passing the first two desiderata take part.

pub mod stats;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use stats::{iqr, median, ols_fit, pearson_r, quantile, summary_stats, OlsFit};
pub use table::{Family, GroupAccuracyTable, KEntry, KTable, ResultsTable};

use crate::error::{Error, Result};
use table::{schema, CsvRows};

pub fn erm_failure_sd(groups: &GroupAccuracyTable, benchmark: &str) -> Result<f64> {
    let accs: Vec<f64> = groups
        .benchmarks
        .get(benchmark)
        .map(|g| g.values().copied().collect())
        .unwrap_or_default();
    if accs.len() < 2 {
        return Err(Error::degenerate(format!(
            "`{benchmark}` needs at least 2 groups for ERM failure, has {}",
            accs.len()
        )));
    }
    stats::sample_sd(&accs)
}

pub fn disc_power_sd(results: &ResultsTable, benchmark: &str) -> Result<f64> {
    let accs: Vec<f64> = results.column(benchmark).into_iter().map(|(_, v)| v).collect();
    if accs.len() < 2 {
        return Err(Error::degenerate(format!(
            "`{benchmark}` needs at least 2 methods for discriminative power, has {}",
            accs.len()
        )));
    }
    stats::sample_sd(&accs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    /// `None` when the correlation is undefined; see `note`.
    pub r: Option<f64>,
    pub n_shared: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Pairwise Pearson r between benchmark columns over shared methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub benchmarks: Vec<String>,
    pub cells: Vec<Vec<AgreementCell>>,
}

impl AgreementMatrix {
    fn index(&self, benchmark: &str) -> Option<usize> {
        self.benchmarks.iter().position(|b| b == benchmark)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        self.cells[i][j].r
    }

    pub fn cell(&self, a: &str, b: &str) -> Option<&AgreementCell> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        Some(&self.cells[i][j])
    }

    /// Long form: `benchmark_a,benchmark_b,pearson_r,n_shared`, empty r when
    /// undefined.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["benchmark_a", "benchmark_b", "pearson_r", "n_shared"])?;
        for (i, a) in self.benchmarks.iter().enumerate() {
            for (j, b) in self.benchmarks.iter().enumerate() {
                let c = &self.cells[i][j];
                let r = c.r.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([a.as_str(), b.as_str(), &r, &c.n_shared.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("agreement csv", e))?;
        Ok(())
    }

    /// Reads the long form back. Every ordered pair must be present; notes
    /// on undefined cells are not part of the CSV.
    pub fn from_csv<R: Read>(reader: R, file: &str) -> Result<Self> {
        let csv = CsvRows::read(reader, file)?;
        csv.expect_header(&["benchmark_a", "benchmark_b", "pearson_r", "n_shared"])?;
        let mut entries: BTreeMap<(String, String), AgreementCell> = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (row, rec) in &csv.rows {
            if rec.len() != 4 {
                return Err(schema(file, *row, format!("expected 4 fields, found {}", rec.len())));
            }
            let a = csv.name(*row, &rec[0], "benchmark_a")?;
            let b = csv.name(*row, &rec[1], "benchmark_b")?;
            let r = if rec[2].is_empty() {
                None
            } else {
                Some(csv.float(*row, &rec[2], "pearson_r")?)
            };
            let n_shared = rec[3]
                .parse()
                .map_err(|_| schema(file, *row, format!("n_shared: `{}` is not a count", &rec[3])))?;
            names.insert(a.clone());
            names.insert(b.clone());
            let cell = AgreementCell {
                r,
                n_shared,
                note: None,
            };
            if entries.insert((a.clone(), b.clone()), cell).is_some() {
                return Err(schema(file, *row, format!("duplicate pair ({a}, {b})")));
            }
        }
        let benchmarks: Vec<String> = names.into_iter().collect();
        let mut cells = Vec::with_capacity(benchmarks.len());
        for a in &benchmarks {
            let mut line = Vec::with_capacity(benchmarks.len());
            for b in &benchmarks {
                let cell = entries
                    .remove(&(a.clone(), b.clone()))
                    .ok_or_else(|| schema(file, 0, format!("missing pair ({a}, {b})")))?;
                line.push(cell);
            }
            cells.push(line);
        }
        Ok(Self { benchmarks, cells })
    }
}

/// Pairwise-complete correlation matrix over all benchmarks of `results`.
/// Pairs with fewer than 3 shared methods or zero variance are flagged
/// undefined.
pub fn agreement_matrix(results: &ResultsTable) -> AgreementMatrix {
    let benchmarks: Vec<String> = results.benchmarks().map(str::to_string).collect();
    let n = benchmarks.len();
    let columns: Vec<BTreeMap<&str, f64>> = benchmarks
        .iter()
        .map(|b| results.column(b).into_iter().collect())
        .collect();
    let mut cells = vec![
        vec![
            AgreementCell {
                r: None,
                n_shared: 0,
                note: None,
            };
            n
        ];
        n
    ];
    for i in 0..n {
        cells[i][i] = AgreementCell {
            r: Some(1.0),
            n_shared: columns[i].len(),
            note: None,
        };
        for j in (i + 1)..n {
            let (x, y): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .filter_map(|(m, &a)| columns[j].get(m).map(|&b| (a, b)))
                .unzip();
            let cell = match pearson_r(&x, &y) {
                Ok(r) => AgreementCell {
                    r: Some(r),
                    n_shared: x.len(),
                    note: None,
                },
                Err(e) => AgreementCell {
                    r: None,
                    n_shared: x.len(),
                    note: Some(e.to_string()),
                },
            };
            cells[j][i] = cell.clone();
            cells[i][j] = cell;
        }
    }
    AgreementMatrix { benchmarks, cells }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergentPoint {
    pub benchmark: String,
    pub partner: String,
    pub abs_dk: f64,
    pub pearson_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergentFit {
    /// Negated slope: positive when agreement decays with K-distance.
    pub coeff: f64,
    pub r_squared: f64,
    pub points: Vec<ConvergentPoint>,
}

/// Agreement-vs-|ΔK| points for `benchmark` against same-family partners
/// in `prefilter` whose agreement is defined.
pub fn convergent_points(
    agreement: &AgreementMatrix,
    k_table: &KTable,
    prefilter: &BTreeSet<String>,
    benchmark: &str,
) -> Result<Vec<ConvergentPoint>> {
    let own = k_table
        .get(benchmark)
        .ok_or_else(|| Error::degenerate(format!("no K value for `{benchmark}`")))?;
    Ok(prefilter
        .iter()
        .filter(|p| p.as_str() != benchmark)
        .filter_map(|p| {
            let entry = k_table.get(p)?;
            if entry.family != own.family {
                return None;
            }
            let r = agreement.get(benchmark, p)?;
            Some(ConvergentPoint {
                benchmark: benchmark.to_string(),
                partner: p.clone(),
                abs_dk: (own.k - entry.k).abs(),
                pearson_r: r,
            })
        })
        .collect())
}

pub fn convergent_fit(
    agreement: &AgreementMatrix,
    k_table: &KTable,
    prefilter: &BTreeSet<String>,
    benchmark: &str,
) -> Result<ConvergentFit> {
    let points = convergent_points(agreement, k_table, prefilter, benchmark)?;
    if points.len() < 2 {
        return Err(Error::degenerate(format!(
            "`{benchmark}` has {} comparison partner(s); convergent validity needs at least 2",
            points.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.abs_dk).collect();
    let y: Vec<f64> = points.iter().map(|p| p.pearson_r).collect();
    let fit = ols_fit(&x, &y).map_err(|e| e.with_context(format!("convergent validity of `{benchmark}`")))?;
    Ok(ConvergentFit {
        coeff: -fit.slope,
        r_squared: fit.r_squared,
        points,
    })
}

/// Convergent-validity fits for every benchmark of `prefilter`.
pub fn convergent_validity_from_agreement(
    agreement: &AgreementMatrix,
    k_table: &KTable,
    prefilter: &BTreeSet<String>,
) -> BTreeMap<String, Result<ConvergentFit>> {
    prefilter
        .iter()
        .map(|b| (b.clone(), convergent_fit(agreement, k_table, prefilter, b)))
        .collect()
}

pub fn convergent_validity(
    results: &ResultsTable,
    k_table: &KTable,
    prefilter: &BTreeSet<String>,
) -> BTreeMap<String, Result<ConvergentFit>> {
    convergent_validity_from_agreement(&agreement_matrix(results), k_table, prefilter)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub erm_failure: f64,
    pub disc_power: f64,
    pub conv_validity: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            erm_failure: 2.0,
            disc_power: 2.5,
            conv_validity: 0.10,
        }
    }
}

impl FromStr for Thresholds {
    type Err = Error;

    /// `t1,t2,t3`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("thresholds", format!("expected three numbers t1,t2,t3, got `{s}`")))?;
        match parts[..] {
            [erm_failure, disc_power, conv_validity] => Ok(Self {
                erm_failure,
                disc_power,
                conv_validity,
            }),
            _ => Err(Error::config(
                "thresholds",
                format!("expected three numbers t1,t2,t3, got `{s}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityFlags {
    pub erm_failure: bool,
    pub disc_power: bool,
    pub conv_validity: bool,
    pub valid: bool,
}

pub fn classify_validity(erm_sd: f64, disc_sd: f64, conv_coeff: f64, t: &Thresholds) -> ValidityFlags {
    let erm_failure = erm_sd >= t.erm_failure;
    let disc_power = disc_sd >= t.disc_power;
    let conv_validity = conv_coeff >= t.conv_validity;
    ValidityFlags {
        erm_failure,
        disc_power,
        conv_validity,
        valid: erm_failure && disc_power && conv_validity,
    }
}

/// Statistics for one benchmark; `None` where a statistic is undefined,
/// which fails the corresponding desideratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub benchmark: String,
    pub model_family: Family,
    pub k: Option<f64>,
    pub erm_failure_sd: Option<f64>,
    pub disc_power_sd: Option<f64>,
    pub conv_validity_coeff: Option<f64>,
    pub conv_validity_r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    #[serde(flatten)]
    pub stats: BenchmarkStats,
    pub flags: ValidityFlags,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub thresholds: Thresholds,
    pub rows: Vec<ValidityRow>,
}

const STATS_COLUMNS: [&str; 7] = [
    "benchmark",
    "model_family",
    "k",
    "erm_failure_sd",
    "disc_power_sd",
    "conv_validity_coeff",
    "conv_validity_r2",
];

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ValidityReport {
    /// Classify precomputed statistics.
    pub fn from_stats(stats: Vec<BenchmarkStats>, thresholds: Thresholds) -> Self {
        let mut rows: Vec<ValidityRow> = stats
            .into_iter()
            .map(|s| {
                let nan = f64::NEG_INFINITY;
                let flags = classify_validity(
                    s.erm_failure_sd.unwrap_or(nan),
                    s.disc_power_sd.unwrap_or(nan),
                    s.conv_validity_coeff.unwrap_or(nan),
                    &thresholds,
                );
                ValidityRow {
                    stats: s,
                    flags,
                    notes: Vec::new(),
                }
            })
            .collect();
        rows.sort_by(|a, b| a.stats.benchmark.cmp(&b.stats.benchmark));
        Self { thresholds, rows }
    }

    pub fn row(&self, benchmark: &str) -> Option<&ValidityRow> {
        self.rows.iter().find(|r| r.stats.benchmark == benchmark)
    }

    pub fn valid_benchmarks(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter(|r| r.flags.valid)
            .map(|r| r.stats.benchmark.clone())
            .collect()
    }

    pub fn invalid_benchmarks(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter(|r| !r.flags.valid)
            .map(|r| r.stats.benchmark.clone())
            .collect()
    }

    pub fn benchmarks(&self) -> BTreeSet<String> {
        self.rows.iter().map(|r| r.stats.benchmark.clone()).collect()
    }

    /// Table-shaped CSV: the statistics columns followed by the flags.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = STATS_COLUMNS.to_vec();
        header.extend(["erm_failure_pass", "disc_power_pass", "conv_validity_pass", "valid"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let s = &r.stats;
            w.write_record([
                s.benchmark.clone(),
                s.model_family.to_string(),
                opt_to_string(s.k),
                opt_to_string(s.erm_failure_sd),
                opt_to_string(s.disc_power_sd),
                opt_to_string(s.conv_validity_coeff),
                opt_to_string(s.conv_validity_r2),
                r.flags.erm_failure.to_string(),
                r.flags.disc_power.to_string(),
                r.flags.conv_validity.to_string(),
                r.flags.valid.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("validity csv", e))?;
        Ok(())
    }
}

/// Reads precomputed statistics by column name (extra columns are ignored,
/// so the report CSV reads back). Empty fields mean undefined;
/// `conv_validity_r2` is optional.
pub fn read_stats_csv<R: Read>(reader: R, file: &str) -> Result<Vec<BenchmarkStats>> {
    let csv = CsvRows::read(reader, file)?;
    let col = |name| csv.column(name);
    let (ib, ifam, ik, ie, id, ic) = (
        col("benchmark")?,
        col("model_family")?,
        col("k")?,
        col("erm_failure_sd")?,
        col("disc_power_sd")?,
        col("conv_validity_coeff")?,
    );
    let ir2 = csv.column("conv_validity_r2").ok();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (row, rec) in &csv.rows {
        if rec.len() != csv.header.len() {
            return Err(schema(
                file,
                *row,
                format!("expected {} fields, found {}", csv.header.len(), rec.len()),
            ));
        }
        let opt = |i: usize, what: &str| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                csv.float(*row, &rec[i], what).map(Some)
            }
        };
        let benchmark = csv.name(*row, &rec[ib], "benchmark")?;
        if !seen.insert(benchmark.clone()) {
            return Err(schema(file, *row, format!("duplicate benchmark `{benchmark}`")));
        }
        out.push(BenchmarkStats {
            model_family: csv.family(*row, &rec[ifam])?,
            k: opt(ik, "k")?,
            erm_failure_sd: opt(ie, "erm_failure_sd")?,
            disc_power_sd: opt(id, "disc_power_sd")?,
            conv_validity_coeff: opt(ic, "conv_validity_coeff")?,
            conv_validity_r2: match ir2 {
                Some(i) => opt(i, "conv_validity_r2")?,
                None => None,
            },
            benchmark,
        });
    }
    Ok(out)
}

/// Full pipeline over raw tables: desiderata 1–2 per benchmark, then
/// convergent validity among the benchmarks passing both.
pub fn build_report(
    results: &ResultsTable,
    groups: &GroupAccuracyTable,
    k_table: &KTable,
    thresholds: Thresholds,
) -> (ValidityReport, AgreementMatrix) {
    let agreement = agreement_matrix(results);
    let mut notes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut partial = Vec::new();
    for b in results.benchmarks() {
        let mut note = |e: Error| notes.entry(b.to_string()).or_default().push(e.to_string());
        let erm = erm_failure_sd(groups, b).map_err(&mut note).ok();
        let disc = disc_power_sd(results, b).map_err(&mut note).ok();
        let k = k_table.get(b).map(|e| e.k);
        if k.is_none() {
            note(Error::degenerate(format!("no K value for `{b}`")));
        }
        partial.push(BenchmarkStats {
            benchmark: b.to_string(),
            model_family: results.family(b).expect("benchmark from table"),
            k,
            erm_failure_sd: erm,
            disc_power_sd: disc,
            conv_validity_coeff: None,
            conv_validity_r2: None,
        });
    }
    let prefilter: BTreeSet<String> = partial
        .iter()
        .filter(|s| {
            s.erm_failure_sd.is_some_and(|v| v >= thresholds.erm_failure)
                && s.disc_power_sd.is_some_and(|v| v >= thresholds.disc_power)
                && s.k.is_some()
        })
        .map(|s| s.benchmark.clone())
        .collect();
    let fits = convergent_validity_from_agreement(&agreement, k_table, &prefilter);
    for s in &mut partial {
        match fits.get(&s.benchmark) {
            Some(Ok(fit)) => {
                s.conv_validity_coeff = Some(fit.coeff);
                s.conv_validity_r2 = Some(fit.r_squared);
            }
            Some(Err(e)) => notes.entry(s.benchmark.clone()).or_default().push(e.to_string()),
            None => {}
        }
    }
    let mut report = ValidityReport::from_stats(partial, thresholds);
    for row in &mut report.rows {
        row.notes = notes.remove(&row.stats.benchmark).unwrap_or_default();
    }
    (report, agreement)
}

/// Competition ranking by descending accuracy (1 = best); ties share the
/// smaller rank, so `{90, 90, 70}` ranks as `1, 1, 3`.
pub fn method_ranks(results: &ResultsTable, benchmark: &str) -> Result<BTreeMap<String, usize>> {
    let column = results.column(benchmark);
    if column.len() < 2 {
        return Err(Error::degenerate(format!(
            "`{benchmark}` needs at least 2 methods to rank, has {}",
            column.len()
        )));
    }
    Ok(column
        .iter()
        .map(|&(m, acc)| {
            let better = column.iter().filter(|&&(_, other)| other > acc).count();
            (m.to_string(), better + 1)
        })
        .collect())
}
