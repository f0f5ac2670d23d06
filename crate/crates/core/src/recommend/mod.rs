//! Choosing a mitigation method for a new dataset from benchmark results.
//!
//! Three strategies are compared: the best method averaged over every
//! benchmark, averaged over the valid benchmarks only, and the best method
//! of the valid same-family benchmark whose K is closest to the dataset's.
//! All ties break lexicographically by name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validity::stats::{iqr, median, ols_fit};
use crate::validity::{Family, KTable, ResultsTable, ValidityReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AllAvg,
    ValidAvg,
    Closest,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AllAvg => "all_avg",
            Strategy::ValidAvg => "valid_avg",
            Strategy::Closest => "closest",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub strategy: Strategy,
    pub chosen_method: String,
    /// Per-method mean accuracy (average strategies only).
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub method_means: BTreeMap<String, f64>,
    /// `(benchmark, method)` cells missing from the averaging subset.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub missing_cells: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub closest_benchmark: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub abs_dk: Option<f64>,
}

/// First key with the maximum value; `BTreeMap` order makes that the
/// lexicographically smallest among ties.
fn argmax<'a>(values: impl IntoIterator<Item = (&'a str, f64)>) -> Option<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (k, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

/// Method with the best mean accuracy over `subset`. Missing cells are left
/// out of that method's mean and listed; methods with no cell at all in the
/// subset are not candidates.
pub fn best_by_average(
    results: &ResultsTable,
    subset: &BTreeSet<String>,
    strategy: Strategy,
) -> Result<Recommendation> {
    if subset.is_empty() {
        return Err(Error::degenerate("averaging subset is empty"));
    }
    if let Some(b) = subset.iter().find(|b| !results.contains(b)) {
        return Err(Error::degenerate(format!("benchmark `{b}` not in results table")));
    }
    let mut method_means = BTreeMap::new();
    let mut missing_cells = Vec::new();
    for m in results.methods() {
        let mut sum = 0.0;
        let mut n = 0usize;
        for b in subset {
            match results.get(b, m) {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => missing_cells.push((b.clone(), m.to_string())),
            }
        }
        if n > 0 {
            method_means.insert(m.to_string(), sum / n as f64);
        }
    }
    let (chosen, _) = argmax(method_means.iter().map(|(m, &v)| (m.as_str(), v)))
        .ok_or_else(|| Error::degenerate("no method has results in the averaging subset"))?;
    Ok(Recommendation {
        strategy,
        chosen_method: chosen.to_string(),
        method_means,
        missing_cells,
        closest_benchmark: None,
        abs_dk: None,
    })
}

/// Best method and its accuracy on one benchmark.
pub fn best_on_benchmark(results: &ResultsTable, benchmark: &str) -> Result<(String, f64)> {
    argmax(results.column(benchmark))
        .map(|(m, v)| (m.to_string(), v))
        .ok_or_else(|| Error::degenerate(format!("benchmark `{benchmark}` has no results")))
}

/// Candidate in `candidates` of the same family with the smallest |ΔK|,
/// skipping `exclude`. Returns the benchmark and |ΔK|.
pub fn closest_benchmark(
    k_test: f64,
    family: Family,
    k_table: &KTable,
    candidates: &BTreeSet<String>,
    exclude: &BTreeSet<String>,
) -> Result<(String, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for b in candidates.iter().filter(|b| !exclude.contains(*b)) {
        let Some(entry) = k_table.get(b) else { continue };
        if entry.family != family {
            continue;
        }
        let d = (k_test - entry.k).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((b.as_str(), d));
        }
    }
    best.map(|(b, d)| (b.to_string(), d)).ok_or_else(|| {
        Error::Unsatisfiable(format!(
            "no valid {family} benchmark with a K value to compare against; the dataset lacks appropriate comparison benchmarks"
        ))
    })
}

/// Closest-benchmark recommendation: the best method of the matched benchmark.
pub fn recommend_closest(
    results: &ResultsTable,
    k_test: f64,
    family: Family,
    k_table: &KTable,
    valid: &BTreeSet<String>,
    exclude: &BTreeSet<String>,
) -> Result<Recommendation> {
    let (bench, d) = closest_benchmark(k_test, family, k_table, valid, exclude)?;
    let (method, _) = best_on_benchmark(results, &bench)?;
    Ok(Recommendation {
        strategy: Strategy::Closest,
        chosen_method: method,
        method_means: BTreeMap::new(),
        missing_cells: Vec::new(),
        closest_benchmark: Some(bench),
        abs_dk: Some(d),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub method: String,
    /// Accuracy of `method` on the test dataset; `None` if that cell is missing.
    pub acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosestPick {
    pub benchmark: String,
    pub method: String,
    pub acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub test_dataset: String,
    pub all_avg: Option<Pick>,
    pub valid_avg: Option<Pick>,
    pub closest: Option<ClosestPick>,
    pub winner: Option<Strategy>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<String>,
}

impl LooRow {
    fn accs(&self) -> [Option<f64>; 3] {
        [
            self.all_avg.as_ref().and_then(|p| p.acc),
            self.valid_avg.as_ref().and_then(|p| p.acc),
            self.closest.as_ref().and_then(|p| p.acc),
        ]
    }

    fn compute_winner(&mut self) {
        let strategies = [Strategy::AllAvg, Strategy::ValidAvg, Strategy::Closest];
        let mut best: Option<(Strategy, f64)> = None;
        for (s, acc) in strategies.into_iter().zip(self.accs()) {
            if let Some(a) = acc {
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((s, a));
                }
            }
        }
        self.winner = best.map(|(s, _)| s);
    }

    /// Closest-benchmark accuracy is at least that of both averages.
    pub fn closest_at_least_both(&self) -> Option<bool> {
        match self.accs() {
            [Some(all), Some(valid), Some(closest)] => Some(closest >= all && closest >= valid),
            _ => None,
        }
    }

    pub fn valid_beats_all(&self) -> Option<bool> {
        match self.accs() {
            [Some(all), Some(valid), _] => Some(valid > all),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooSummary {
    /// Rows where the closest strategy is defined and scored.
    pub closest_eligible: usize,
    /// Eligible rows where closest is at least as accurate as both averages.
    pub closest_wins: usize,
    pub average_rows: usize,
    /// Rows where the valid average is strictly more accurate than the full one.
    pub valid_beats_all: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooTable {
    pub rows: Vec<LooRow>,
    pub summary: LooSummary,
}

const LOO_HEADER: [&str; 8] = [
    "test_dataset",
    "all_method",
    "all_acc",
    "valid_method",
    "valid_acc",
    "closest_benchmark",
    "closest_method",
    "closest_acc",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LooTable {
    fn from_rows(mut rows: Vec<LooRow>) -> Self {
        rows.sort_by(|a, b| a.test_dataset.cmp(&b.test_dataset));
        let closest: Vec<bool> = rows.iter().filter_map(LooRow::closest_at_least_both).collect();
        let valid: Vec<bool> = rows.iter().filter_map(LooRow::valid_beats_all).collect();
        let summary = LooSummary {
            closest_eligible: closest.len(),
            closest_wins: closest.iter().filter(|&&w| w).count(),
            average_rows: valid.len(),
            valid_beats_all: valid.iter().filter(|&&w| w).count(),
        };
        Self { rows, summary }
    }

    pub fn row(&self, test_dataset: &str) -> Option<&LooRow> {
        self.rows.iter().find(|r| r.test_dataset == test_dataset)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LOO_HEADER)?;
        for r in &self.rows {
            let (am, aa) = r
                .all_avg
                .as_ref()
                .map_or((String::new(), None), |p| (p.method.clone(), p.acc));
            let (vm, va) = r
                .valid_avg
                .as_ref()
                .map_or((String::new(), None), |p| (p.method.clone(), p.acc));
            let (cb, cm, ca) = r.closest.as_ref().map_or((String::new(), String::new(), None), |p| {
                (p.benchmark.clone(), p.method.clone(), p.acc)
            });
            w.write_record([
                r.test_dataset.clone(),
                am,
                fmt_opt(aa),
                vm,
                fmt_opt(va),
                cb,
                cm,
                fmt_opt(ca),
            ])?;
        }
        w.flush().map_err(|e| Error::io("loo csv", e))?;
        Ok(())
    }

    /// Reads the CSV form back; winners and counts are recomputed and
    /// per-row error messages are not part of the CSV.
    pub fn from_csv<R: Read>(reader: R, file: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(reader);
        let schema = |row: usize, message: String| Error::Schema {
            file: file.to_string(),
            row,
            message,
        };
        let header = r.headers().map_err(|e| schema(1, e.to_string()))?.clone();
        if header.iter().ne(LOO_HEADER) {
            return Err(schema(1, format!("expected header `{}`", LOO_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| schema(row, e.to_string()))?;
            let acc = |i: usize| -> Result<Option<f64>> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    rec[i]
                        .parse()
                        .map(Some)
                        .map_err(|_| schema(row, format!("`{}` is not a number", &rec[i])))
                }
            };
            let pick = |m: usize, a: usize| -> Result<Option<Pick>> {
                if rec[m].is_empty() {
                    return Ok(None);
                }
                Ok(Some(Pick {
                    method: rec[m].to_string(),
                    acc: acc(a)?,
                }))
            };
            let closest = if rec[5].is_empty() {
                None
            } else {
                Some(ClosestPick {
                    benchmark: rec[5].to_string(),
                    method: rec[6].to_string(),
                    acc: acc(7)?,
                })
            };
            let mut loo = LooRow {
                test_dataset: rec[0].to_string(),
                all_avg: pick(1, 2)?,
                valid_avg: pick(3, 4)?,
                closest,
                winner: None,
                errors: Vec::new(),
            };
            loo.compute_winner();
            rows.push(loo);
        }
        Ok(Self::from_rows(rows))
    }
}

/// Leave-one-out comparison of the three strategies.
///
/// Test rows are the valid benchmarks plus any dataset in `results` that is
/// absent from the validity report (a held-out dataset). For each row the
/// test dataset is excluded from both averaging pools and from the closest
/// search, so its own column never influences the picks; its accuracies are
/// only read afterwards to score them. Failures (such as no comparable
/// benchmark) are recorded in the row.
pub fn leave_one_out(results: &ResultsTable, k_table: &KTable, validity: &ValidityReport) -> Result<LooTable> {
    let reported: BTreeSet<String> = validity
        .benchmarks()
        .into_iter()
        .filter(|b| results.contains(b))
        .collect();
    let valid: BTreeSet<String> = validity
        .valid_benchmarks()
        .into_iter()
        .filter(|b| results.contains(b))
        .collect();
    if valid.len() < 3 {
        return Err(Error::degenerate(format!(
            "leave-one-out needs at least 3 valid benchmarks with results, have {}",
            valid.len()
        )));
    }
    let held_out = results.benchmarks().filter(|b| !validity.benchmarks().contains(*b));
    let tests: Vec<String> = valid.iter().cloned().chain(held_out.map(str::to_string)).collect();

    let rows = tests
        .par_iter()
        .map(|t| loo_row(results, k_table, &reported, &valid, t))
        .collect();
    Ok(LooTable::from_rows(rows))
}

fn loo_row(
    results: &ResultsTable,
    k_table: &KTable,
    reported: &BTreeSet<String>,
    valid: &BTreeSet<String>,
    test: &str,
) -> LooRow {
    let exclude: BTreeSet<String> = [test.to_string()].into();
    let mut errors = Vec::new();
    let mut average = |pool: &BTreeSet<String>, strategy| {
        let subset: BTreeSet<String> = pool.difference(&exclude).cloned().collect();
        match best_by_average(results, &subset, strategy) {
            Ok(rec) => Some(Pick {
                acc: results.get(test, &rec.chosen_method),
                method: rec.chosen_method,
            }),
            Err(e) => {
                errors.push(format!("{strategy}: {e}"));
                None
            }
        }
    };
    let all_avg = average(reported, Strategy::AllAvg);
    let valid_avg = average(valid, Strategy::ValidAvg);

    let closest = match k_table.get(test) {
        None => Err(Error::degenerate(format!("no K value for `{test}`"))),
        Some(entry) => recommend_closest(results, entry.k, entry.family, k_table, valid, &exclude),
    };
    let closest = match closest {
        Ok(rec) => Some(ClosestPick {
            benchmark: rec.closest_benchmark.expect("closest strategy sets the benchmark"),
            acc: results.get(test, &rec.chosen_method),
            method: rec.chosen_method,
        }),
        Err(e) => {
            errors.push(format!("closest: {e}"));
            None
        }
    };
    let mut row = LooRow {
        test_dataset: test.to_string(),
        all_avg,
        valid_avg,
        closest,
        winner: None,
        errors,
    };
    row.compute_winner();
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodProfile {
    pub method: String,
    pub n_benchmarks: usize,
    pub median_wg: f64,
    pub iqr_wg: f64,
    /// Share of worst-group accuracy variance explained by K; `None` when
    /// fewer than 3 benchmarks have K values or K does not vary.
    pub r2_vs_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Median, IQR and R² against K of each method's worst-group accuracies.
pub fn method_profiles(results: &ResultsTable, k_table: &KTable) -> Vec<MethodProfile> {
    results
        .methods()
        .filter_map(|m| {
            let cells: Vec<(&str, f64)> = results
                .benchmarks()
                .filter_map(|b| results.get(b, m).map(|v| (b, v)))
                .collect();
            let accs: Vec<f64> = cells.iter().map(|&(_, v)| v).collect();
            let median_wg = median(&accs).ok()?;
            let iqr_wg = iqr(&accs).ok()?;
            let (ks, ys): (Vec<f64>, Vec<f64>) = cells
                .iter()
                .filter_map(|&(b, v)| k_table.get(b).map(|e| (e.k, v)))
                .unzip();
            let (r2_vs_k, note) = if ks.len() < 3 {
                (
                    None,
                    Some(format!("only {} benchmark(s) with K values; R² needs 3", ks.len())),
                )
            } else {
                match ols_fit(&ks, &ys) {
                    Ok(fit) => (Some(fit.r_squared), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            Some(MethodProfile {
                method: m.to_string(),
                n_benchmarks: accs.len(),
                median_wg,
                iqr_wg,
                r2_vs_k,
                note,
            })
        })
        .collect()
}

pub fn profiles_to_csv<W: Write>(profiles: &[MethodProfile], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n_benchmarks", "median_wg", "iqr_wg", "r2_vs_k"])?;
    for p in profiles {
        w.write_record([
            p.method.clone(),
            p.n_benchmarks.to_string(),
            p.median_wg.to_string(),
            p.iqr_wg.to_string(),
            fmt_opt(p.r2_vs_k),
        ])?;
    }
    w.flush().map_err(|e| Error::io("profiles csv", e))?;
    Ok(())
}

/// Reads profiles written by [`profiles_to_csv`]; notes are not part of the CSV.
pub fn profiles_from_csv<R: Read>(reader: R, file: &str) -> Result<Vec<MethodProfile>> {
    let schema = |row: usize, message: String| Error::Schema {
        file: file.to_string(),
        row,
        message,
    };
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if header
        .iter()
        .ne(["method", "n_benchmarks", "median_wg", "iqr_wg", "r2_vs_k"])
    {
        return Err(schema(
            1,
            "expected header `method,n_benchmarks,median_wg,iqr_wg,r2_vs_k`".into(),
        ));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| schema(row, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| schema(row, format!("`{}` is not a number", &rec[i])))
        };
        out.push(MethodProfile {
            method: rec[0].to_string(),
            n_benchmarks: rec[1]
                .parse()
                .map_err(|_| schema(row, format!("`{}` is not a count", &rec[1])))?,
            median_wg: num(2)?,
            iqr_wg: num(3)?,
            r2_vs_k: if rec[4].is_empty() { None } else { Some(num(4)?) },
            note: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validity::{BenchmarkStats, Thresholds};

    fn results(rows: &[(&str, &str, f64)]) -> ResultsTable {
        let mut t = ResultsTable::new();
        for &(b, m, v) in rows {
            t.insert(b, Family::Vision, m, v).unwrap();
        }
        t
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_method_average() {
        // A: mean 70, B: mean 70.5
        let t = results(&[("X", "A", 80.0), ("Y", "A", 60.0), ("X", "B", 70.0), ("Y", "B", 71.0)]);
        let rec = best_by_average(&t, &set(&["X", "Y"]), Strategy::AllAvg).unwrap();
        assert_eq!(rec.chosen_method, "B");
        assert_eq!(rec.method_means["A"], 70.0);
        assert_eq!(rec.method_means["B"], 70.5);
        let single = best_by_average(&t, &set(&["X"]), Strategy::AllAvg).unwrap();
        assert_eq!(single.chosen_method, "A");
        assert!(best_by_average(&t, &BTreeSet::new(), Strategy::AllAvg).is_err());
    }

    #[test]
    fn average_ties_and_missing_cells() {
        let t = results(&[("X", "b", 70.0), ("X", "a", 70.0), ("Y", "b", 50.0)]);
        let rec = best_by_average(&t, &set(&["X"]), Strategy::AllAvg).unwrap();
        assert_eq!(rec.chosen_method, "a");
        let rec = best_by_average(&t, &set(&["X", "Y"]), Strategy::AllAvg).unwrap();
        assert_eq!(rec.missing_cells, vec![("Y".to_string(), "a".to_string())]);
        assert_eq!(rec.method_means["a"], 70.0);
        assert_eq!(rec.chosen_method, "a");
    }

    fn k_table(entries: &[(&str, f64, Family)]) -> KTable {
        let mut k = KTable::default();
        for &(b, v, f) in entries {
            k.insert(b, v, f).unwrap();
        }
        k
    }

    #[test]
    fn closest_matches_family_and_breaks_ties() {
        let kt = k_table(&[
            ("b", 1.0, Family::Vision),
            ("a", 3.0, Family::Vision),
            ("lang", 2.0, Family::Language),
        ]);
        let all = set(&["a", "b", "lang"]);
        let none = BTreeSet::new();
        assert_eq!(closest_benchmark(1.0, Family::Vision, &kt, &all, &none).unwrap().0, "b");
        assert_eq!(closest_benchmark(2.0, Family::Vision, &kt, &all, &none).unwrap().0, "a");
        assert_eq!(
            closest_benchmark(2.1, Family::Language, &kt, &all, &none).unwrap().0,
            "lang"
        );
        let err = closest_benchmark(2.0, Family::Language, &kt, &set(&["a", "b"]), &none).unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable(_)));
        assert_eq!(
            closest_benchmark(9.0, Family::Vision, &kt, &all, &set(&["a"]))
                .unwrap()
                .0,
            "b"
        );
    }

    fn report(valid: &[&str], invalid: &[&str]) -> ValidityReport {
        let stat = |b: &&str, ok: bool| BenchmarkStats {
            benchmark: b.to_string(),
            model_family: Family::Vision,
            k: None,
            erm_failure_sd: Some(if ok { 10.0 } else { 0.0 }),
            disc_power_sd: Some(10.0),
            conv_validity_coeff: Some(1.0),
            conv_validity_r2: None,
        };
        let stats = valid
            .iter()
            .map(|b| stat(b, true))
            .chain(invalid.iter().map(|b| stat(b, false)))
            .collect();
        ValidityReport::from_stats(stats, Thresholds::default())
    }

    #[test]
    fn loo_picks_analytic_optimum() {
        // acc = 90 - 10 |K_b - k_m*|; benchmarks sit in two clusters so the
        // nearest other benchmark always shares the test dataset's best method.
        let bench_k = [("B0", 0.1), ("B1", 0.3), ("B2", 1.7), ("B3", 1.9)];
        let method_k = [("low", 0.0), ("high", 2.0), ("far", 5.0)];
        let mut t = ResultsTable::new();
        let mut kt = KTable::default();
        for (b, kb) in bench_k {
            kt.insert(b, kb, Family::Vision).unwrap();
            for (m, km) in method_k {
                t.insert(b, Family::Vision, m, 90.0 - 10.0 * (kb - km).abs()).unwrap();
            }
        }
        let names: Vec<&str> = bench_k.iter().map(|(b, _)| *b).collect();
        let loo = leave_one_out(&t, &kt, &report(&names, &[])).unwrap();
        assert_eq!(loo.rows.len(), 4);
        for row in &loo.rows {
            let (_, best) = best_on_benchmark(&t, &row.test_dataset).unwrap();
            assert_eq!(row.closest.as_ref().unwrap().acc, Some(best), "{}", row.test_dataset);
        }
    }

    #[test]
    fn loo_ignores_test_column() {
        let mut rows = Vec::new();
        for (i, b) in ["A", "B", "C", "D"].iter().enumerate() {
            for (j, m) in ["m1", "m2", "m3"].iter().enumerate() {
                rows.push((*b, *m, 50.0 + ((i * 7 + j * 13) % 11) as f64));
            }
        }
        let t = results(&rows);
        let kt = k_table(&[
            ("A", 0.1, Family::Vision),
            ("B", 0.5, Family::Vision),
            ("C", 1.0, Family::Vision),
            ("D", 2.0, Family::Vision),
        ]);
        let rep = report(&["A", "B", "C"], &["D"]);
        let base = leave_one_out(&t, &kt, &rep).unwrap();

        let mut mutated = ResultsTable::new();
        for (b, m, v) in &rows {
            let v = if *b == "A" { 100.0 - v } else { *v };
            mutated.insert(b, Family::Vision, m, v).unwrap();
        }
        let again = leave_one_out(&mutated, &kt, &rep).unwrap();
        let (r0, r1) = (base.row("A").unwrap(), again.row("A").unwrap());
        assert_eq!(r0.all_avg.as_ref().unwrap().method, r1.all_avg.as_ref().unwrap().method);
        assert_eq!(
            r0.valid_avg.as_ref().unwrap().method,
            r1.valid_avg.as_ref().unwrap().method
        );
        assert_eq!(r0.closest.as_ref().unwrap().method, r1.closest.as_ref().unwrap().method);
    }

    #[test]
    fn winner_ties_prefer_simpler_strategy() {
        let mut row = LooRow {
            test_dataset: "t".into(),
            all_avg: Some(Pick {
                method: "a".into(),
                acc: Some(70.0),
            }),
            valid_avg: Some(Pick {
                method: "b".into(),
                acc: Some(72.0),
            }),
            closest: Some(ClosestPick {
                benchmark: "x".into(),
                method: "c".into(),
                acc: Some(72.0),
            }),
            winner: None,
            errors: vec![],
        };
        row.compute_winner();
        assert_eq!(row.winner, Some(Strategy::ValidAvg));
        assert_eq!(row.closest_at_least_both(), Some(true));
    }

    #[test]
    fn profiles_constant_and_linear() {
        let kt = k_table(&[
            ("A", 0.0, Family::Vision),
            ("B", 1.0, Family::Vision),
            ("C", 2.0, Family::Vision),
        ]);
        let t = results(&[
            ("A", "flat", 60.0),
            ("B", "flat", 60.0),
            ("C", "flat", 60.0),
            ("A", "lin", 50.0),
            ("B", "lin", 55.0),
            ("C", "lin", 60.0),
        ]);
        let p = method_profiles(&t, &kt);
        let flat = p.iter().find(|p| p.method == "flat").unwrap();
        assert_eq!((flat.iqr_wg, flat.r2_vs_k), (0.0, Some(0.0)));
        let lin = p.iter().find(|p| p.method == "lin").unwrap();
        assert!((lin.r2_vs_k.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(lin.median_wg, 55.0);
    }
}
