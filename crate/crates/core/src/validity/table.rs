//! Ingested benchmark tables and their CSV forms.
//!
//! * results: `benchmark,model_family,method,wg_test_acc`
//! * groups:  `benchmark,group_id,erm_test_acc`
//! * k:       `benchmark,model_family,k`
//!
//! Row numbers in schema errors count the header as row 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vision,
    Language,
    Other,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Vision => "vision",
            Family::Language => "language",
            Family::Other => "other",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Family::Vision),
            "language" => Ok(Family::Language),
            "other" => Ok(Family::Other),
            other => Err(Error::config(
                "model_family",
                format!("unknown family `{other}` (expected vision|language|other)"),
            )),
        }
    }
}

pub(crate) fn schema(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

pub(crate) struct CsvRows {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<(usize, csv::StringRecord)>,
}

impl CsvRows {
    pub fn read<R: Read>(reader: R, file: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| schema(file, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| schema(file, row, e.to_string()))?;
            rows.push((row, rec));
        }
        Ok(Self {
            file: file.to_string(),
            header,
            rows,
        })
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header != expected {
            return Err(schema(
                &self.file,
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    expected.join(","),
                    self.header.join(",")
                ),
            ));
        }
        Ok(())
    }

    /// Column index for a header name.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(&self.file, 1, format!("missing column `{name}`")))
    }

    pub fn float(&self, row: usize, field: &str, what: &str) -> Result<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| schema(&self.file, row, format!("{what}: `{field}` is not a number")))?;
        if !v.is_finite() {
            return Err(schema(&self.file, row, format!("{what}: `{field}` is not finite")));
        }
        Ok(v)
    }

    pub fn family(&self, row: usize, field: &str) -> Result<Family> {
        field.parse().map_err(|e: Error| schema(&self.file, row, e.to_string()))
    }

    pub fn name(&self, row: usize, field: &str, what: &str) -> Result<String> {
        if field.is_empty() {
            return Err(schema(&self.file, row, format!("{what} is empty")));
        }
        Ok(field.to_string())
    }
}

/// Worst-group test accuracy (percent) per (benchmark, method).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    families: BTreeMap<String, Family>,
    methods: BTreeSet<String>,
    cells: BTreeMap<(String, String), f64>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, benchmark: &str, family: Family, method: &str, acc: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&acc) {
            return Err(Error::degenerate(format!(
                "accuracy {acc} for ({benchmark}, {method}) outside [0, 100]"
            )));
        }
        match self.families.get(benchmark) {
            Some(&f) if f != family => {
                return Err(Error::degenerate(format!(
                    "benchmark `{benchmark}` listed with families {f} and {family}"
                )))
            }
            _ => {}
        }
        let key = (benchmark.to_string(), method.to_string());
        if self.cells.contains_key(&key) {
            return Err(Error::degenerate(format!("duplicate cell ({benchmark}, {method})")));
        }
        self.families.insert(benchmark.to_string(), family);
        self.methods.insert(method.to_string());
        self.cells.insert(key, acc);
        Ok(())
    }

    pub fn benchmarks(&self) -> impl Iterator<Item = &str> + '_ {
        self.families.keys().map(String::as_str)
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> + '_ {
        self.methods.iter().map(String::as_str)
    }

    pub fn family(&self, benchmark: &str) -> Option<Family> {
        self.families.get(benchmark).copied()
    }

    pub fn contains(&self, benchmark: &str) -> bool {
        self.families.contains_key(benchmark)
    }

    pub fn get(&self, benchmark: &str, method: &str) -> Option<f64> {
        self.cells.get(&(benchmark.to_string(), method.to_string())).copied()
    }

    /// Non-missing `(method, acc)` pairs of one benchmark, in method order.
    pub fn column(&self, benchmark: &str) -> Vec<(&str, f64)> {
        self.methods()
            .filter_map(|m| self.get(benchmark, m).map(|v| (m, v)))
            .collect()
    }

    /// `(benchmark, method)` pairs with no recorded accuracy.
    pub fn missing_cells(&self) -> Vec<(String, String)> {
        self.benchmarks()
            .flat_map(|b| {
                self.methods()
                    .filter(move |m| self.get(b, m).is_none())
                    .map(move |m| (b.to_string(), m.to_string()))
            })
            .collect()
    }

    pub fn from_csv<R: Read>(reader: R, file: &str) -> Result<Self> {
        let csv = CsvRows::read(reader, file)?;
        csv.expect_header(&["benchmark", "model_family", "method", "wg_test_acc"])?;
        let mut table = Self::new();
        for (row, rec) in &csv.rows {
            if rec.len() != 4 {
                return Err(schema(file, *row, format!("expected 4 fields, found {}", rec.len())));
            }
            let benchmark = csv.name(*row, &rec[0], "benchmark")?;
            let family = csv.family(*row, &rec[1])?;
            let method = csv.name(*row, &rec[2], "method")?;
            let acc = csv.float(*row, &rec[3], "wg_test_acc")?;
            table
                .insert(&benchmark, family, &method, acc)
                .map_err(|e| schema(file, *row, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["benchmark", "model_family", "method", "wg_test_acc"])?;
        for ((b, m), acc) in &self.cells {
            w.write_record([b.as_str(), self.families[b].as_str(), m.as_str(), &acc.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("results csv", e))?;
        Ok(())
    }
}

/// ERM per-group test accuracy (percent) per benchmark.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupAccuracyTable {
    pub benchmarks: BTreeMap<String, BTreeMap<String, f64>>,
}

impl GroupAccuracyTable {
    pub fn insert(&mut self, benchmark: &str, group: &str, acc: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&acc) {
            return Err(Error::degenerate(format!(
                "accuracy {acc} for ({benchmark}, {group}) outside [0, 100]"
            )));
        }
        let groups = self.benchmarks.entry(benchmark.to_string()).or_default();
        if groups.insert(group.to_string(), acc).is_some() {
            return Err(Error::degenerate(format!("duplicate group ({benchmark}, {group})")));
        }
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R, file: &str) -> Result<Self> {
        let csv = CsvRows::read(reader, file)?;
        csv.expect_header(&["benchmark", "group_id", "erm_test_acc"])?;
        let mut table = Self::default();
        for (row, rec) in &csv.rows {
            if rec.len() != 3 {
                return Err(schema(file, *row, format!("expected 3 fields, found {}", rec.len())));
            }
            let benchmark = csv.name(*row, &rec[0], "benchmark")?;
            let group = csv.name(*row, &rec[1], "group_id")?;
            let acc = csv.float(*row, &rec[2], "erm_test_acc")?;
            table
                .insert(&benchmark, &group, acc)
                .map_err(|e| schema(file, *row, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["benchmark", "group_id", "erm_test_acc"])?;
        for (b, groups) in &self.benchmarks {
            for (g, acc) in groups {
                w.write_record([b.as_str(), g.as_str(), &acc.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("groups csv", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEntry {
    pub k: f64,
    pub family: Family,
}

/// Benchmark → (K, model family).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KTable {
    pub entries: BTreeMap<String, KEntry>,
}

impl KTable {
    pub fn insert(&mut self, benchmark: &str, k: f64, family: Family) -> Result<()> {
        if !k.is_finite() {
            return Err(Error::degenerate(format!("K for `{benchmark}` is not finite")));
        }
        if self
            .entries
            .insert(benchmark.to_string(), KEntry { k, family })
            .is_some()
        {
            return Err(Error::degenerate(format!("duplicate benchmark `{benchmark}`")));
        }
        Ok(())
    }

    pub fn get(&self, benchmark: &str) -> Option<KEntry> {
        self.entries.get(benchmark).copied()
    }

    pub fn from_csv<R: Read>(reader: R, file: &str) -> Result<Self> {
        let csv = CsvRows::read(reader, file)?;
        csv.expect_header(&["benchmark", "model_family", "k"])?;
        let mut table = Self::default();
        for (row, rec) in &csv.rows {
            if rec.len() != 3 {
                return Err(schema(file, *row, format!("expected 3 fields, found {}", rec.len())));
            }
            let benchmark = csv.name(*row, &rec[0], "benchmark")?;
            let family = csv.family(*row, &rec[1])?;
            let k = csv.float(*row, &rec[2], "k")?;
            table
                .insert(&benchmark, k, family)
                .map_err(|e| schema(file, *row, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["benchmark", "model_family", "k"])?;
        for (b, e) in &self.entries {
            w.write_record([b.as_str(), e.family.as_str(), &e.k.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("k csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RESULTS: &str = "benchmark,model_family,method,wg_test_acc\n\
        A,vision,ERM,70\nA,vision,DRO,80.5\nB,language,ERM,60\n";

    #[test]
    fn results_roundtrip() {
        let t = ResultsTable::from_csv(RESULTS.as_bytes(), "results.csv").unwrap();
        assert_eq!(t.get("A", "DRO"), Some(80.5));
        assert_eq!(t.get("B", "DRO"), None);
        assert_eq!(t.missing_cells(), vec![("B".to_string(), "DRO".to_string())]);
        let mut buf = Vec::new();
        t.to_csv(&mut buf).unwrap();
        assert_eq!(ResultsTable::from_csv(buf.as_slice(), "x").unwrap(), t);
    }

    #[test]
    fn schema_errors_carry_row_numbers() {
        let dup = format!("{RESULTS}A,vision,ERM,71\n");
        let err = ResultsTable::from_csv(dup.as_bytes(), "results.csv").unwrap_err();
        assert!(err.to_string().contains("row 5"), "{err}");

        let bad = "benchmark,model_family,method,wg_test_acc\nA,vision,ERM,170\n";
        let err = ResultsTable::from_csv(bad.as_bytes(), "results.csv").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");

        let bad = "benchmark,model_family,method,wg_test_acc\nA,audio,ERM,70\n";
        assert!(ResultsTable::from_csv(bad.as_bytes(), "r").is_err());

        let bad = "benchmark,family,method,acc\n";
        let err = ResultsTable::from_csv(bad.as_bytes(), "r").unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn duplicate_k_rows_rejected() {
        let text = "benchmark,model_family,k\nA,vision,0.5\nA,vision,0.7\n";
        let err = KTable::from_csv(text.as_bytes(), "k.csv").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn groups_roundtrip() {
        let text = "benchmark,group_id,erm_test_acc\nA,g0,90\nA,g1,80\n";
        let t = GroupAccuracyTable::from_csv(text.as_bytes(), "g").unwrap();
        let mut buf = Vec::new();
        t.to_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }
}
