#![allow(dead_code)]

pub mod oracle;

use std::fs::File;
use std::path::PathBuf;

use bench_validity::datagen::DataConfig;
use bench_validity::validity::{read_stats_csv, KTable, ResultsTable, Thresholds, ValidityReport};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn results() -> ResultsTable {
    let f = File::open(fixture("benchmark_results.csv")).unwrap();
    ResultsTable::from_csv(f, "benchmark_results.csv").unwrap()
}

pub fn k_table() -> KTable {
    let f = File::open(fixture("benchmark_k.csv")).unwrap();
    KTable::from_csv(f, "benchmark_k.csv").unwrap()
}

pub fn validity() -> ValidityReport {
    let f = File::open(fixture("benchmark_stats.csv")).unwrap();
    let stats = read_stats_csv(f, "benchmark_stats.csv").unwrap();
    ValidityReport::from_stats(stats, Thresholds::default())
}

/// Small synthetic config that trains in well under a second.
pub fn small_config(rho: f64, seed: u64) -> DataConfig {
    DataConfig {
        n_train: 600,
        n_val: 200,
        n_test: 400,
        core_dim: 3,
        spurious_dim: 3,
        confounder_strength: rho,
        seed,
        ..DataConfig::default()
    }
}
