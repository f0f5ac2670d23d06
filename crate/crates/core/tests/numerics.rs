//! Gradient and statistics checks against independent oracles.

mod common;

use common::oracle;

#[test]
fn gradient_matches_central_differences() {
    for (case, err) in oracle::gradient_errors(20) {
        assert!(err < 1e-5, "{case}: relative error {err:e}");
    }
}

#[test]
fn statistics_match_exact_rational_oracles() {
    for (stat, dev) in oracle::statistics_deviations(50) {
        assert!(dev <= 1e-10, "{stat}: deviation {dev:e}");
    }
}

#[test]
fn agreement_matrix_symmetric_with_unit_diagonal_on_fixture() {
    let m = bench_validity::validity::agreement_matrix(&common::results());
    for a in &m.benchmarks {
        assert_eq!(m.get(a, a), Some(1.0));
        for b in &m.benchmarks {
            assert_eq!(m.get(a, b).map(f64::to_bits), m.get(b, a).map(f64::to_bits));
        }
    }
}
