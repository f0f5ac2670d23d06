//! Descriptive statistics, correlation and least squares.
//!
//! Standard deviations use the sample (n − 1) denominator. Quantiles use
//! linear interpolation between order statistics (`h = (n − 1)·p`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn sample_sd(values: &[f64]) -> Result<f64> {
    Ok(summary_stats(values)?.1)
}

/// `(mean, sample_sd)`.
pub fn summary_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::degenerate(format!(
            "need at least 2 values for a sample SD, got {}",
            values.len()
        )));
    }
    let m = mean(values).expect("nonempty");
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((m, (ss / (values.len() - 1) as f64).sqrt()))
}

fn centered_moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x).expect("nonempty");
    let my = mean(y).expect("nonempty");
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (sxx, syy, sxy)
}

/// Sample Pearson correlation. Errors on fewer than 3 points or a
/// zero-variance argument.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::degenerate(format!(
            "pearson r needs at least 3 points, got {}",
            x.len()
        )));
    }
    let (sxx, syy, sxy) = centered_moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::degenerate("pearson r undefined: zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line `y ≈ slope·x + intercept`. `r_squared` is
/// `1 − SS_res/SS_tot`, defined as 0 when `y` is constant.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::degenerate(format!(
            "ols needs at least 2 points, got {}",
            x.len()
        )));
    }
    let (sxx, syy, sxy) = centered_moments(x, y);
    if sxx == 0.0 {
        return Err(Error::degenerate("ols undefined: x has zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = mean(y).expect("nonempty") - slope * mean(x).expect("nonempty");
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - (slope * a + intercept);
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(OlsFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Quantile at `p ∈ [0, 1]` by linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::degenerate("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::degenerate(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Interquartile range `Q(0.75) − Q(0.25)`.
pub fn iqr(values: &[f64]) -> Result<f64> {
    Ok(quantile(values, 0.75)? - quantile(values, 0.25)?)
}
