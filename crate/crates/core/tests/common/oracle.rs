//! Independent oracles: central finite differences for gradients and exact
//! rational arithmetic for the descriptive statistics.

use bench_validity::training::{gradient, weighted_nll, Architecture, ModelParams};
use bench_validity::validity::{ols_fit, pearson_r, quantile, summary_stats};
use ndarray::Array2;
use num::{BigRational, FromPrimitive, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_at(params: &ModelParams, x: &Array2<f64>, y: &[u8], w: &[f64]) -> f64 {
    let probs = params.forward(x.view()).unwrap();
    weighted_nll(probs.view(), y, w).unwrap()
}

/// `‖g − fd‖ / max(‖g‖ + ‖fd‖, 1e-12)` with central differences.
fn gradient_relative_error(params: &ModelParams, x: &Array2<f64>, y: &[u8], w: &[f64]) -> f64 {
    let analytic = gradient(params, x.view(), y, w).unwrap().to_flat();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.values_mut().nth(i).unwrap() += h;
        *minus.values_mut().nth(i).unwrap() -= h;
        numeric.push((loss_at(&plus, x, y, w) - loss_at(&minus, x, y, w)) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / (norm(&analytic) + norm(&numeric)).max(1e-12)
}

/// Relative gradient error for `cases` random models, alternating linear and
/// one-hidden-layer architectures and cycling through unit, reweighting-style
/// and GroupDRO-style sample weights.
pub fn gradient_errors(cases: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..cases)
        .map(|case| {
            let n = rng.random_range(6..24);
            let d = rng.random_range(2..6);
            let arch = if case % 2 == 0 {
                Architecture::Linear
            } else {
                Architecture::Mlp1 {
                    hidden: rng.random_range(2..6),
                }
            };
            let mut params = ModelParams::init(arch, d, 2, case);
            for v in params.values_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let (kind, w): (&str, Vec<f64>) = match case % 3 {
                0 => ("erm", vec![1.0; n]),
                1 => ("reweight", (0..n).map(|i| if i % 4 == 0 { 3.0 } else { 1.0 }).collect()),
                _ => ("groupdro", (0..n).map(|_| rng.random_range(0.01..1.0)).collect()),
            };
            let label = format!("case {case} {arch:?} {kind}");
            (label, gradient_relative_error(&params, &x, &y, &w))
        })
        .collect()
}

fn exact(v: f64) -> BigRational {
    BigRational::from_f64(v).unwrap()
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap()
}

fn count(n: usize) -> BigRational {
    BigRational::from_usize(n).unwrap()
}

struct ExactMoments {
    mean_x: BigRational,
    mean_y: BigRational,
    sxx: BigRational,
    syy: BigRational,
    sxy: BigRational,
}

fn exact_moments(x: &[f64], y: &[f64]) -> ExactMoments {
    let xs: Vec<BigRational> = x.iter().map(|&v| exact(v)).collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| exact(v)).collect();
    let mean_x = xs.iter().fold(BigRational::zero(), |a, b| a + b) / count(x.len());
    let mean_y = ys.iter().fold(BigRational::zero(), |a, b| a + b) / count(y.len());
    let (mut sxx, mut syy, mut sxy) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (a, b) in xs.iter().zip(&ys) {
        let dx = a - &mean_x;
        let dy = b - &mean_y;
        sxx += &dx * &dx;
        syy += &dy * &dy;
        sxy += &dx * &dy;
    }
    ExactMoments {
        mean_x,
        mean_y,
        sxx,
        syy,
        sxy,
    }
}

fn exact_quantile(x: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<BigRational> = x.iter().map(|&v| exact(v)).collect();
    sorted.sort();
    let h = exact(p) * count(sorted.len() - 1);
    let lo = h.floor();
    let lo_i = lo.to_integer().to_usize().unwrap();
    let hi_i = h.ceil().to_integer().to_usize().unwrap();
    to_f64(&(&sorted[lo_i] + (&h - &lo) * (&sorted[hi_i] - &sorted[lo_i])))
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(3..40);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
    let slope = rng.random_range(-2.0..2.0);
    let y: Vec<f64> = x.iter().map(|v| slope * v + rng.random_range(-30.0..30.0)).collect();
    (x, y)
}

/// Largest absolute deviation from the exact oracle per statistic over
/// `fixtures` random samples, with the name of the statistic.
pub fn statistics_deviations(fixtures: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, got: f64, want: f64| {
        let dev = (got - want).abs();
        match worst.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = entry.1.max(dev),
            None => worst.push((name, dev)),
        }
    };
    for _ in 0..fixtures {
        let (x, y) = random_fixture(&mut rng);
        let m = exact_moments(&x, &y);

        let (mean, sd) = summary_stats(&x).unwrap();
        record("mean".into(), mean, to_f64(&m.mean_x));
        record("sd".into(), sd, to_f64(&(&m.sxx / count(x.len() - 1))).sqrt());

        let r2 = (&m.sxy * &m.sxy) / (&m.sxx * &m.syy);
        let r = to_f64(&r2).sqrt().copysign(to_f64(&m.sxy));
        record("pearson_r".into(), pearson_r(&x, &y).unwrap(), r);

        let fit = ols_fit(&x, &y).unwrap();
        let slope = &m.sxy / &m.sxx;
        let intercept = &m.mean_y - &slope * &m.mean_x;
        record("ols_slope".into(), fit.slope, to_f64(&slope));
        record("ols_intercept".into(), fit.intercept, to_f64(&intercept));
        record("ols_r_squared".into(), fit.r_squared, to_f64(&r2));

        for p in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            record(
                format!("quantile({p})"),
                quantile(&x, p).unwrap(),
                exact_quantile(&x, p),
            );
        }
    }
    worst
}
