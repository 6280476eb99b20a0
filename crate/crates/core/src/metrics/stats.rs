use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::seed::keyed_rng;

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub n: usize,
    /// Mean of treatment minus baseline hits.
    pub mean_difference: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided paired bootstrap over per-query hit differences.
///
/// The resampled mean differences are centred on the observed one; the p-value
/// is `(1 + #{|d* - d| >= |d|}) / (1 + resamples)`.
pub fn significance(
    baseline: &BTreeMap<String, u8>,
    treatment: &BTreeMap<String, u8>,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<Significance, MetricsError> {
    if baseline.len() != treatment.len()
        || baseline.keys().zip(treatment.keys()).any(|(a, b)| a != b)
    {
        return Err(MetricsError::KeyMismatch);
    }
    if baseline.is_empty() {
        return Err(MetricsError::TooFewPoints(0));
    }
    let diffs: Vec<f64> = baseline
        .values()
        .zip(treatment.values())
        .map(|(b, t)| *t as f64 - *b as f64)
        .collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = keyed_rng(seed, &["paired-bootstrap"]);
    let mut extreme = 0usize;
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += diffs[rng.gen_range(0..n)];
        }
        if (s / n as f64 - observed).abs() >= observed.abs() - 1e-12 {
            extreme += 1;
        }
    }
    let p_value = (1 + extreme) as f64 / (1 + resamples) as f64;
    Ok(Significance {
        n,
        mean_difference: observed,
        p_value,
        significant: p_value < alpha,
    })
}
