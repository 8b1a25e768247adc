//! Decay-rate fits and drift statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OverflowEstimate, SimError};

/// Bootstrap resamples for the slope standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 400;
const BOOTSTRAP_SEED: u64 = 0x0b00_75ee_d000_0001;

/// Least-squares line through `(n, log P(⟨b, Q⟩ >= n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    /// Bootstrap standard error of the slope over replications; `None`
    /// with fewer than two replications.
    pub slope_std_error: Option<f64>,
    /// Thresholds left out because their estimate is zero.
    pub excluded: Vec<i64>,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Fits `log(estimate)` against the threshold. Zero estimates are excluded
/// and listed; at least three distinct positive points are required.
pub fn decay_slope(estimates: &[OverflowEstimate]) -> Result<DecayFit, SimError> {
    let (used, zero): (Vec<&OverflowEstimate>, Vec<&OverflowEstimate>) =
        estimates.iter().partition(|e| e.estimate > 0.0);
    let mut distinct: Vec<i64> = used.iter().map(|e| e.threshold).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SimError::TooFewPoints {
            needed: 3,
            got: distinct.len(),
        });
    }
    let points: Vec<(f64, f64)> = used
        .iter()
        .map(|e| (e.threshold as f64, e.estimate.ln()))
        .collect();
    let (slope, intercept, residual) = least_squares(&points);

    let reps = used
        .iter()
        .filter(|e| !e.exact)
        .map(|e| e.per_replication.len())
        .min()
        .unwrap_or(0);
    let slope_std_error = (reps >= 2).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
        let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        for _ in 0..BOOTSTRAP_RESAMPLES {
            let picks: Vec<usize> = (0..reps).map(|_| rng.gen_range(0..reps)).collect();
            let pts: Vec<(f64, f64)> = used
                .iter()
                .map(|e| (e.threshold as f64, e.resampled(&picks)))
                .filter(|p| p.1 > 0.0)
                .map(|(n, p)| (n, p.ln()))
                .collect();
            if pts.len() >= 3 {
                slopes.push(least_squares(&pts).0);
            }
        }
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        (slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });

    Ok(DecayFit {
        slope,
        intercept,
        residual,
        slope_std_error,
        excluded: zero.iter().map(|e| e.threshold).collect(),
    })
}

/// Mean of independent drift samples with a normal 95% interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftStatistic {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub lower95: f64,
    pub upper95: f64,
}

impl DriftStatistic {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_error = (var / n).sqrt();
        Self {
            mean,
            std_error,
            samples: x.len(),
            lower95: mean - 1.96 * std_error,
            upper95: mean + 1.96 * std_error,
        }
    }

    pub fn negative_at_95(&self) -> bool {
        self.upper95 < 0.0
    }

    pub fn positive_at_95(&self) -> bool {
        self.lower95 > 0.0
    }
}
