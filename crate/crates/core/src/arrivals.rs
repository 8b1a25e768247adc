//! Bounded i.i.d. arrival distributions.

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::geometry::Point;
use crate::rational::{from_u64, to_f64, Rational};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArrivalError {
    #[error("arrival pmf is empty")]
    Empty,
    #[error("arrival pmf has a negative entry at {value}")]
    Negative { value: usize },
    #[error("arrival pmf sums to {sum}")]
    NotNormalized { sum: String },
    #[error("queue {queue}: {source}")]
    Queue {
        queue: usize,
        #[source]
        source: Box<ArrivalError>,
    },
}

/// Distribution of the number of arrivals to one queue in a slot, on
/// `{0, …, C}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalPmf {
    probs: Vec<Rational>,
    probs_f64: Vec<f64>,
    cdf: Vec<f64>,
}

impl ArrivalPmf {
    /// `probs[a]` is the probability of `a` arrivals. Trailing zeros are
    /// dropped so the support bound is tight.
    pub fn new(mut probs: Vec<Rational>) -> Result<Self, ArrivalError> {
        Self::validate(&probs)?;
        while probs.len() > 1 && probs.last().is_some_and(|p| p.is_zero()) {
            probs.pop();
        }
        let probs_f64: Vec<f64> = probs.iter().map(to_f64).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = Rational::zero();
        for p in &probs {
            acc += p;
            cdf.push(to_f64(&acc));
        }
        Ok(Self {
            probs,
            probs_f64,
            cdf,
        })
    }

    fn validate(probs: &[Rational]) -> Result<(), ArrivalError> {
        if probs.is_empty() {
            return Err(ArrivalError::Empty);
        }
        if let Some(value) = probs.iter().position(|p| p.is_negative()) {
            return Err(ArrivalError::Negative { value });
        }
        let sum: Rational = probs.iter().sum();
        if !sum.is_one() {
            return Err(ArrivalError::NotNormalized {
                sum: crate::rational::format_rational(&sum),
            });
        }
        Ok(())
    }

    pub fn bernoulli(p: Rational) -> Result<Self, ArrivalError> {
        Self::new(vec![Rational::one() - &p, p])
    }

    pub fn deterministic(a: u64) -> Self {
        let mut probs = vec![Rational::zero(); a as usize + 1];
        probs[a as usize] = Rational::one();
        Self::new(probs).expect("point mass is valid")
    }

    pub fn probs(&self) -> &[Rational] {
        &self.probs
    }

    pub fn probs_f64(&self) -> &[f64] {
        &self.probs_f64
    }

    /// Largest arrival count with positive probability.
    pub fn max_arrivals(&self) -> u64 {
        (self.probs.len() - 1) as u64
    }

    pub fn mean(&self) -> Rational {
        self.probs
            .iter()
            .enumerate()
            .map(|(a, p)| p * from_u64(a as u64))
            .sum()
    }

    /// Inverse-CDF sample from a uniform `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> u64 {
        sample_cdf(&self.cdf, u) as u64
    }
}

/// Index of the first CDF entry exceeding `u`; the last index absorbs
/// rounding at the top.
pub(crate) fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Arrival distributions of both queues.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalModel {
    queues: [ArrivalPmf; 2],
}

impl ArrivalModel {
    pub fn new(q1: ArrivalPmf, q2: ArrivalPmf) -> Self {
        Self { queues: [q1, q2] }
    }

    /// Builds both pmfs; errors name the offending queue (1-based).
    pub fn from_probs(p1: Vec<Rational>, p2: Vec<Rational>) -> Result<Self, ArrivalError> {
        let wrap = |queue| {
            move |e| ArrivalError::Queue {
                queue,
                source: Box::new(e),
            }
        };
        Ok(Self::new(
            ArrivalPmf::new(p1).map_err(wrap(1))?,
            ArrivalPmf::new(p2).map_err(wrap(2))?,
        ))
    }

    /// Same pmf on both queues.
    pub fn symmetric(pmf: ArrivalPmf) -> Self {
        Self::new(pmf.clone(), pmf)
    }

    pub fn queue(&self, i: usize) -> &ArrivalPmf {
        &self.queues[i]
    }

    pub fn mean(&self) -> Point {
        [self.queues[0].mean(), self.queues[1].mean()]
    }

    pub fn mean_f64(&self) -> [f64; 2] {
        [
            to_f64(&self.queues[0].mean()),
            to_f64(&self.queues[1].mean()),
        ]
    }

    /// Common bound `C` on per-slot arrivals.
    pub fn max_arrivals(&self) -> u64 {
        self.queues[0]
            .max_arrivals()
            .max(self.queues[1].max_arrivals())
    }
}
