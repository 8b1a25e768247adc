//! Vector-field schedulers: MaxWeight, Exp rule, Log rule and p-Log.
//!
//! Each policy is a field `h` on the nonnegative quadrant. In server state
//! `m` a triangle state serves the queue maximizing `h_i(Q)·μ_i^m`; a
//! general polytope state operates at the vertex maximizing `⟨y, h(Q)⟩`.
//! Ties go to Queue 1 when `Q_1 >= Q_2` and to Queue 2 otherwise (for
//! polytopes: to the maximizer with the largest service for that queue).
//! All four policies share this rule so comparisons isolate the field.

mod fast;
mod field;

use std::cmp::Ordering;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::geometry::{
    CapacityRegion, ChannelDistribution, Point, ServerModel, ServiceSet, Slope, WeightVector,
};
use crate::rational::{from_u64, to_f64, Rational};

pub use fast::Decider;
pub use field::{FieldValue, Surd, FLOAT_TIE_BAND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("invalid scheduler parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("field vanishes at ({x1}, {x2}); its slope is undefined")]
    UndefinedSlope { x1: f64, x2: f64 },
    #[error("no closed-form switching curve for {variant} at slope {slope}")]
    UnsupportedCurve {
        variant: &'static str,
        slope: String,
    },
    #[error("switching curve needs a finite positive slope")]
    InvalidCurveSlope,
    #[error("queue state must be strictly positive")]
    NonPositiveState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    MaxWeight { alpha: f64 },
    ExpRule { a: [f64; 2], c: f64, eta: f64 },
    LogRule { a: [f64; 2] },
    PLog,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::MaxWeight { .. } => "maxweight",
            Variant::ExpRule { .. } => "exp",
            Variant::LogRule { .. } => "log",
            Variant::PLog => "plog",
        }
    }
}

/// Queue lengths `(Q_1, Q_2)` in packets.
pub type QueueState = [u64; 2];

/// Index of a queue: `0` for Queue 1, `1` for Queue 2.
pub type QueueIndex = usize;

/// Outcome of one scheduling decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    /// Served queue for triangle states, `None` for polytope states.
    pub queue: Option<QueueIndex>,
    /// Offered service vector.
    pub service: [u64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSpec {
    variant: Variant,
    weights: WeightVector,
}

fn positive(name: &'static str, v: f64) -> Result<(), SchedulerError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SchedulerError::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

impl SchedulerSpec {
    pub fn plog(weights: WeightVector) -> Self {
        Self {
            variant: Variant::PLog,
            weights,
        }
    }

    pub fn max_weight(weights: WeightVector, alpha: f64) -> Result<Self, SchedulerError> {
        positive("alpha", alpha)?;
        Ok(Self {
            variant: Variant::MaxWeight { alpha },
            weights,
        })
    }

    pub fn exp_rule(
        weights: WeightVector,
        a: [f64; 2],
        c: f64,
        eta: f64,
    ) -> Result<Self, SchedulerError> {
        positive("a1", a[0])?;
        positive("a2", a[1])?;
        positive("c", c)?;
        if !(eta > 0.0 && eta < 1.0) {
            return Err(SchedulerError::InvalidParameter {
                name: "eta",
                reason: format!("must lie in (0, 1), got {eta}"),
            });
        }
        Ok(Self {
            variant: Variant::ExpRule { a, c, eta },
            weights,
        })
    }

    /// Exp rule with `a = (1, 1)`, `c = 1`, `η = 1/2`.
    pub fn exp_default(weights: WeightVector) -> Self {
        Self::exp_rule(weights, [1.0, 1.0], 1.0, 0.5).expect("defaults are valid")
    }

    pub fn log_rule(weights: WeightVector, a: [f64; 2]) -> Result<Self, SchedulerError> {
        positive("a1", a[0])?;
        positive("a2", a[1])?;
        Ok(Self {
            variant: Variant::LogRule { a },
            weights,
        })
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    /// Integer MaxWeight exponents evaluate exactly.
    fn integer_alpha(&self) -> Option<u32> {
        match self.variant {
            Variant::MaxWeight { alpha } if alpha.fract() == 0.0 && alpha <= 64.0 => {
                Some(alpha as u32)
            }
            _ => None,
        }
    }

    /// Field value at a rational point.
    pub fn field(&self, x: &Point) -> FieldValue {
        let b = self.weights.get();
        match &self.variant {
            Variant::PLog => FieldValue::Exact(plog_exact(b, x)),
            Variant::MaxWeight { .. } if self.integer_alpha().is_some() => {
                let alpha = self.integer_alpha().unwrap() as usize;
                FieldValue::Exact([
                    Surd::rational(&b[0] * num_traits::pow(x[0].clone(), alpha)),
                    Surd::rational(&b[1] * num_traits::pow(x[1].clone(), alpha)),
                ])
            }
            _ => FieldValue::Approx {
                ln: self.approx_ln([to_f64(&x[0]), to_f64(&x[1])]),
            },
        }
    }

    /// Field value at an integer queue state.
    pub fn field_at(&self, q: QueueState) -> FieldValue {
        self.field(&[from_u64(q[0]), from_u64(q[1])])
    }

    /// Logarithm of the transcendental fields (and non-integer MaxWeight).
    pub(crate) fn approx_ln(&self, x: [f64; 2]) -> [f64; 2] {
        let lb = {
            let b = self.weights.to_f64();
            [b[0].ln(), b[1].ln()]
        };
        match &self.variant {
            Variant::MaxWeight { alpha } => [lb[0] + alpha * x[0].ln(), lb[1] + alpha * x[1].ln()],
            Variant::ExpRule { a, c, eta } => {
                let denom = c + (0.5 * (a[0] * x[0] + a[1] * x[1])).powf(*eta);
                [lb[0] + a[0] * x[0] / denom, lb[1] + a[1] * x[1] / denom]
            }
            Variant::LogRule { a } => [
                lb[0] + (a[0] * x[0]).ln_1p().ln(),
                lb[1] + (a[1] * x[1]).ln_1p().ln(),
            ],
            Variant::PLog => {
                let h = plog_f64(self.weights.to_f64(), x);
                [h[0].ln(), h[1].ln()]
            }
        }
    }

    /// Field value in binary64 at a real point.
    pub fn field_f64(&self, x: [f64; 2]) -> [f64; 2] {
        let b = self.weights.to_f64();
        match &self.variant {
            Variant::PLog => plog_f64(b, x),
            Variant::MaxWeight { alpha } => [b[0] * x[0].powf(*alpha), b[1] * x[1].powf(*alpha)],
            Variant::LogRule { a } => [b[0] * (a[0] * x[0]).ln_1p(), b[1] * (a[1] * x[1]).ln_1p()],
            Variant::ExpRule { .. } => {
                let ln = self.approx_ln(x);
                [ln[0].exp(), ln[1].exp()]
            }
        }
    }

    /// Scheduling decision in state `m` at queue state `q`.
    pub fn decide(&self, q: QueueState, m: usize, model: &ServerModel) -> Decision {
        decide_with_field(&self.field_at(q), q, model.state(m).service_set())
    }

    /// `v(Q) = Σ_m π_m · service(decide(Q, m))`, exactly.
    pub fn expected_service(
        &self,
        q: QueueState,
        pi: &ChannelDistribution,
        model: &ServerModel,
    ) -> [Rational; 2] {
        let h = self.field_at(q);
        let mut v = [Rational::zero(), Rational::zero()];
        for (m, p) in pi.probs().iter().enumerate() {
            let d = decide_with_field(&h, q, model.state(m).service_set());
            v[0] += p * from_u64(d.service[0]);
            v[1] += p * from_u64(d.service[1]);
        }
        v
    }

    /// Partition label of a point, from the field slope against the
    /// region's normal slopes.
    pub fn partition_of(
        &self,
        x: &Point,
        region: &CapacityRegion,
    ) -> Result<PartitionLabel, SchedulerError> {
        let h = self.field(x);
        if h.is_zero() {
            return Err(SchedulerError::UndefinedSlope {
                x1: to_f64(&x[0]),
                x2: to_f64(&x[1]),
            });
        }
        label_from_field(&h, region, &self.weights)
    }

    pub fn partition_of_state(
        &self,
        q: QueueState,
        region: &CapacityRegion,
    ) -> Result<PartitionLabel, SchedulerError> {
        self.partition_of(&[from_u64(q[0]), from_u64(q[1])], region)
    }

    /// Points on the switching curve where the field slope equals `r`,
    /// sampled at `count` evenly spaced values of the free coordinate in
    /// `range`.
    ///
    /// p-Log curves below the slope of `b` live in `{x_1 >= x_2}` and are
    /// parameterized by `x_1`; those above it live in `{x_2 > x_1}` and are
    /// parameterized by `x_2`. Samples outside the curve's half plane are
    /// dropped. MaxWeight and Log curves are parameterized by `x_1`.
    pub fn switching_curve_samples(
        &self,
        r: &Rational,
        range: (f64, f64),
        count: usize,
    ) -> Result<Vec<[f64; 2]>, SchedulerError> {
        if !r.is_positive() {
            return Err(SchedulerError::InvalidCurveSlope);
        }
        let rf = to_f64(r);
        let b = self.weights.to_f64();
        let grid: Vec<f64> = match count {
            0 => vec![],
            1 => vec![range.0],
            n => (0..n)
                .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        let unsupported = || SchedulerError::UnsupportedCurve {
            variant: self.variant.name(),
            slope: crate::rational::format_rational(r),
        };
        let points = match &self.variant {
            Variant::PLog => match r.cmp(&self.weights.slope()) {
                Ordering::Less => grid
                    .into_iter()
                    .map(|x1| [x1, b[0] / b[1] * rf * x1.sqrt()])
                    .filter(|p| p[0] >= 1.0 && p[0] >= p[1])
                    .collect(),
                Ordering::Greater => grid
                    .into_iter()
                    .map(|x2| [b[1] / b[0] / rf * x2.sqrt(), x2])
                    .filter(|p| p[1] >= 1.0 && p[1] > p[0])
                    .collect(),
                Ordering::Equal => return Err(unsupported()),
            },
            Variant::MaxWeight { alpha } => {
                let factor = (rf * b[0] / b[1]).powf(1.0 / alpha);
                grid.into_iter().map(|x1| [x1, factor * x1]).collect()
            }
            Variant::LogRule { a } => grid
                .into_iter()
                .map(|x1| [x1, ((1.0 + a[0] * x1).powf(b[0] / b[1] * rf) - 1.0) / a[1]])
                .collect(),
            Variant::ExpRule { .. } => return Err(unsupported()),
        };
        Ok(points)
    }

    /// Radial sum-rate audit: `⟨b, v(θQ)⟩` for `θ = 1..=theta_max`.
    pub fn rsm_audit(
        &self,
        q: QueueState,
        theta_max: u64,
        pi: &ChannelDistribution,
        model: &ServerModel,
        region: &CapacityRegion,
    ) -> Result<RsmReport, SchedulerError> {
        if q[0] == 0 && q[1] == 0 {
            return Err(SchedulerError::NonPositiveState);
        }
        let max_rate = region.max_weighted_rate(&self.weights).value;
        let values: Vec<Rational> = (1..=theta_max)
            .map(|theta| {
                let v = self.expected_service([q[0] * theta, q[1] * theta], pi, model);
                self.weights.dot(&v)
            })
            .collect();
        let monotone = values.windows(2).all(|w| w[0] <= w[1]);
        let theta_star = values
            .iter()
            .position(|v| *v == max_rate)
            .map(|i| i as u64 + 1);
        let holds_max = theta_star
            .map(|t| values[(t - 1) as usize..].iter().all(|v| *v == max_rate))
            .unwrap_or(false);
        Ok(RsmReport {
            values,
            monotone,
            theta_star,
            holds_max_after_theta_star: holds_max,
            max_rate,
        })
    }
}

/// Label of a point in the state-space partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionLabel {
    /// `S_m`; `Region(0)` is the weighted-max-sum-rate region.
    Region(usize),
    /// Field slope equals this normal slope exactly (or within the float
    /// band for transcendental fields).
    Curve(Slope),
}

impl std::fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionLabel::Region(m) => write!(f, "S{m}"),
            PartitionLabel::Curve(r) => write!(f, "curve:{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsmReport {
    pub values: Vec<Rational>,
    /// Nondecreasing in θ.
    pub monotone: bool,
    /// First θ with `⟨b, v(θQ)⟩` equal to the maximum weighted rate.
    pub theta_star: Option<u64>,
    pub holds_max_after_theta_star: bool,
    pub max_rate: Rational,
}

fn plog_exact(b: &[Rational; 2], x: &Point) -> [Surd; 2] {
    let one = Rational::from_integer(1.into());
    if x[0] < one && x[1] < one {
        return [
            Surd::rational(Rational::zero()),
            Surd::rational(Rational::zero()),
        ];
    }
    if x[0] >= x[1] {
        let h1 = Surd::sqrt_scaled(b[0].clone(), x[0].clone());
        let h2 = if &x[1] * &x[1] <= x[0] {
            Surd::rational(&b[1] * &x[1])
        } else {
            Surd::sqrt_scaled(b[1].clone(), x[0].clone())
        };
        [h1, h2]
    } else {
        let h1 = if &x[0] * &x[0] <= x[1] {
            Surd::rational(&b[0] * &x[0])
        } else {
            Surd::sqrt_scaled(b[0].clone(), x[1].clone())
        };
        [h1, Surd::sqrt_scaled(b[1].clone(), x[1].clone())]
    }
}

fn plog_f64(b: [f64; 2], x: [f64; 2]) -> [f64; 2] {
    if x[0] < 1.0 && x[1] < 1.0 {
        return [0.0, 0.0];
    }
    if x[0] >= x[1] {
        [b[0] * x[0].sqrt(), b[1] * x[1].min(x[0].sqrt())]
    } else {
        [b[0] * x[0].min(x[1].sqrt()), b[1] * x[1].sqrt()]
    }
}

/// Tie rule for polytope states: prefer the larger service to the longer
/// queue (Queue 1 when `Q_1 >= Q_2`), then the larger service to the other.
fn polytope_tie_prefers(candidate: &[u64; 2], incumbent: &[u64; 2], q: QueueState) -> bool {
    let (first, second) = if q[0] >= q[1] { (0, 1) } else { (1, 0) };
    (candidate[first], candidate[second]) > (incumbent[first], incumbent[second])
}

fn decide_with_field(h: &FieldValue, q: QueueState, set: &ServiceSet) -> Decision {
    match set {
        ServiceSet::Triangle(mu) => {
            let w0 = from_u64(mu[0]);
            let w1 = -from_u64(mu[1]);
            let queue = match h.sign_of_combination([&w0, &w1]) {
                Ordering::Greater => 0,
                Ordering::Less => 1,
                Ordering::Equal => tie_queue(q),
            };
            triangle_decision(*mu, queue)
        }
        ServiceSet::Polytope(vertices) => {
            let mut best = vertices[0];
            for y in &vertices[1..] {
                let d0 = Rational::from_integer((y[0] as i128 - best[0] as i128).into());
                let d1 = Rational::from_integer((y[1] as i128 - best[1] as i128).into());
                match h.sign_of_combination([&d0, &d1]) {
                    Ordering::Greater => best = *y,
                    Ordering::Equal if polytope_tie_prefers(y, &best, q) => best = *y,
                    _ => {}
                }
            }
            Decision {
                queue: None,
                service: best,
            }
        }
    }
}

pub(crate) fn tie_queue(q: QueueState) -> QueueIndex {
    if q[0] >= q[1] {
        0
    } else {
        1
    }
}

pub(crate) fn triangle_decision(mu: [u64; 2], queue: QueueIndex) -> Decision {
    let mut service = [0, 0];
    service[queue] = mu[queue];
    Decision {
        queue: Some(queue),
        service,
    }
}

fn label_from_field(
    h: &FieldValue,
    region: &CapacityRegion,
    b: &WeightVector,
) -> Result<PartitionLabel, SchedulerError> {
    let (k, l) = region.select_k_l(b);
    let m_prime = region.facet_count();
    // r_0 = 0 and r_{M'+1} = ∞ are attained only on the axes.
    if h.compare_slope(&Slope::Finite(Rational::zero())) == Some(Ordering::Equal) {
        return Ok(PartitionLabel::Curve(Slope::Finite(Rational::zero())));
    }
    if h.compare_slope(&Slope::Infinite) == Some(Ordering::Equal) {
        return Ok(PartitionLabel::Curve(Slope::Infinite));
    }
    let mut below = 0;
    for i in 1..=m_prime {
        let r = region.slope(i);
        match h.compare_slope(&r).expect("field is nonzero") {
            Ordering::Greater => below = i,
            Ordering::Equal => {
                return Ok(if k < i && i < l {
                    PartitionLabel::Region(0)
                } else {
                    PartitionLabel::Curve(r)
                });
            }
            Ordering::Less => break,
        }
    }
    // slope lies in (r_below, r_{below+1})
    let band = below + 1;
    Ok(if below >= k && band <= l {
        PartitionLabel::Region(0)
    } else {
        PartitionLabel::Region(band)
    })
}

/// Field slope as a float, for plotting.
pub fn field_slope_f64(h: &FieldValue) -> f64 {
    match h {
        FieldValue::Approx { ln } => (ln[1] - ln[0]).exp(),
        FieldValue::Exact(_) => {
            let v = h.to_f64();
            v[1] / v[0]
        }
    }
}
