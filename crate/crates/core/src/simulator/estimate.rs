//! Steady-state overflow probabilities `P(⟨b, Q⟩ >= n)`.
//!
//! Three estimators share one tally format:
//!
//! * naive: long-run fraction of slots above `n` after a warm-up;
//! * regenerative: cycles from the empty state, `E[time above n in a
//!   cycle] / E[cycle length]`;
//! * tilted: the regenerative ratio with the numerator cycles run under an
//!   exponential change of measure until the level is hit, weighted by the
//!   likelihood ratio, then continued under the nominal law.
//!
//! Cycle lengths for the denominator always come from separate nominal
//! cycles, so the regenerative and tilted estimators differ only in their
//! numerator measure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    apply, slot_uniforms, stream, LevelGauge, SimError, SlotLaw, StreamPurpose, SystemConfig,
};
use crate::large_deviations::{tilt_parameters, OptimalMode, TiltParameters};
use crate::schedulers::Decider;

/// Share of the nominal law mixed into every tilted slot law. Keeps the
/// tilted measure positive wherever the nominal one is, which a point-mass
/// channel mode would otherwise violate.
pub const DEFAULT_DEFENSIVE_WEIGHT: f64 = 0.05;

/// Number of batches per naive replication.
pub const NAIVE_BATCHES: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimationBudget {
    pub replications: usize,
    /// Counted slots per naive replication, after warm-up.
    pub slots: u64,
    /// Numerator cycles per replication and threshold.
    pub cycles: u64,
    /// Nominal cycles per replication for the mean cycle length.
    pub length_cycles: u64,
    /// Slots after which a cycle is cut off and counted as truncated.
    pub max_cycle_slots: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for EstimationBudget {
    fn default() -> Self {
        Self {
            replications: 20,
            slots: 1_000_000,
            cycles: 10_000,
            length_cycles: 10_000,
            max_cycle_slots: 100_000_000,
            workers: None,
        }
    }
}

/// One component of a tilted slot law with its per-symbol
/// `log p − log q` tables.
#[derive(Debug, Clone, PartialEq)]
struct TiltComponent {
    law: SlotLaw,
    channel_log_lr: Vec<f64>,
    arrival_log_lr: [Vec<f64>; 2],
}

/// Change of measure for the numerator cycles: a mixture of tilted slot
/// laws, one drawn per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltPlan {
    components: Vec<TiltComponent>,
    log_weights: Vec<f64>,
    weight_cdf: Vec<f64>,
}

fn defensive_mix(q: &[f64], p: &[f64], eps: f64) -> Vec<f64> {
    if q == p || eps == 0.0 {
        return q.to_vec();
    }
    q.iter()
        .zip(p)
        .map(|(q, p)| (1.0 - eps) * q + eps * p)
        .collect()
}

fn log_ratio(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(p, q)| {
            if p == q || *p == 0.0 {
                0.0
            } else if *q == 0.0 {
                f64::INFINITY
            } else {
                p.ln() - q.ln()
            }
        })
        .collect()
}

impl TiltPlan {
    /// The nominal law itself: every likelihood ratio is exactly one.
    pub fn identity(config: &SystemConfig) -> Self {
        let pi = config.pi().to_f64();
        let a = [
            config.arrivals().queue(0).probs_f64().to_vec(),
            config.arrivals().queue(1).probs_f64().to_vec(),
        ];
        Self::build(config, vec![(pi, a)], 0.0)
    }

    /// Equal-weight mixture of the given tilts, each mixed with the nominal
    /// law at weight `defensive`.
    pub fn from_parameters(
        config: &SystemConfig,
        tilts: &[TiltParameters],
        defensive: f64,
    ) -> Result<Self, SimError> {
        if tilts.is_empty() || !(0.0..1.0).contains(&defensive) {
            return Err(SimError::InvalidBudget(
                "tilt needs at least one component and a defensive weight in [0, 1)".into(),
            ));
        }
        let parts = tilts
            .iter()
            .map(|t| {
                (
                    t.gamma.clone(),
                    [t.arrivals[0].pmf.clone(), t.arrivals[1].pmf.clone()],
                )
            })
            .collect();
        Ok(Self::build(config, parts, defensive))
    }

    /// Tilts toward the optimal mode and every reported alternate.
    pub fn from_optimal(
        config: &SystemConfig,
        optimal: &OptimalMode,
        defensive: f64,
    ) -> Result<Self, SimError> {
        let mode = optimal.require_mode()?;
        let tilts = std::iter::once(mode)
            .chain(optimal.alternates.iter())
            .map(|m| tilt_parameters(m, config.arrivals(), config.pi()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parameters(config, &tilts, defensive)
    }

    fn build(config: &SystemConfig, parts: Vec<(Vec<f64>, [Vec<f64>; 2])>, eps: f64) -> Self {
        let pi = config.pi().to_f64();
        let p = [
            config.arrivals().queue(0).probs_f64(),
            config.arrivals().queue(1).probs_f64(),
        ];
        let k = parts.len();
        let components = parts
            .into_iter()
            .map(|(gamma, a)| {
                let gamma = defensive_mix(&gamma, &pi, eps);
                let a0 = defensive_mix(&a[0], p[0], eps);
                let a1 = defensive_mix(&a[1], p[1], eps);
                TiltComponent {
                    law: SlotLaw::new(&gamma, [&a0, &a1]),
                    channel_log_lr: log_ratio(&pi, &gamma),
                    arrival_log_lr: [log_ratio(p[0], &a0), log_ratio(p[1], &a1)],
                }
            })
            .collect();
        let w = 1.0 / k as f64;
        Self {
            components,
            log_weights: vec![w.ln(); k],
            weight_cdf: (1..=k).map(|i| i as f64 * w).collect(),
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.components.len() == 1 {
            return 0;
        }
        let u: f64 = rng.gen();
        crate::arrivals::sample_cdf(&self.weight_cdf, u)
    }

    /// `p / Σ_j w_j q_j` from the accumulated `log p − log q_j`.
    fn likelihood_ratio(&self, log_lr: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(log_lr)
            .map(|(lw, l)| lw - l)
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return 0.0;
        }
        let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        (-(top + sum.ln())).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimationMethod {
    Naive,
    Regenerative,
    Tilted(TiltPlan),
}

impl EstimationMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimationMethod::Naive => "naive",
            EstimationMethod::Regenerative => "regenerative",
            EstimationMethod::Tilted(_) => "tilted",
        }
    }
}

/// Sufficient statistics of one replication. The estimate is
/// `(numerator_sum / numerator_count) / (denominator_sum / denominator_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplicationTally {
    pub numerator_sum: f64,
    pub numerator_sq_sum: f64,
    pub numerator_count: u64,
    pub denominator_sum: f64,
    pub denominator_sq_sum: f64,
    pub denominator_count: u64,
    /// Naive batch fractions: sum, sum of squares, count.
    pub batch_sum: f64,
    pub batch_sq_sum: f64,
    pub batch_count: u64,
    /// Numerator cycles that reached the level.
    pub hits: u64,
    pub truncated_cycles: u64,
}

impl ReplicationTally {
    pub fn merge(&mut self, o: &ReplicationTally) {
        self.numerator_sum += o.numerator_sum;
        self.numerator_sq_sum += o.numerator_sq_sum;
        self.numerator_count += o.numerator_count;
        self.denominator_sum += o.denominator_sum;
        self.denominator_sq_sum += o.denominator_sq_sum;
        self.denominator_count += o.denominator_count;
        self.batch_sum += o.batch_sum;
        self.batch_sq_sum += o.batch_sq_sum;
        self.batch_count += o.batch_count;
        self.hits += o.hits;
        self.truncated_cycles += o.truncated_cycles;
    }

    pub fn ratio(&self) -> f64 {
        if self.numerator_count == 0 || self.denominator_sum == 0.0 {
            return 0.0;
        }
        (self.numerator_sum / self.numerator_count as f64)
            / (self.denominator_sum / self.denominator_count as f64)
    }
}

fn sample_variance(sum: f64, sq_sum: f64, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let n = n as f64;
    let mean = sum / n;
    ((sq_sum - n * mean * mean) / (n - 1.0)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverflowEstimate {
    pub threshold: i64,
    pub estimate: f64,
    pub std_error: f64,
    pub method: &'static str,
    pub replications: usize,
    pub seed: u64,
    /// Trivial threshold (`n <= 0`): estimate exactly one.
    pub exact: bool,
    pub total: ReplicationTally,
    pub per_replication: Vec<ReplicationTally>,
}

impl OverflowEstimate {
    fn trivial(threshold: i64, method: &'static str, replications: usize, seed: u64) -> Self {
        Self {
            threshold,
            estimate: 1.0,
            std_error: 0.0,
            method,
            replications,
            seed,
            exact: true,
            total: ReplicationTally::default(),
            per_replication: vec![],
        }
    }

    fn from_tallies(
        threshold: i64,
        method: &'static str,
        seed: u64,
        per_replication: Vec<ReplicationTally>,
    ) -> Self {
        let mut total = ReplicationTally::default();
        for t in &per_replication {
            total.merge(t);
        }
        let estimate = total.ratio().clamp(0.0, 1.0);
        let std_error = if method == "naive" {
            (sample_variance(total.batch_sum, total.batch_sq_sum, total.batch_count)
                / total.batch_count.max(1) as f64)
                .sqrt()
        } else {
            let z = total.numerator_sum / total.numerator_count as f64;
            let tau = total.denominator_sum / total.denominator_count as f64;
            let var_z = sample_variance(
                total.numerator_sum,
                total.numerator_sq_sum,
                total.numerator_count,
            ) / total.numerator_count as f64;
            let var_tau = sample_variance(
                total.denominator_sum,
                total.denominator_sq_sum,
                total.denominator_count,
            ) / total.denominator_count as f64;
            (var_z / (tau * tau) + z * z * var_tau / tau.powi(4)).sqrt()
        };
        Self {
            threshold,
            estimate,
            std_error,
            method,
            replications: per_replication.len(),
            seed,
            exact: false,
            total,
            per_replication,
        }
    }

    /// Estimate from a subset of replications (with repeats), for the
    /// bootstrap.
    pub fn resampled(&self, picks: &[usize]) -> f64 {
        if self.exact {
            return self.estimate;
        }
        let mut t = ReplicationTally::default();
        for &i in picks {
            t.merge(&self.per_replication[i]);
        }
        t.ratio()
    }
}

/// `n,estimate,stderr,method,replications,seed`.
pub fn estimates_csv(estimates: &[OverflowEstimate]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("n,estimate,stderr,method,replications,seed\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{},{}",
            e.threshold, e.estimate, e.std_error, e.method, e.replications, e.seed
        );
    }
    out
}

fn validate(budget: &EstimationBudget, method: &EstimationMethod) -> Result<(), SimError> {
    if budget.replications == 0 {
        return Err(SimError::InvalidBudget("at least one replication".into()));
    }
    match method {
        EstimationMethod::Naive if budget.slots < NAIVE_BATCHES => Err(SimError::InvalidBudget(
            format!("naive estimation needs at least {NAIVE_BATCHES} slots"),
        )),
        EstimationMethod::Regenerative | EstimationMethod::Tilted(_)
            if budget.cycles == 0 || budget.length_cycles == 0 =>
        {
            Err(SimError::InvalidBudget(
                "cycle estimation needs numerator and length cycles".into(),
            ))
        }
        _ => Ok(()),
    }
}

fn run_parallel<T: Send>(
    workers: Option<usize>,
    replications: usize,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Result<Vec<T>, SimError> {
    let job = || {
        (0..replications as u64)
            .into_par_iter()
            .map(&f)
            .collect::<Vec<T>>()
    };
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Workers(e.to_string()))
            .map(|pool| pool.install(job)),
        None => Ok(job()),
    }
}

/// Estimates `P(⟨b, Q⟩ >= n)` under the stationary law for each threshold.
/// Replications run in parallel; results do not depend on the worker count.
pub fn estimate_overflow(
    config: &SystemConfig,
    thresholds: &[i64],
    method: &EstimationMethod,
    budget: &EstimationBudget,
) -> Result<Vec<OverflowEstimate>, SimError> {
    validate(budget, method)?;
    if !matches!(method, EstimationMethod::Naive) && !config.is_stabilizable() {
        return Err(SimError::CyclesNeedStability);
    }
    let tag = method.tag();
    let seed = config.seed();
    let positive: Vec<i64> = thresholds.iter().copied().filter(|n| *n > 0).collect();
    let mut results: Vec<Option<OverflowEstimate>> = thresholds
        .iter()
        .map(|&n| (n <= 0).then(|| OverflowEstimate::trivial(n, tag, budget.replications, seed)))
        .collect();
    if positive.is_empty() {
        return Ok(results.into_iter().flatten().collect());
    }
    let sim = CycleSimulator::new(config);

    let tallies: Vec<Vec<ReplicationTally>> = match method {
        EstimationMethod::Naive => run_parallel(budget.workers, budget.replications, |r| {
            sim.naive_replication(&positive, r, budget)
        })?,
        EstimationMethod::Regenerative | EstimationMethod::Tilted(_) => {
            let identity;
            let plan = match method {
                EstimationMethod::Tilted(p) => p,
                _ => {
                    identity = TiltPlan::identity(config);
                    &identity
                }
            };
            run_parallel(budget.workers, budget.replications, |r| {
                let lengths = sim.length_tally(r, budget);
                positive
                    .iter()
                    .map(|&n| {
                        let mut t = sim.overflow_tally(plan, n, r, budget);
                        t.denominator_sum = lengths.0;
                        t.denominator_sq_sum = lengths.1;
                        t.denominator_count = budget.length_cycles;
                        t.truncated_cycles += lengths.2;
                        t
                    })
                    .collect()
            })?
        }
    };

    let mut k = 0;
    for slot in results.iter_mut() {
        if slot.is_none() {
            let per_rep: Vec<ReplicationTally> = tallies.iter().map(|t| t[k]).collect();
            *slot = Some(OverflowEstimate::from_tallies(
                positive[k],
                tag,
                seed,
                per_rep,
            ));
            k += 1;
        }
    }
    Ok(results.into_iter().flatten().collect())
}

struct CycleSimulator {
    decider: Decider,
    nominal: SlotLaw,
    gauge: LevelGauge,
    seed: u64,
}

impl CycleSimulator {
    fn new(config: &SystemConfig) -> Self {
        Self {
            decider: Decider::new(config.scheduler(), config.model()),
            nominal: config.nominal_law(),
            gauge: config.gauge(),
            seed: config.seed(),
        }
    }

    fn nominal_step(&self, q: [u64; 2], rng: &mut ChaCha8Rng) -> [u64; 2] {
        let (m, a) = self.nominal.draw(slot_uniforms(rng));
        apply(q, &self.decider.decide(q, m), a).0
    }

    /// One long trajectory from empty. Warm-up is ten times the hitting
    /// time of half the largest threshold, capped at a tenth of the
    /// counted slots.
    fn naive_replication(
        &self,
        thresholds: &[i64],
        replication: u64,
        budget: &EstimationBudget,
    ) -> Vec<ReplicationTally> {
        let mut rng = stream(self.seed, StreamPurpose::Naive, 0, replication);
        let cap = budget.slots / 10;
        let half = self
            .gauge
            .scaled_threshold(*thresholds.iter().max().expect("non-empty"))
            / 2;
        let mut q = [0, 0];
        let mut t = 0u64;
        while t < cap && self.gauge.scaled_level(q) < half {
            q = self.nominal_step(q, &mut rng);
            t += 1;
        }
        let warmup = (10 * t).min(cap);
        while t < warmup {
            q = self.nominal_step(q, &mut rng);
            t += 1;
        }

        let scaled: Vec<i128> = thresholds
            .iter()
            .map(|n| self.gauge.scaled_threshold(*n))
            .collect();
        let batch_len = budget.slots / NAIVE_BATCHES;
        let counted = batch_len * NAIVE_BATCHES;
        let mut tallies = vec![ReplicationTally::default(); thresholds.len()];
        let mut in_batch = vec![0u64; thresholds.len()];
        for s in 0..counted {
            let level = self.gauge.scaled_level(q);
            for (k, th) in scaled.iter().enumerate() {
                if level >= *th {
                    in_batch[k] += 1;
                }
            }
            if (s + 1) % batch_len == 0 {
                for (k, tally) in tallies.iter_mut().enumerate() {
                    let frac = in_batch[k] as f64 / batch_len as f64;
                    tally.numerator_sum += in_batch[k] as f64;
                    tally.batch_sum += frac;
                    tally.batch_sq_sum += frac * frac;
                    tally.batch_count += 1;
                    in_batch[k] = 0;
                }
            }
            q = self.nominal_step(q, &mut rng);
        }
        for tally in &mut tallies {
            tally.numerator_count = 1;
            tally.denominator_sum = counted as f64;
            tally.denominator_sq_sum = (counted as f64).powi(2);
            tally.denominator_count = 1;
        }
        tallies
    }

    /// Sum and sum of squares of nominal cycle lengths, and the number of
    /// truncated cycles.
    fn length_tally(&self, replication: u64, budget: &EstimationBudget) -> (f64, f64, u64) {
        let mut rng = stream(self.seed, StreamPurpose::CycleLengths, 0, replication);
        let (mut sum, mut sq, mut truncated) = (0.0, 0.0, 0);
        for _ in 0..budget.length_cycles {
            let mut q = [0, 0];
            let mut len = 0u64;
            loop {
                q = self.nominal_step(q, &mut rng);
                len += 1;
                if q == [0, 0] {
                    break;
                }
                if len >= budget.max_cycle_slots {
                    truncated += 1;
                    break;
                }
            }
            sum += len as f64;
            sq += (len as f64) * (len as f64);
        }
        (sum, sq, truncated)
    }

    /// Weighted time above `n` over `budget.cycles` cycles. The plan's law
    /// drives each cycle until the level is first reached; the nominal
    /// law drives the rest.
    fn overflow_tally(
        &self,
        plan: &TiltPlan,
        n: i64,
        replication: u64,
        budget: &EstimationBudget,
    ) -> ReplicationTally {
        let mut rng = stream(
            self.seed,
            StreamPurpose::OverflowCycles,
            n as u64,
            replication,
        );
        let threshold = self.gauge.scaled_threshold(n);
        let k = plan.component_count();
        let mut tally = ReplicationTally {
            numerator_count: budget.cycles,
            ..Default::default()
        };
        let mut log_lr = vec![0.0; k];
        for _ in 0..budget.cycles {
            let component = &plan.components[plan.pick(&mut rng)];
            log_lr.iter_mut().for_each(|l| *l = 0.0);
            let mut q = [0u64, 0];
            let mut hit = false;
            let mut above = 0u64;
            let mut len = 0u64;
            loop {
                if self.gauge.scaled_level(q) >= threshold {
                    hit = true;
                    above += 1;
                }
                let u = slot_uniforms(&mut rng);
                let (m, a) = if hit {
                    self.nominal.draw(u)
                } else {
                    let (m, a) = component.law.draw(u);
                    for (l, c) in log_lr.iter_mut().zip(&plan.components) {
                        *l += c.channel_log_lr[m]
                            + c.arrival_log_lr[0][a[0] as usize]
                            + c.arrival_log_lr[1][a[1] as usize];
                    }
                    (m, a)
                };
                q = apply(q, &self.decider.decide(q, m), a).0;
                len += 1;
                if q == [0, 0] {
                    break;
                }
                if len >= budget.max_cycle_slots {
                    tally.truncated_cycles += 1;
                    break;
                }
            }
            if hit {
                tally.hits += 1;
                let z = plan.likelihood_ratio(&log_lr) * above as f64;
                tally.numerator_sum += z;
                tally.numerator_sq_sum += z * z;
            }
        }
        tally
    }
}
