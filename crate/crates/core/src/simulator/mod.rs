//! Discrete-time simulation of the two-queue system.
//!
//! Every slot consumes exactly three uniforms from the replication's
//! stream, in order: channel state, arrivals to Queue 1, arrivals to
//! Queue 2. Schedulers run on a common stream therefore see identical
//! channel and arrival sequences.

mod estimate;
mod stats;

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arrivals::{sample_cdf, ArrivalModel};
use crate::geometry::{
    build_region, CapacityRegion, ChannelDistribution, GeometryError, Point, ServerModel,
    WeightVector,
};
use crate::large_deviations::LdError;
use crate::schedulers::{Decider, Decision, QueueState, SchedulerSpec};

pub use estimate::{
    estimate_overflow, estimates_csv, EstimationBudget, EstimationMethod, OverflowEstimate,
    ReplicationTally, TiltPlan, DEFAULT_DEFENSIVE_WEIGHT, NAIVE_BATCHES,
};
pub use stats::{decay_slope, DecayFit, DriftStatistic};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    LargeDeviations(#[from] LdError),
    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("cycle-based estimation needs a stabilizable system")]
    CyclesNeedStability,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("decay fit needs at least {needed} positive estimates, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("weights too large for integer level arithmetic")]
    WeightOverflow,
    #[error("worker pool: {0}")]
    Workers(String),
}

/// Purpose codes separating the random streams of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum StreamPurpose {
    Simulate = 1,
    Naive = 2,
    CycleLengths = 3,
    OverflowCycles = 4,
    Drift = 5,
}

/// Counter-based stream: the master seed keys ChaCha8 and
/// `(purpose, index, replication)` selects the stream, so any replication
/// can be generated independently of the others.
pub(crate) fn stream(
    seed: u64,
    purpose: StreamPurpose,
    index: u64,
    replication: u64,
) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((index & 0xFFFF) << 40) | replication);
    rng
}

/// Draws the three uniforms of one slot.
pub(crate) fn slot_uniforms(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// Inverse-CDF tables for one slot law.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SlotLaw {
    channel_cdf: Vec<f64>,
    arrival_cdf: [Vec<f64>; 2],
}

impl SlotLaw {
    pub(crate) fn new(channel: &[f64], arrivals: [&[f64]; 2]) -> Self {
        Self {
            channel_cdf: cumulative(channel),
            arrival_cdf: [cumulative(arrivals[0]), cumulative(arrivals[1])],
        }
    }

    pub(crate) fn draw(&self, u: [f64; 3]) -> (usize, [u64; 2]) {
        (
            sample_cdf(&self.channel_cdf, u[0]),
            [
                sample_cdf(&self.arrival_cdf[0], u[1]) as u64,
                sample_cdf(&self.arrival_cdf[1], u[2]) as u64,
            ],
        )
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// One-slot queue recursion: serve per the decision, then add arrivals.
pub fn step(
    q: QueueState,
    m: usize,
    arrivals: [u64; 2],
    spec: &SchedulerSpec,
    model: &ServerModel,
) -> QueueState {
    apply(q, &spec.decide(q, m, model), arrivals).0
}

/// Returns the next state and the packets actually served.
fn apply(q: QueueState, decision: &Decision, arrivals: [u64; 2]) -> (QueueState, [u64; 2]) {
    let served = [q[0].min(decision.service[0]), q[1].min(decision.service[1])];
    (
        [
            q[0] - served[0] + arrivals[0],
            q[1] - served[1] + arrivals[1],
        ],
        served,
    )
}

/// Integer form of `⟨b, Q⟩ >= n`: `b = B / D` with integer `B`, so the test
/// is `B_1 Q_1 + B_2 Q_2 >= n D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LevelGauge {
    numerators: [i128; 2],
    denominator: i128,
}

impl LevelGauge {
    pub(crate) fn new(b: &WeightVector) -> Result<Self, SimError> {
        let (nums, den) = b.common_denominator();
        let conv = |x: &BigInt| x.to_i128().ok_or(SimError::WeightOverflow);
        Ok(Self {
            numerators: [conv(&nums[0])?, conv(&nums[1])?],
            denominator: conv(&den)?,
        })
    }

    /// `D·⟨b, Q⟩`.
    pub(crate) fn scaled_level(&self, q: QueueState) -> i128 {
        self.numerators[0] * q[0] as i128 + self.numerators[1] * q[1] as i128
    }

    pub(crate) fn scaled_threshold(&self, n: i64) -> i128 {
        n as i128 * self.denominator
    }

    pub(crate) fn level(&self, q: QueueState) -> f64 {
        self.scaled_level(q) as f64 / self.denominator as f64
    }
}

/// Everything needed to run the system.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    model: ServerModel,
    pi: ChannelDistribution,
    arrivals: ArrivalModel,
    scheduler: SchedulerSpec,
    seed: u64,
    stabilizable: bool,
}

impl SystemConfig {
    /// Rejects arrival means outside the stability region unless
    /// `allow_overload` is set.
    pub fn new(
        model: ServerModel,
        pi: ChannelDistribution,
        arrivals: ArrivalModel,
        scheduler: SchedulerSpec,
        seed: u64,
        allow_overload: bool,
    ) -> Result<Self, SimError> {
        let region = build_region(&model, &pi)?;
        let mean = arrivals.mean();
        let stabilizable = region.strictly_dominates(&mean);
        if !stabilizable && !allow_overload {
            return Err(SimError::NotStabilizable(violated_comparison(
                &region, &mean,
            )));
        }
        LevelGauge::new(scheduler.weights())?;
        Ok(Self {
            model,
            pi,
            arrivals,
            scheduler,
            seed,
            stabilizable,
        })
    }

    pub fn model(&self) -> &ServerModel {
        &self.model
    }

    pub fn pi(&self) -> &ChannelDistribution {
        &self.pi
    }

    pub fn arrivals(&self) -> &ArrivalModel {
        &self.arrivals
    }

    pub fn scheduler(&self) -> &SchedulerSpec {
        &self.scheduler
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_stabilizable(&self) -> bool {
        self.stabilizable
    }

    /// Same system under another scheduler (for common-random-number
    /// comparisons).
    pub fn with_scheduler(&self, scheduler: SchedulerSpec) -> Result<Self, SimError> {
        LevelGauge::new(scheduler.weights())?;
        Ok(Self {
            scheduler,
            ..self.clone()
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub(crate) fn nominal_law(&self) -> SlotLaw {
        SlotLaw::new(
            &self.pi.to_f64(),
            [
                self.arrivals.queue(0).probs_f64(),
                self.arrivals.queue(1).probs_f64(),
            ],
        )
    }

    pub(crate) fn gauge(&self) -> LevelGauge {
        LevelGauge::new(self.scheduler.weights()).expect("checked at construction")
    }
}

/// Names the comparison that fails in `λ̄ < v` for every `v` in the region.
fn violated_comparison(region: &CapacityRegion, mean: &Point) -> String {
    let f = crate::rational::format_rational;
    let x_max = &region.maximal_vertices()[0][0];
    if &mean[0] >= x_max {
        format!(
            "mean arrival rate {} of queue 1 is not below its largest service rate {}",
            f(&mean[0]),
            f(x_max)
        )
    } else {
        format!(
            "mean arrival rate {} of queue 2 is not below {}, the largest service rate of queue 2 while queue 1 is served at {}",
            f(&mean[1]),
            f(&region.upper_boundary(&mean[0])),
            f(&mean[0])
        )
    }
}

/// One simulated slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub t: u64,
    /// State at the start of the slot.
    pub q: QueueState,
    pub m: usize,
    pub decision: Decision,
    pub arrivals: [u64; 2],
    pub served: [u64; 2],
}

/// Step-by-step trajectory under the nominal law. Cloning snapshots the
/// full state, random stream included.
#[derive(Debug, Clone)]
pub struct Trajectory {
    decider: Decider,
    law: SlotLaw,
    rng: ChaCha8Rng,
    q: QueueState,
    t: u64,
}

impl Trajectory {
    pub fn new(config: &SystemConfig, initial: QueueState) -> Self {
        Self {
            decider: Decider::new(config.scheduler(), config.model()),
            law: config.nominal_law(),
            rng: stream(config.seed, StreamPurpose::Simulate, 0, 0),
            q: initial,
            t: 0,
        }
    }

    pub fn state(&self) -> QueueState {
        self.q
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn advance(&mut self) -> SlotRecord {
        let (m, a) = self.law.draw(slot_uniforms(&mut self.rng));
        let decision = self.decider.decide(self.q, m);
        let (next, served) = apply(self.q, &decision, a);
        let record = SlotRecord {
            t: self.t,
            q: self.q,
            m,
            decision,
            arrivals: a,
            served,
        };
        self.q = next;
        self.t += 1;
        record
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub slots: u64,
    pub initial: QueueState,
    pub final_state: QueueState,
    /// Average of `Q(t)` over `t = 0 … T−1`.
    pub time_average: [f64; 2],
    pub time_average_weighted: f64,
    pub max_queue: [u64; 2],
    pub arrivals: [u64; 2],
    pub departures: [u64; 2],
    /// Average offered service vector, wasted service included.
    pub offered_service: [f64; 2],
    pub trace: Option<Vec<SlotRecord>>,
}

impl SimulationSummary {
    /// `Q_i(T) = Q_i(0) + arrivals_i − departures_i`.
    pub fn conserves_flow(&self) -> bool {
        (0..2).all(|i| {
            self.final_state[i] as u128 + self.departures[i] as u128
                == self.initial[i] as u128 + self.arrivals[i] as u128
        })
    }
}

/// Runs `slots` slots from `initial` on the config's simulation stream.
pub fn simulate(
    config: &SystemConfig,
    slots: u64,
    initial: QueueState,
    keep_trace: bool,
) -> Result<SimulationSummary, SimError> {
    if slots == 0 {
        return Err(SimError::InvalidBudget("at least one slot".into()));
    }
    let gauge = config.gauge();
    let mut traj = Trajectory::new(config, initial);
    let mut sum_q = [0u128; 2];
    let mut sum_level = 0.0;
    let mut max_q = initial;
    let mut arrivals = [0u64; 2];
    let mut departures = [0u64; 2];
    let mut offered = [0u64; 2];
    let mut trace = keep_trace.then(|| Vec::with_capacity(slots.min(1 << 24) as usize));
    for _ in 0..slots {
        let r = traj.advance();
        for i in 0..2 {
            sum_q[i] += r.q[i] as u128;
            arrivals[i] += r.arrivals[i];
            departures[i] += r.served[i];
            offered[i] += r.decision.service[i];
        }
        sum_level += gauge.level(r.q);
        let q = traj.state();
        max_q = [max_q[0].max(q[0]), max_q[1].max(q[1])];
        if let Some(t) = trace.as_mut() {
            t.push(r);
        }
    }
    let n = slots as f64;
    Ok(SimulationSummary {
        slots,
        initial,
        final_state: traj.state(),
        time_average: [sum_q[0] as f64 / n, sum_q[1] as f64 / n],
        time_average_weighted: sum_level / n,
        max_queue: max_q,
        arrivals,
        departures,
        offered_service: [offered[0] as f64 / n, offered[1] as f64 / n],
        trace,
    })
}

/// `t,Q1,Q2,m,served_queue` with 1-based state and queue numbers;
/// `served_queue` is 0 for polytope states.
pub fn trace_csv(trace: &[SlotRecord]) -> String {
    let mut out = String::from("t,Q1,Q2,m,served_queue\n");
    for r in trace {
        let served = r.decision.queue.map_or(0, |i| i + 1);
        let _ = writeln!(out, "{},{},{},{},{}", r.t, r.q[0], r.q[1], r.m + 1, served);
    }
    out
}

/// Mean change of `⟨b, Q⟩` over `window` slots, from `samples` starting
/// states spread evenly along `⟨b, Q⟩ = level`.
pub fn stability_check(
    config: &SystemConfig,
    level: u64,
    window: u64,
    samples: usize,
) -> Result<DriftStatistic, SimError> {
    if samples < 2 || window == 0 {
        return Err(SimError::InvalidBudget(
            "drift needs at least two samples and a positive window".into(),
        ));
    }
    let gauge = config.gauge();
    let b = config.scheduler().weights().to_f64();
    let decider = Decider::new(config.scheduler(), config.model());
    let law = config.nominal_law();
    let drifts: Vec<f64> = (0..samples)
        .map(|s| {
            let frac = (s as f64 + 0.5) / samples as f64;
            let q1 = (frac * level as f64 / b[0]).floor();
            let q2 = ((level as f64 - b[0] * q1) / b[1]).max(0.0).ceil();
            let mut q = [q1 as u64, q2 as u64];
            let start = gauge.level(q);
            let mut rng = stream(config.seed, StreamPurpose::Drift, 0, s as u64);
            for _ in 0..window {
                let (m, a) = law.draw(slot_uniforms(&mut rng));
                q = apply(q, &decider.decide(q, m), a).0;
            }
            gauge.level(q) - start
        })
        .collect();
    Ok(DriftStatistic::from_samples(&drifts))
}
