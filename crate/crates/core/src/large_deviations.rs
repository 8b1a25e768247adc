//! Rate functions, path costs and the minimum cost per unit increase of
//! the weighted sum queue, `J_*`, with its optimal overflow mode.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::arrivals::{ArrivalModel, ArrivalPmf};
use crate::geometry::{v_star_f64, ChannelDistribution, RegionTemplate, ServerModel, WeightVector};
use crate::rational::to_f64;

/// Upper end of the `θ` search in the Cramér transform.
pub const THETA_MAX: f64 = 200.0;
/// Drifts at or below this are treated as zero.
pub const DRIFT_FLOOR: f64 = 1e-9;
/// Number of `λ` grid steps per axis (step `C/40`).
pub const LAMBDA_GRID_STEPS: usize = 40;
/// Number of simplex grid steps (step `1/20`).
pub const SIMPLEX_GRID_STEPS: usize = 20;
/// Relative tolerance of the local refinement.
pub const REFINE_TOLERANCE: f64 = 1e-6;
/// Modes within this relative distance of `J_*` are reported as alternates.
pub const ALTERNATE_TOLERANCE: f64 = 1e-3;

const GOLDEN_TOLERANCE: f64 = 1e-10;
const TILT_TOLERANCE: f64 = 1e-10;
const MAX_SEEDS: usize = 6;
const SEED_SEPARATION: f64 = 0.1;
const MAX_REFINE_ITERATIONS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LdError {
    #[error("expected {expected} channel probabilities, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weighted drift {drift} is not positive")]
    NonPositiveDrift { drift: f64 },
    #[error("no overflow mode: {reason}")]
    InfiniteCost { reason: String },
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// `log E[e^{θA}]`, evaluated stably.
pub fn log_mgf(probs: &[f64], theta: f64) -> f64 {
    let top = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(a, p)| theta * a as f64 + p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(a, p)| (theta * a as f64 + p.ln() - top).exp())
        .sum();
    top + sum.ln()
}

/// One-sided Cramér transform `sup_{θ >= 0} (θλ − log E[e^{θA}])`.
pub fn cramer(pmf: &ArrivalPmf, lambda: f64) -> f64 {
    let c = pmf.max_arrivals() as f64;
    if lambda.is_nan() || lambda < 0.0 || lambda > c {
        return f64::INFINITY;
    }
    let probs = pmf.probs_f64();
    if lambda == c {
        return -probs[probs.len() - 1].ln();
    }
    if lambda <= to_f64(&pmf.mean()) {
        return 0.0;
    }
    let g = |theta: f64| theta * lambda - log_mgf(probs, theta);
    let theta = golden_section_max(g, 0.0, THETA_MAX, GOLDEN_TOLERANCE);
    g(theta).max(0.0)
}

/// Maximizer of a unimodal function on `[lo, hi]`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi]
        .into_iter()
        .fold(mid, |best, x| if f(x) > f(best) { x } else { best })
}

/// `Σ_m γ_m log(γ_m / π_m)`, infinite off the simplex.
pub fn relative_entropy(gamma: &[f64], pi: &ChannelDistribution) -> Result<f64, LdError> {
    if gamma.len() != pi.len() {
        return Err(LdError::DimensionMismatch {
            expected: pi.len(),
            got: gamma.len(),
        });
    }
    Ok(relative_entropy_unchecked(gamma, &pi.to_f64()))
}

fn relative_entropy_unchecked(gamma: &[f64], pi: &[f64]) -> f64 {
    if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return f64::INFINITY;
    }
    let total: f64 = gamma.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return f64::INFINITY;
    }
    gamma
        .iter()
        .zip(pi)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, p)| {
            if *p > 0.0 {
                g * (g / p).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// A segment of a piecewise-linear fluid path: constant arrival rate and
/// channel frequency over `duration` time units.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub duration: f64,
    pub lambda: [f64; 2],
    pub gamma: Vec<f64>,
}

/// Piecewise-linear `(f, g)` starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    breakpoints: Vec<f64>,
    segments: Vec<PathSegment>,
}

impl PiecewiseLinearPath {
    /// `breakpoints` are `0 = t_0 < … < t_K`; `slopes[k]` holds on
    /// `[t_k, t_{k+1}]`.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<([f64; 2], Vec<f64>)>) -> Result<Self, LdError> {
        if breakpoints.first() != Some(&0.0) {
            return Err(LdError::InvalidPath("first breakpoint must be 0".into()));
        }
        if breakpoints.len() != slopes.len() + 1 {
            return Err(LdError::InvalidPath(format!(
                "{} breakpoints for {} segments",
                breakpoints.len(),
                slopes.len()
            )));
        }
        if breakpoints.windows(2).any(|w| {
            w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater) || !w[1].is_finite()
        }) {
            return Err(LdError::InvalidPath(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        let segments = breakpoints
            .windows(2)
            .zip(slopes)
            .map(|(w, (lambda, gamma))| PathSegment {
                duration: w[1] - w[0],
                lambda,
                gamma,
            })
            .collect();
        Ok(Self {
            breakpoints,
            segments,
        })
    }

    pub fn single(duration: f64, lambda: [f64; 2], gamma: Vec<f64>) -> Result<Self, LdError> {
        Self::new(vec![0.0, duration], vec![(lambda, gamma)])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.segments
    }

    /// `(f(t_K), g(t_K))`.
    pub fn endpoint(&self) -> ([f64; 2], Vec<f64>) {
        let m = self.segments.first().map_or(0, |s| s.gamma.len());
        let mut f = [0.0, 0.0];
        let mut g = vec![0.0; m];
        for s in &self.segments {
            f[0] += s.duration * s.lambda[0];
            f[1] += s.duration * s.lambda[1];
            for (gi, si) in g.iter_mut().zip(&s.gamma) {
                *gi += s.duration * si;
            }
        }
        (f, g)
    }
}

/// `∫ L_(f)(f') + L_(g)(g')` along the path.
pub fn path_cost(
    path: &PiecewiseLinearPath,
    arrivals: &ArrivalModel,
    pi: &ChannelDistribution,
) -> Result<f64, LdError> {
    let mut total = 0.0;
    for s in path.segments() {
        let rate = cramer(arrivals.queue(0), s.lambda[0])
            + cramer(arrivals.queue(1), s.lambda[1])
            + relative_entropy(&s.gamma, pi)?;
        total += s.duration * rate;
    }
    Ok(total)
}

/// A candidate way to overflow: arrivals at rate `λ` while the channel
/// visits states with frequencies `γ`, so the weighted sum queue grows at
/// rate `drift = ⟨b, λ − v*⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverflowMode {
    pub lambda: [f64; 2],
    pub gamma: Vec<f64>,
    pub v_star: [f64; 2],
    /// `L_(f)(λ) + L_(g)(γ)`.
    pub cost: f64,
    pub drift: f64,
}

impl OverflowMode {
    /// Cost per unit increase of the weighted sum queue.
    pub fn j(&self) -> f64 {
        self.cost / self.drift
    }
}

/// `T_0 = 1 / ⟨b, λ* − v*⟩`.
pub fn t_zero(mode: &OverflowMode) -> Result<f64, LdError> {
    if mode.drift > 0.0 {
        Ok(1.0 / mode.drift)
    } else {
        Err(LdError::NonPositiveDrift { drift: mode.drift })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerMetadata {
    pub lambda_grid_step: f64,
    pub simplex_grid_step: f64,
    pub grid_points: usize,
    pub feasible_grid_points: usize,
    pub seeds: usize,
    pub refine_tolerance: f64,
    pub refine_iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalMode {
    /// `+∞` when no mode with positive drift exists.
    pub j_star: f64,
    pub mode: Option<OverflowMode>,
    /// Other refined modes within [`ALTERNATE_TOLERANCE`] of `J_*`, for
    /// example the mirror image of `mode` on a symmetric instance.
    pub alternates: Vec<OverflowMode>,
    pub reason: Option<String>,
    pub metadata: OptimizerMetadata,
}

impl OptimalMode {
    pub fn require_mode(&self) -> Result<&OverflowMode, LdError> {
        self.mode.as_ref().ok_or_else(|| LdError::InfiniteCost {
            reason: self
                .reason
                .clone()
                .unwrap_or_else(|| "J_* is infinite".into()),
        })
    }

    /// `key,value` record of the mode and optimizer settings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k},{v}");
        };
        row("j_star", fmt_f64(self.j_star));
        if let Some(m) = &self.mode {
            row("lambda1", fmt_f64(m.lambda[0]));
            row("lambda2", fmt_f64(m.lambda[1]));
            for (i, g) in m.gamma.iter().enumerate() {
                row(&format!("gamma{}", i + 1), fmt_f64(*g));
            }
            row("v1", fmt_f64(m.v_star[0]));
            row("v2", fmt_f64(m.v_star[1]));
            row("cost", fmt_f64(m.cost));
            row("drift", fmt_f64(m.drift));
            row("t_zero", fmt_f64(1.0 / m.drift));
        }
        if let Some(r) = &self.reason {
            row("reason", format!("\"{}\"", r.replace('"', "'")));
        }
        row("alternates", self.alternates.len().to_string());
        let md = &self.metadata;
        row("lambda_grid_step", fmt_f64(md.lambda_grid_step));
        row("simplex_grid_step", fmt_f64(md.simplex_grid_step));
        row("grid_points", md.grid_points.to_string());
        row("feasible_grid_points", md.feasible_grid_points.to_string());
        row("seeds", md.seeds.to_string());
        row("refine_tolerance", fmt_f64(md.refine_tolerance));
        row("refine_iterations", md.refine_iterations.to_string());
        row("evaluations", md.evaluations.to_string());
        out
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}

/// The `J_*` minimization for one system.
pub struct JStarProblem {
    arrivals: ArrivalModel,
    pi: Vec<f64>,
    template: RegionTemplate,
    b: [f64; 2],
    mean: [f64; 2],
    cap: [f64; 2],
}

impl JStarProblem {
    pub fn new(
        arrivals: &ArrivalModel,
        model: &ServerModel,
        pi: &ChannelDistribution,
        b: &WeightVector,
    ) -> Result<Self, LdError> {
        if pi.len() != model.len() {
            return Err(LdError::DimensionMismatch {
                expected: model.len(),
                got: pi.len(),
            });
        }
        Ok(Self {
            arrivals: arrivals.clone(),
            pi: pi.to_f64(),
            template: RegionTemplate::new(model),
            b: b.to_f64(),
            mean: arrivals.mean_f64(),
            cap: [
                arrivals.queue(0).max_arrivals() as f64,
                arrivals.queue(1).max_arrivals() as f64,
            ],
        })
    }

    pub fn state_count(&self) -> usize {
        self.pi.len()
    }

    /// The mode at `(λ, γ)`, or `None` when its cost is infinite or its
    /// drift does not exceed [`DRIFT_FLOOR`].
    pub fn evaluate(&self, lambda: [f64; 2], gamma: &[f64]) -> Option<OverflowMode> {
        let kl = relative_entropy_unchecked(gamma, &self.pi);
        let cost = cramer(self.arrivals.queue(0), lambda[0])
            + cramer(self.arrivals.queue(1), lambda[1])
            + kl;
        if !cost.is_finite() {
            return None;
        }
        let v = v_star_f64(&self.template, lambda, gamma, self.b);
        let drift = self.b[0] * (lambda[0] - v[0]) + self.b[1] * (lambda[1] - v[1]);
        (drift > DRIFT_FLOOR).then(|| OverflowMode {
            lambda,
            gamma: gamma.to_vec(),
            v_star: v,
            cost,
            drift,
        })
    }

    /// `(L_(f) + L_(g)) / drift`, `+∞` where infeasible.
    pub fn objective(&self, lambda: [f64; 2], gamma: &[f64]) -> f64 {
        self.evaluate(lambda, gamma)
            .map_or(f64::INFINITY, |m| m.j())
    }

    fn project(&self, x: &[f64]) -> ([f64; 2], Vec<f64>) {
        let lambda = [
            x[0].clamp(self.mean[0].min(self.cap[0]), self.cap[0]),
            x[1].clamp(self.mean[1].min(self.cap[1]), self.cap[1]),
        ];
        let mut gamma: Vec<f64> = x[2..].to_vec();
        gamma.push(1.0 - x[2..].iter().sum::<f64>());
        (lambda, project_to_simplex(&gamma))
    }

    fn encode(lambda: [f64; 2], gamma: &[f64]) -> Vec<f64> {
        let mut x = vec![lambda[0], lambda[1]];
        x.extend_from_slice(&gamma[..gamma.len() - 1]);
        x
    }

    /// Grid seeding followed by Nelder–Mead refinement of the best few
    /// well-separated grid points.
    pub fn optimize(&self) -> OptimalMode {
        let c = self.cap[0].max(self.cap[1]);
        let lambda_step = c / LAMBDA_GRID_STEPS as f64;
        let simplex = simplex_grid(self.state_count(), SIMPLEX_GRID_STEPS);
        let lambdas: Vec<[f64; 2]> = (0..=LAMBDA_GRID_STEPS)
            .flat_map(|i| {
                (0..=LAMBDA_GRID_STEPS)
                    .map(move |j| [i as f64 * lambda_step, j as f64 * lambda_step])
            })
            .collect();
        let grid_points = simplex.len() * lambdas.len();

        let mut scored: Vec<(f64, usize)> = simplex
            .par_iter()
            .enumerate()
            .flat_map_iter(|(gi, gamma)| {
                let n = lambdas.len();
                lambdas.iter().enumerate().filter_map(move |(li, lambda)| {
                    let j = self.objective(*lambda, gamma);
                    j.is_finite().then_some((j, gi * n + li))
                })
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let feasible_grid_points = scored.len();

        let mut metadata = OptimizerMetadata {
            lambda_grid_step: lambda_step,
            simplex_grid_step: 1.0 / SIMPLEX_GRID_STEPS as f64,
            grid_points,
            feasible_grid_points,
            seeds: 0,
            refine_tolerance: REFINE_TOLERANCE,
            refine_iterations: 0,
            evaluations: grid_points,
        };
        if scored.is_empty() {
            return OptimalMode {
                j_star: f64::INFINITY,
                mode: None,
                alternates: vec![],
                reason: Some(
                    "no arrival rate and channel frequency with finite cost has positive drift"
                        .into(),
                ),
                metadata,
            };
        }

        let point = |idx: usize| {
            let n = lambdas.len();
            (lambdas[idx % n], simplex[idx / n].clone())
        };
        let mut seeds: Vec<([f64; 2], Vec<f64>)> = Vec::new();
        for &(_, idx) in &scored {
            let (l, g) = point(idx);
            if seeds
                .iter()
                .all(|(sl, sg)| distance(sl, sg, &l, &g) > SEED_SEPARATION)
            {
                seeds.push((l, g));
                if seeds.len() == MAX_SEEDS {
                    break;
                }
            }
        }
        metadata.seeds = seeds.len();

        let refined: Vec<(OverflowMode, usize, usize)> = seeds
            .par_iter()
            .map(|(l, g)| self.refine(*l, g, lambda_step))
            .collect();
        let mut modes = Vec::new();
        for (mode, iterations, evaluations) in refined {
            metadata.refine_iterations += iterations;
            metadata.evaluations += evaluations;
            modes.push(mode);
        }
        modes.sort_by(|a, b| a.j().total_cmp(&b.j()));
        let best = modes[0].clone();
        let mut alternates: Vec<OverflowMode> = Vec::new();
        for m in &modes[1..] {
            let close = m.j() <= best.j() * (1.0 + ALTERNATE_TOLERANCE);
            let distinct = std::iter::once(&best)
                .chain(alternates.iter())
                .all(|o| distance(&o.lambda, &o.gamma, &m.lambda, &m.gamma) > 1e-2);
            if close && distinct {
                alternates.push(m.clone());
            }
        }
        OptimalMode {
            j_star: best.j(),
            mode: Some(best),
            alternates,
            reason: None,
            metadata,
        }
    }

    fn refine(&self, lambda: [f64; 2], gamma: &[f64], step: f64) -> (OverflowMode, usize, usize) {
        let start = self
            .evaluate(lambda, gamma)
            .expect("seeds are feasible grid points");
        let x0 = Self::encode(lambda, gamma);
        let mut steps = vec![step, step];
        steps.extend(std::iter::repeat_n(
            1.0 / SIMPLEX_GRID_STEPS as f64,
            x0.len() - 2,
        ));
        let f = |x: &[f64]| {
            let (l, g) = self.project(x);
            self.objective(l, &g)
        };
        let (x, iterations, evaluations) = nelder_mead(f, &x0, &steps, REFINE_TOLERANCE);
        let (l, g) = self.project(&x);
        let mode = match self.evaluate(l, &g) {
            Some(m) if m.j() <= start.j() => m,
            _ => start,
        };
        (mode, iterations, evaluations)
    }
}

fn distance(l1: &[f64; 2], g1: &[f64], l2: &[f64; 2], g2: &[f64]) -> f64 {
    let dl = (l1[0] - l2[0]).abs().max((l1[1] - l2[1]).abs());
    g1.iter()
        .zip(g2)
        .map(|(a, b)| (a - b).abs())
        .fold(dl, f64::max)
}

/// All points of the simplex with coordinates in multiples of `1/steps`.
fn simplex_grid(states: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(
        states: usize,
        left: usize,
        steps: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<f64>>,
    ) {
        if cur.len() + 1 == states {
            cur.push(left);
            out.push(cur.iter().map(|k| *k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(states, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(states, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Euclidean projection onto the probability simplex.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Derivative-free minimization; returns `(argmin, iterations, evaluations)`.
fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    tol: f64,
) -> (Vec<f64>, usize, usize) {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evaluations = n + 1;
    let mut iterations = 0;
    while iterations < MAX_REFINE_ITERATIONS {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]).then(a.cmp(b)));
        pts = order.iter().map(|i| pts[*i].clone()).collect();
        vals = order.iter().map(|i| vals[*i]).collect();
        let (best, worst) = (vals[0], vals[n]);
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if worst.is_finite() && (worst - best) <= tol * best.abs() && size <= tol {
            break;
        }
        if size <= 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            evaluations += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] {
                along(0.5)
            } else {
                along(-0.5)
            };
            let fc = f(&xc);
            evaluations += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[i]
                        .iter()
                        .zip(&pts[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    vals[i] = f(&p);
                    pts[i] = p;
                    evaluations += 1;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|a, b| vals[*a].total_cmp(&vals[*b]).then(a.cmp(b)))
        .expect("simplex is non-empty");
    (pts[best].clone(), iterations, evaluations)
}

/// Minimizes the overflow cost rate over arrival rates and channel
/// frequencies.
pub fn optimize_jstar(
    arrivals: &ArrivalModel,
    model: &ServerModel,
    pi: &ChannelDistribution,
    b: &WeightVector,
) -> Result<OptimalMode, LdError> {
    Ok(JStarProblem::new(arrivals, model, pi, b)?.optimize())
}

/// Support edge used when the target mean is not reachable by a finite
/// tilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTilt {
    MinSymbol,
    MaxSymbol,
}

/// Exponentially tilted arrival pmf for one queue.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalTilt {
    pub theta: f64,
    pub pmf: Vec<f64>,
    /// `log p(a) − log q(a)` per symbol.
    pub log_lr: Vec<f64>,
    pub boundary: Option<BoundaryTilt>,
}

/// Change of measure toward an overflow mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltParameters {
    pub arrivals: [ArrivalTilt; 2],
    pub gamma: Vec<f64>,
    /// `log π_m − log γ_m` per state.
    pub channel_log_lr: Vec<f64>,
}

fn tilted_mean(probs: &[f64], theta: f64) -> f64 {
    let lm = log_mgf(probs, theta);
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(a, p)| a as f64 * (theta * a as f64 + p.ln() - lm).exp())
        .sum()
}

fn point_mass_tilt(probs: &[f64], at: usize, boundary: BoundaryTilt) -> ArrivalTilt {
    let mut pmf = vec![0.0; probs.len()];
    pmf[at] = 1.0;
    let log_lr = probs
        .iter()
        .enumerate()
        .map(|(a, p)| if a == at { p.ln() } else { f64::INFINITY })
        .collect();
    let theta = match boundary {
        BoundaryTilt::MaxSymbol => f64::INFINITY,
        BoundaryTilt::MinSymbol => f64::NEG_INFINITY,
    };
    ArrivalTilt {
        theta,
        pmf,
        log_lr,
        boundary: Some(boundary),
    }
}

/// Tilt of one pmf to mean `target`, by bisection on `θ`.
pub fn tilt_arrivals(pmf: &ArrivalPmf, target: f64) -> ArrivalTilt {
    let probs = pmf.probs_f64();
    let mean = to_f64(&pmf.mean());
    if target == mean {
        return ArrivalTilt {
            theta: 0.0,
            pmf: probs.to_vec(),
            log_lr: vec![0.0; probs.len()],
            boundary: None,
        };
    }
    let lo_symbol = probs.iter().position(|p| *p > 0.0).unwrap_or(0);
    let hi_symbol = probs.len() - 1;
    if target >= hi_symbol as f64 {
        return point_mass_tilt(probs, hi_symbol, BoundaryTilt::MaxSymbol);
    }
    if target <= lo_symbol as f64 {
        return point_mass_tilt(probs, lo_symbol, BoundaryTilt::MinSymbol);
    }
    let (mut lo, mut hi) = if target > mean {
        (0.0, 1.0)
    } else {
        (-1.0, 0.0)
    };
    while tilted_mean(probs, hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return point_mass_tilt(probs, hi_symbol, BoundaryTilt::MaxSymbol);
        }
    }
    while tilted_mean(probs, lo) > target {
        hi = lo;
        lo *= 2.0;
        if lo < -1e6 {
            return point_mass_tilt(probs, lo_symbol, BoundaryTilt::MinSymbol);
        }
    }
    while hi - lo > TILT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if tilted_mean(probs, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let lm = log_mgf(probs, theta);
    let pmf_q = probs
        .iter()
        .enumerate()
        .map(|(a, p)| {
            if *p > 0.0 {
                (theta * a as f64 + p.ln() - lm).exp()
            } else {
                0.0
            }
        })
        .collect();
    let log_lr = probs
        .iter()
        .enumerate()
        .map(|(a, p)| if *p > 0.0 { lm - theta * a as f64 } else { 0.0 })
        .collect();
    ArrivalTilt {
        theta,
        pmf: pmf_q,
        log_lr,
        boundary: None,
    }
}

/// Arrival pmfs tilted to `λ*` and the channel law replaced by `γ*`.
pub fn tilt_parameters(
    mode: &OverflowMode,
    arrivals: &ArrivalModel,
    pi: &ChannelDistribution,
) -> Result<TiltParameters, LdError> {
    if mode.gamma.len() != pi.len() {
        return Err(LdError::DimensionMismatch {
            expected: pi.len(),
            got: mode.gamma.len(),
        });
    }
    let channel_log_lr = pi
        .to_f64()
        .iter()
        .zip(&mode.gamma)
        .map(|(p, g)| {
            if p == g {
                0.0
            } else if *g > 0.0 {
                p.ln() - g.ln()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(TiltParameters {
        arrivals: [
            tilt_arrivals(arrivals.queue(0), mode.lambda[0]),
            tilt_arrivals(arrivals.queue(1), mode.lambda[1]),
        ],
        gamma: mode.gamma.clone(),
        channel_log_lr,
    })
}
