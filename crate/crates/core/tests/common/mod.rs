//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use oppsched::arrivals::{ArrivalModel, ArrivalPmf};
use oppsched::geometry::{ChannelDistribution, ServerModel, ServerState};
use oppsched::rational::rat;
use oppsched::schedulers::SchedulerSpec;
use oppsched::simulator::SystemConfig;

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn six_state_mus() -> Vec<[u64; 2]> {
    vec![[1, 4], [3, 4], [1, 1], [4, 3], [4, 1], [1, 0]]
}

pub fn six_state() -> ServerModel {
    ServerModel::triangles(&six_state_mus()).unwrap()
}

pub fn two_state_model() -> ServerModel {
    ServerModel::triangles(&[[2, 1], [1, 2]]).unwrap()
}

pub fn two_state_pi() -> ChannelDistribution {
    ChannelDistribution::nominal(vec![rat(1, 2), rat(1, 2)]).unwrap()
}

pub fn bernoulli_arrivals(num: i64, den: i64) -> ArrivalModel {
    ArrivalModel::symmetric(ArrivalPmf::bernoulli(rat(num, den)).unwrap())
}

pub fn two_state(scheduler: SchedulerSpec, seed: u64) -> SystemConfig {
    SystemConfig::new(
        two_state_model(),
        two_state_pi(),
        bernoulli_arrivals(3, 10),
        scheduler,
        seed,
        false,
    )
    .unwrap()
}

/// Vertex list of a triangle state, written out by hand.
pub fn triangle(mu: [u64; 2]) -> Vec<[u64; 2]> {
    vec![[0, 0], [mu[0], 0], [0, mu[1]]]
}

pub fn model_from(lists: &[Vec<[u64; 2]>]) -> ServerModel {
    ServerModel::new(
        lists
            .iter()
            .map(|v| ServerState::polytope(v.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Every `Σ_m γ_m y^m` with one vertex `y^m` chosen per state.
pub fn all_weighted_sums(lists: &[Vec<[u64; 2]>], gamma: &[Q]) -> Vec<[Q; 2]> {
    let mut sums = vec![[Q::zero(), Q::zero()]];
    for (list, g) in lists.iter().zip(gamma) {
        let mut next = Vec::with_capacity(sums.len() * list.len());
        for s in &sums {
            for v in list {
                next.push([&s[0] + g * q(v[0] as i64), &s[1] + g * q(v[1] as i64)]);
            }
        }
        next.sort();
        next.dedup();
        sums = next;
    }
    sums
}

fn cross(o: &[Q; 2], a: &[Q; 2], b: &[Q; 2]) -> Q {
    (&a[0] - &o[0]) * (&b[1] - &o[1]) - (&a[1] - &o[1]) * (&b[0] - &o[0])
}

/// Maximal (Pareto) vertices of the coordinate-convex closure of the
/// convex hull of `points`, ordered by decreasing first coordinate.
pub fn maximal_chain(points: &[[Q; 2]]) -> Vec<[Q; 2]> {
    let xmax = points.iter().map(|p| p[0].clone()).max().unwrap();
    let ymax = points.iter().map(|p| p[1].clone()).max().unwrap();
    let mut pts: Vec<[Q; 2]> = points.to_vec();
    pts.push([Q::zero(), ymax.clone()]);
    pts.push([xmax.clone(), Q::zero()]);
    pts.sort();
    pts.dedup();
    // Andrew's monotone chain, upper part, left to right
    let mut upper: Vec<[Q; 2]> = Vec::new();
    for p in pts.iter() {
        while upper.len() >= 2
            && !cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p).is_negative()
        {
            upper.pop();
        }
        upper.push(p.clone());
    }
    let start = upper.iter().rposition(|p| p[1] == ymax).unwrap();
    let mut chain: Vec<[Q; 2]> = upper[start..].to_vec();
    // drop the trailing anchor below the rightmost maximal point
    while chain.len() >= 2 && chain[chain.len() - 1][0] == chain[chain.len() - 2][0] {
        chain.pop();
    }
    chain.reverse();
    chain
}

/// Normal slopes `|Δx| / Δy` of consecutive chain facets.
pub fn chain_slopes(chain: &[[Q; 2]]) -> Vec<Q> {
    chain
        .windows(2)
        .map(|w| (&w[0][0] - &w[1][0]) / (&w[1][1] - &w[0][1]))
        .collect()
}

pub fn chain_f64(chain: &[[Q; 2]]) -> Vec<[f64; 2]> {
    chain
        .iter()
        .map(|p| [to_f64(&p[0]), to_f64(&p[1])])
        .collect()
}

pub fn to_f64(x: &Q) -> f64 {
    oppsched::rational::to_f64(x)
}

/// Height of the region above `x`; `None` beyond the rightmost point.
pub fn upper_height(chain: &[[f64; 2]], x: f64) -> Option<f64> {
    let first = chain.first()?;
    let last = chain.last()?;
    if x > first[0] + 1e-12 {
        return None;
    }
    if x <= last[0] {
        return Some(last[1]);
    }
    for w in chain.windows(2) {
        let (r, l) = (w[0], w[1]);
        if x <= r[0] && x >= l[0] {
            let t = (r[0] - x) / (r[0] - l[0]);
            return Some(r[1] + t * (l[1] - r[1]));
        }
    }
    Some(first[1])
}

/// `max ⟨b, v⟩` over the region cut by the box `v <= λ`, by enumerating
/// every candidate vertex of the cut polygon.
pub fn box_lp(chain: &[[f64; 2]], lambda: [f64; 2], b: [f64; 2]) -> f64 {
    let mut cand: Vec<[f64; 2]> = chain.to_vec();
    let xmax = chain[0][0];
    let ymax = chain[chain.len() - 1][1];
    cand.extend([
        [0.0, 0.0],
        [xmax, 0.0],
        [0.0, ymax],
        [lambda[0], 0.0],
        [0.0, lambda[1]],
        [lambda[0], lambda[1]],
    ]);
    if let Some(h) = upper_height(chain, lambda[0]) {
        cand.push([lambda[0], h]);
    }
    for w in chain.windows(2) {
        let (r, l) = (w[0], w[1]);
        let spans = (l[1]..=r[1]).contains(&lambda[1]) || (r[1]..=l[1]).contains(&lambda[1]);
        if spans && r[1] != l[1] {
            let t = (lambda[1] - r[1]) / (l[1] - r[1]);
            cand.push([r[0] + t * (l[0] - r[0]), lambda[1]]);
        }
    }
    if lambda[1] <= chain[0][1] {
        cand.push([xmax, lambda[1]]);
    }
    let tol = 1e-12;
    cand.iter()
        .filter(|c| {
            c[0] >= -tol
                && c[1] >= -tol
                && c[0] <= lambda[0] + tol
                && c[1] <= lambda[1] + tol
                && upper_height(chain, c[0]).is_some_and(|h| c[1] <= h + tol)
        })
        .map(|c| b[0] * c[0] + b[1] * c[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One-sided large-deviation rate of a Bernoulli(p) mean, in closed form:
/// zero at or below `p`.
pub fn bernoulli_rate(p: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::INFINITY;
    }
    if x <= p {
        return 0.0;
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(x, p) + term(1.0 - x, 1.0 - p)
}

pub fn kl(gamma: &[f64], pi: &[f64]) -> f64 {
    gamma
        .iter()
        .zip(pi)
        .map(|(g, p)| if *g == 0.0 { 0.0 } else { g * (g / p).ln() })
        .sum()
}

/// Brute-force `J_*` for a two-state Bernoulli system on a uniform grid:
/// `λ` on `{0, h, …, 1}^2` and `γ_1` on `{0, h, …, 1}` with `h = 1/steps`.
pub fn grid_jstar(
    lists: &[Vec<[u64; 2]>; 2],
    pi: [f64; 2],
    p: f64,
    b: [f64; 2],
    steps: usize,
) -> f64 {
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    for gi in 0..=steps {
        let g = [
            rat(gi as i64, steps as i64),
            rat((steps - gi) as i64, steps as i64),
        ];
        let chain = chain_f64(&maximal_chain(&all_weighted_sums(lists, &g)));
        let gf = [gi as f64 * h, 1.0 - gi as f64 * h];
        let kl = kl(&gf, &pi);
        for i in 0..=steps {
            for j in 0..=steps {
                let lambda = [i as f64 * h, j as f64 * h];
                let drift = b[0] * lambda[0] + b[1] * lambda[1] - box_lp(&chain, lambda, b);
                if drift <= 1e-9 {
                    continue;
                }
                let cost = bernoulli_rate(p, lambda[0]) + bernoulli_rate(p, lambda[1]) + kl;
                best = best.min(cost / drift);
            }
        }
    }
    best
}

/// Stationary `P(⟨b, Q⟩ >= n)` for each `n`, from the chain truncated to
/// `Q_i <= cap` (arrivals beyond the cap are dropped).
pub fn stationary_tail(config: &SystemConfig, cap: u64, thresholds: &[u64]) -> Vec<f64> {
    let side = (cap + 1) as usize;
    let idx = |q: [u64; 2]| q[0] as usize * side + q[1] as usize;
    let pi = config.pi().to_f64();
    let arr = [
        config.arrivals().queue(0).probs_f64().to_vec(),
        config.arrivals().queue(1).probs_f64().to_vec(),
    ];
    let model = config.model();
    let spec = config.scheduler();
    // sparse transition list
    let mut trans: Vec<Vec<(usize, f64)>> = vec![Vec::new(); side * side];
    for q1 in 0..=cap {
        for q2 in 0..=cap {
            let from = idx([q1, q2]);
            for (m, pm) in pi.iter().enumerate() {
                let d = spec.decide([q1, q2], m, model);
                let served = [
                    q1.saturating_sub(d.service[0]),
                    q2.saturating_sub(d.service[1]),
                ];
                for (a1, p1) in arr[0].iter().enumerate() {
                    for (a2, p2) in arr[1].iter().enumerate() {
                        let w = pm * p1 * p2;
                        if w == 0.0 {
                            continue;
                        }
                        let to = [
                            (served[0] + a1 as u64).min(cap),
                            (served[1] + a2 as u64).min(cap),
                        ];
                        trans[from].push((idx(to), w));
                    }
                }
            }
        }
    }
    let mut dist = vec![0.0; side * side];
    dist[0] = 1.0;
    for _ in 0..20_000 {
        let mut next = vec![0.0; side * side];
        for (from, list) in trans.iter().enumerate() {
            let mass = dist[from];
            if mass == 0.0 {
                continue;
            }
            for (to, w) in list {
                next[*to] += mass * w;
            }
        }
        let change = next
            .iter()
            .zip(&dist)
            .map(|(a, b)| if *a > 0.0 { ((a - b) / a).abs() } else { 0.0 })
            .fold(0.0, f64::max);
        dist = next;
        if change < 1e-13 {
            break;
        }
    }
    let b = config.scheduler().weights().to_f64();
    thresholds
        .iter()
        .map(|&n| {
            let mut tail = 0.0;
            for q1 in 0..=cap {
                for q2 in 0..=cap {
                    if b[0] * q1 as f64 + b[1] * q2 as f64 >= n as f64 {
                        tail += dist[idx([q1, q2])];
                    }
                }
            }
            tail
        })
        .collect()
}
