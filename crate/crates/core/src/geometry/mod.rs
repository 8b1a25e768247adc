//! Exact planar geometry of capacity regions.
//!
//! Every server state `m` carries a finite set of integer service vectors;
//! its rate region `V^m` is their convex hull. For a channel distribution
//! `γ` the capacity region is the weighted Minkowski sum
//!
//! ```text
//! V_γ = γ_1 V^1 ⊕ … ⊕ γ_M V^M
//! ```
//!
//! Scheduling only ever depends on the upper-right (Pareto) boundary of
//! `V_γ`, so a [`CapacityRegion`] stores exactly that: the maximal vertices
//! `v̂^1 … v̂^{M'+1}` ordered by strictly decreasing first coordinate and the
//! strictly increasing outer-normal slopes `r_1 … r_{M'}` of the facets
//! joining them. The region itself is the coordinate-convex closure of that
//! chain inside the nonnegative quadrant.
//!
//! All arithmetic is exact ([`Rational`]); the f64 instantiation in
//! [`RegionTemplate::chain_f64`] exists for the large-deviations optimizer,
//! which evaluates millions of regions.

mod lp;

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{format_rational, from_u64, to_f64, Rational};

pub(crate) use lp::constrained_max;

/// An exact point of the plane, `[x_1, x_2]`.
pub type Point = [Rational; 2];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("server model has no states")]
    EmptyModel,
    #[error("server state {state} has no service vectors")]
    EmptyState { state: usize },
    #[error("probability of state {state} is negative ({value})")]
    NegativeProbability { state: usize, value: String },
    #[error("probability of state {state} must be strictly positive")]
    NonPositiveProbability { state: usize },
    #[error("probabilities sum to {sum}")]
    NotNormalized { sum: String },
    #[error("distribution has {got} entries but the model has {expected} states")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight b_{index} must be strictly positive")]
    NonPositiveWeight { index: usize },
    #[error("point has a negative coordinate")]
    NegativePoint,
}

/// Service vectors available in one server state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceSet {
    /// The server serves either `mu[0]` packets of Queue 1 or `mu[1]`
    /// packets of Queue 2; the region is the triangle spanned by the
    /// origin and the two axis points.
    Triangle([u64; 2]),
    /// Any of the listed vectors may be used; sorted and deduplicated.
    Polytope(Vec<[u64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    set: ServiceSet,
}

impl ServerState {
    pub fn triangle(mu: [u64; 2]) -> Self {
        Self {
            set: ServiceSet::Triangle(mu),
        }
    }

    pub fn polytope(mut vertices: Vec<[u64; 2]>) -> Result<Self, GeometryError> {
        if vertices.is_empty() {
            return Err(GeometryError::EmptyState { state: 0 });
        }
        vertices.sort_unstable();
        vertices.dedup();
        Ok(Self {
            set: ServiceSet::Polytope(vertices),
        })
    }

    pub fn service_set(&self) -> &ServiceSet {
        &self.set
    }

    /// `Some(μ^m)` for triangle states.
    pub fn mu(&self) -> Option<[u64; 2]> {
        match self.set {
            ServiceSet::Triangle(mu) => Some(mu),
            ServiceSet::Polytope(_) => None,
        }
    }

    /// Deduplicated vertex list of `V^m`.
    pub fn vertices(&self) -> Vec<[u64; 2]> {
        match &self.set {
            ServiceSet::Triangle(mu) => {
                let mut v = vec![[0, 0], [mu[0], 0], [0, mu[1]]];
                v.sort_unstable();
                v.dedup();
                v
            }
            ServiceSet::Polytope(v) => v.clone(),
        }
    }

    pub fn scaled(&self, c: u64) -> Self {
        let set = match &self.set {
            ServiceSet::Triangle(mu) => ServiceSet::Triangle([mu[0] * c, mu[1] * c]),
            ServiceSet::Polytope(v) => {
                let mut v: Vec<_> = v.iter().map(|p| [p[0] * c, p[1] * c]).collect();
                v.sort_unstable();
                v.dedup();
                ServiceSet::Polytope(v)
            }
        };
        Self { set }
    }

    /// Largest service any vector of this state offers to queue `i`.
    pub fn max_service(&self, queue: usize) -> u64 {
        self.vertices().iter().map(|v| v[queue]).max().unwrap_or(0)
    }
}

/// The `M` server states. States are addressed by 0-based index in code;
/// exported files number them from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerModel {
    states: Vec<ServerState>,
}

impl ServerModel {
    pub fn new(states: Vec<ServerState>) -> Result<Self, GeometryError> {
        if states.is_empty() {
            return Err(GeometryError::EmptyModel);
        }
        Ok(Self { states })
    }

    /// Model whose every state is a triangle with the given `μ^m`.
    pub fn triangles(mus: &[[u64; 2]]) -> Result<Self, GeometryError> {
        Self::new(mus.iter().map(|&mu| ServerState::triangle(mu)).collect())
    }

    pub fn states(&self) -> &[ServerState] {
        &self.states
    }

    pub fn state(&self, m: usize) -> &ServerState {
        &self.states[m]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn scaled(&self, c: u64) -> Self {
        Self {
            states: self.states.iter().map(|s| s.scaled(c)).collect(),
        }
    }
}

/// Probability vector over server states.
///
/// `new` accepts any point of the simplex (an empirical `γ`), `nominal`
/// additionally requires every entry to be strictly positive (the channel
/// law `π`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelDistribution {
    probs: Vec<Rational>,
}

impl ChannelDistribution {
    pub fn new(probs: Vec<Rational>) -> Result<Self, GeometryError> {
        if probs.is_empty() {
            return Err(GeometryError::EmptyModel);
        }
        for (state, p) in probs.iter().enumerate() {
            if p.is_negative() {
                return Err(GeometryError::NegativeProbability {
                    state: state + 1,
                    value: format_rational(p),
                });
            }
        }
        let sum: Rational = probs.iter().sum();
        if !sum.is_one() {
            return Err(GeometryError::NotNormalized {
                sum: format_rational(&sum),
            });
        }
        Ok(Self { probs })
    }

    pub fn nominal(probs: Vec<Rational>) -> Result<Self, GeometryError> {
        let dist = Self::new(probs)?;
        if let Some(state) = dist.probs.iter().position(|p| p.is_zero()) {
            return Err(GeometryError::NonPositiveProbability { state: state + 1 });
        }
        Ok(dist)
    }

    pub fn uniform(states: usize) -> Self {
        let p = Rational::new(BigInt::one(), BigInt::from(states));
        Self {
            probs: vec![p; states],
        }
    }

    pub fn probs(&self) -> &[Rational] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(to_f64).collect()
    }

    pub fn check_model(&self, model: &ServerModel) -> Result<(), GeometryError> {
        if self.len() != model.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: model.len(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Positive weight vector `b`. Never normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightVector {
    b: [Rational; 2],
}

impl WeightVector {
    pub fn new(b1: Rational, b2: Rational) -> Result<Self, GeometryError> {
        if !b1.is_positive() {
            return Err(GeometryError::NonPositiveWeight { index: 1 });
        }
        if !b2.is_positive() {
            return Err(GeometryError::NonPositiveWeight { index: 2 });
        }
        Ok(Self { b: [b1, b2] })
    }

    pub fn ones() -> Self {
        Self {
            b: [Rational::one(), Rational::one()],
        }
    }

    pub fn get(&self) -> &[Rational; 2] {
        &self.b
    }

    /// `b_2 / b_1`, the slope of `b`.
    pub fn slope(&self) -> Rational {
        &self.b[1] / &self.b[0]
    }

    pub fn dot(&self, p: &Point) -> Rational {
        &self.b[0] * &p[0] + &self.b[1] * &p[1]
    }

    pub fn to_f64(&self) -> [f64; 2] {
        [to_f64(&self.b[0]), to_f64(&self.b[1])]
    }

    /// Integers `(B_1, B_2, D)` with `b_i = B_i / D`.
    pub fn common_denominator(&self) -> ([BigInt; 2], BigInt) {
        let d = self.b[0].denom().lcm(self.b[1].denom());
        let scale = |r: &Rational| r.numer() * (&d / r.denom());
        ([scale(&self.b[0]), scale(&self.b[1])], d)
    }

    pub fn scaled(&self, c: &Rational) -> Self {
        Self {
            b: [&self.b[0] * c, &self.b[1] * c],
        }
    }
}

/// A facet normal slope including the two sentinels `r_0 = 0` and
/// `r_{M'+1} = ∞`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slope {
    Finite(Rational),
    Infinite,
}

impl Slope {
    pub fn finite(&self) -> Option<&Rational> {
        match self {
            Slope::Finite(r) => Some(r),
            Slope::Infinite => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Slope::Finite(r) => to_f64(r),
            Slope::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Slope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slope::Finite(r) => write!(f, "{}", format_rational(r)),
            Slope::Infinite => write!(f, "inf"),
        }
    }
}

/// Maximizing face of a linear objective over the region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Face {
    /// Unique maximizer `v̂^m` (1-based).
    Vertex(usize),
    /// Facet between `v̂^m` and `v̂^{m+1}`.
    Edge(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedMax {
    pub value: Rational,
    pub face: Face,
}

/// Upper-right boundary of a capacity region.
///
/// Indexing follows the usual convention: vertices are `v̂^1 … v̂^{M'+1}`
/// and slopes `r_0 … r_{M'+1}` including sentinels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityRegion {
    vertices: Vec<Point>,
    slopes: Vec<Rational>,
}

impl CapacityRegion {
    pub fn maximal_vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// `r_1 … r_{M'}`.
    pub fn normal_slopes(&self) -> &[Rational] {
        &self.slopes
    }

    /// `M'`, the number of facets with finite positive normal slope.
    pub fn facet_count(&self) -> usize {
        self.slopes.len()
    }

    /// `r_i` for `i ∈ 0..=M'+1`.
    pub fn slope(&self, i: usize) -> Slope {
        if i == 0 {
            Slope::Finite(Rational::zero())
        } else if i <= self.slopes.len() {
            Slope::Finite(self.slopes[i - 1].clone())
        } else {
            Slope::Infinite
        }
    }

    /// `v̂^m` for `m ∈ 1..=M'+1`.
    pub fn vertex(&self, m: usize) -> &Point {
        &self.vertices[m - 1]
    }

    /// Indices `(k, l)`: `r_k` is the largest slope strictly below
    /// `b_2/b_1`, `r_l` the smallest strictly above it.
    pub fn select_k_l(&self, b: &WeightVector) -> (usize, usize) {
        let target = b.slope();
        let k = self.slopes.iter().take_while(|r| **r < target).count();
        let l = if self.slopes.get(k) == Some(&target) {
            k + 2
        } else {
            k + 1
        };
        (k, l)
    }

    pub fn max_weighted_rate(&self, b: &WeightVector) -> WeightedMax {
        let (k, l) = self.select_k_l(b);
        let face = if l == k + 2 {
            Face::Edge(k + 1, k + 2)
        } else {
            Face::Vertex(k + 1)
        };
        WeightedMax {
            value: b.dot(self.vertex(k + 1)),
            face,
        }
    }

    /// Height of the region's upper boundary above `x` (for
    /// `0 <= x <= v̂^1_1`).
    pub fn upper_boundary(&self, x: &Rational) -> Rational {
        lp::upper_boundary(&self.vertices, x)
    }

    /// Closed membership.
    pub fn contains(&self, p: &Point) -> bool {
        if p[0].is_negative() || p[1].is_negative() {
            return false;
        }
        if p[0] > self.vertices[0][0] {
            return false;
        }
        p[1] <= self.upper_boundary(&p[0])
    }

    /// Membership in the topological interior.
    pub fn contains_strict_interior(&self, p: &Point) -> bool {
        p[0].is_positive() && p[1].is_positive() && self.strictly_dominates(p)
    }

    /// Whether some `v` in the region satisfies `v > p` componentwise; for
    /// the mean arrival vector this is the stabilizability condition.
    pub fn strictly_dominates(&self, p: &Point) -> bool {
        if p[0].is_negative() || p[1].is_negative() {
            return self.strictly_dominates(&[
                p[0].clone().max(Rational::zero()),
                p[1].clone().max(Rational::zero()),
            ]);
        }
        if p[0] >= self.vertices[0][0] {
            return false;
        }
        p[1] < self.upper_boundary(&p[0])
    }

    /// `max ⟨b, v⟩` over `v` in the region with `v <= lambda`; the
    /// lexicographically largest maximizer is returned.
    pub fn constrained_max(&self, lambda: &Point, b: &WeightVector) -> Point {
        lp::constrained_max(&self.vertices, lambda, b.get())
    }

    /// Uniform scaling by a positive rational.
    pub fn scaled(&self, c: &Rational) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| [&v[0] * c, &v[1] * c])
                .collect(),
            slopes: self.slopes.clone(),
        }
    }

    /// CSV rows `m,v1_num,v1_den,v2_num,v2_den`.
    pub fn vertices_csv(&self) -> String {
        let mut out = String::from("m,v1_num,v1_den,v2_num,v2_den\n");
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                v[0].numer(),
                v[0].denom(),
                v[1].numer(),
                v[1].denom()
            ));
        }
        out
    }

    /// CSV rows `m,r_num,r_den` for the finite slopes `r_1 … r_{M'}`.
    pub fn slopes_csv(&self) -> String {
        let mut out = String::from("m,r_num,r_den\n");
        for (i, r) in self.slopes.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, r.numer(), r.denom()));
        }
        out
    }
}

/// Maximal chain of one state's integer vertex set.
fn pareto_chain(vertices: &[[u64; 2]]) -> Vec<[i128; 2]> {
    let mut pts: Vec<[i128; 2]> = vertices
        .iter()
        .map(|v| [v[0] as i128, v[1] as i128])
        .collect();
    // x descending, then y descending
    pts.sort_unstable_by(|a, b| b[0].cmp(&a[0]).then(b[1].cmp(&a[1])));
    let mut staircase: Vec<[i128; 2]> = Vec::new();
    for p in pts {
        match staircase.last() {
            Some(last) if p[1] <= last[1] => {}
            _ => staircase.push(p),
        }
    }
    let mut hull: Vec<[i128; 2]> = Vec::with_capacity(staircase.len());
    for p in staircase {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b[0] - a[0]) * (p[1] - b[1]) - (b[1] - a[1]) * (p[0] - b[0]);
            if cross > 0 {
                break;
            }
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

#[derive(Debug, Clone)]
struct ChainEdge {
    state: usize,
    /// `(a_1 - c_1, c_2 - a_2)`, both strictly positive.
    delta: [u64; 2],
    slope: Rational,
}

/// The γ-independent part of a capacity region: per-state maximal chains
/// and their facets sorted by normal slope.
#[derive(Debug, Clone)]
pub struct RegionTemplate {
    starts: Vec<[u64; 2]>,
    edges: Vec<ChainEdge>,
}

impl RegionTemplate {
    pub fn new(model: &ServerModel) -> Self {
        let mut starts = Vec::with_capacity(model.len());
        let mut edges = Vec::new();
        for (state, s) in model.states().iter().enumerate() {
            let chain = pareto_chain(&s.vertices());
            starts.push([chain[0][0] as u64, chain[0][1] as u64]);
            for w in chain.windows(2) {
                let delta = [(w[0][0] - w[1][0]) as u64, (w[1][1] - w[0][1]) as u64];
                edges.push(ChainEdge {
                    state,
                    delta,
                    slope: Rational::new(BigInt::from(delta[0]), BigInt::from(delta[1])),
                });
            }
        }
        edges.sort_by(|a, b| a.slope.cmp(&b.slope).then(a.state.cmp(&b.state)));
        Self { starts, edges }
    }

    pub fn state_count(&self) -> usize {
        self.starts.len()
    }

    /// Exact region for `γ`. Equal-slope facets are merged, states with
    /// `γ_m = 0` contribute nothing.
    pub fn instantiate(&self, gamma: &ChannelDistribution) -> CapacityRegion {
        let g = gamma.probs();
        let mut start = [Rational::zero(), Rational::zero()];
        for (m, s) in self.starts.iter().enumerate() {
            if !g[m].is_zero() {
                start[0] += &g[m] * from_u64(s[0]);
                start[1] += &g[m] * from_u64(s[1]);
            }
        }
        let mut vertices = vec![start];
        let mut slopes = Vec::new();
        let mut i = 0;
        while i < self.edges.len() {
            let slope = &self.edges[i].slope;
            let mut dx = Rational::zero();
            let mut dy = Rational::zero();
            while i < self.edges.len() && &self.edges[i].slope == slope {
                let e = &self.edges[i];
                if !g[e.state].is_zero() {
                    dx += &g[e.state] * from_u64(e.delta[0]);
                    dy += &g[e.state] * from_u64(e.delta[1]);
                }
                i += 1;
            }
            if dy.is_zero() {
                continue;
            }
            let last = vertices.last().expect("chain starts non-empty");
            let next = [&last[0] - &dx, &last[1] + &dy];
            vertices.push(next);
            slopes.push(slope.clone());
        }
        CapacityRegion { vertices, slopes }
    }

    /// Maximal chain of `V_γ` in binary64 for a float `γ`. Collinear
    /// vertices may appear where facets of different states share a slope.
    pub fn chain_f64(&self, gamma: &[f64]) -> Vec<[f64; 2]> {
        let mut start = [0.0, 0.0];
        for (m, s) in self.starts.iter().enumerate() {
            start[0] += gamma[m] * s[0] as f64;
            start[1] += gamma[m] * s[1] as f64;
        }
        let mut chain = Vec::with_capacity(self.edges.len() + 1);
        chain.push(start);
        let mut cur = start;
        for e in &self.edges {
            let w = gamma[e.state];
            if w <= 0.0 {
                continue;
            }
            cur = [
                cur[0] - w * e.delta[0] as f64,
                cur[1] + w * e.delta[1] as f64,
            ];
            chain.push(cur);
        }
        chain
    }

    /// Distinct normal slopes over all states (the partition slope set
    /// for any strictly positive γ).
    pub fn slope_set(&self) -> Vec<Rational> {
        let mut s: Vec<Rational> = self.edges.iter().map(|e| e.slope.clone()).collect();
        s.dedup();
        s
    }
}

/// Exact `V_γ` for the model.
pub fn build_region(
    model: &ServerModel,
    gamma: &ChannelDistribution,
) -> Result<CapacityRegion, GeometryError> {
    gamma.check_model(model)?;
    Ok(RegionTemplate::new(model).instantiate(gamma))
}

/// A maximizer of `⟨b, v⟩` over `{v ∈ V_γ : v <= λ}`, lexicographically
/// largest among ties.
pub fn v_star(
    lambda: &Point,
    gamma: &ChannelDistribution,
    b: &WeightVector,
    model: &ServerModel,
) -> Result<Point, GeometryError> {
    if lambda[0].is_negative() || lambda[1].is_negative() {
        return Err(GeometryError::NegativePoint);
    }
    Ok(build_region(model, gamma)?.constrained_max(lambda, b))
}

/// Float counterpart of [`v_star`] on a precomputed template.
pub fn v_star_f64(
    template: &RegionTemplate,
    lambda: [f64; 2],
    gamma: &[f64],
    b: [f64; 2],
) -> [f64; 2] {
    let chain = template.chain_f64(gamma);
    constrained_max(&chain, &lambda, &b)
}
