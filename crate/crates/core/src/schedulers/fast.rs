//! Integer fast path for per-slot decisions.
//!
//! The simulator asks for millions of decisions; the exact path allocates
//! big rationals for each. Here the weights are scaled to integers once and
//! the p-Log and integer-MaxWeight comparisons run in `i128`, falling back
//! to the exact path on overflow. Transcendental fields use the same
//! log-domain comparison as the exact path, so both agree decision for
//! decision.

use std::cmp::Ordering;

use num_traits::ToPrimitive;

use super::field::{approx_combination_sign, combine_signs};
use super::{tie_queue, triangle_decision, Decision, QueueState, SchedulerSpec, Variant};
use crate::geometry::{ServerModel, ServiceSet};

/// `coef · √radicand` over the integers.
#[derive(Debug, Clone, Copy)]
struct IntSurd {
    coef: i128,
    radicand: i128,
}

enum FastField {
    Exact([IntSurd; 2]),
    Approx([f64; 2]),
}

#[derive(Debug, Clone)]
pub struct Decider {
    spec: SchedulerSpec,
    model: ServerModel,
    /// Weights scaled to coprime-free integers, when they fit.
    int_weights: Option<[i128; 2]>,
    alpha: Option<u32>,
}

impl Decider {
    pub fn new(spec: &SchedulerSpec, model: &ServerModel) -> Self {
        let (nums, _) = spec.weights().common_denominator();
        let int_weights = match (nums[0].to_i128(), nums[1].to_i128()) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };
        Self {
            spec: spec.clone(),
            model: model.clone(),
            int_weights,
            alpha: spec.integer_alpha(),
        }
    }

    pub fn spec(&self) -> &SchedulerSpec {
        &self.spec
    }

    pub fn model(&self) -> &ServerModel {
        &self.model
    }

    fn field(&self, q: QueueState) -> Option<FastField> {
        match self.spec.variant() {
            Variant::PLog => {
                let w = self.int_weights?;
                let (x1, x2) = (q[0] as i128, q[1] as i128);
                if x1 < 1 && x2 < 1 {
                    let zero = IntSurd {
                        coef: 0,
                        radicand: 1,
                    };
                    return Some(FastField::Exact([zero, zero]));
                }
                let h = if x1 >= x2 {
                    let h2 = if x2.checked_mul(x2)? <= x1 {
                        IntSurd {
                            coef: w[1] * x2,
                            radicand: 1,
                        }
                    } else {
                        IntSurd {
                            coef: w[1],
                            radicand: x1,
                        }
                    };
                    [
                        IntSurd {
                            coef: w[0],
                            radicand: x1,
                        },
                        h2,
                    ]
                } else {
                    let h1 = if x1.checked_mul(x1)? <= x2 {
                        IntSurd {
                            coef: w[0] * x1,
                            radicand: 1,
                        }
                    } else {
                        IntSurd {
                            coef: w[0],
                            radicand: x2,
                        }
                    };
                    [
                        h1,
                        IntSurd {
                            coef: w[1],
                            radicand: x2,
                        },
                    ]
                };
                Some(FastField::Exact(h))
            }
            Variant::MaxWeight { .. } if self.alpha.is_some() => {
                let w = self.int_weights?;
                let alpha = self.alpha?;
                let c0 = w[0].checked_mul((q[0] as i128).checked_pow(alpha)?)?;
                let c1 = w[1].checked_mul((q[1] as i128).checked_pow(alpha)?)?;
                Some(FastField::Exact([
                    IntSurd {
                        coef: c0,
                        radicand: 1,
                    },
                    IntSurd {
                        coef: c1,
                        radicand: 1,
                    },
                ]))
            }
            _ => Some(FastField::Approx(
                self.spec.approx_ln([q[0] as f64, q[1] as f64]),
            )),
        }
    }

    /// Same decision as [`SchedulerSpec::decide`].
    pub fn decide(&self, q: QueueState, m: usize) -> Decision {
        match self.field(q) {
            Some(h) => match self.decide_fast(&h, q, m) {
                Some(d) => d,
                None => self.spec.decide(q, m, &self.model),
            },
            None => self.spec.decide(q, m, &self.model),
        }
    }

    fn decide_fast(&self, h: &FastField, q: QueueState, m: usize) -> Option<Decision> {
        match self.model.state(m).service_set() {
            ServiceSet::Triangle(mu) => {
                let queue = match sign(h, [mu[0] as i128, -(mu[1] as i128)])? {
                    Ordering::Greater => 0,
                    Ordering::Less => 1,
                    Ordering::Equal => tie_queue(q),
                };
                Some(triangle_decision(*mu, queue))
            }
            ServiceSet::Polytope(vertices) => {
                let mut best = vertices[0];
                for y in &vertices[1..] {
                    let d = [
                        y[0] as i128 - best[0] as i128,
                        y[1] as i128 - best[1] as i128,
                    ];
                    match sign(h, d)? {
                        Ordering::Greater => best = *y,
                        Ordering::Equal if super::polytope_tie_prefers(y, &best, q) => best = *y,
                        _ => {}
                    }
                }
                Some(Decision {
                    queue: None,
                    service: best,
                })
            }
        }
    }
}

/// Sign of `w_1 h_1 + w_2 h_2`; `None` on overflow.
fn sign(h: &FastField, w: [i128; 2]) -> Option<Ordering> {
    match h {
        FastField::Approx(ln) => Some(approx_combination_sign(ln, [w[0] as f64, w[1] as f64])),
        FastField::Exact(s) => {
            let t0 = w[0].checked_mul(s[0].coef)?;
            let t1 = w[1].checked_mul(s[1].coef)?;
            let sg = |t: i128, r: i128| if r == 0 { Ordering::Equal } else { t.cmp(&0) };
            let (s0, s1) = (sg(t0, s[0].radicand), sg(t1, s[1].radicand));
            let mut overflow = false;
            let result = combine_signs(s0, s1, || {
                if s[0].radicand == s[1].radicand {
                    return t0.abs().cmp(&t1.abs());
                }
                let lhs = t0
                    .checked_mul(t0)
                    .and_then(|v| v.checked_mul(s[0].radicand));
                let rhs = t1
                    .checked_mul(t1)
                    .and_then(|v| v.checked_mul(s[1].radicand));
                match (lhs, rhs) {
                    (Some(a), Some(b)) => a.cmp(&b),
                    _ => {
                        overflow = true;
                        Ordering::Equal
                    }
                }
            });
            if overflow {
                None
            } else {
                Some(result)
            }
        }
    }
}
