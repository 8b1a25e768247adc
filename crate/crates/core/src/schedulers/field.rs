//! Scheduler vector fields and exact sign arithmetic on them.
//!
//! The p-Log field and integer-exponent MaxWeight evaluate exactly at
//! rational points as a pair of surds `c·√r`. Every scheduling question
//! reduces to the sign of `w_1 h_1 + w_2 h_2` for rational `w`, which is
//! decidable exactly by comparing squares. The Exp and Log fields are
//! transcendental; they are carried as natural logarithms of the two
//! components so the Exp rule does not overflow at large queue lengths.

use std::cmp::Ordering;

use num_traits::{Signed, Zero};

use crate::geometry::Slope;
use crate::rational::{to_f64, Rational};

/// Relative band under which two binary64 field terms count as equal.
pub const FLOAT_TIE_BAND: f64 = 1e-12;

/// `coef · √radicand` with `coef, radicand >= 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Surd {
    pub coef: Rational,
    pub radicand: Rational,
}

impl Surd {
    pub fn rational(value: Rational) -> Self {
        Self {
            coef: value,
            radicand: Rational::from_integer(1.into()),
        }
    }

    pub fn sqrt_scaled(coef: Rational, radicand: Rational) -> Self {
        Self { coef, radicand }
    }

    pub fn is_zero(&self) -> bool {
        self.coef.is_zero() || self.radicand.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.coef) * to_f64(&self.radicand).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FieldValue {
    Exact([Surd; 2]),
    /// `ln h_i`, `-inf` for a zero component.
    Approx {
        ln: [f64; 2],
    },
}

impl FieldValue {
    pub fn to_f64(&self) -> [f64; 2] {
        match self {
            FieldValue::Exact(h) => [h[0].to_f64(), h[1].to_f64()],
            FieldValue::Approx { ln } => [ln[0].exp(), ln[1].exp()],
        }
    }

    fn component_zero(&self, i: usize) -> bool {
        match self {
            FieldValue::Exact(h) => h[i].is_zero(),
            FieldValue::Approx { ln } => ln[i] == f64::NEG_INFINITY,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.component_zero(0) && self.component_zero(1)
    }

    /// Sign of `w_1 h_1 + w_2 h_2`.
    pub fn sign_of_combination(&self, w: [&Rational; 2]) -> Ordering {
        match self {
            FieldValue::Exact(h) => {
                let t0 = w[0] * &h[0].coef;
                let t1 = w[1] * &h[1].coef;
                let s0 = term_sign(&t0, &h[0].radicand);
                let s1 = term_sign(&t1, &h[1].radicand);
                combine_signs(s0, s1, || {
                    (&t0 * &t0 * &h[0].radicand).cmp(&(&t1 * &t1 * &h[1].radicand))
                })
            }
            FieldValue::Approx { ln } => {
                let wf = [to_f64(w[0]), to_f64(w[1])];
                approx_combination_sign(ln, wf)
            }
        }
    }

    /// Compares the field slope `h_2 / h_1` against `r`; `None` when
    /// `h = 0` and the slope is undefined.
    pub fn compare_slope(&self, r: &Slope) -> Option<Ordering> {
        let zero1 = self.component_zero(0);
        let zero2 = self.component_zero(1);
        if zero1 && zero2 {
            return None;
        }
        if zero1 {
            return Some(match r {
                Slope::Infinite => Ordering::Equal,
                Slope::Finite(_) => Ordering::Greater,
            });
        }
        match r {
            Slope::Infinite => Some(Ordering::Less),
            Slope::Finite(r) => {
                let neg = -r;
                let one = Rational::from_integer(1.into());
                Some(self.sign_of_combination([&neg, &one]))
            }
        }
    }
}

fn term_sign(t: &Rational, radicand: &Rational) -> Ordering {
    if radicand.is_zero() || t.is_zero() {
        Ordering::Equal
    } else if t.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Sign of a sum of two terms from their signs and a magnitude
/// comparison `|a|` vs `|b|` (only evaluated when the signs disagree).
pub(crate) fn combine_signs(
    a: Ordering,
    b: Ordering,
    magnitude: impl FnOnce() -> Ordering,
) -> Ordering {
    match (a, b) {
        (Ordering::Equal, s) | (s, Ordering::Equal) => s,
        (x, y) if x == y => x,
        (x, _) => match magnitude() {
            Ordering::Greater => x,
            Ordering::Less => x.reverse(),
            Ordering::Equal => Ordering::Equal,
        },
    }
}

pub(crate) fn approx_combination_sign(ln: &[f64; 2], w: [f64; 2]) -> Ordering {
    let sign = |wi: f64, lni: f64| {
        if wi == 0.0 || lni == f64::NEG_INFINITY {
            Ordering::Equal
        } else if wi > 0.0 {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    };
    let s0 = sign(w[0], ln[0]);
    let s1 = sign(w[1], ln[1]);
    combine_signs(s0, s1, || {
        let m0 = w[0].abs().ln() + ln[0];
        let m1 = w[1].abs().ln() + ln[1];
        if m0 == m1 || (m0 - m1).abs() <= FLOAT_TIE_BAND * m0.abs().max(m1.abs()).max(1.0) {
            Ordering::Equal
        } else if m0 > m1 {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    })
}
