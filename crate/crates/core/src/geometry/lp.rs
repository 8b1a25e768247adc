//! Weighted-rate maximization over a maximal chain clipped by a box.
//!
//! Generic over the scalar so the exact API and the float optimizer share
//! one implementation.

use num_traits::Num;

/// Upper boundary `u(x) = max{y : (x, y) ∈ V}` of the coordinate-convex
/// region under `chain`, for `x <= chain[0][0]`.
pub(crate) fn upper_boundary<T>(chain: &[[T; 2]], x: &T) -> T
where
    T: Clone + PartialOrd + Num,
{
    let last = &chain[chain.len() - 1];
    if *x <= last[0] {
        return last[1].clone();
    }
    for w in chain.windows(2) {
        let (a, c) = (&w[0], &w[1]);
        if c[0] <= *x && *x <= a[0] {
            let run = a[0].clone() - c[0].clone();
            if run == T::zero() {
                return if a[1] > c[1] {
                    a[1].clone()
                } else {
                    c[1].clone()
                };
            }
            let rise = c[1].clone() - a[1].clone();
            return a[1].clone() + (a[0].clone() - x.clone()) * rise / run;
        }
    }
    chain[0][1].clone()
}

/// Lexicographically largest maximizer of `⟨b, v⟩` over the region under
/// `chain` intersected with `{v <= lambda}`.
///
/// The objective restricted to the upper envelope `min(λ_2, u(x))` is
/// concave and piecewise linear in `x`, so its maximum is attained at one
/// of: the box ends, a chain vertex, or the crossing `u(x) = λ_2`. The
/// largest-`x` maximizer among those is the right end of the optimal
/// interval.
pub(crate) fn constrained_max<T>(chain: &[[T; 2]], lambda: &[T; 2], b: &[T; 2]) -> [T; 2]
where
    T: Clone + PartialOrd + Num,
{
    let zero = T::zero();
    let lam0 = if lambda[0] < zero {
        zero.clone()
    } else {
        lambda[0].clone()
    };
    let lam1 = if lambda[1] < zero {
        zero.clone()
    } else {
        lambda[1].clone()
    };
    let x_max = if lam0 < chain[0][0] {
        lam0
    } else {
        chain[0][0].clone()
    };

    let mut candidates: Vec<T> = vec![zero.clone(), x_max.clone()];
    for v in chain {
        if v[0] <= x_max && v[0] >= zero {
            candidates.push(v[0].clone());
        }
    }
    for w in chain.windows(2) {
        let (a, c) = (&w[0], &w[1]);
        if a[1] <= lam1 && lam1 <= c[1] && a[1] != c[1] {
            let x = a[0].clone()
                - (lam1.clone() - a[1].clone()) * (a[0].clone() - c[0].clone())
                    / (c[1].clone() - a[1].clone());
            if x <= x_max && x >= zero {
                candidates.push(x);
            }
        }
    }

    let mut best: Option<([T; 2], T)> = None;
    for x in candidates {
        let u = upper_boundary(chain, &x);
        let y = if u < lam1 { u } else { lam1.clone() };
        let value = b[0].clone() * x.clone() + b[1].clone() * y.clone();
        let better = match &best {
            None => true,
            Some((p, v)) => value > *v || (value == *v && (x > p[0] || (x == p[0] && y > p[1]))),
        };
        if better {
            best = Some(([x, y], value));
        }
    }
    best.expect("candidate list is never empty").0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_chain_with_collinear_points() {
        let chain = [[2.0, 0.0], [1.5, 0.5], [1.0, 1.0], [0.0, 1.5]];
        let v = constrained_max(&chain, &[5.0, 5.0], &[1.0, 1.0]);
        assert_eq!(v, [2.0, 0.0]);
        let v = constrained_max(&chain, &[0.2, 5.0], &[1.0, 1.0]);
        assert_eq!(v, [0.2, 1.4]);
        assert_eq!(upper_boundary(&chain, &0.5), 1.25);
    }

    #[test]
    fn point_chain() {
        let chain = [[0.0, 0.0]];
        assert_eq!(
            constrained_max(&chain, &[1.0, 1.0], &[1.0, 2.0]),
            [0.0, 0.0]
        );
    }
}
