//! Best-so-far line search along the ray from the incumbent toward the
//! reduced-problem minimizer.

use crate::real::Real;
use crate::solver::risk::{dot, norm_sq, RiskOracle};

pub struct LineSearchResult<F: Real> {
    /// Minimizing step `k* >= 0` along `w_from + k (w_to - w_from)`.
    pub step: F,
    pub point: Vec<F>,
    /// Objective `F` at the returned point.
    pub value: F,
}

const GOLDEN_TOL: f64 = 1e-6;

/// Minimizes `g(k) = F(w_from + k (w_to - w_from))` over `k >= 0`.
///
/// Hinge risks provide an exact piecewise-quadratic minimizer; other risks
/// fall back to golden-section search on the convex `g`. The endpoints
/// `k = 0` and `k = 1` are always candidates, so the result never exceeds
/// the objective at either end of the segment.
pub fn exact_line_search<F: Real, O: RiskOracle<F> + ?Sized>(
    w_from: &[F],
    w_to: &[F],
    oracle: &O,
    c: F,
) -> LineSearchResult<F> {
    let v: Vec<F> = w_to.iter().zip(w_from.iter()).map(|(&t, &f)| t - f).collect();
    let uu = norm_sq(w_from);
    let uv = dot(w_from, &v);
    let vv = norm_sq(&v);
    let ray = oracle.ray_risk(w_from, &v);
    let g = |k: F| {
        F::half() * (uu + F::two() * k * uv + k * k * vv) + c * ray(k)
    };

    if !(vv > F::zero()) {
        let value = g(F::zero());
        return LineSearchResult { step: F::zero(), point: w_from.to_vec(), value };
    }

    let interior = match oracle.exact_ray_minimizer(w_from, &v, c) {
        Some(k) => k,
        None => golden_section(&g),
    };

    let mut best_k = F::zero();
    let mut best_val = g(F::zero());
    for k in [interior, F::one()] {
        let val = g(k);
        if val < best_val {
            best_val = val;
            best_k = k;
        }
    }
    let point: Vec<F> = w_from
        .iter()
        .zip(v.iter())
        .map(|(&u, &d)| u + best_k * d)
        .collect();
    LineSearchResult { step: best_k, point, value: best_val }
}

/// Golden-section search for convex `g` over `k >= 0`, bracketing by
/// doubling first.
fn golden_section<F: Real>(g: &impl Fn(F) -> F) -> F {
    let g0 = g(F::zero());
    let mut hi = F::one();
    let mut ghi = g(hi);
    if ghi <= g0 {
        for _ in 0..100 {
            let next = hi * F::two();
            let gnext = g(next);
            if gnext >= ghi {
                hi = next;
                break;
            }
            hi = next;
            ghi = gnext;
        }
    }

    let inv_phi = F::of(0.618_033_988_749_894_9);
    let tol = F::of(GOLDEN_TOL);
    let mut lo = F::zero();
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut ga = g(a);
    let mut gb = g(b);
    for _ in 0..300 {
        if hi - lo <= tol {
            break;
        }
        if ga <= gb {
            hi = b;
            b = a;
            gb = ga;
            a = hi - inv_phi * (hi - lo);
            ga = g(a);
        } else {
            lo = a;
            a = b;
            ga = gb;
            b = lo + inv_phi * (hi - lo);
            gb = g(b);
        }
    }
    (lo + hi) * F::half()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::risk::BinaryHingeRisk;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn degenerate_segment_returns_start() {
        let phi: ndarray::Array2<f64> = array![[1.0]];
        let oracle = BinaryHingeRisk::new(phi.view(), vec![1.0]);
        let res = exact_line_search(&[0.3], &[0.3], &oracle, 1.0);
        assert_eq!(res.step, 0.0);
        assert_eq!(res.point, vec![0.3]);
    }

    #[test]
    fn one_dimensional_hinge_analytic_minimum() {
        // F(w) = 0.5 w^2 + max(0, 1 - w); from 0 toward 2 the minimum is w = 1.
        let phi: ndarray::Array2<f64> = array![[1.0]];
        let oracle = BinaryHingeRisk::new(phi.view(), vec![1.0]);
        let res = exact_line_search(&[0.0], &[2.0], &oracle, 1.0);
        assert!((res.step - 0.5).abs() < 1e-12, "k = {}", res.step);
        assert!((res.point[0] - 1.0).abs() < 1e-12);
        assert!((res.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_hinge_instances_beat_dense_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..30);
            let d = rng.gen_range(1..5);
            let mut phi = ndarray::Array2::<f64>::zeros((n, d));
            for v in phi.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let targets: Vec<f64> =
                (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let oracle = BinaryHingeRisk::new(phi.view(), targets);
            let c: f64 = rng.gen_range(0.1..5.0);
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w_to: Vec<f64> = u.iter().zip(v.iter()).map(|(&a, &b)| a + b).collect();
            let res = exact_line_search(&u, &w_to, &oracle, c);

            let ray = oracle.ray_risk(&u, &v);
            let uu = norm_sq(&u);
            let uv = dot(&u, &v);
            let vv = norm_sq(&v);
            let g =
                |k: f64| 0.5 * (uu + 2.0 * k * uv + k * k * vv) + c * ray(k);
            for s in 0..1000 {
                let k = 5.0 * s as f64 / 999.0;
                assert!(
                    res.value <= g(k) + 1e-9,
                    "sampled k={k} gives {} < {}",
                    g(k),
                    res.value
                );
            }
        }
    }
}
