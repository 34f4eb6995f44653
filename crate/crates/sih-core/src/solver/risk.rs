//! Convex risk functions plugged into the cutting-plane solver.

use ndarray::{Array2, ArrayView1, ArrayView2, ShapeBuilder};

use crate::real::Real;

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm_sq<F: Real>(a: &[F]) -> F {
    dot(a, a)
}

/// A non-negative convex risk with subgradients, solved as
/// `min_w 0.5 ||w||^2 + C R(w)`.
pub trait RiskOracle<F: Real>: Sync {
    /// Weight-space dimension.
    fn dim(&self) -> usize;

    /// Risk value and one subgradient at `w`.
    fn eval(&self, w: &[F]) -> (F, Vec<F>);

    /// Precomputed upper bound `G` on the subgradient norm.
    fn subgradient_bound(&self) -> F;

    /// Exact minimizer of `g(k) = 0.5||u + k v||^2 + c R(u + k v)` over
    /// `k >= 0` when the risk structure admits a closed form.
    fn exact_ray_minimizer(&self, _u: &[F], _v: &[F], _c: F) -> Option<F> {
        None
    }

    /// Cheap evaluator for `R(u + k v)` along a fixed ray; the returned
    /// closure costs O(n) or O(nK) per call instead of a full evaluation.
    fn ray_risk(&self, u: &[F], v: &[F]) -> Box<dyn Fn(F) -> F + '_>;
}

/// Hinge risk `R(w) = sum_i max(0, 1 - y_i w . phi_i)`.
///
/// Points with margin exactly 1 are excluded from the active set, so the
/// returned subgradient is deterministic.
pub struct BinaryHingeRisk<'a, F: Real> {
    phi: ArrayView2<'a, F>,
    targets: Vec<F>,
    bound: F,
}

impl<'a, F: Real> BinaryHingeRisk<'a, F> {
    pub fn new(phi: ArrayView2<'a, F>, targets: Vec<F>) -> Self {
        assert_eq!(phi.nrows(), targets.len(), "one target per embedded row");
        assert!(
            targets.iter().all(|&t| t == F::one() || t == -F::one()),
            "targets must be +-1"
        );
        let bound = phi
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v * v).sum::<F>().sqrt())
            .sum();
        BinaryHingeRisk { phi, targets, bound }
    }

    fn margins(&self, w: &[F]) -> Vec<F> {
        self.phi
            .rows()
            .into_iter()
            .zip(self.targets.iter())
            .map(|(row, &y)| y * row_dot(row, w))
            .collect()
    }
}

fn row_dot<F: Real>(row: ArrayView1<'_, F>, w: &[F]) -> F {
    row.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum()
}

impl<'a, F: Real> RiskOracle<F> for BinaryHingeRisk<'a, F> {
    fn dim(&self) -> usize {
        self.phi.ncols()
    }

    fn eval(&self, w: &[F]) -> (F, Vec<F>) {
        let mut risk = F::zero();
        let mut grad = vec![F::zero(); self.dim()];
        for (row, &y) in self.phi.rows().into_iter().zip(self.targets.iter()) {
            let margin = y * row_dot(row, w);
            if margin < F::one() {
                risk += F::one() - margin;
                for (g, &p) in grad.iter_mut().zip(row.iter()) {
                    *g -= y * p;
                }
            }
        }
        (risk, grad)
    }

    fn subgradient_bound(&self) -> F {
        self.bound
    }

    fn exact_ray_minimizer(&self, u: &[F], v: &[F], c: F) -> Option<F> {
        let vv = norm_sq(v);
        if !(vv > F::zero()) {
            return Some(F::zero());
        }
        let uv = dot(u, v);
        let start = self.margins(u);
        let dir = self.margins(v);
        // g'(k) = u.v + k v.v - C sum_{active(k)} d_i with the active set
        // changing at breakpoints k_i = (1 - c_i) / d_i.
        let mut base = uv;
        let mut events: Vec<(F, F)> = Vec::new();
        for (&ci, &di) in start.iter().zip(dir.iter()) {
            let active_now = ci < F::one() || (ci == F::one() && di < F::zero());
            if active_now {
                base -= c * di;
            }
            if di != F::zero() {
                let k = (F::one() - ci) / di;
                if k > F::zero() && k.is_finite() {
                    events.push((k, c * di.abs()));
                }
            }
        }
        if base >= F::zero() {
            return Some(F::zero());
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite breakpoints"));
        for (k, jump) in events {
            let kz = -base / vv;
            if kz <= k {
                return Some(kz);
            }
            base += jump;
            if base + k * vv >= F::zero() {
                return Some(k);
            }
        }
        Some(-base / vv)
    }

    fn ray_risk(&self, u: &[F], v: &[F]) -> Box<dyn Fn(F) -> F + '_> {
        let start = self.margins(u);
        let dir = self.margins(v);
        Box::new(move |k| {
            start
                .iter()
                .zip(dir.iter())
                .map(|(&ci, &di)| (F::one() - (ci + k * di)).max(F::zero()))
                .sum()
        })
    }
}

/// Crammer-Singer multi-class risk over code vectors:
/// `R(W) = sum_i max_k (1[y_i != k] + (w_k - w_{y_i}) . b_i)`.
///
/// Weights are flattened class-major: class `k` occupies
/// `w[k*dim_per_class .. (k+1)*dim_per_class]`.
pub struct MulticlassHingeRisk<'a, F: Real> {
    codes: ArrayView2<'a, F>,
    labels: &'a [usize],
    num_classes: usize,
    bound: F,
}

impl<'a, F: Real> MulticlassHingeRisk<'a, F> {
    pub fn new(codes: ArrayView2<'a, F>, labels: &'a [usize], num_classes: usize) -> Self {
        assert_eq!(codes.nrows(), labels.len(), "one label per code row");
        assert!(labels.iter().all(|&y| y < num_classes), "label out of range");
        let bound = codes
            .rows()
            .into_iter()
            .map(|r| F::two() * r.iter().map(|&v| v * v).sum::<F>().sqrt())
            .sum();
        MulticlassHingeRisk { codes, labels, num_classes, bound }
    }

    pub fn dim_per_class(&self) -> usize {
        self.codes.ncols()
    }

    fn as_matrix(&self, w: &[F]) -> Array2<F> {
        Array2::from_shape_vec(
            (self.dim_per_class(), self.num_classes).f(),
            w.to_vec(),
        )
        .expect("flattened weight length matches")
    }

    /// Per-point class scores relative to the true class, with the margin
    /// indicator already added: entry (i, k) is `1[y_i != k] + s_ik - s_iy`.
    fn relative_scores(&self, w: &[F]) -> Array2<F> {
        let scores = self.codes.dot(&self.as_matrix(w));
        let mut rel = scores;
        for (i, mut row) in rel.rows_mut().into_iter().enumerate() {
            let y = self.labels[i];
            let base = row[y];
            for (k, v) in row.iter_mut().enumerate() {
                let indicator = if k == y { F::zero() } else { F::one() };
                *v = indicator + *v - base;
            }
        }
        rel
    }
}

fn argmax_first<F: Real>(row: ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

impl<'a, F: Real> RiskOracle<F> for MulticlassHingeRisk<'a, F> {
    fn dim(&self) -> usize {
        self.dim_per_class() * self.num_classes
    }

    fn eval(&self, w: &[F]) -> (F, Vec<F>) {
        let rel = self.relative_scores(w);
        let mut risk = F::zero();
        let mut grad = vec![F::zero(); self.dim()];
        let d = self.dim_per_class();
        for (i, row) in rel.rows().into_iter().enumerate() {
            let winner = argmax_first(row);
            risk += row[winner];
            let y = self.labels[i];
            if winner != y {
                let code = self.codes.row(i);
                for (u, &b) in code.iter().enumerate() {
                    grad[winner * d + u] += b;
                    grad[y * d + u] -= b;
                }
            }
        }
        (risk, grad)
    }

    fn subgradient_bound(&self) -> F {
        self.bound
    }

    fn ray_risk(&self, u: &[F], v: &[F]) -> Box<dyn Fn(F) -> F + '_> {
        let p = self.relative_scores(u);
        // Directional part: (v_k - v_{y_i}) . b_i without the indicator.
        let scores = self.codes.dot(&self.as_matrix(v));
        let mut q = scores;
        for (i, mut row) in q.rows_mut().into_iter().enumerate() {
            let base = row[self.labels[i]];
            for val in row.iter_mut() {
                *val -= base;
            }
        }
        Box::new(move |k| {
            p.rows()
                .into_iter()
                .zip(q.rows())
                .map(|(pr, qr)| {
                    let mut best = pr[0] + k * qr[0];
                    for (pa, qa) in pr.iter().zip(qr.iter()).skip(1) {
                        let val = *pa + k * *qa;
                        if val > best {
                            best = val;
                        }
                    }
                    best
                })
                .sum()
        })
    }
}
