//! Cutting-plane solver for `min_w F(w) = 0.5||w||^2 + C R(w)` with
//! best-so-far line search and warm starts.

pub mod line_search;
pub mod planes;
pub mod risk;

pub use line_search::{exact_line_search, LineSearchResult};
pub use planes::{reduced_minimizer, CuttingPlaneSet, Plane};
pub use risk::{BinaryHingeRisk, MulticlassHingeRisk, RiskOracle};

use crate::error::{Error, Result};
use crate::real::Real;
use risk::{dot, norm_sq};

/// Stopping tolerance for the solver gap `F(w_best) - F_t(w_current)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance<F: Real> {
    Absolute(F),
    /// Effective epsilon is `factor * max(1, F(w0))`; scale-robust default.
    RelativeToStart(F),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<F: Real> {
    pub c: F,
    pub epsilon: Tolerance<F>,
    pub max_planes: usize,
    pub max_iterations: usize,
}

impl<F: Real> SolverConfig<F> {
    pub fn new(c: F) -> Self {
        SolverConfig {
            c,
            epsilon: Tolerance::RelativeToStart(F::of(1e-3)),
            max_planes: 500,
            max_iterations: 5000,
        }
    }

    pub fn with_epsilon(mut self, epsilon: F) -> Self {
        self.epsilon = Tolerance::Absolute(epsilon);
        self
    }
}

/// One recorded iteration: the incumbent objective and the model gap at the
/// moment the stopping rule was checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint<F: Real> {
    pub iteration: usize,
    pub f_best: F,
    pub gap: F,
}

/// Solve outcome: best-so-far statistics plus the full gap trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<F: Real> {
    pub iterations: usize,
    pub converged: bool,
    pub f_best: F,
    pub gap: F,
    /// Effective stopping tolerance used by this solve.
    pub epsilon: F,
    pub trace: Vec<TracePoint<F>>,
}

impl<F: Real> SolverState<F> {
    /// Diagnostic CSV: `iteration,f_best,gap` per line.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,f_best,gap\n");
        for p in &self.trace {
            out.push_str(&format!("{},{},{}\n", p.iteration, p.f_best, p.gap));
        }
        out
    }
}

/// Runs the cutting-plane loop from `w0` (the zero vector for a cold start;
/// the previous solution for a warm start).
///
/// Each iteration minimizes the current lower model, checks the gap against
/// the tolerance, line-searches from the incumbent toward the model
/// minimizer, and cuts a new plane at the model minimizer. Hitting
/// `max_iterations` returns the incumbent with `converged = false` rather
/// than failing.
pub fn cp_solve<F: Real, O: RiskOracle<F> + ?Sized>(
    oracle: &O,
    w0: &[F],
    config: &SolverConfig<F>,
) -> (Vec<F>, SolverState<F>) {
    assert_eq!(w0.len(), oracle.dim(), "w0 must match the oracle dimension");
    let c = config.c;

    let (risk0, grad0) = oracle.eval(w0);
    let f0 = F::half() * norm_sq(w0) + c * risk0;
    let epsilon = match config.epsilon {
        Tolerance::Absolute(e) => e,
        Tolerance::RelativeToStart(rel) => rel * f0.abs().max(F::one()),
    };

    let mut planes = CuttingPlaneSet::new(config.max_planes);
    let offset = risk0 - dot(&grad0, w0);
    planes.add(grad0, offset);

    let mut w_best = w0.to_vec();
    let mut f_best = f0;

    // Warm starts also get the zero-point cut: it is nearly free and gives
    // the initial model the same anchor a cold start has, so a warm solve
    // never needs more model-building than a cold one.
    if w0.iter().any(|&v| v != F::zero()) {
        let zero = vec![F::zero(); w0.len()];
        let (risk_zero, grad_zero) = oracle.eval(&zero);
        planes.add(grad_zero, risk_zero);
        let f_zero = c * risk_zero;
        if f_zero < f_best {
            f_best = f_zero;
            w_best = zero;
        }
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut gap = F::infinity();

    for iteration in 1..=config.max_iterations {
        let (w_cur, model_value) = planes.minimize(c);
        gap = f_best - model_value;
        trace.push(TracePoint { iteration, f_best, gap });
        if gap <= epsilon {
            converged = true;
            break;
        }

        let ls = exact_line_search(&w_best, &w_cur, oracle, c);
        if ls.value <= f_best {
            f_best = ls.value;
            w_best = ls.point;
        }

        let (risk_cur, grad_cur) = oracle.eval(&w_cur);
        let f_cur = F::half() * norm_sq(&w_cur) + c * risk_cur;
        if f_cur < f_best {
            f_best = f_cur;
            w_best = w_cur.clone();
        }
        let b = risk_cur - dot(&grad_cur, &w_cur);
        planes.add(grad_cur, b);
    }

    let iterations = trace.len();
    let state = SolverState { iterations, converged, f_best, gap, epsilon, trace };
    (w_best, state)
}

/// Worst-case iteration count for the cutting-plane method started at an
/// objective value of `f0`: `max(1, log2(f0 / (4 C^2 G^2)) + 8 C^2 G^2 / eps - 2)`.
pub fn iteration_bound<F: Real>(f0: F, c: F, g: F, epsilon: F) -> Result<F> {
    if !(f0 > F::zero() && c > F::zero() && g > F::zero() && epsilon > F::zero()) {
        return Err(Error::Config(
            "iteration bound needs strictly positive f0, C, G and epsilon".into(),
        ));
    }
    let cg = F::of(4.0) * c * c * g * g;
    let bound = (f0 / cg).log2() + F::two() * cg / epsilon - F::two();
    Ok(bound.max(F::one()))
}
