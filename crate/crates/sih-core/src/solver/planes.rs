//! Piecewise-linear lower model of the risk and its regularized minimizer.

use crate::real::Real;
use crate::solver::risk::{dot, norm_sq};

#[derive(Debug, Clone)]
pub struct Plane<F: Real> {
    /// Slope of the lower bound `R(w) >= a . w + b`.
    pub a: Vec<F>,
    /// Offset, chosen so the plane is tight at its cut point.
    pub b: F,
    last_active: u64,
}

/// Set of cutting planes with bounded capacity.
///
/// When full, the least-recently-active plane is evicted; the most recently
/// added plane is never removed. Dual weights are cached between solves so a
/// refreshed model re-converges in a few pairwise steps.
#[derive(Debug, Clone)]
pub struct CuttingPlaneSet<F: Real> {
    planes: Vec<Plane<F>>,
    gram: Vec<Vec<F>>,
    alpha: Vec<F>,
    capacity: usize,
    clock: u64,
}

impl<F: Real> CuttingPlaneSet<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "plane capacity must be at least 2");
        CuttingPlaneSet {
            planes: Vec::new(),
            gram: Vec::new(),
            alpha: Vec::new(),
            capacity,
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[Plane<F>] {
        &self.planes
    }

    /// Adds the plane `R(w) >= a . w + b`, evicting first if at capacity.
    pub fn add(&mut self, a: Vec<F>, b: F) {
        if self.planes.len() == self.capacity {
            self.evict();
        }
        let mut row: Vec<F> = self.planes.iter().map(|p| dot(&p.a, &a)).collect();
        row.push(norm_sq(&a));
        for (existing, &g) in self.gram.iter_mut().zip(row.iter()) {
            existing.push(g);
        }
        self.gram.push(row);
        self.planes.push(Plane { a, b, last_active: self.clock });
        self.alpha.push(F::zero());
    }

    fn evict(&mut self) {
        // Never remove the most recent plane (the last one).
        let candidates = self.planes.len() - 1;
        let victim = (0..candidates)
            .min_by_key(|&i| (self.planes[i].last_active, i))
            .expect("capacity >= 2 leaves at least one candidate");
        self.planes.remove(victim);
        self.alpha.remove(victim);
        self.gram.remove(victim);
        for row in &mut self.gram {
            row.remove(victim);
        }
    }

    /// Model value `F_t(w) = 0.5||w||^2 + C max(0, max_t(a_t . w + b_t))`.
    pub fn value_at(&self, w: &[F], c: F) -> F {
        let mut max_plane = F::zero();
        for p in &self.planes {
            let v = dot(&p.a, w) + p.b;
            if v > max_plane {
                max_plane = v;
            }
        }
        F::half() * norm_sq(w) + c * max_plane
    }

    /// Minimizes the model via pairwise coordinate ascent on the dual
    /// (variables `alpha_t >= 0`, `sum alpha_t <= C`, `w = -sum alpha_t a_t`).
    ///
    /// Returns the minimizer and its model value; the duality gap at return
    /// is far below the `1e-8 * max(1, |F_t|)` contract.
    pub fn minimize(&mut self, c: F) -> (Vec<F>, F) {
        assert!(!self.planes.is_empty(), "need at least one plane");
        self.clock += 1;
        let t = self.planes.len();
        let dummy = t;

        // g_t = b_t - sum_u alpha_u H_tu; the implicit slack variable (a=0,
        // b=0) absorbs C - sum alpha and always has gradient zero.
        let mut g: Vec<F> = (0..t)
            .map(|s| {
                let mut acc = self.planes[s].b;
                for u in 0..t {
                    acc -= self.alpha[u] * self.gram[s][u];
                }
                acc
            })
            .collect();
        let mut sum_alpha: F = self.alpha.iter().copied().sum();

        let gap_tol = F::of(1e-12);
        let max_steps = 1000 * t.max(64);
        for _ in 0..max_steps {
            // Duality gap: primal - dual = ||S||^2 + C max(0, max g) - sum alpha b.
            let mut ss = F::zero();
            let mut alpha_b = F::zero();
            let mut max_g = F::zero();
            for s in 0..t {
                ss += self.alpha[s] * (self.planes[s].b - g[s]);
                alpha_b += self.alpha[s] * self.planes[s].b;
                if g[s] > max_g {
                    max_g = g[s];
                }
            }
            let primal = F::half() * ss + c * max_g;
            let gap = ss + c * max_g - alpha_b;
            if gap <= gap_tol * primal.abs().max(F::one()) {
                break;
            }

            // Transfer mass from the worst loaded variable to the best one.
            let slack = c - sum_alpha;
            let mut up = dummy;
            let mut g_up = F::zero();
            for s in 0..t {
                if g[s] > g_up {
                    g_up = g[s];
                    up = s;
                }
            }
            let mut down = if slack > F::zero() { dummy } else { usize::MAX };
            let mut g_down = if slack > F::zero() { F::zero() } else { F::infinity() };
            for s in 0..t {
                if self.alpha[s] > F::zero() && g[s] < g_down {
                    g_down = g[s];
                    down = s;
                }
            }
            if down == usize::MAX || up == down || !(g_up - g_down > F::zero()) {
                break;
            }

            let h = |x: usize, y: usize| -> F {
                if x == dummy || y == dummy {
                    F::zero()
                } else {
                    self.gram[x][y]
                }
            };
            let curvature = h(up, up) - F::two() * h(up, down) + h(down, down);
            let available = if down == dummy { slack } else { self.alpha[down] };
            let mut step = if curvature > F::zero() {
                ((g_up - g_down) / curvature).min(available)
            } else {
                available
            };
            if !(step > F::zero()) {
                break;
            }
            if step > available {
                step = available;
            }

            if up != dummy {
                self.alpha[up] += step;
                sum_alpha += step;
            }
            if down != dummy {
                let old = self.alpha[down];
                let new = (old - step).max(F::zero());
                self.alpha[down] = new;
                sum_alpha += new - old;
            }
            for (s, gs) in g.iter_mut().enumerate() {
                *gs -= step * (h(s, up) - h(s, down));
            }
        }

        for (plane, &al) in self.planes.iter_mut().zip(self.alpha.iter()) {
            if al > F::zero() {
                plane.last_active = self.clock;
            }
        }

        let dim = self.planes[0].a.len();
        let mut w = vec![F::zero(); dim];
        for (plane, &al) in self.planes.iter().zip(self.alpha.iter()) {
            if al != F::zero() {
                for (wi, &ai) in w.iter_mut().zip(plane.a.iter()) {
                    *wi -= al * ai;
                }
            }
        }
        let value = self.value_at(&w, c);
        (w, value)
    }
}

/// Spec-level entry point: argmin of the current piecewise-linear model.
pub fn reduced_minimizer<F: Real>(planes: &mut CuttingPlaneSet<F>, c: F) -> Vec<F> {
    planes.minimize(c).0
}
