//! Binary code matrix and discrete cyclic coordinate descent over columns.

use ndarray::{Array2, ArrayView2};

use crate::real::Real;

/// The n x m matrix of +-1 codes, with a revision counter per column.
///
/// A column revision bumps exactly when some entry of that column changes,
/// which is what the trainer's retrain-skip rule keys on.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    bits: Array2<i8>,
    revisions: Vec<u64>,
}

impl CodeMatrix {
    pub fn new(bits: Array2<i8>) -> Self {
        assert!(
            bits.iter().all(|&b| b == 1 || b == -1),
            "code entries must be +-1"
        );
        let m = bits.ncols();
        CodeMatrix { bits, revisions: vec![0; m] }
    }

    /// Replicates one codeword per class across the labeled rows.
    pub fn from_class_codewords(codewords: &Array2<i8>, labels: &[usize]) -> Self {
        let m = codewords.ncols();
        let mut bits = Array2::from_elem((labels.len(), m), 1i8);
        for (i, &y) in labels.iter().enumerate() {
            for j in 0..m {
                bits[[i, j]] = codewords[[y, j]];
            }
        }
        CodeMatrix::new(bits)
    }

    pub fn n(&self) -> usize {
        self.bits.nrows()
    }

    pub fn m(&self) -> usize {
        self.bits.ncols()
    }

    pub fn bits(&self) -> ArrayView2<'_, i8> {
        self.bits.view()
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.bits[[i, j]]
    }

    pub fn row(&self, i: usize) -> Vec<i8> {
        self.bits.row(i).to_vec()
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        self.bits.column(j).to_vec()
    }

    pub fn revision(&self, j: usize) -> u64 {
        self.revisions[j]
    }

    pub fn column_sum(&self, j: usize) -> i64 {
        self.bits.column(j).iter().map(|&b| b as i64).sum()
    }

    /// Overwrites column `j`; returns true (and bumps the revision) iff any
    /// entry actually changed.
    pub fn set_column(&mut self, j: usize, col: &[i8]) -> bool {
        assert_eq!(col.len(), self.n());
        assert!(col.iter().all(|&b| b == 1 || b == -1));
        let changed = self.bits.column(j).iter().zip(col.iter()).any(|(&a, &b)| a != b);
        if changed {
            for (i, &b) in col.iter().enumerate() {
                self.bits[[i, j]] = b;
            }
            self.revisions[j] += 1;
        }
        changed
    }

    /// Codes as real numbers, optionally with a trailing bias column of 1.
    pub fn to_real<F: Real>(&self, bias: bool) -> Array2<F> {
        let extra = usize::from(bias);
        let mut out = Array2::zeros((self.n(), self.m() + extra));
        for i in 0..self.n() {
            for j in 0..self.m() {
                out[[i, j]] = F::of(self.bits[[i, j]] as f64);
            }
            if bias {
                out[[i, self.m()]] = F::one();
            }
        }
        out
    }
}

/// Everything the per-bit loss needs, for all bits at once: fixed SVM
/// weights, precomputed binary-SVM scores and the scaling parameters.
#[derive(Debug, Clone, Copy)]
pub struct BitLossInputs<'a, F: Real> {
    /// Entry (i, j) is the bit-j SVM score of sample i.
    pub phi_scores: ArrayView2<'a, F>,
    /// Multi-class weights, (m+1) x K with the bias row last.
    pub wb: ArrayView2<'a, F>,
    pub labels: &'a [usize],
    pub lambda: F,
    pub cx: F,
    pub cb: F,
    pub gamma: F,
}

impl<'a, F: Real> BitLossInputs<'a, F> {
    pub fn num_classes(&self) -> usize {
        self.wb.ncols()
    }
}

/// Total hinge loss tied to sample `i` when its bit `j` is set to `z`:
/// the multi-class term (with the rest of the code frozen) plus the binary
/// hinge for bit `j`.
pub fn bit_flip_loss<F: Real>(
    z: i8,
    i: usize,
    j: usize,
    inputs: &BitLossInputs<'_, F>,
    codes: &CodeMatrix,
) -> F {
    assert!(z == 1 || z == -1, "bit value must be +-1");
    let m = codes.m();
    let y = inputs.labels[i];
    let zf = F::of(z as f64);
    let mut best = F::neg_infinity();
    for k in 0..inputs.num_classes() {
        let dwj = inputs.wb[[j, k]] - inputs.wb[[j, y]];
        let mut theta = F::zero();
        for u in 0..m {
            if u != j {
                theta += F::of(codes.get(i, u) as f64) * (inputs.wb[[u, k]] - inputs.wb[[u, y]]);
            }
        }
        theta += inputs.wb[[m, k]] - inputs.wb[[m, y]];
        let indicator = if k == y { F::zero() } else { F::one() };
        let val = indicator + zf * dwj + theta;
        if val > best {
            best = val;
        }
    }
    let score = inputs.phi_scores[[i, j]];
    let hinge = (F::one() - zf * score).max(F::zero());
    inputs.lambda * inputs.cb * best + inputs.cx * hinge
}

/// Per-point loss differences `delta_i = L(-1,i,j) - L(+1,i,j)` and the
/// ascending sort permutation (stable: equal deltas keep original order).
pub fn column_deltas<F: Real>(
    j: usize,
    inputs: &BitLossInputs<'_, F>,
    codes: &CodeMatrix,
) -> (Vec<F>, Vec<usize>) {
    let n = codes.n();
    let deltas: Vec<F> = (0..n)
        .map(|i| bit_flip_loss(-1, i, j, inputs, codes) - bit_flip_loss(1, i, j, inputs, codes))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        deltas[a]
            .partial_cmp(&deltas[b])
            .expect("finite losses")
            .then(a.cmp(&b))
    });
    (deltas, order)
}

/// Minimizing cut for one column: entries at sorted positions `0..cut` take
/// -1, the rest +1. Inputs are the per-point losses in ascending-delta
/// order. Ties prefer the cut closest to n/2, then the smaller cut.
pub fn optimal_cut<F: Real>(sorted_minus: &[F], sorted_plus: &[F], gamma: F) -> usize {
    let n = sorted_minus.len();
    assert_eq!(n, sorted_plus.len());
    let mut suffix_plus = vec![F::zero(); n + 1];
    for i in (0..n).rev() {
        suffix_plus[i] = suffix_plus[i + 1] + sorted_plus[i];
    }
    let mut prefix_minus = F::zero();
    let mut best_cut = 0usize;
    let mut best_obj = F::infinity();
    let mut best_balance = i64::MAX;
    for cut in 0..=n {
        if cut > 0 {
            prefix_minus += sorted_minus[cut - 1];
        }
        let balance = (2 * cut as i64 - n as i64).abs();
        let obj = gamma * F::of(balance as f64) + prefix_minus + suffix_plus[cut];
        if obj < best_obj || (obj == best_obj && balance < best_balance) {
            best_obj = obj;
            best_balance = balance;
            best_cut = cut;
        }
    }
    best_cut
}

/// Column objective `gamma |sum_i z_i| + sum_i L(z_i, i, j)` for a given
/// assignment, with the per-point losses already computed.
pub fn column_objective<F: Real>(col: &[i8], minus: &[F], plus: &[F], gamma: F) -> F {
    let sum: i64 = col.iter().map(|&b| b as i64).sum();
    let mut obj = F::zero();
    for (i, &b) in col.iter().enumerate() {
        obj += if b < 0 { minus[i] } else { plus[i] };
    }
    obj + gamma * F::of(sum.abs() as f64)
}

/// Outcome of a DCC pass: which columns changed and whether a full sweep
/// completed with no change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DccOutcome {
    pub changed_columns: Vec<bool>,
    pub sweeps: usize,
    pub converged: bool,
}

impl DccOutcome {
    pub fn any_changed(&self) -> bool {
        self.changed_columns.iter().any(|&c| c)
    }
}

/// Cyclic coordinate descent over columns: each column is set to the exact
/// minimizer of its fixed-weights objective given the rest of the code
/// matrix, repeated until a sweep changes nothing or `max_sweeps` is hit.
///
/// A column is only replaced when its objective strictly improves, so the
/// overall objective strictly decreases on every change and the loop cannot
/// cycle. Class scores are kept in an O(nK)-per-update cache.
pub fn dcc_optimize<F: Real>(
    codes: &mut CodeMatrix,
    inputs: &BitLossInputs<'_, F>,
    max_sweeps: usize,
) -> DccOutcome {
    let n = codes.n();
    let m = codes.m();
    let k_count = inputs.num_classes();
    assert_eq!(inputs.phi_scores.nrows(), n);
    assert_eq!(inputs.phi_scores.ncols(), m);
    assert_eq!(inputs.wb.nrows(), m + 1);
    assert_eq!(inputs.labels.len(), n);

    // scores[i][k] = b~_i . w_k, maintained incrementally across flips.
    let mut scores = vec![F::zero(); n * k_count];
    for i in 0..n {
        for k in 0..k_count {
            let mut acc = F::zero();
            for u in 0..m {
                acc += F::of(codes.get(i, u) as f64) * inputs.wb[[u, k]];
            }
            acc += inputs.wb[[m, k]];
            scores[i * k_count + k] = acc;
        }
    }

    let mut changed_columns = vec![false; m];
    let mut sweeps = 0;
    let mut converged = false;
    let mut minus = vec![F::zero(); n];
    let mut plus = vec![F::zero(); n];

    while sweeps < max_sweeps {
        sweeps += 1;
        let mut sweep_changed = false;
        for j in 0..m {
            for i in 0..n {
                let y = inputs.labels[i];
                let bij = F::of(codes.get(i, j) as f64);
                let base_y = scores[i * k_count + y];
                let mut best_minus = F::neg_infinity();
                let mut best_plus = F::neg_infinity();
                for k in 0..k_count {
                    let dwj = inputs.wb[[j, k]] - inputs.wb[[j, y]];
                    let theta = scores[i * k_count + k] - base_y - bij * dwj;
                    let indicator = if k == y { F::zero() } else { F::one() };
                    let base = indicator + theta;
                    let vm = base - dwj;
                    let vp = base + dwj;
                    if vm > best_minus {
                        best_minus = vm;
                    }
                    if vp > best_plus {
                        best_plus = vp;
                    }
                }
                let s = inputs.phi_scores[[i, j]];
                minus[i] = inputs.lambda * inputs.cb * best_minus
                    + inputs.cx * (F::one() + s).max(F::zero());
                plus[i] = inputs.lambda * inputs.cb * best_plus
                    + inputs.cx * (F::one() - s).max(F::zero());
            }

            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let da = minus[a] - plus[a];
                let db = minus[b] - plus[b];
                da.partial_cmp(&db).expect("finite losses").then(a.cmp(&b))
            });
            let sorted_minus: Vec<F> = order.iter().map(|&i| minus[i]).collect();
            let sorted_plus: Vec<F> = order.iter().map(|&i| plus[i]).collect();
            let cut = optimal_cut(&sorted_minus, &sorted_plus, inputs.gamma);

            let mut candidate = vec![1i8; n];
            for &i in order.iter().take(cut) {
                candidate[i] = -1;
            }
            let current = codes.column(j);
            let cand_obj = column_objective(&candidate, &minus, &plus, inputs.gamma);
            let curr_obj = column_objective(&current, &minus, &plus, inputs.gamma);
            if cand_obj < curr_obj {
                for i in 0..n {
                    if candidate[i] != current[i] {
                        let delta = F::of((candidate[i] - current[i]) as f64);
                        for k in 0..k_count {
                            scores[i * k_count + k] += delta * inputs.wb[[j, k]];
                        }
                    }
                }
                codes.set_column(j, &candidate);
                changed_columns[j] = true;
                sweep_changed = true;
            }
        }
        if !sweep_changed {
            converged = true;
            break;
        }
    }

    DccOutcome { changed_columns, sweeps, converged }
}
