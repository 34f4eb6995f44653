//! Alternating training: parallel warm-started bit SVMs, a multi-class SVM
//! over the codes, and discrete code updates, until the code matrix settles.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codes::{dcc_optimize, BitLossInputs, CodeMatrix};
use crate::dataset::{
    apply_preprocessor, fit_preprocessor, ClassTable, Dataset, PreprocessStats,
};
use crate::error::{Error, Result};
use crate::kernel::{embed, embed_all, estimate_sigma, sample_anchors, AnchorSet};
use crate::real::Real;
use crate::solver::{
    cp_solve, BinaryHingeRisk, MulticlassHingeRisk, RiskOracle, SolverConfig, Tolerance,
};

/// Training hyperparameters. [`TrainConfig::new`] fills in the defaults used
/// throughout: `Cx = 16`, `Cb = 1e-3`, `lambda = bits * 1e8`, `gamma = 1e5`,
/// five outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F: Real> {
    pub bits: usize,
    pub anchors: usize,
    pub cx: F,
    pub cb: F,
    pub lambda: F,
    pub gamma: F,
    pub max_iter: usize,
    pub sigma: Option<F>,
    /// Absolute solver tolerance; `None` selects a per-solve relative
    /// tolerance of `1e-3 * max(1, F(w0))`.
    pub epsilon: Option<F>,
    pub seed: u64,
    /// Worker threads for parallel sections; 0 uses the runtime default.
    pub threads: usize,
    pub max_sweeps: usize,
    pub max_planes: usize,
    pub solver_max_iterations: usize,
}

impl<F: Real> TrainConfig<F> {
    pub fn new(bits: usize, anchors: usize) -> Self {
        TrainConfig {
            bits,
            anchors,
            cx: F::of(16.0),
            cb: F::of(1e-3),
            lambda: F::of(bits as f64 * 1e8),
            gamma: F::of(1e5),
            max_iter: 5,
            sigma: None,
            epsilon: None,
            seed: 0,
            threads: 0,
            max_sweeps: 5,
            max_planes: 500,
            solver_max_iterations: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.anchors == 0 || self.max_iter == 0 || self.max_sweeps == 0 {
            return Err(Error::Config("bits, anchors, max_iter and max_sweeps must be >= 1".into()));
        }
        if !(self.cx > F::zero() && self.cb > F::zero()) {
            return Err(Error::Config("Cx and Cb must be positive".into()));
        }
        if self.lambda < F::zero() || self.gamma < F::zero() {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > F::zero()) {
                return Err(Error::Config("epsilon must be positive".into()));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > F::zero()) {
                return Err(Error::Config("sigma must be positive".into()));
            }
        }
        Ok(())
    }

    fn binary_solver(&self, n: usize) -> SolverConfig<F> {
        SolverConfig {
            c: self.cx,
            epsilon: self.tolerance(self.cx, n),
            max_planes: self.max_planes,
            max_iterations: self.solver_max_iterations,
        }
    }

    fn multiclass_solver(&self, n: usize) -> SolverConfig<F> {
        SolverConfig {
            c: self.cb,
            epsilon: self.tolerance(self.cb, n),
            max_planes: self.max_planes,
            max_iterations: self.solver_max_iterations,
        }
    }

    /// Default tolerance resolves against the cold-start scale `n C` (the
    /// hinge objective at zero weights) so warm-started solves stop at the
    /// same accuracy as cold ones instead of a tighter one.
    fn tolerance(&self, c: F, n: usize) -> Tolerance<F> {
        match self.epsilon {
            Some(e) => Tolerance::Absolute(e),
            None => Tolerance::Absolute(F::of(1e-3) * (c * F::of(n as f64)).max(F::one())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After the bit SVMs and the multi-class SVM of an outer iteration.
    Svm,
    /// After the discrete code update of an outer iteration.
    Dcc,
}

/// One history entry per phase boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord<F: Real> {
    pub iteration: usize,
    pub phase: Phase,
    pub objective: F,
    /// Columns changed by the phase (retrained bits for `Svm`, flipped
    /// columns for `Dcc`).
    pub changed_columns: usize,
    pub bit_solves: usize,
    pub multiclass_solved: bool,
    pub seconds: f64,
}

/// A trained hashing model: everything needed to map a raw feature vector to
/// its code, plus the training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel<F: Real> {
    pub preprocess: PreprocessStats<F>,
    pub anchors: AnchorSet<F>,
    /// Per-bit SVM weights, (r+1) x m.
    pub wx: Array2<F>,
    /// Multi-class weights over codes, (m+1) x K.
    pub wb: Array2<F>,
    pub classes: ClassTable,
    pub config: TrainConfig<F>,
    pub history: Vec<PhaseRecord<F>>,
    pub converged: bool,
}

impl<F: Real> HashModel<F> {
    pub fn bits(&self) -> usize {
        self.wx.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.wb.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.anchors.dim()
    }
}

/// Draws `k` codewords of length `m`, all distinct when possible (up to 100
/// attempts, then the collision is kept and logged). With `balanced` set,
/// every column holds exactly `ceil(k/2)` entries of +1.
pub(crate) fn sample_codewords(
    k: usize,
    m: usize,
    balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Array2<i8> {
    let mut last = Array2::from_elem((k, m), 1i8);
    for _attempt in 0..100 {
        let mut cw = Array2::from_elem((k, m), 1i8);
        if balanced {
            let positives = k.div_ceil(2);
            for j in 0..m {
                let mut col: Vec<i8> =
                    (0..k).map(|i| if i < positives { 1 } else { -1 }).collect();
                col.shuffle(rng);
                for i in 0..k {
                    cw[[i, j]] = col[i];
                }
            }
        } else {
            for v in cw.iter_mut() {
                *v = if rng.gen::<bool>() { 1 } else { -1 };
            }
        }
        let mut rows: Vec<Vec<i8>> = (0..k).map(|i| cw.row(i).to_vec()).collect();
        rows.sort_unstable();
        rows.dedup();
        if rows.len() == k {
            return cw;
        }
        last = cw;
    }
    log::warn!("codeword collision not resolved after 100 attempts (k={k}, m={m})");
    last
}

/// Initial codes: one codeword per class replicated across its rows.
/// `gamma > 0` selects the column-balanced sampling scheme.
pub fn init_codes<F: Real>(labels: &[usize], m: usize, gamma: F, seed: u64) -> CodeMatrix {
    let k = labels.iter().copied().max().map_or(1, |v| v + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codewords = sample_codewords(k, m, gamma > F::zero(), &mut rng);
    CodeMatrix::from_class_codewords(&codewords, labels)
}

pub(crate) fn flatten_wb<F: Real>(wb: ArrayView2<'_, F>) -> Vec<F> {
    let mut out = Vec::with_capacity(wb.nrows() * wb.ncols());
    for k in 0..wb.ncols() {
        for u in 0..wb.nrows() {
            out.push(wb[[u, k]]);
        }
    }
    out
}

pub(crate) fn unflatten_wb<F: Real>(flat: &[F], rows: usize, cols: usize) -> Array2<F> {
    let mut out = Array2::zeros((rows, cols));
    for k in 0..cols {
        for u in 0..rows {
            out[[u, k]] = flat[k * rows + u];
        }
    }
    out
}

fn frobenius_sq<F: Real>(w: ArrayView2<'_, F>) -> F {
    w.iter().map(|&v| v * v).sum()
}

/// Joint objective with the slack variables at their optimal hinge values:
/// the multi-class block scaled by `lambda`, one regularized hinge risk per
/// bit, and the imbalance penalty.
#[allow(clippy::too_many_arguments)]
pub fn total_objective<F: Real>(
    codes: &CodeMatrix,
    wx: ArrayView2<'_, F>,
    wb: ArrayView2<'_, F>,
    phi: ArrayView2<'_, F>,
    labels: &[usize],
    lambda: F,
    cx: F,
    cb: F,
    gamma: F,
) -> F {
    let codes_real = codes.to_real::<F>(true);
    let mc = MulticlassHingeRisk::new(codes_real.view(), labels, wb.ncols());
    let (mc_risk, _) = mc.eval(&flatten_wb(wb));
    let mut total = lambda * (F::half() * frobenius_sq(wb) + cb * mc_risk);
    for j in 0..codes.m() {
        let targets: Vec<F> = (0..codes.n()).map(|i| F::of(codes.get(i, j) as f64)).collect();
        let oracle = BinaryHingeRisk::new(phi, targets);
        let wj: Vec<F> = wx.column(j).to_vec();
        let (risk, _) = oracle.eval(&wj);
        let reg: F = wj.iter().map(|&v| v * v).sum();
        total = total + F::half() * reg + cx * risk;
    }
    for j in 0..codes.m() {
        total += gamma * F::of(codes.column_sum(j).abs() as f64);
    }
    total
}

/// Everything the training loop starts from; built by [`train`] for cold
/// starts and by the incremental path for warm starts.
pub(crate) struct LoopInit<F: Real> {
    pub preprocess: PreprocessStats<F>,
    pub anchors: AnchorSet<F>,
    pub phi: Array2<F>,
    pub codes: CodeMatrix,
    pub wx: Array2<F>,
    pub wb: Array2<F>,
    pub labels: Vec<usize>,
    pub classes: ClassTable,
    pub wb_cold: bool,
}

pub(crate) fn run_loop<F: Real>(
    init: LoopInit<F>,
    config: &TrainConfig<F>,
) -> Result<(HashModel<F>, CodeMatrix)> {
    let LoopInit { preprocess, anchors, phi, mut codes, mut wx, mut wb, labels, classes, wb_cold } =
        init;
    // The snapshot records the kernel width actually in effect, whether it
    // was supplied or estimated.
    let mut config = config.clone();
    config.sigma = anchors.sigma();
    let config = &config;
    let m = config.bits;
    let k = classes.len();
    let n = labels.len();
    assert_eq!(codes.m(), m);
    assert_eq!(codes.n(), n);
    assert_eq!(wx.ncols(), m);
    assert_eq!(wb.ncols(), k);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let binary_cfg = config.binary_solver(n);
    let mc_cfg = config.multiclass_solver(n);
    let mut dirty = vec![true; m];
    let mut mc_cold = wb_cold;
    let mut history: Vec<PhaseRecord<F>> = Vec::new();
    let mut converged = false;

    pool.install(|| {
        for iteration in 1..=config.max_iter {
            let start = Instant::now();

            // Bit SVMs in parallel; only columns touched by the last code
            // update are retrained, each warm-started from its previous
            // weights. Results merge in bit order.
            let solved: Vec<Option<Vec<F>>> = (0..m)
                .into_par_iter()
                .map(|j| {
                    if !dirty[j] {
                        return None;
                    }
                    let targets: Vec<F> =
                        (0..n).map(|i| F::of(codes.get(i, j) as f64)).collect();
                    let oracle = BinaryHingeRisk::new(phi.view(), targets);
                    let w0: Vec<F> = wx.column(j).to_vec();
                    let (w, _) = cp_solve(&oracle, &w0, &binary_cfg);
                    Some(w)
                })
                .collect();
            let mut bit_solves = 0;
            for (j, res) in solved.into_iter().enumerate() {
                if let Some(w) = res {
                    bit_solves += 1;
                    wx.column_mut(j).assign(&Array1::from(w));
                }
            }

            let any_dirty = dirty.iter().any(|&d| d);
            let multiclass_solved = any_dirty || mc_cold;
            if multiclass_solved {
                let codes_real = codes.to_real::<F>(true);
                let oracle = MulticlassHingeRisk::new(codes_real.view(), &labels, k);
                let w0 = if mc_cold {
                    vec![F::zero(); (m + 1) * k]
                } else {
                    flatten_wb(wb.view())
                };
                mc_cold = false;
                let (w, _) = cp_solve(&oracle, &w0, &mc_cfg);
                wb = unflatten_wb(&w, m + 1, k);
            }

            let svm_objective = total_objective(
                &codes,
                wx.view(),
                wb.view(),
                phi.view(),
                &labels,
                config.lambda,
                config.cx,
                config.cb,
                config.gamma,
            );
            let svm_seconds = start.elapsed().as_secs_f64();
            log::info!(
                "iter={iteration} phase=svm objective={svm_objective} retrained={bit_solves} seconds={svm_seconds:.3}"
            );
            history.push(PhaseRecord {
                iteration,
                phase: Phase::Svm,
                objective: svm_objective,
                changed_columns: bit_solves,
                bit_solves,
                multiclass_solved,
                seconds: svm_seconds,
            });

            let dcc_start = Instant::now();
            let phi_scores = phi.dot(&wx);
            let inputs = BitLossInputs {
                phi_scores: phi_scores.view(),
                wb: wb.view(),
                labels: &labels,
                lambda: config.lambda,
                cx: config.cx,
                cb: config.cb,
                gamma: config.gamma,
            };
            let outcome = dcc_optimize(&mut codes, &inputs, config.max_sweeps);
            dirty = outcome.changed_columns.clone();
            let changed = dirty.iter().filter(|&&c| c).count();

            let dcc_objective = total_objective(
                &codes,
                wx.view(),
                wb.view(),
                phi.view(),
                &labels,
                config.lambda,
                config.cx,
                config.cb,
                config.gamma,
            );
            let dcc_seconds = dcc_start.elapsed().as_secs_f64();
            log::info!(
                "iter={iteration} phase=dcc objective={dcc_objective} changed={changed} seconds={dcc_seconds:.3}"
            );
            history.push(PhaseRecord {
                iteration,
                phase: Phase::Dcc,
                objective: dcc_objective,
                changed_columns: changed,
                bit_solves: 0,
                multiclass_solved: false,
                seconds: dcc_seconds,
            });

            if !outcome.any_changed() {
                converged = true;
                break;
            }
        }
    });

    let model = HashModel {
        preprocess,
        anchors,
        wx,
        wb,
        classes,
        config: config.clone(),
        history,
        converged,
    };
    Ok((model, codes))
}

/// Full training from raw data: preprocess, sample anchors, embed once,
/// initialize codes, then alternate SVM training with code updates.
pub fn train<F: Real>(
    data: &Dataset<F>,
    config: &TrainConfig<F>,
) -> Result<(HashModel<F>, CodeMatrix)> {
    config.validate()?;
    if data.n() < 2 {
        return Err(Error::Degenerate("training needs at least 2 samples".into()));
    }
    let first = data.row(0);
    if (1..data.n()).all(|i| data.row(i) == first) {
        return Err(Error::Degenerate("all training rows are identical".into()));
    }
    if config.anchors > data.n() {
        return Err(Error::Config(format!(
            "anchor count {} exceeds training size {}",
            config.anchors,
            data.n()
        )));
    }

    let stats = fit_preprocessor(data);
    let mapped = apply_preprocessor(&stats, data.features())?;
    let pre_ds = Dataset::from_parts(mapped, data.labels().to_vec(), data.classes().clone())?;

    let mut anchors = sample_anchors(&pre_ds, config.anchors, config.seed)?;
    let sigma = match config.sigma {
        Some(s) => s,
        None => {
            let pairs = (pre_ds.n() * anchors.num_anchors()).min(20_000);
            estimate_sigma(&pre_ds, &anchors, pairs, config.seed.wrapping_add(1))?
        }
    };
    anchors.set_sigma(sigma)?;

    let phi = embed_all(pre_ds.features(), &anchors)?;
    let codes = init_codes(data.labels(), config.bits, config.gamma, config.seed.wrapping_add(2));
    let wx = Array2::zeros((anchors.embed_dim(), config.bits));
    let wb = Array2::zeros((config.bits + 1, data.num_classes()));

    run_loop(
        LoopInit {
            preprocess: stats,
            anchors,
            phi,
            codes,
            wx,
            wb,
            labels: data.labels().to_vec(),
            classes: data.classes().clone(),
            wb_cold: false,
        },
        config,
    )
}

/// Hashes one raw feature vector: preprocess, embed, then the sign of each
/// bit score. A score of exactly zero maps to +1.
pub fn encode<F: Real>(model: &HashModel<F>, x: ArrayView1<'_, F>) -> Result<Vec<i8>> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "input dimension {} vs model dimension {}",
            x.len(),
            model.input_dim()
        )));
    }
    let row = x.insert_axis(ndarray::Axis(0));
    let centered = apply_preprocessor(&model.preprocess, row)?;
    let phi = embed(centered.row(0), &model.anchors)?;
    let mut out = Vec::with_capacity(model.bits());
    for j in 0..model.bits() {
        let score: F = phi
            .iter()
            .zip(model.wx.column(j).iter())
            .map(|(&p, &w)| p * w)
            .sum();
        out.push(if score >= F::zero() { 1 } else { -1 });
    }
    Ok(out)
}

/// Hashes every row of a feature matrix.
pub fn encode_all<F: Real>(model: &HashModel<F>, features: ArrayView2<'_, F>) -> Result<CodeMatrix> {
    let rows: Vec<Vec<i8>> = features
        .rows()
        .into_iter()
        .map(|r| encode(model, r))
        .collect::<Result<_>>()?;
    let mut bits = Array2::from_elem((features.nrows(), model.bits()), 1i8);
    for (i, row) in rows.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            bits[[i, j]] = b;
        }
    }
    Ok(CodeMatrix::new(bits))
}
