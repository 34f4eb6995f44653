//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `--nocapture`).
//!
//! Run with: `cargo test -p sih-cli --test acceptance -- --nocapture`

use std::process::Command;
use std::sync::{LazyLock, Mutex};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sih_core::codes::{column_objective, optimal_cut, CodeMatrix};
use sih_core::dataset::{generate_blobs, load_dataset, save_dataset_binary, Dataset, DatasetFormat};
use sih_core::eval::{
    average_precision, evaluate, hamming_distance, pack_bits, CodeDatabase,
};
use sih_core::incremental::{apply_event, incremental_train, ModificationEvent, TrainState};
use sih_core::kernel::AnchorSet;
use sih_core::model_io::{load_codes, load_model, save_codes, save_train_state};
use sih_core::solver::{
    cp_solve, iteration_bound, BinaryHingeRisk, RiskOracle, SolverConfig, SolverState,
};
use sih_core::trainer::{encode_all, total_objective, train, HashModel, TrainConfig};
use sih_core::Dataset64;

fn pass(number: u32, name: &str) {
    println!("ACCEPTANCE {number} ({name}): PASS");
}

// Criteria run one at a time: several carry wall-clock budgets or compare
// timings, which contention on a small machine would distort.
static SUITE_LOCK: Mutex<()> = Mutex::new(());

fn exclusive() -> std::sync::MutexGuard<'static, ()> {
    SUITE_LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

// ---------------------------------------------------------------------------
// Criterion 1: cut-search optimality against exhaustive enumeration.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_cut_search_optimality() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let gammas = [0.0f64, 0.5, 50.0];
    for trial in 0..200 {
        let n = rng.gen_range(1..=12usize);
        let gamma = gammas[trial % 3];
        let minus: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let plus: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            (minus[a] - plus[a])
                .partial_cmp(&(minus[b] - plus[b]))
                .unwrap()
                .then(a.cmp(&b))
        });
        let sm: Vec<f64> = order.iter().map(|&i| minus[i]).collect();
        let sp: Vec<f64> = order.iter().map(|&i| plus[i]).collect();
        let cut = optimal_cut(&sm, &sp, gamma);
        let mut col = vec![1i8; n];
        for &i in order.iter().take(cut) {
            col[i] = -1;
        }
        let got = column_objective(&col, &minus, &plus, gamma);

        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let other: Vec<i8> =
                (0..n).map(|i| if mask & (1 << i) != 0 { -1 } else { 1 }).collect();
            let obj = column_objective(&other, &minus, &plus, gamma);
            if obj < best {
                best = obj;
            }
        }
        assert_eq!(got, best, "trial {trial}: n={n} gamma={gamma}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "cut search acceptance took {elapsed:.2} s");
    pass(1, "cut-search optimality");
}

// ---------------------------------------------------------------------------
// Criteria 2-4 share a batch of solved random SVM instances.
// ---------------------------------------------------------------------------

struct SolvedInstance {
    phi: Array2<f64>,
    targets: Vec<f64>,
    c: f64,
    epsilon: f64,
    f0: f64,
    g_bound: f64,
    f_best: f64,
    state: SolverState<f64>,
}

static SOLVED_BATCH: LazyLock<Vec<SolvedInstance>> = LazyLock::new(|| {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    (0..50)
        .map(|_| {
            let n = rng.gen_range(20..=40usize);
            let dim = rng.gen_range(2..=6usize);
            let mut phi = Array2::<f64>::zeros((n, dim));
            for v in phi.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let targets: Vec<f64> =
                (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let c = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
            let oracle = BinaryHingeRisk::new(phi.view(), targets.clone());
            let (r0, _) = oracle.eval(&vec![0.0; dim]);
            let f0 = c * r0;
            let epsilon = 1e-3 * f0.max(1.0);
            let g_bound = oracle.subgradient_bound();
            let config = SolverConfig::new(c).with_epsilon(epsilon);
            let (w, state) = cp_solve(&oracle, &vec![0.0; dim], &config);
            assert!(state.converged, "instance failed to converge");
            let (risk, _) = oracle.eval(&w);
            let f_best = 0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * risk;
            SolvedInstance { phi, targets, c, epsilon, f0, g_bound, f_best, state }
        })
        .collect()
});

/// Diminishing-step subgradient descent; returns the best objective seen.
fn subgradient_reference(phi: &Array2<f64>, targets: &[f64], c: f64, steps: usize) -> f64 {
    let dim = phi.ncols();
    let flat = phi.as_slice().expect("contiguous row-major matrix");
    let mut w = vec![0.0f64; dim];
    let mut best = f64::INFINITY;
    let mut grad = vec![0.0f64; dim];
    for t in 0..steps {
        let mut risk = 0.0;
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for (row, &y) in flat.chunks_exact(dim).zip(targets.iter()) {
            let mut score = 0.0;
            for (p, x) in row.iter().zip(w.iter()) {
                score += p * x;
            }
            let margin = y * score;
            if margin < 1.0 {
                risk += 1.0 - margin;
                for (g, &p) in grad.iter_mut().zip(row.iter()) {
                    *g -= y * p;
                }
            }
        }
        let f = 0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * risk;
        if f < best {
            best = f;
        }
        // F is 1-strongly convex, so the classic 1/(t+1) schedule applies.
        let eta = 1.0 / (t as f64 + 1.0);
        for (wi, &g) in w.iter_mut().zip(grad.iter()) {
            *wi -= eta * (*wi + c * g);
        }
    }
    best
}

#[test]
fn criterion_02_solver_matches_reference_minimizer() {
    let _serial = exclusive();
    let start = Instant::now();
    let batch = &*SOLVED_BATCH;
    let failures: Vec<String> = batch
        .par_iter()
        .enumerate()
        .filter_map(|(i, inst)| {
            let reference = subgradient_reference(&inst.phi, &inst.targets, inst.c, 1_000_000);
            if inst.f_best <= reference + inst.epsilon {
                None
            } else {
                Some(format!(
                    "instance {i}: solver {} vs reference {} (eps {})",
                    inst.f_best, reference, inst.epsilon
                ))
            }
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "solver acceptance took {elapsed:.2} s");
    pass(2, "solver optimality vs long-run reference");
}

#[test]
fn criterion_03_iteration_bound_never_violated() {
    let _serial = exclusive();
    for (i, inst) in SOLVED_BATCH.iter().enumerate() {
        let bound = iteration_bound(inst.f0, inst.c, inst.g_bound, inst.epsilon).unwrap();
        assert!(
            (inst.state.iterations as f64) <= bound,
            "instance {i}: {} iterations above bound {bound}",
            inst.state.iterations
        );
    }
    pass(3, "iteration bound");
}

#[test]
fn criterion_04_gap_contraction_on_traces() {
    let _serial = exclusive();
    for (i, inst) in SOLVED_BATCH.iter().enumerate() {
        let cg = 4.0 * inst.c * inst.c * inst.g_bound * inst.g_bound;
        for pair in inst.state.trace.windows(2) {
            let (e0, e1) = (pair[0].gap, pair[1].gap);
            let required = 0.5 * e0 * 1.0f64.min(e0 / cg);
            assert!(
                e0 - e1 >= required - 1e-9,
                "instance {i}: {e0} -> {e1}, required decrease {required}"
            );
        }
    }
    pass(4, "gap contraction");
}

// ---------------------------------------------------------------------------
// Criterion 5: warm starts help after appending data.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_warm_start_benefit() {
    let _serial = exclusive();
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC5 + seed);
        let n0 = 200;
        let extra = n0 / 10;
        let dim = 6;
        let sample = |rng: &mut ChaCha8Rng, n: usize| -> (Array2<f64>, Vec<f64>) {
            let mut phi = Array2::<f64>::zeros((n, dim));
            let mut targets = Vec::with_capacity(n);
            for i in 0..n {
                let y = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                for j in 0..dim {
                    // Overlapping classes keep the hinge active at the optimum.
                    phi[[i, j]] = 0.4 * y * (j as f64 * 0.3).cos() + rng.gen_range(-1.0..1.0);
                }
                targets.push(y);
            }
            (phi, targets)
        };
        let (base_phi, base_targets) = sample(&mut rng, n0);
        let (more_phi, more_targets) = sample(&mut rng, extra);

        let c = 1.0;
        let base_oracle = BinaryHingeRisk::new(base_phi.view(), base_targets.clone());
        let base_config = SolverConfig::new(c).with_epsilon(1e-2 * n0 as f64 * 1e-1);
        let (w_prev, _) = cp_solve(&base_oracle, &vec![0.0; dim], &base_config);

        let full_phi = ndarray::concatenate(Axis(0), &[base_phi.view(), more_phi.view()]).unwrap();
        let mut full_targets = base_targets;
        full_targets.extend(more_targets);
        let oracle = BinaryHingeRisk::new(full_phi.view(), full_targets);
        let (r0, _) = oracle.eval(&vec![0.0; dim]);
        let epsilon = 1e-3 * (c * r0).max(1.0);
        let config = SolverConfig::new(c).with_epsilon(epsilon);

        let (_, cold) = cp_solve(&oracle, &vec![0.0; dim], &config);
        let (_, warm) = cp_solve(&oracle, &w_prev, &config);
        assert!(cold.converged && warm.converged);
        assert!(
            warm.iterations <= cold.iterations + 2,
            "seed {seed}: warm {} vs cold {}",
            warm.iterations,
            cold.iterations
        );
        if warm.iterations <= cold.iterations {
            wins += 1;
        }
    }
    assert!(wins >= 18, "warm start helped in only {wins}/20 runs");
    pass(5, "warm-start benefit");
}

// ---------------------------------------------------------------------------
// Criterion 6: the imbalance penalty balances every bit.
// ---------------------------------------------------------------------------

fn balance_config(gamma: f64) -> TrainConfig<f64> {
    let mut config = TrainConfig::new(16, 48);
    config.gamma = gamma;
    config.max_iter = 4;
    config.seed = 6;
    config.threads = 1;
    config
}

#[test]
fn criterion_06_balance_invariant() {
    let _serial = exclusive();
    let data: Dataset64 = generate_blobs(6, 100, 2, 0.12, 60).unwrap();

    // gamma = 0 run: exercises the unpenalized path and calibrates the
    // hinge-loss scale.
    let free = balance_config(0.0);
    let (model0, codes0) = train(&data, &free).unwrap();
    let mapped = sih_core::dataset::apply_preprocessor(&model0.preprocess, data.features()).unwrap();
    let phi = sih_core::kernel::embed_all(mapped.view(), &model0.anchors).unwrap();
    let objective = total_objective(
        &codes0,
        model0.wx.view(),
        model0.wb.view(),
        phi.view(),
        data.labels(),
        model0.config.lambda,
        model0.config.cx,
        model0.config.cb,
        0.0,
    );
    let regularizers = 0.5 * model0.wb.iter().map(|v| v * v).sum::<f64>() * model0.config.lambda
        + 0.5 * model0.wx.iter().map(|v| v * v).sum::<f64>();
    let hinge_total = objective - regularizers;
    assert!(hinge_total > 0.0, "zero hinge loss makes the balance run vacuous");

    let heavy = balance_config(1e6 * hinge_total);
    let (_, codes) = train(&data, &heavy).unwrap();
    for j in 0..16 {
        assert_eq!(codes.column_sum(j), 0, "bit {j} imbalanced under heavy gamma");
    }
    pass(6, "balance invariant");
}

// ---------------------------------------------------------------------------
// Criterion 7: the alternation never increases the objective.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_objective_monotonicity() {
    let _serial = exclusive();
    let epsilon = 0.5;
    let results: Vec<(u64, Vec<f64>)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let data: Dataset64 = generate_blobs(4, 40, 2, 0.15, 70 + seed).unwrap();
            let mut config = TrainConfig::new(8, 24);
            config.cx = 4.0;
            config.cb = 1.0;
            config.lambda = 800.0;
            config.gamma = 10.0;
            config.max_iter = 4;
            config.epsilon = Some(epsilon);
            config.seed = seed;
            config.threads = 1;
            let (model, _) = train(&data, &config).unwrap();
            (seed, model.history.iter().map(|r| r.objective).collect())
        })
        .collect();
    for (seed, history) in &results {
        assert!(history.len() >= 2);
        let slack = (8.0 + 1.0) * epsilon;
        for pair in history.windows(2) {
            assert!(
                pair[1] <= pair[0] + slack,
                "seed {seed}: objective rose {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }
    pass(7, "objective monotonicity");
}

// ---------------------------------------------------------------------------
// Criterion 8: end-to-end retrieval beats chance by a wide margin.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_end_to_end_retrieval() {
    let _serial = exclusive();
    let start = Instant::now();
    let train_data: Dataset64 = generate_blobs(6, 100, 2, 0.12, 80).unwrap();
    let test_data: Dataset64 = generate_blobs(6, 50, 2, 0.12, 81).unwrap();
    let mut config = TrainConfig::new(16, 64);
    config.max_iter = 4;
    config.seed = 8;
    let (model, _) = train(&train_data, &config).unwrap();

    let codes = encode_all(&model, test_data.features()).unwrap();
    let db = CodeDatabase::new(&codes, test_data.labels());
    let report = evaluate(&db).unwrap();
    let map = report.map.expect("blob classes all have relevant items");

    // Random-code baseline on the same split.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let mut random_bits = Array2::from_elem((test_data.n(), 16), 1i8);
    for v in random_bits.iter_mut() {
        *v = if rng.gen::<bool>() { 1 } else { -1 };
    }
    let random_db = CodeDatabase::new(&CodeMatrix::new(random_bits), test_data.labels());
    let random_map = evaluate(&random_db).unwrap().map.unwrap();

    assert!(map > 0.5, "mAP {map} not above 3/K = 0.5");
    assert!(
        map > random_map + 0.3,
        "mAP {map} not clearly above random baseline {random_map}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "end-to-end acceptance took {elapsed:.2} s");
    pass(8, "end-to-end retrieval sanity");
}

// ---------------------------------------------------------------------------
// Criterion 9: incremental matches from-scratch per modification type.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum ModKind {
    AddClasses,
    DeleteClasses,
    AddImages,
}

/// Rows of the listed external classes, as their own dataset.
fn subset_by_class(data: &Dataset64, keep: &[i32]) -> Dataset64 {
    let rows: Vec<usize> = (0..data.n())
        .filter(|&i| keep.contains(&data.classes().external(data.labels()[i])))
        .collect();
    let features = data.features().select(Axis(0), &rows);
    let externals: Vec<i32> =
        rows.iter().map(|&i| data.classes().external(data.labels()[i])).collect();
    Dataset::new(features, &externals).unwrap()
}

struct TrialOutcome {
    map_incremental: f64,
    map_scratch: f64,
    map_passive: f64,
    secs_incremental: f64,
    secs_scratch: f64,
}

fn eval_map(model: &HashModel<f64>, test: &Dataset64) -> f64 {
    let codes = encode_all(model, test.features()).unwrap();
    // Relevance needs label identity across models with different class
    // tables, so compare by external label.
    let externals: Vec<usize> =
        test.labels().iter().map(|&l| test.classes().external(l) as usize).collect();
    let db = CodeDatabase::new(&codes, &externals);
    evaluate(&db).unwrap().map.expect("test classes are populated")
}

fn run_trial(kind: ModKind, trial: u64) -> TrialOutcome {
    // Overlapping clusters keep the hinges active (the regime warm starts
    // help in); the imbalance penalty is off here, matching the
    // no-penalty variant, so post-event rebalancing does not dominate the
    // timing comparison. Deletion only beats keeping the old model when the
    // surviving classes still overlap enough for reallocation to help, so
    // that scenario uses a wider spread.
    let spread = match kind {
        ModKind::DeleteClasses => 0.2,
        _ => 0.15,
    };
    let per_class = 50;
    let seed = 900 + trial * 13;
    let mut config = TrainConfig::new(16, 32);
    config.gamma = 0.0;
    config.max_iter = 5;
    config.seed = seed;
    config.threads = 1;

    let (initial, events, test): (Dataset64, Vec<ModificationEvent<f64>>, Dataset64) = match kind {
        ModKind::AddClasses => {
            let full: Dataset64 = generate_blobs(10, per_class, 2, spread, seed).unwrap();
            let initial = subset_by_class(&full, &[0, 1, 2, 3, 4, 5, 6, 7]);
            let added = subset_by_class(&full, &[8, 9]);
            let test: Dataset64 = generate_blobs(10, 20, 2, spread, seed + 500).unwrap();
            (initial, vec![ModificationEvent::AddClasses(added)], test)
        }
        ModKind::DeleteClasses => {
            let initial: Dataset64 = generate_blobs(10, per_class, 2, spread, seed).unwrap();
            let test_full: Dataset64 = generate_blobs(10, 20, 2, spread, seed + 500).unwrap();
            let test = subset_by_class(&test_full, &[0, 1, 2, 3, 4, 5, 6, 7]);
            (initial, vec![ModificationEvent::DeleteClasses(vec![8, 9])], test)
        }
        ModKind::AddImages => {
            let initial: Dataset64 = generate_blobs(10, per_class, 2, spread, seed).unwrap();
            let added: Dataset64 =
                generate_blobs(10, per_class / 2, 2, spread, seed + 999).unwrap();
            let test: Dataset64 = generate_blobs(10, 20, 2, spread, seed + 500).unwrap();
            (initial, vec![ModificationEvent::AddImages(added)], test)
        }
    };

    let (model, codes) = train(&initial, &config).unwrap();
    let mut state = TrainState::new(initial, model, codes);
    let passive_model = state.model.clone();
    for (i, event) in events.iter().enumerate() {
        state = apply_event(&state, event, seed + 7 * i as u64).unwrap();
    }

    let t0 = Instant::now();
    let (inc_model, _) = incremental_train(&state, &config).unwrap();
    let secs_incremental = t0.elapsed().as_secs_f64();

    let mut scratch_config = config.clone();
    scratch_config.seed = seed + 1;
    let t1 = Instant::now();
    let (scratch_model, _) = train(&state.dataset, &scratch_config).unwrap();
    let secs_scratch = t1.elapsed().as_secs_f64();

    TrialOutcome {
        map_incremental: eval_map(&inc_model, &test),
        map_scratch: eval_map(&scratch_model, &test),
        map_passive: eval_map(&passive_model, &test),
        secs_incremental,
        secs_scratch,
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_09_incremental_matches_scratch() {
    let _serial = exclusive();
    for kind in [ModKind::AddClasses, ModKind::DeleteClasses, ModKind::AddImages] {
        let outcomes: Vec<TrialOutcome> =
            (0..10u64).into_par_iter().map(|t| run_trial(kind, t)).collect();
        let mut gaps: Vec<f64> =
            outcomes.iter().map(|o| (o.map_incremental - o.map_scratch).abs()).collect();
        let mut inc: Vec<f64> = outcomes.iter().map(|o| o.map_incremental).collect();
        let mut pass_: Vec<f64> = outcomes.iter().map(|o| o.map_passive).collect();
        let mut t_inc: Vec<f64> = outcomes.iter().map(|o| o.secs_incremental).collect();
        let mut t_scr: Vec<f64> = outcomes.iter().map(|o| o.secs_scratch).collect();

        let med_gap = median(&mut gaps);
        let med_inc = median(&mut inc);
        let med_pass = median(&mut pass_);
        let med_t_inc = median(&mut t_inc);
        let med_t_scr = median(&mut t_scr);
        println!(
            "  {kind:?}: |inc-scratch| median {med_gap:.4}, inc {med_inc:.4}, passive {med_pass:.4}, time {med_t_inc:.2}s vs {med_t_scr:.2}s"
        );
        assert!(med_gap <= 0.02, "{kind:?}: median mAP gap {med_gap}");
        assert!(med_inc >= med_pass, "{kind:?}: incremental {med_inc} below passive {med_pass}");
        assert!(
            med_t_inc < med_t_scr,
            "{kind:?}: incremental {med_t_inc}s not faster than scratch {med_t_scr}s"
        );
    }
    pass(9, "incremental vs from-scratch");
}

// ---------------------------------------------------------------------------
// Criterion 10: bit-identical models across thread counts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_thread_count_determinism() {
    let _serial = exclusive();
    let dir = tempfile::tempdir().unwrap();
    let data: Dataset64 = generate_blobs(3, 20, 2, 0.1, 100).unwrap();
    let csv = dir.path().join("train.csv");
    let mut text = String::new();
    for i in 0..data.n() {
        text.push_str(&format!("{}", data.classes().external(data.labels()[i])));
        for v in data.row(i).iter() {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(&csv, text).unwrap();

    let model1 = dir.path().join("t1.sihm");
    let model4 = dir.path().join("t4.sihm");
    for (threads, out) in [("1", &model1), ("4", &model4)] {
        let status = Command::new(env!("CARGO_BIN_EXE_sih"))
            .args([
                "train", "--data", csv.to_str().unwrap(), "--bits", "8", "--anchors", "12",
                "--cx", "4", "--cb", "1", "--lambda", "800", "--gamma", "1",
                "--epsilon", "1e-3", "--max-iter", "3", "--seed", "10",
                "--threads", threads, "--out", out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&model1).unwrap();
    let b = std::fs::read(&model4).unwrap();
    assert_eq!(a, b, "model files differ between 1 and 4 threads");
    pass(10, "thread-count determinism");
}

// ---------------------------------------------------------------------------
// Criterion 11: metric oracles.
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_metric_oracles() {
    let _serial = exclusive();
    // Hand-computed average precision on 20 fixed sequences.
    let cases: Vec<(Vec<u8>, f64)> = vec![
        (vec![1], 1.0),
        (vec![1, 1], 1.0),
        (vec![0, 1], 0.5),
        (vec![1, 0], 1.0),
        (vec![1, 0, 1], (1.0 + 2.0 / 3.0) / 2.0),
        (vec![0, 1, 1], (1.0 / 2.0 + 2.0 / 3.0) / 2.0),
        (vec![1, 1, 0], 1.0),
        (vec![0, 0, 1], 1.0 / 3.0),
        (vec![1, 0, 0, 1], (1.0 + 2.0 / 4.0) / 2.0),
        (vec![0, 1, 0, 1], (1.0 / 2.0 + 2.0 / 4.0) / 2.0),
        (vec![1, 1, 1, 0], 1.0),
        (vec![0, 0, 0, 1], 0.25),
        (vec![1, 0, 1, 0, 1], (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0),
        (vec![0, 1, 1, 0, 1], (1.0 / 2.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0),
        (vec![1, 1, 0, 0, 1], (1.0 + 1.0 + 3.0 / 5.0) / 3.0),
        (vec![0, 0, 1, 1], (1.0 / 3.0 + 2.0 / 4.0) / 2.0),
        (vec![1, 0, 0, 0, 0, 1], (1.0 + 2.0 / 6.0) / 2.0),
        (vec![0, 1, 0, 0, 1, 0], (1.0 / 2.0 + 2.0 / 5.0) / 2.0),
        (vec![1, 1, 1, 1, 1], 1.0),
        (vec![0, 0, 0, 0, 1, 1, 1], (1.0 / 5.0 + 2.0 / 6.0 + 3.0 / 7.0) / 3.0),
    ];
    assert_eq!(cases.len(), 20);
    for (seq, expected) in &cases {
        let rel: Vec<bool> = seq.iter().map(|&b| b == 1).collect();
        let got = average_precision(&rel).unwrap();
        assert!(
            (got - expected).abs() <= 1e-9,
            "AP({seq:?}) = {got}, expected {expected}"
        );
    }
    // The [1,0,1] headline value.
    let headline = average_precision(&[true, false, true]).unwrap();
    assert!((headline - 0.8333333333333333).abs() <= 1e-9);

    // Hamming distance against the naive oracle on 10^4 random pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC11);
    for _ in 0..10_000 {
        let m = rng.gen_range(1..=128usize);
        let a: Vec<i8> = (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let b: Vec<i8> = (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let naive = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as u32;
        assert_eq!(hamming_distance(&pack_bits(&a), &pack_bits(&b)).unwrap(), naive);
    }
    pass(11, "metric oracles");
}

// ---------------------------------------------------------------------------
// Criterion 12: bit-exact persistence round-trips.
// ---------------------------------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng) -> TrainState<f64> {
    let d = rng.gen_range(2..=5usize);
    let r = rng.gen_range(2..=6usize);
    let m = rng.gen_range(2..=20usize);
    let k = rng.gen_range(1..=4usize);
    let n = rng.gen_range(k.max(2)..=12usize);

    let mean = ndarray::Array1::from_shape_fn(d, |_| rng.gen_range(-3.0..3.0));
    let anchors = Array2::from_shape_fn((r, d), |_| rng.gen_range(-2.0..2.0));
    let indices: Vec<usize> = (0..r).map(|_| rng.gen_range(0..1000)).collect();
    let sigma = rng.gen_range(0.1..4.0);
    let wx = Array2::from_shape_fn((r + 1, m), |_| rng.gen_range(-1.0..1.0));
    let wb = Array2::from_shape_fn((m + 1, k), |_| rng.gen_range(-1.0..1.0));
    let externals: Vec<i32> = (0..k).map(|i| 100 + i as i32).collect();

    let mut config = TrainConfig::new(m, r);
    config.seed = rng.gen();
    config.epsilon = if rng.gen() { Some(rng.gen_range(1e-6..1e-1)) } else { None };
    config.sigma = Some(sigma);

    let features = Array2::from_shape_fn((n, d), |_| rng.gen_range(-5.0..5.0));
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let ext_labels: Vec<i32> = labels.iter().map(|&l| externals[l]).collect();
    let dataset = Dataset::new(features, &ext_labels).unwrap();

    let bits = Array2::from_shape_fn((n, m), |_| if rng.gen::<bool>() { 1i8 } else { -1 });
    let codes = CodeMatrix::new(bits);

    let model = HashModel {
        preprocess: sih_core::dataset::PreprocessStats::from_mean(mean),
        anchors: AnchorSet::from_parts(anchors, indices, Some(sigma)),
        wx,
        wb,
        classes: dataset.classes().clone(),
        config,
        history: Vec::new(),
        converged: rng.gen(),
    };
    TrainState { dataset, codes, model, wb_cold: rng.gen() }
}

#[test]
fn criterion_12_round_trip_persistence() {
    let _serial = exclusive();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC12);
    for trial in 0..20 {
        let state = random_model(&mut rng);

        // Model + state round-trip.
        let model_path = dir.path().join(format!("m{trial}.sihm"));
        save_train_state(&state, &model_path).unwrap();
        let loaded = load_model::<f64>(&model_path).unwrap();
        for (a, b) in state.model.wx.iter().zip(loaded.model.wx.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in state.model.wb.iter().zip(loaded.model.wb.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in state
            .model
            .anchors
            .anchors()
            .iter()
            .zip(loaded.model.anchors.anchors().iter())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let resume = loaded.resume.as_ref().unwrap();
        assert_eq!(resume.codes.bits(), state.codes.bits());
        for (a, b) in state.dataset.features().iter().zip(resume.dataset.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Re-saving reproduces the exact bytes.
        let second = dir.path().join(format!("m{trial}b.sihm"));
        let restate = TrainState {
            dataset: resume.dataset.clone(),
            codes: resume.codes.clone(),
            model: loaded.model.clone(),
            wb_cold: resume.wb_cold,
        };
        save_train_state(&restate, &second).unwrap();
        assert_eq!(std::fs::read(&model_path).unwrap(), std::fs::read(&second).unwrap());

        // Dataset round-trip.
        let ds_path = dir.path().join(format!("d{trial}.sihd"));
        save_dataset_binary(&state.dataset, &ds_path).unwrap();
        let ds: Dataset64 = load_dataset(&ds_path, DatasetFormat::Binary).unwrap();
        for (a, b) in state.dataset.features().iter().zip(ds.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(state.dataset.labels(), ds.labels());

        // Codes file round-trip.
        let codes_path = dir.path().join(format!("c{trial}.sihc"));
        save_codes(&state.codes, &codes_path).unwrap();
        let codes = load_codes(&codes_path).unwrap();
        assert_eq!(codes.bits(), state.codes.bits());
    }
    pass(12, "round-trip persistence");
}
