//! Database modification events and warm-started retraining.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::CodeMatrix;
use crate::dataset::{apply_preprocessor, fit_preprocessor, ClassTable, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{embed_all, estimate_sigma, sample_anchors};
use crate::real::Real;
use crate::trainer::{run_loop, sample_codewords, HashModel, LoopInit, TrainConfig};

/// A change to the training database. Labels are the original (external)
/// values.
#[derive(Debug, Clone)]
pub enum ModificationEvent<F: Real> {
    /// New samples whose labels are all previously unseen.
    AddClasses(Dataset<F>),
    /// New samples whose labels all already exist.
    AddImages(Dataset<F>),
    /// Drop every sample of the given classes.
    DeleteClasses(Vec<i32>),
}

/// Everything needed to resume training: the current data, its codes, and
/// the trained model whose weights seed the next run.
#[derive(Debug, Clone)]
pub struct TrainState<F: Real> {
    pub dataset: Dataset<F>,
    pub codes: CodeMatrix,
    pub model: HashModel<F>,
    /// Set after class additions: the multi-class SVM restarts from zero on
    /// the next training pass instead of warm-starting.
    pub wb_cold: bool,
}

impl<F: Real> TrainState<F> {
    pub fn new(dataset: Dataset<F>, model: HashModel<F>, codes: CodeMatrix) -> Self {
        TrainState { dataset, codes, model, wb_cold: false }
    }
}

/// Modal full-row code pattern among the given rows; ties break by first
/// occurrence in row order.
pub fn most_frequent_pattern(codes: &CodeMatrix, rows: &[usize]) -> Vec<i8> {
    assert!(!rows.is_empty(), "need at least one row");
    let mut counts: HashMap<Vec<i8>, (usize, usize)> = HashMap::new();
    for (pos, &i) in rows.iter().enumerate() {
        let entry = counts.entry(codes.row(i)).or_insert((0, pos));
        entry.0 += 1;
    }
    counts
        .into_iter()
        .min_by_key(|(_, (count, first))| (usize::MAX - count, *first))
        .map(|(pattern, _)| pattern)
        .expect("non-empty rows")
}

fn stack_features<F: Real>(
    old: &Dataset<F>,
    new: &Dataset<F>,
) -> Result<Array2<F>> {
    if new.dim() != old.dim() {
        return Err(Error::Dimension(format!(
            "event feature width {} vs dataset width {}",
            new.dim(),
            old.dim()
        )));
    }
    ndarray::concatenate(Axis(0), &[old.features(), new.features()])
        .map_err(|e| Error::Dimension(format!("stacking event rows: {e}")))
}

/// Applies one modification to a train state, producing the warm-initialized
/// (not yet retrained) successor state. Anchors and the preprocessing mean
/// are deliberately left untouched so the existing weights stay meaningful.
pub fn apply_event<F: Real>(
    state: &TrainState<F>,
    event: &ModificationEvent<F>,
    seed: u64,
) -> Result<TrainState<F>> {
    match event {
        ModificationEvent::DeleteClasses(ext_labels) => delete_classes(state, ext_labels),
        ModificationEvent::AddImages(new_data) => add_images(state, new_data),
        ModificationEvent::AddClasses(new_data) => add_classes(state, new_data, seed),
    }
}

fn delete_classes<F: Real>(state: &TrainState<F>, ext_labels: &[i32]) -> Result<TrainState<F>> {
    let classes = state.dataset.classes();
    let mut doomed = vec![false; classes.len()];
    let mut unknown = Vec::new();
    for &ext in ext_labels {
        match classes.id_of(ext) {
            Some(id) => doomed[id] = true,
            None => unknown.push(ext),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Event(format!("cannot delete unknown classes {unknown:?}")));
    }
    if doomed.iter().all(|&d| d) {
        return Err(Error::Event("cannot delete every class".into()));
    }

    // Surviving classes keep their relative order; labels are remapped to
    // stay contiguous.
    let mut remap = vec![usize::MAX; classes.len()];
    let mut survivors = Vec::new();
    for id in 0..classes.len() {
        if !doomed[id] {
            remap[id] = survivors.len();
            survivors.push(classes.external(id));
        }
    }
    let kept_rows: Vec<usize> = (0..state.dataset.n())
        .filter(|&i| !doomed[state.dataset.labels()[i]])
        .collect();
    let features = state.dataset.features().select(Axis(0), &kept_rows);
    let labels: Vec<usize> =
        kept_rows.iter().map(|&i| remap[state.dataset.labels()[i]]).collect();
    let dataset = Dataset::from_parts(features, labels, ClassTable::new(survivors.clone()))?;

    let bits = state.codes.bits().select(Axis(0), &kept_rows);
    let codes = CodeMatrix::new(bits);

    let keep_cols: Vec<usize> = (0..classes.len()).filter(|&id| !doomed[id]).collect();
    let wb = state.model.wb.select(Axis(1), &keep_cols);

    let mut model = state.model.clone();
    model.wb = wb;
    model.classes = ClassTable::new(survivors);
    Ok(TrainState { dataset, codes, model, wb_cold: false })
}

fn add_images<F: Real>(state: &TrainState<F>, new_data: &Dataset<F>) -> Result<TrainState<F>> {
    let classes = state.dataset.classes();
    let mut unknown = Vec::new();
    let mut mapped = Vec::with_capacity(new_data.n());
    for &l in new_data.labels() {
        let ext = new_data.classes().external(l);
        match classes.id_of(ext) {
            Some(id) => mapped.push(id),
            None => unknown.push(ext),
        }
    }
    if !unknown.is_empty() {
        unknown.sort_unstable();
        unknown.dedup();
        return Err(Error::Event(format!(
            "add-images labels must already exist; unknown: {unknown:?}"
        )));
    }

    let features = stack_features(&state.dataset, new_data)?;
    let mut labels = state.dataset.labels().to_vec();
    labels.extend_from_slice(&mapped);
    let dataset = Dataset::from_parts(features, labels, classes.clone())?;

    // Each appended row starts from its class's modal code pattern.
    let mut patterns: HashMap<usize, Vec<i8>> = HashMap::new();
    let m = state.codes.m();
    let mut bits = Array2::from_elem((dataset.n(), m), 1i8);
    for i in 0..state.codes.n() {
        for j in 0..m {
            bits[[i, j]] = state.codes.get(i, j);
        }
    }
    for (offset, &class) in mapped.iter().enumerate() {
        let pattern = patterns.entry(class).or_insert_with(|| {
            most_frequent_pattern(&state.codes, &state.dataset.rows_of_class(class))
        });
        for j in 0..m {
            bits[[state.codes.n() + offset, j]] = pattern[j];
        }
    }
    let codes = CodeMatrix::new(bits);

    Ok(TrainState { dataset, codes, model: state.model.clone(), wb_cold: false })
}

fn add_classes<F: Real>(
    state: &TrainState<F>,
    new_data: &Dataset<F>,
    seed: u64,
) -> Result<TrainState<F>> {
    let classes = state.dataset.classes();
    let mut colliding: Vec<i32> = new_data
        .classes()
        .externals()
        .iter()
        .copied()
        .filter(|&ext| classes.id_of(ext).is_some())
        .collect();
    if !colliding.is_empty() {
        colliding.sort_unstable();
        return Err(Error::Event(format!(
            "add-class labels must be new; already present: {colliding:?}"
        )));
    }

    let k_old = classes.len();
    let k_new = new_data.num_classes();
    let mut externals = classes.externals().to_vec();
    externals.extend_from_slice(new_data.classes().externals());

    let features = stack_features(&state.dataset, new_data)?;
    let mut labels = state.dataset.labels().to_vec();
    labels.extend(new_data.labels().iter().map(|&l| k_old + l));
    let dataset = Dataset::from_parts(features, labels, ClassTable::new(externals))?;

    // One fresh codeword per new class, balanced like the initializer when
    // the imbalance penalty is active.
    let m = state.codes.m();
    let balanced = state.model.config.gamma > F::zero();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codewords = sample_codewords(k_new, m, balanced, &mut rng);
    let mut bits = Array2::from_elem((dataset.n(), m), 1i8);
    for i in 0..state.codes.n() {
        for j in 0..m {
            bits[[i, j]] = state.codes.get(i, j);
        }
    }
    for (offset, &l) in new_data.labels().iter().enumerate() {
        for j in 0..m {
            bits[[state.codes.n() + offset, j]] = codewords[[l, j]];
        }
    }
    let codes = CodeMatrix::new(bits);

    // New classes have no trained weights yet; the whole multi-class block
    // restarts from zero at the next training pass.
    let mut wb = Array2::zeros((m + 1, k_old + k_new));
    for k in 0..k_old {
        for u in 0..=m {
            wb[[u, k]] = state.model.wb[[u, k]];
        }
    }
    let mut model = state.model.clone();
    model.wb = wb;
    model.classes = dataset.classes().clone();
    Ok(TrainState { dataset, codes, model, wb_cold: true })
}

/// Retrains on the state left by [`apply_event`]: codes come from the state,
/// every bit SVM warm-starts from its previous weights, the multi-class SVM
/// warm-starts unless marked cold, and all columns count as dirty for the
/// first outer iteration.
pub fn incremental_train<F: Real>(
    state: &TrainState<F>,
    config: &TrainConfig<F>,
) -> Result<(HashModel<F>, CodeMatrix)> {
    config.validate()?;
    if config.bits != state.codes.m() {
        return Err(Error::Config(format!(
            "config bits {} vs state bits {}",
            config.bits,
            state.codes.m()
        )));
    }
    let mapped = apply_preprocessor(&state.model.preprocess, state.dataset.features())?;
    let phi = embed_all(mapped.view(), &state.model.anchors)?;
    run_loop(
        LoopInit {
            preprocess: state.model.preprocess.clone(),
            anchors: state.model.anchors.clone(),
            phi,
            codes: state.codes.clone(),
            wx: state.model.wx.clone(),
            wb: state.model.wb.clone(),
            labels: state.dataset.labels().to_vec(),
            classes: state.dataset.classes().clone(),
            wb_cold: state.wb_cold,
        },
        config,
    )
}

/// Heavy-drift variant: refits the preprocessing mean, resamples anchors and
/// sigma on the current data, and cold-starts all SVM weights. Codes still
/// come from the state, so this sits between incremental and from-scratch.
pub fn incremental_train_reanchored<F: Real>(
    state: &TrainState<F>,
    config: &TrainConfig<F>,
) -> Result<(HashModel<F>, CodeMatrix)> {
    config.validate()?;
    if config.bits != state.codes.m() {
        return Err(Error::Config(format!(
            "config bits {} vs state bits {}",
            config.bits,
            state.codes.m()
        )));
    }
    let stats = fit_preprocessor(&state.dataset);
    let mapped = apply_preprocessor(&stats, state.dataset.features())?;
    let pre_ds =
        Dataset::from_parts(mapped, state.dataset.labels().to_vec(), state.dataset.classes().clone())?;
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
    let m = config.bits;
    let k = state.dataset.num_classes();
    run_loop(
        LoopInit {
            preprocess: stats,
            anchors,
            phi,
            codes: state.codes.clone(),
            wx: Array2::zeros((config.anchors + 1, m)),
            wb: Array2::zeros((m + 1, k)),
            labels: state.dataset.labels().to_vec(),
            classes: state.dataset.classes().clone(),
            wb_cold: true,
        },
        config,
    )
}
