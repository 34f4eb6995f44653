//! Labeled feature datasets: ingestion, validation, preprocessing, synthesis.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;

/// File format accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

/// Maps internal contiguous class ids `0..K-1` to the original labels.
///
/// Ids are assigned in order of first appearance in the source data, so the
/// mapping is stable across reloads of the same file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    externals: Vec<i32>,
}

impl ClassTable {
    pub fn new(externals: Vec<i32>) -> Self {
        ClassTable { externals }
    }

    pub fn len(&self) -> usize {
        self.externals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.externals.is_empty()
    }

    pub fn external(&self, id: usize) -> i32 {
        self.externals[id]
    }

    pub fn externals(&self) -> &[i32] {
        &self.externals
    }

    /// Internal id for an original label, if known.
    pub fn id_of(&self, external: i32) -> Option<usize> {
        self.externals.iter().position(|&e| e == external)
    }

    /// Registers a new external label and returns its fresh internal id.
    pub fn push(&mut self, external: i32) -> usize {
        self.externals.push(external);
        self.externals.len() - 1
    }
}

/// A labeled feature dataset: `n` rows of `d` features plus class ids.
///
/// Immutable after construction; labels are internal contiguous ids with the
/// original values kept in [`ClassTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F: Real> {
    features: Array2<F>,
    labels: Vec<usize>,
    classes: ClassTable,
}

impl<F: Real> Dataset<F> {
    /// Builds a dataset from raw features and original labels, remapping the
    /// labels to internal ids in order of first appearance.
    pub fn new(features: Array2<F>, external_labels: &[i32]) -> Result<Self> {
        if features.nrows() != external_labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                external_labels.len()
            )));
        }
        let mut classes = ClassTable::new(Vec::new());
        let mut labels = Vec::with_capacity(external_labels.len());
        for &ext in external_labels {
            let id = classes.id_of(ext).unwrap_or_else(|| classes.push(ext));
            labels.push(id);
        }
        Self::from_parts(features, labels, classes)
    }

    /// Builds a dataset from already-remapped internal labels.
    pub fn from_parts(features: Array2<F>, labels: Vec<usize>, classes: ClassTable) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Degenerate("dataset must have n >= 1 and d >= 1".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite feature value".into()));
        }
        let k = classes.len();
        let mut present = vec![false; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::Dimension(format!("label id {l} out of range for {k} classes")));
            }
            present[l] = true;
        }
        if present.iter().any(|&p| !p) {
            return Err(Error::Degenerate("class table lists a label with no samples".into()));
        }
        Ok(Dataset { features, labels, classes })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn features(&self) -> ArrayView2<'_, F> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, F> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    /// Row indices belonging to internal class `id`.
    pub fn rows_of_class(&self, id: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == id).collect()
    }
}

/// Column means of the training features, in input (pre-kernel) space.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats<F: Real> {
    mean: Array1<F>,
}

impl<F: Real> PreprocessStats<F> {
    pub fn from_mean(mean: Array1<F>) -> Self {
        PreprocessStats { mean }
    }

    pub fn mean(&self) -> ArrayView1<'_, F> {
        self.mean.view()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Computes the per-column arithmetic mean of the training features.
pub fn fit_preprocessor<F: Real>(train: &Dataset<F>) -> PreprocessStats<F> {
    let n = F::of(train.n() as f64);
    let mean = train.features.sum_axis(Axis(0)) / n;
    PreprocessStats { mean }
}

/// Centers every row by the training mean and scales it to unit Euclidean
/// length. A row equal to the mean maps to the zero vector.
pub fn apply_preprocessor<F: Real>(
    stats: &PreprocessStats<F>,
    features: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    if features.ncols() != stats.dim() {
        return Err(Error::Dimension(format!(
            "feature width {} vs preprocess dimension {}",
            features.ncols(),
            stats.dim()
        )));
    }
    let mut out = features.to_owned();
    for mut row in out.rows_mut() {
        for (v, &m) in row.iter_mut().zip(stats.mean.iter()) {
            *v -= m;
        }
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm > F::zero() {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Ok(out)
}

/// Convenience: fit-and-apply on the same dataset.
pub fn preprocess<F: Real>(train: &Dataset<F>) -> (PreprocessStats<F>, Array2<F>) {
    let stats = fit_preprocessor(train);
    let mapped = apply_preprocessor(&stats, train.features()).expect("dimensions agree by construction");
    (stats, mapped)
}

/// Synthesizes isotropic Gaussian clusters with class means on the unit
/// circle (evenly spaced on `[-1, 1]` when `dim == 1`). Deterministic for a
/// fixed seed; `spread` is the per-coordinate standard deviation.
pub fn generate_blobs<F: Real>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset<F>> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config("blobs need num_classes, per_class and dim >= 1".into()));
    }
    if spread < 0.0 {
        return Err(Error::Config("blob spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let normal = StandardNormal;
    for class in 0..num_classes {
        let mut mean = vec![0.0f64; dim];
        if dim == 1 {
            mean[0] = if num_classes == 1 {
                0.0
            } else {
                -1.0 + 2.0 * class as f64 / (num_classes - 1) as f64
            };
        } else {
            let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
            mean[0] = angle.cos();
            mean[1] = angle.sin();
        }
        for p in 0..per_class {
            let row = class * per_class + p;
            for c in 0..dim {
                let noise: f64 = normal.sample(&mut rng);
                features[[row, c]] = F::of(mean[c] + spread * noise);
            }
            labels.push(class as i32);
        }
    }
    Dataset::new(features, &labels)
}

/// Loads a dataset from disk in the declared format.
///
/// CSV rows are `label,f1,...,fd` with no header; the binary layout is the
/// `SIHD` format written by [`save_dataset_binary`].
pub fn load_dataset<F: Real>(path: &Path, format: DatasetFormat) -> Result<Dataset<F>> {
    match format {
        DatasetFormat::Csv => load_csv(path),
        DatasetFormat::Binary => load_binary(path),
    }
}

fn load_csv<F: Real>(path: &Path) -> Result<Dataset<F>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut features: Vec<F> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split(',');
        let label_field = fields.next().expect("split yields at least one field");
        let label: i32 = label_field.trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg: format!("label `{}` is not an integer", label_field.trim()),
        })?;
        let mut row: Vec<F> = Vec::new();
        for field in fields {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("feature `{}` is not numeric", field.trim()),
            })?;
            row.push(F::of(value));
        }
        match width {
            None => {
                if row.is_empty() {
                    return Err(Error::Parse {
                        path: display.clone(),
                        line: lineno,
                        msg: "row has a label but no features".into(),
                    });
                }
                width = Some(row.len());
            }
            Some(w) => {
                if row.len() != w {
                    return Err(Error::Parse {
                        path: display.clone(),
                        line: lineno,
                        msg: format!("expected {w} features, found {}", row.len()),
                    });
                }
            }
        }
        labels.push(label);
        features.extend(row);
    }
    let d = width.ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        msg: "file contains no data rows".into(),
    })?;
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d), features).expect("row arity checked per line");
    Dataset::new(features, &labels)
}

pub const DATASET_MAGIC: &[u8; 4] = b"SIHD";
pub const DATASET_VERSION: u32 = 1;

/// Writes the `SIHD` binary layout: magic, version u32, n u64, d u32, then
/// `n` i32 labels and `n*d` f64 features, all little-endian.
pub fn save_dataset_binary<F: Real>(dataset: &Dataset<F>, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&display, e);
    w.write_all(DATASET_MAGIC).map_err(io)?;
    w.write_all(&DATASET_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(dataset.n() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(dataset.dim() as u32).to_le_bytes()).map_err(io)?;
    for &l in dataset.labels() {
        w.write_all(&dataset.classes().external(l).to_le_bytes()).map_err(io)?;
    }
    for &v in dataset.features.iter() {
        w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn load_binary<F: Real>(path: &Path) -> Result<Dataset<F>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut r = BufReader::new(file);
    let magic = read_exact::<4>(&mut r, &display, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Version {
            path: display,
            msg: format!("bad dataset magic {magic:?}, expected {DATASET_MAGIC:?}"),
        });
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r, &display, "version")?);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            path: display,
            msg: format!("dataset version {version}, expected {DATASET_VERSION}"),
        });
    }
    let n = u64::from_le_bytes(read_exact::<8>(&mut r, &display, "row count")?) as usize;
    let d = u32::from_le_bytes(read_exact::<4>(&mut r, &display, "feature width")?) as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(i32::from_le_bytes(read_exact::<4>(&mut r, &display, "labels")?));
    }
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        features.push(F::of(f64::from_le_bytes(read_exact::<8>(&mut r, &display, "features")?)));
    }
    let features = Array2::from_shape_vec((n, d), features)
        .map_err(|_| Error::Corrupt { path: display.clone(), section: "features".into() })?;
    Dataset::new(features, &labels)
}

pub(crate) fn read_exact<const N: usize>(
    r: &mut impl Read,
    path: &str,
    section: &str,
) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| Error::Corrupt {
        path: path.to_string(),
        section: section.to_string(),
    })?;
    Ok(buf)
}
