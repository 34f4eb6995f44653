//! Binary persistence for models, resumable training states and code files.
//!
//! Everything is little-endian with `f64` payloads, so round-trips are
//! bit-exact for `f64` models regardless of platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::codes::CodeMatrix;
use crate::dataset::{read_exact, ClassTable, Dataset, PreprocessStats};
use crate::error::{Error, Result};
use crate::eval::{pack_bits, unpack_bits};
use crate::incremental::TrainState;
use crate::kernel::AnchorSet;
use crate::real::Real;
use crate::trainer::{HashModel, TrainConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"SIHM";
pub const MODEL_VERSION: u32 = 1;
pub const CODES_MAGIC: &[u8; 4] = b"SIHC";

const FLAG_RESUME: u32 = 1;
const FLAG_WB_COLD: u32 = 2;
const FLAG_CONVERGED: u32 = 4;

/// A model read back from disk, with the optional training state needed to
/// resume (codes plus the training data).
#[derive(Debug)]
pub struct LoadedModel<F: Real> {
    pub model: HashModel<F>,
    pub resume: Option<ResumePart<F>>,
}

#[derive(Debug)]
pub struct ResumePart<F: Real> {
    pub dataset: Dataset<F>,
    pub codes: CodeMatrix,
    pub wb_cold: bool,
}

impl<F: Real> LoadedModel<F> {
    /// Turns the loaded file into a resumable state; errors when the file
    /// was saved without one.
    pub fn into_train_state(self, path: &str) -> Result<TrainState<F>> {
        match self.resume {
            Some(part) => Ok(TrainState {
                dataset: part.dataset,
                codes: part.codes,
                model: self.model,
                wb_cold: part.wb_cold,
            }),
            None => Err(Error::Corrupt {
                path: path.to_string(),
                section: "training state (file holds a model without codes)".into(),
            }),
        }
    }
}

struct Sink<W: Write> {
    inner: W,
    path: String,
}

impl<W: Write> Sink<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| Error::io(&self.path, e))
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn i32(&mut self, v: i32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct Source<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Source<R> {
    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(read_exact::<4>(&mut self.inner, &self.path, section)?))
    }
    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(read_exact::<8>(&mut self.inner, &self.path, section)?))
    }
    fn i32(&mut self, section: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(read_exact::<4>(&mut self.inner, &self.path, section)?))
    }
    fn f64(&mut self, section: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(read_exact::<8>(&mut self.inner, &self.path, section)?))
    }
}

fn write_model_body<F: Real, W: Write>(
    w: &mut Sink<W>,
    model: &HashModel<F>,
    resume: Option<(&Dataset<F>, &CodeMatrix, bool)>,
) -> Result<()> {
    let d = model.input_dim();
    let r = model.anchors.num_anchors();
    let m = model.bits();
    let k = model.num_classes();
    let sigma = model
        .anchors
        .sigma()
        .ok_or_else(|| Error::Config("cannot save a model without a kernel width".into()))?;

    w.bytes(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    let mut flags = 0u32;
    if let Some((_, _, wb_cold)) = resume {
        flags |= FLAG_RESUME;
        if wb_cold {
            flags |= FLAG_WB_COLD;
        }
    }
    if model.converged {
        flags |= FLAG_CONVERGED;
    }
    w.u32(flags)?;
    w.u32(d as u32)?;
    w.u32(r as u32)?;
    w.u32(m as u32)?;
    w.u32(k as u32)?;
    w.f64(sigma.as_f64())?;
    w.u64(model.config.seed)?;
    w.f64(model.config.cx.as_f64())?;
    w.f64(model.config.cb.as_f64())?;
    w.f64(model.config.lambda.as_f64())?;
    w.f64(model.config.gamma.as_f64())?;
    w.f64(model.config.epsilon.map_or(f64::NAN, |e| e.as_f64()))?;
    w.u32(model.config.max_iter as u32)?;
    // Thread count is a runtime concern, not model identity: files must be
    // byte-identical across differing --threads.
    w.u32(0)?;
    w.u32(model.config.max_sweeps as u32)?;
    w.u32(model.config.max_planes as u32)?;
    w.u32(model.config.solver_max_iterations as u32)?;

    for &v in model.preprocess.mean().iter() {
        w.f64(v.as_f64())?;
    }
    for &idx in model.anchors.indices() {
        w.u64(idx as u64)?;
    }
    for &v in model.anchors.anchors().iter() {
        w.f64(v.as_f64())?;
    }
    for &ext in model.classes.externals() {
        w.i32(ext)?;
    }
    for &v in model.wx.iter() {
        w.f64(v.as_f64())?;
    }
    for &v in model.wb.iter() {
        w.f64(v.as_f64())?;
    }

    if let Some((dataset, codes, _)) = resume {
        let n = dataset.n();
        w.u64(n as u64)?;
        for &l in dataset.labels() {
            w.u32(l as u32)?;
        }
        for i in 0..n {
            for word in pack_bits(&codes.row(i)) {
                w.u64(word)?;
            }
        }
        for &v in dataset.features().iter() {
            w.f64(v.as_f64())?;
        }
    }
    Ok(())
}

/// Saves a model without training state (encode/query/eval only).
pub fn save_hash_model<F: Real>(model: &HashModel<F>, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut sink = Sink { inner: BufWriter::new(file), path: display };
    write_model_body(&mut sink, model, None)?;
    sink.inner.flush().map_err(|e| Error::io(&sink.path, e))
}

/// Saves a full training state: the model plus codes and the current data,
/// which the `update` flow needs.
pub fn save_train_state<F: Real>(state: &TrainState<F>, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut sink = Sink { inner: BufWriter::new(file), path: display };
    write_model_body(
        &mut sink,
        &state.model,
        Some((&state.dataset, &state.codes, state.wb_cold)),
    )?;
    sink.inner.flush().map_err(|e| Error::io(&sink.path, e))
}

/// Reads a model file, validating magic, version and section lengths.
pub fn load_model<F: Real>(path: &Path) -> Result<LoadedModel<F>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut src = Source { inner: BufReader::new(file), path: display.clone() };

    let magic = read_exact::<4>(&mut src.inner, &display, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Version {
            path: display,
            msg: format!("bad model magic {magic:?}, expected {MODEL_MAGIC:?}"),
        });
    }
    let version = src.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            path: display,
            msg: format!("model version {version}, expected {MODEL_VERSION}"),
        });
    }
    let flags = src.u32("flags")?;
    let d = src.u32("dimensions")? as usize;
    let r = src.u32("dimensions")? as usize;
    let m = src.u32("dimensions")? as usize;
    let k = src.u32("dimensions")? as usize;
    if d == 0 || r == 0 || m == 0 || k == 0 {
        return Err(Error::Corrupt { path: display, section: "dimensions".into() });
    }
    let sigma = src.f64("sigma")?;
    let seed = src.u64("seed")?;
    let cx = src.f64("config")?;
    let cb = src.f64("config")?;
    let lambda = src.f64("config")?;
    let gamma = src.f64("config")?;
    let epsilon = src.f64("config")?;
    let max_iter = src.u32("config")? as usize;
    let threads = src.u32("config")? as usize;
    let max_sweeps = src.u32("config")? as usize;
    let max_planes = src.u32("config")? as usize;
    let solver_max_iterations = src.u32("config")? as usize;

    let mut mean = Array1::zeros(d);
    for v in mean.iter_mut() {
        *v = F::of(src.f64("preprocess mean")?);
    }
    let mut indices = Vec::with_capacity(r);
    for _ in 0..r {
        indices.push(src.u64("anchor indices")? as usize);
    }
    let mut anchors = Array2::zeros((r, d));
    for v in anchors.iter_mut() {
        *v = F::of(src.f64("anchors")?);
    }
    let mut externals = Vec::with_capacity(k);
    for _ in 0..k {
        externals.push(src.i32("class table")?);
    }
    let mut wx = Array2::zeros((r + 1, m));
    for v in wx.iter_mut() {
        *v = F::of(src.f64("bit weights")?);
    }
    let mut wb = Array2::zeros((m + 1, k));
    for v in wb.iter_mut() {
        *v = F::of(src.f64("class weights")?);
    }

    let config = TrainConfig {
        bits: m,
        anchors: r,
        cx: F::of(cx),
        cb: F::of(cb),
        lambda: F::of(lambda),
        gamma: F::of(gamma),
        max_iter,
        sigma: Some(F::of(sigma)),
        epsilon: if epsilon.is_nan() { None } else { Some(F::of(epsilon)) },
        seed,
        threads,
        max_sweeps,
        max_planes,
        solver_max_iterations,
    };
    let model = HashModel {
        preprocess: PreprocessStats::from_mean(mean),
        anchors: AnchorSet::from_parts(anchors, indices, Some(F::of(sigma))),
        wx,
        wb,
        classes: ClassTable::new(externals),
        config,
        history: Vec::new(),
        converged: flags & FLAG_CONVERGED != 0,
    };

    let resume = if flags & FLAG_RESUME != 0 {
        let n = src.u64("sample count")? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(src.u32("labels")? as usize);
        }
        let words = m.div_ceil(64);
        let mut bits = Array2::from_elem((n, m), 1i8);
        for i in 0..n {
            let mut row_words = Vec::with_capacity(words);
            for _ in 0..words {
                row_words.push(src.u64("codes")?);
            }
            for (j, &b) in unpack_bits(&row_words, m).iter().enumerate() {
                bits[[i, j]] = b;
            }
        }
        let mut features = Array2::zeros((n, d));
        for v in features.iter_mut() {
            *v = F::of(src.f64("features")?);
        }
        let classes = model.classes.clone();
        let dataset = Dataset::from_parts(features, labels, classes)?;
        Some(ResumePart {
            dataset,
            codes: CodeMatrix::new(bits),
            wb_cold: flags & FLAG_WB_COLD != 0,
        })
    } else {
        None
    };

    Ok(LoadedModel { model, resume })
}

/// Writes a codes file: magic `SIHC`, n, m, then packed rows.
pub fn save_codes(codes: &CodeMatrix, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut sink = Sink { inner: BufWriter::new(file), path: display };
    sink.bytes(CODES_MAGIC)?;
    sink.u64(codes.n() as u64)?;
    sink.u32(codes.m() as u32)?;
    for i in 0..codes.n() {
        for word in pack_bits(&codes.row(i)) {
            sink.u64(word)?;
        }
    }
    sink.inner.flush().map_err(|e| Error::io(&sink.path, e))
}

/// Reads a codes file back into a +-1 matrix.
pub fn load_codes(path: &Path) -> Result<CodeMatrix> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut src = Source { inner: BufReader::new(file), path: display.clone() };
    let magic = read_exact::<4>(&mut src.inner, &display, "magic")?;
    if &magic != CODES_MAGIC {
        return Err(Error::Version {
            path: display,
            msg: format!("bad codes magic {magic:?}, expected {CODES_MAGIC:?}"),
        });
    }
    let n = src.u64("row count")? as usize;
    let m = src.u32("code length")? as usize;
    if m == 0 {
        return Err(Error::Corrupt { path: display, section: "code length".into() });
    }
    let words = m.div_ceil(64);
    let mut bits = Array2::from_elem((n, m), 1i8);
    for i in 0..n {
        let mut row_words = Vec::with_capacity(words);
        for _ in 0..words {
            row_words.push(src.u64("code words")?);
        }
        for (j, &b) in unpack_bits(&row_words, m).iter().enumerate() {
            bits[[i, j]] = b;
        }
    }
    Ok(CodeMatrix::new(bits))
}
