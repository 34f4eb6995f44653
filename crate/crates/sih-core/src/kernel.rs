//! Anchor-based RBF feature map.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::real::Real;

/// Anchor points and kernel width defining the nonlinear feature map.
///
/// Embedding a `d`-vector yields `r` RBF similarities plus a trailing bias
/// constant of 1, so downstream SVMs stay in homogeneous form.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<F: Real> {
    anchors: Array2<F>,
    indices: Vec<usize>,
    sigma: Option<F>,
    bias: bool,
}

impl<F: Real> AnchorSet<F> {
    pub fn from_parts(anchors: Array2<F>, indices: Vec<usize>, sigma: Option<F>) -> Self {
        AnchorSet { anchors, indices, sigma, bias: true }
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.ncols()
    }

    /// Embedded dimension: anchors plus the bias entry.
    pub fn embed_dim(&self) -> usize {
        self.num_anchors() + usize::from(self.bias)
    }

    pub fn anchors(&self) -> ArrayView2<'_, F> {
        self.anchors.view()
    }

    /// Training-set indices the anchors were drawn from.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn sigma(&self) -> Option<F> {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: F) -> Result<()> {
        if !(sigma > F::zero()) {
            return Err(Error::Config("kernel width sigma must be positive".into()));
        }
        self.sigma = Some(sigma);
        Ok(())
    }
}

/// Draws `r` distinct training rows uniformly without replacement.
/// The kernel width is left unset.
pub fn sample_anchors<F: Real>(train: &Dataset<F>, r: usize, seed: u64) -> Result<AnchorSet<F>> {
    if r == 0 || r > train.n() {
        return Err(Error::Config(format!(
            "anchor count {r} must satisfy 1 <= r <= n = {}",
            train.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = rand::seq::index::sample(&mut rng, train.n(), r).into_vec();
    let anchors = train.features().select(Axis(0), &indices);
    Ok(AnchorSet { anchors, indices, sigma: None, bias: true })
}

/// Median Euclidean distance over sampled (point, anchor) pairs; the default
/// kernel-width heuristic when sigma is not supplied.
///
/// When `sample_pairs >= n * r` every pair is used, so the result is the
/// exact median. An even pair count averages the two middle values.
pub fn estimate_sigma<F: Real>(
    train: &Dataset<F>,
    anchors: &AnchorSet<F>,
    sample_pairs: usize,
    seed: u64,
) -> Result<F> {
    if sample_pairs == 0 {
        return Err(Error::Config("sample_pairs must be >= 1".into()));
    }
    let n = train.n();
    let r = anchors.num_anchors();
    let mut dists: Vec<F> = if sample_pairs >= n * r {
        (0..n)
            .flat_map(|i| (0..r).map(move |a| (i, a)))
            .map(|(i, a)| euclidean(train.row(i), anchors.anchors().row(a)))
            .collect()
    } else {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sample_pairs)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let a = rng.gen_range(0..r);
                euclidean(train.row(i), anchors.anchors().row(a))
            })
            .collect()
    };
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let len = dists.len();
    let median = if len % 2 == 1 {
        dists[len / 2]
    } else {
        (dists[len / 2 - 1] + dists[len / 2]) * F::half()
    };
    if median > F::zero() {
        Ok(median)
    } else {
        Err(Error::Degenerate(
            "median point-anchor distance is zero; supply an explicit sigma".into(),
        ))
    }
}

fn euclidean<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt()
}

/// Embeds one sample: entry `l` is `exp(-||x - a_l||^2 / (2 sigma^2))`,
/// followed by the bias entry 1.
pub fn embed<F: Real>(x: ArrayView1<'_, F>, anchors: &AnchorSet<F>) -> Result<Array1<F>> {
    let sigma = anchors
        .sigma
        .filter(|&s| s > F::zero())
        .ok_or_else(|| Error::Config("kernel width sigma is unset or non-positive".into()))?;
    if x.len() != anchors.dim() {
        return Err(Error::Dimension(format!(
            "sample dimension {} vs anchor dimension {}",
            x.len(),
            anchors.dim()
        )));
    }
    let denom = F::two() * sigma * sigma;
    let mut out = Array1::zeros(anchors.embed_dim());
    for (l, anchor) in anchors.anchors.rows().into_iter().enumerate() {
        let sq = x
            .iter()
            .zip(anchor.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<F>();
        out[l] = (-sq / denom).exp();
    }
    if anchors.bias {
        out[anchors.embed_dim() - 1] = F::one();
    }
    Ok(out)
}

/// Embeds every row of a matrix; rows are processed in parallel and written
/// to disjoint outputs, so results do not depend on the thread count.
pub fn embed_all<F: Real>(rows: ArrayView2<'_, F>, anchors: &AnchorSet<F>) -> Result<Array2<F>> {
    let mut out = Array2::zeros((rows.nrows(), anchors.embed_dim()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.axis_iter(Axis(0)).into_par_iter())
        .try_for_each(|(mut target, row)| {
            let phi = embed(row, anchors)?;
            target.assign(&phi);
            Ok(())
        })?;
    Ok(out)
}
