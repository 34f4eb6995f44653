//! Hamming ranking and retrieval metrics (leave-one-out protocol).

use std::time::Instant;

use rayon::prelude::*;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};

/// Packs a +-1 bit row into 64-bit words; +1 maps to a set bit. Unused high
/// bits of the last word stay zero so XOR/popcount sees no garbage.
pub fn pack_bits(bits: &[i8]) -> Vec<u64> {
    let words = bits.len().div_ceil(64);
    let mut out = vec![0u64; words];
    for (i, &b) in bits.iter().enumerate() {
        if b > 0 {
            out[i / 64] |= 1u64 << (i % 64);
        }
    }
    out
}

pub fn unpack_bits(words: &[u64], m: usize) -> Vec<i8> {
    (0..m)
        .map(|i| if words[i / 64] >> (i % 64) & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Packed code database with one label per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeDatabase {
    m: usize,
    words_per_row: usize,
    codes: Vec<u64>,
    labels: Vec<usize>,
}

impl CodeDatabase {
    pub fn new(codes: &CodeMatrix, labels: &[usize]) -> Self {
        assert_eq!(codes.n(), labels.len(), "one label per code row");
        let m = codes.m();
        let words_per_row = m.div_ceil(64);
        let mut packed = Vec::with_capacity(codes.n() * words_per_row);
        for i in 0..codes.n() {
            packed.extend(pack_bits(&codes.row(i)));
        }
        CodeDatabase { m, words_per_row, codes: packed, labels: labels.to_vec() }
    }

    /// Rebuilds from already-packed rows (the codes-file layout).
    pub fn from_packed(codes: Vec<u64>, n: usize, m: usize, labels: Vec<usize>) -> Result<Self> {
        let words_per_row = m.div_ceil(64);
        if codes.len() != n * words_per_row {
            return Err(Error::Dimension(format!(
                "{} packed words for n={n}, m={m}",
                codes.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for n={n}", labels.len())));
        }
        Ok(CodeDatabase { m, words_per_row, codes, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.codes[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn packed(&self) -> &[u64] {
        &self.codes
    }

    /// Unpacks back to a +-1 matrix; inverse of [`CodeDatabase::new`].
    pub fn to_code_matrix(&self) -> CodeMatrix {
        let mut bits = ndarray::Array2::from_elem((self.n(), self.m), 1i8);
        for i in 0..self.n() {
            let row = unpack_bits(self.code(i), self.m);
            for (j, &b) in row.iter().enumerate() {
                bits[[i, j]] = b;
            }
        }
        CodeMatrix::new(bits)
    }
}

/// Number of differing bits between two packed codes of equal width.
pub fn hamming_distance(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "code widths differ: {} vs {} words",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Database indices in ascending Hamming-distance order; ties break toward
/// the smaller original index.
pub fn rank_by_hamming(query: &[u64], db: &CodeDatabase) -> Result<Vec<usize>> {
    if query.len() != db.words_per_row() {
        return Err(Error::Dimension(format!(
            "query has {} words, database rows have {}",
            query.len(),
            db.words_per_row()
        )));
    }
    let mut order: Vec<(u32, usize)> = (0..db.n())
        .map(|i| (hamming_distance(query, db.code(i)).expect("width checked"), i))
        .collect();
    order.sort_unstable();
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// Average precision of a relevance sequence in rank order: mean of the
/// precision at each relevant position. `None` when nothing is relevant
/// (such queries are excluded from the mAP mean).
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Fraction of relevant items among everything within Hamming distance
/// `radius`; 0 when nothing is retrieved.
pub fn precision_at_radius(distances: &[u32], relevant: &[bool], radius: u32) -> f64 {
    let mut retrieved = 0usize;
    let mut hits = 0usize;
    for (&d, &r) in distances.iter().zip(relevant.iter()) {
        if d <= radius {
            retrieved += 1;
            if r {
                hits += 1;
            }
        }
    }
    if retrieved == 0 {
        0.0
    } else {
        hits as f64 / retrieved as f64
    }
}

/// Aggregated leave-one-out retrieval quality.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean average precision over queries with at least one relevant item;
    /// `None` when every query was excluded.
    pub map: Option<f64>,
    /// Mean precision at each Hamming radius `0..=m`, averaged over all
    /// queries (zero-retrieval counts as precision 0).
    pub mean_precision_at_radius: Vec<f64>,
    /// `(recall, precision)` per radius; recall averages over included
    /// queries only.
    pub pr_curve: Vec<(f64, f64)>,
    pub queries: usize,
    pub excluded_queries: usize,
    pub seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut radius_map = serde_json::Map::new();
        for (r, &p) in self.mean_precision_at_radius.iter().enumerate() {
            radius_map.insert(r.to_string(), serde_json::json!(p));
        }
        serde_json::json!({
            "map": self.map,
            "precision_at_radius": radius_map,
            "pr_curve": self.pr_curve.iter().map(|&(r, p)| vec![r, p]).collect::<Vec<_>>(),
            "queries": self.queries,
            "excluded_queries": self.excluded_queries,
            "seconds": self.seconds,
        })
    }
}

struct QueryOutcome {
    ap: Option<f64>,
    precision: Vec<f64>,
    recall: Option<Vec<f64>>,
}

/// Leave-one-out evaluation: every item queries the rest of the database,
/// relevance is label equality. Queries run in parallel and are merged in
/// index order.
pub fn evaluate(db: &CodeDatabase) -> Result<EvalReport> {
    if db.n() < 2 {
        return Err(Error::Degenerate("evaluation needs at least 2 items".into()));
    }
    let start = Instant::now();
    let m = db.m();
    let outcomes: Vec<QueryOutcome> = (0..db.n())
        .into_par_iter()
        .map(|q| {
            let mut entries: Vec<(u32, usize)> = (0..db.n())
                .filter(|&i| i != q)
                .map(|i| (hamming_distance(db.code(q), db.code(i)).expect("same width"), i))
                .collect();
            entries.sort_unstable();
            let relevance: Vec<bool> =
                entries.iter().map(|&(_, i)| db.label(i) == db.label(q)).collect();
            let ap = average_precision(&relevance);
            let total_relevant = relevance.iter().filter(|&&r| r).count();

            let mut retrieved_at = vec![0usize; m + 1];
            let mut relevant_at = vec![0usize; m + 1];
            for (&(d, _), &rel) in entries.iter().zip(relevance.iter()) {
                retrieved_at[d as usize] += 1;
                if rel {
                    relevant_at[d as usize] += 1;
                }
            }
            let mut precision = Vec::with_capacity(m + 1);
            let mut recall = Vec::with_capacity(m + 1);
            let mut cum_retrieved = 0usize;
            let mut cum_relevant = 0usize;
            for r in 0..=m {
                cum_retrieved += retrieved_at[r];
                cum_relevant += relevant_at[r];
                precision.push(if cum_retrieved == 0 {
                    0.0
                } else {
                    cum_relevant as f64 / cum_retrieved as f64
                });
                recall.push(if total_relevant == 0 {
                    0.0
                } else {
                    cum_relevant as f64 / total_relevant as f64
                });
            }
            let recall = if total_relevant == 0 { None } else { Some(recall) };
            QueryOutcome { ap, precision, recall }
        })
        .collect();

    let included: Vec<f64> = outcomes.iter().filter_map(|o| o.ap).collect();
    let map = if included.is_empty() {
        None
    } else {
        Some(included.iter().sum::<f64>() / included.len() as f64)
    };
    let mut mean_precision = vec![0.0; m + 1];
    for o in &outcomes {
        for (r, &p) in o.precision.iter().enumerate() {
            mean_precision[r] += p;
        }
    }
    for p in &mut mean_precision {
        *p /= outcomes.len() as f64;
    }
    let mut mean_recall = vec![0.0; m + 1];
    let recall_count = outcomes.iter().filter(|o| o.recall.is_some()).count();
    if recall_count > 0 {
        for o in &outcomes {
            if let Some(rec) = &o.recall {
                for (r, &v) in rec.iter().enumerate() {
                    mean_recall[r] += v;
                }
            }
        }
        for v in &mut mean_recall {
            *v /= recall_count as f64;
        }
    }
    let pr_curve = mean_recall.iter().copied().zip(mean_precision.iter().copied()).collect();

    Ok(EvalReport {
        map,
        mean_precision_at_radius: mean_precision,
        pr_curve,
        queries: db.n(),
        excluded_queries: outcomes.len() - included.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
