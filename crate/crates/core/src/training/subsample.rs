//! Similarity subsampling of the calibration set.
//!
//! Keeps `Ñ` calibration columns whose embeddings are mutually dissimilar.
//! The kept set starts as the first `Ñ` columns. Each remaining column `i`
//! is compared with the current kept set: if its largest similarity to the
//! set is below the similarity of the most similar kept pair `(k, l)`, it
//! replaces `k` with probability `p` and `l` otherwise. Every accepted swap
//! therefore leaves the largest pairwise similarity inside the set no larger.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderParams, Model};
use crate::scalar::Scalar;

/// Embeddings with a smaller Euclidean norm have no defined cosine similarity.
pub const MIN_EMBEDDING_NORM: f64 = 1e-12;

fn default_p() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub keep_count: usize,
    #[serde(default = "default_p")]
    pub swap_probability: f64,
    pub rng_seed: u64,
}

impl SubsampleConfig {
    pub fn new(keep_count: usize, rng_seed: u64) -> Self {
        SubsampleConfig {
            keep_count,
            swap_probability: default_p(),
            rng_seed,
        }
    }

    pub fn validate(&self, available: usize) -> Result<()> {
        if self.keep_count == 0 {
            return Err(Error::config("keep_count must be >= 1"));
        }
        if self.keep_count > available {
            return Err(Error::config(format!(
                "keep_count {} exceeds the {available} calibration columns",
                self.keep_count
            )));
        }
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return Err(Error::config("swap_probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// `|<a, b>| / (||a|| ||b||)`.
pub fn embedding_cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "embedding length",
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let nb = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let floor = T::lit(MIN_EMBEDDING_NORM);
    if !(na >= floor) || !(nb >= floor) {
        return Err(Error::domain("cosine similarity of a (near-)zero embedding"));
    }
    let dot = a.iter().zip(b).map(|(x, y)| *x * *y).sum::<T>();
    Ok((dot.abs() / (na * nb)).min(T::one()))
}

/// Cosine similarity of the encoded chart locations of two channels.
pub fn chart_cosine_similarity<T: Scalar>(
    model: &Model<T>,
    h_i: &[num_complex::Complex<T>],
    h_j: &[num_complex::Complex<T>],
) -> Result<T> {
    embedding_cosine_similarity(&model.encode(h_i)?.z, &model.encode(h_j)?.z)
}

/// One accepted replacement: `candidate` took `slot`, evicting `evicted`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub candidate: usize,
    pub slot: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleTrace {
    /// Input column index held by each slot of the kept set.
    pub kept: Vec<usize>,
    pub swaps: Vec<Swap>,
    /// Largest pairwise similarity in the kept set: initially, then after
    /// each accepted swap. Empty when fewer than two columns are kept.
    pub max_similarity: Vec<f64>,
}

/// Per-slot row maximum `(value, column)`, ties to the smaller column.
fn row_max(sim: &Array2<f64>, r: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (c, &v) in sim.row(r).iter().enumerate() {
        if c != r && v > best.0 {
            best = (v, c);
        }
    }
    best
}

/// Most similar pair `(k, l)`, `k < l`, ties to the lexicographically smaller.
fn max_pair(rows: &[(f64, usize)]) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX, usize::MAX);
    for (r, &(v, c)) in rows.iter().enumerate() {
        let (k, l) = (r.min(c), r.max(c));
        if v > best.0 || (v == best.0 && (k, l) < (best.1, best.2)) {
            best = (v, k, l);
        }
    }
    best
}

/// Runs the selection on precomputed embeddings.
pub fn subsample_embeddings<T: Scalar>(embeddings: &[Vec<T>], config: &SubsampleConfig) -> Result<SubsampleTrace> {
    config.validate(embeddings.len())?;
    let m = config.keep_count;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sim_of = |a: usize, b: usize| embedding_cosine_similarity(&embeddings[a], &embeddings[b]).map(|s| s.as_f64());
    let mut kept: Vec<usize> = (0..m).collect();
    let mut swaps = Vec::new();
    let mut history = Vec::new();

    if m == 1 {
        // Still reject undefined similarities in the input.
        for i in 0..embeddings.len() {
            sim_of(i, i)?;
        }
        return Ok(SubsampleTrace {
            kept,
            swaps,
            max_similarity: history,
        });
    }

    let mut sim = Array2::from_elem((m, m), f64::NEG_INFINITY);
    for a in 0..m {
        for b in a + 1..m {
            let s = sim_of(a, b)?;
            sim[(a, b)] = s;
            sim[(b, a)] = s;
        }
    }
    let mut rows: Vec<(f64, usize)> = (0..m).map(|r| row_max(&sim, r)).collect();
    history.push(max_pair(&rows).0);

    for cand in m..embeddings.len() {
        let to_kept = kept.iter().map(|&j| sim_of(cand, j)).collect::<Result<Vec<_>>>()?;
        let s = to_kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (pair, k, l) = max_pair(&rows);
        if !(s < pair) {
            continue;
        }
        let slot = if rng.random_bool(config.swap_probability) { k } else { l };
        swaps.push(Swap {
            candidate: cand,
            slot,
            evicted: kept[slot],
        });
        kept[slot] = cand;
        for (j, &v) in to_kept.iter().enumerate() {
            if j != slot {
                sim[(slot, j)] = v;
                sim[(j, slot)] = v;
            }
        }
        rows[slot] = row_max(&sim, slot);
        for j in (0..m).filter(|&j| j != slot) {
            let v = sim[(j, slot)];
            let (cur, col) = rows[j];
            if col == slot {
                rows[j] = row_max(&sim, j);
            } else if v > cur || (v == cur && slot < col) {
                rows[j] = (v, slot);
            }
        }
        history.push(max_pair(&rows).0);
    }
    Ok(SubsampleTrace {
        kept,
        swaps,
        max_similarity: history,
    })
}

/// Restricts the model's encoder to a similarity-subsampled calibration set.
/// Embeddings are the encoder outputs of the calibration channels themselves.
pub fn subsample<T: Scalar>(model: &Model<T>, config: &SubsampleConfig) -> Result<(Model<T>, SubsampleTrace)> {
    let enc = &model.encoder;
    config.validate(enc.len())?;
    let embeddings = enc
        .calibration()
        .rows()
        .into_iter()
        .map(|row| Ok(enc.encode(row.as_slice().expect("standard layout"))?.z))
        .collect::<Result<Vec<_>>>()?;
    let trace = subsample_embeddings(&embeddings, config)?;
    let cal = enc.calibration().select(ndarray::Axis(0), &trace.kept);
    let chart = enc.chart().select(ndarray::Axis(0), &trace.kept);
    let encoder = EncoderParams::new(cal, chart, enc.beta())?;
    let out = Model::new(
        encoder,
        model.decoder.clone(),
        model.antenna_count,
        model.target_subcarrier,
    )?;
    Ok((out, trace))
}
