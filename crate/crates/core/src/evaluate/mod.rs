//! Precoding stage, single-user alignment metrics and multi-user sum rate.
//!
//! Learned precoders are single-subcarrier unit vectors `v`. The second
//! decoder stage rescales them by the fed-back channel norm and applies a
//! linear multi-user precoder under the per-user power constraint
//! `||w_k|| = 1/sqrt(K)`.

mod export;

pub use export::{write_cdf_csv, write_rho_csv, write_sum_rate_csv, CompressionSummary, EvalSummary};

use ndarray::Array2;
use num_complex::Complex;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ChannelSample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Model, ParamShape};
use crate::scalar::Scalar;

/// Number of points on the exported CDF grid over `[0, 1]`.
pub const CDF_POINTS: usize = 101;

/// `|v^H h|^2 / (||v||^2 ||h||^2)`, clamped to `[0, 1]` against rounding.
pub fn rho<T: Scalar>(v: &[Complex<T>], h: &[Complex<T>]) -> Result<T> {
    if v.len() != h.len() {
        return Err(Error::Dimension {
            what: "precoder length",
            expected: h.len(),
            found: v.len(),
        });
    }
    let nv = linalg::norm_sqr(v);
    let nh = linalg::norm_sqr(h);
    if !(nv > T::zero()) || !(nh > T::zero()) {
        return Err(Error::domain("rho of a zero vector"));
    }
    let r = linalg::inner(v, h).norm_sqr() / (nv * nh);
    Ok(r.min(T::one()))
}

/// Per-sample alignment values with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoStats<T> {
    pub values: Vec<T>,
    pub mean: T,
    pub median: T,
    /// `(x, fraction of values <= x)` on [`CDF_POINTS`] equally spaced `x`.
    pub cdf: Vec<(T, T)>,
}

impl<T: Scalar> RhoStats<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("rho statistics of an empty set"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { stage: "rho" });
        }
        let n = values.len();
        let mean = values.iter().copied().sum::<T>() / T::lit(n as f64);
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
        };
        let cdf = (0..CDF_POINTS)
            .map(|i| {
                let x = T::lit(i as f64 / (CDF_POINTS - 1) as f64);
                let count = sorted.partition_point(|&v| v <= x);
                (x, T::lit(count as f64 / n as f64))
            })
            .collect();
        Ok(RhoStats {
            values,
            mean,
            median,
            cdf,
        })
    }
}

/// Alignment of `precoder(sample)` with each sample's target subcarrier.
pub fn rho_stats_by<T, F>(samples: &[&ChannelSample<T>], target_subcarrier: usize, precoder: F) -> Result<RhoStats<T>>
where
    T: Scalar,
    F: Fn(&ChannelSample<T>) -> Result<Vec<Complex<T>>> + Sync,
{
    let values = samples
        .par_iter()
        .map(|s| rho(&precoder(s)?, s.subcarrier(target_subcarrier)))
        .collect::<Result<Vec<_>>>()?;
    RhoStats::from_values(values)
}

/// Alignment of the learned precoder `decode(encode(h))` on `samples`.
pub fn rho_stats<T: Scalar>(model: &Model<T>, samples: &[&ChannelSample<T>]) -> Result<RhoStats<T>> {
    rho_stats_by(samples, model.target_subcarrier, |s| model.precoder(&s.h))
}

/// Denormalization: `norm * v`.
pub fn reconstruct_channel<T: Scalar>(v: &[Complex<T>], norm: T) -> Result<Vec<Complex<T>>> {
    if !(norm > T::zero()) {
        return Err(Error::domain("reconstruction norm must be > 0"));
    }
    Ok(v.iter().map(|z| z * norm).collect())
}

/// `Na x K` matrix whose columns each have norm `1/sqrt(K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix<T> {
    w: Array2<Complex<T>>,
}

impl<T: Scalar> PrecodingMatrix<T> {
    fn from_columns_normalized(mut w: Array2<Complex<T>>) -> Result<Self> {
        let k = w.ncols();
        let target = T::one() / T::lit(k as f64).sqrt();
        for (j, mut col) in w.columns_mut().into_iter().enumerate() {
            let n = col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
            if !n.is_finite() {
                return Err(Error::NonFinite { stage: "precoder" });
            }
            if !(n > T::zero()) {
                return Err(Error::domain(format!("precoder column {j} is zero")));
            }
            let s = target / n;
            col.iter_mut().for_each(|z| *z *= s);
        }
        Ok(PrecodingMatrix { w })
    }

    pub fn matrix(&self) -> &Array2<Complex<T>> {
        &self.w
    }

    pub fn user_count(&self) -> usize {
        self.w.ncols()
    }

    pub fn antenna_count(&self) -> usize {
        self.w.nrows()
    }
}

fn check_columns<T: Scalar>(h: &Array2<Complex<T>>) -> Result<()> {
    if h.ncols() == 0 || h.nrows() == 0 {
        return Err(Error::config("channel matrix must have at least one user and antenna"));
    }
    for (k, col) in h.columns().into_iter().enumerate() {
        if !(col.iter().map(|z| z.norm_sqr()).sum::<T>() > T::zero()) {
            return Err(Error::domain(format!("channel column {k} is zero")));
        }
    }
    Ok(())
}

/// `w_k = h_k / (sqrt(K) ||h_k||)`.
pub fn mrt_precoder<T: Scalar>(h: &Array2<Complex<T>>) -> Result<PrecodingMatrix<T>> {
    check_columns(h)?;
    PrecodingMatrix::from_columns_normalized(h.clone())
}

/// `(H H^H + K s2 I)^{-1} H` with columns normalized to `1/sqrt(K)`.
///
/// Evaluated as `H (H^H H + K s2 I)^{-1}`, which needs only a `K x K` solve.
pub fn mmse_precoder<T: Scalar>(h: &Array2<Complex<T>>, noise_var: T) -> Result<PrecodingMatrix<T>> {
    if !(noise_var > T::zero()) || !noise_var.is_finite() {
        return Err(Error::domain("noise variance must be finite and > 0"));
    }
    check_columns(h)?;
    let k = h.ncols();
    let reg = T::lit(k as f64) * noise_var;
    let mut gram = vec![Complex::new(T::zero(), T::zero()); k * k];
    for i in 0..k {
        for j in 0..k {
            let hi = h.column(i);
            let hj = h.column(j);
            let mut acc = Complex::new(T::zero(), T::zero());
            for (a, b) in hi.iter().zip(hj.iter()) {
                acc += a.conj() * b;
            }
            if i == j {
                acc.re += reg;
                acc.im = T::zero();
            }
            gram[i * k + j] = acc;
        }
    }
    let mut eye = vec![Complex::new(T::zero(), T::zero()); k * k];
    (0..k).for_each(|i| eye[i * k + i] = Complex::new(T::one(), T::zero()));
    let inv = linalg::solve_hpd(&gram, &eye, k, k)?;
    let inv = Array2::from_shape_vec((k, k), inv).expect("shape");
    PrecodingMatrix::from_columns_normalized(h.dot(&inv))
}

/// `sum_k log2(1 + |h_k^H w_k|^2 / (s2_k + sum_{j != k} |h_k^H w_j|^2))`.
pub fn sum_rate<T: Scalar>(channels: &Array2<Complex<T>>, w: &Array2<Complex<T>>, noise_vars: &[T]) -> Result<T> {
    let k = channels.ncols();
    if w.dim() != channels.dim() {
        return Err(Error::Dimension {
            what: "precoding matrix shape",
            expected: channels.len(),
            found: w.len(),
        });
    }
    if noise_vars.len() != k {
        return Err(Error::Dimension {
            what: "noise variance count",
            expected: k,
            found: noise_vars.len(),
        });
    }
    if noise_vars.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::domain("noise variances must be > 0"));
    }
    // gains[(k, j)] = |h_k^H w_j|^2
    let gains = channels.t().mapv(|z| z.conj()).dot(w).mapv(|z| z.norm_sqr());
    let mut total = T::zero();
    for user in 0..k {
        let signal = gains[(user, user)];
        let interference = (0..k).filter(|&j| j != user).map(|j| gains[(user, j)]).sum::<T>();
        total += (T::one() + signal / (noise_vars[user] + interference)).log2();
    }
    Ok(total)
}

/// Disjoint user groups of equal size over sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let k = groups.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::config("partition needs at least one nonempty group"));
        }
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            if g.len() != k {
                return Err(Error::config("groups must all have the same size"));
            }
            if !g.iter().all(|i| seen.insert(*i)) {
                return Err(Error::config("groups must be disjoint"));
            }
        }
        Ok(GroupPartition { groups })
    }

    /// `floor(n / k)` groups drawn from a seeded uniform permutation of `0..n`.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::config(format!("group size {k} must be in 1..={n}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::new(idx.chunks_exact(k).map(<[usize]>::to_vec).collect())
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    LearnedMrt,
    LearnedMmse,
    TrueMrt,
    TrueMmse,
}

impl PrecoderKind {
    pub const ALL: [PrecoderKind; 4] = [
        PrecoderKind::LearnedMrt,
        PrecoderKind::LearnedMmse,
        PrecoderKind::TrueMrt,
        PrecoderKind::TrueMmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrecoderKind::LearnedMrt => "learned_mrt",
            PrecoderKind::LearnedMmse => "learned_mmse",
            PrecoderKind::TrueMrt => "true_mrt",
            PrecoderKind::TrueMmse => "true_mmse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumRatePoint {
    pub precoder: PrecoderKind,
    pub snr_db: f64,
    /// Average over groups, bits/s/Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumRateCurve {
    pub user_count: usize,
    pub group_count: usize,
    pub points: Vec<SumRatePoint>,
}

impl SumRateCurve {
    pub fn rates(&self, kind: PrecoderKind) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.precoder == kind)
            .map(|p| (p.snr_db, p.rate))
            .collect()
    }
}

/// Noise variance giving mean per-user received SNR `snr_db` under true MRT:
/// `mean ||h_k||^2 / (K * s2) = 10^(snr_db / 10)`.
pub fn noise_variance_for_snr(mean_channel_power: f64, user_count: usize, snr_db: f64) -> f64 {
    mean_channel_power / user_count as f64 / 10f64.powf(snr_db / 10.0)
}

fn columns<T: Scalar>(cols: &[&[Complex<T>]]) -> Array2<Complex<T>> {
    let na = cols[0].len();
    Array2::from_shape_fn((na, cols.len()), |(a, k)| cols[k][a])
}

/// Sum-rate sweep with channel estimates supplied by `estimate`.
///
/// Learned curves use `estimate(sample)` as the channel matrix; true curves
/// use the target-subcarrier channel. Noise variance is equal across users
/// and calibrated per SNR point with [`noise_variance_for_snr`] over the
/// grouped samples.
pub fn sum_rate_sweep_by<T, F>(
    samples: &[&ChannelSample<T>],
    target_subcarrier: usize,
    partition: &GroupPartition,
    snr_grid_db: &[f64],
    estimate: F,
) -> Result<SumRateCurve>
where
    T: Scalar,
    F: Fn(&ChannelSample<T>) -> Result<Vec<Complex<T>>> + Sync,
{
    if let Some(&bad) = partition.groups().iter().flatten().find(|&&i| i >= samples.len()) {
        return Err(Error::config(format!(
            "group index {bad} out of range for {} samples",
            samples.len()
        )));
    }
    let k = partition.group_size();
    let members = partition.groups().iter().flatten();
    let count = partition.groups().len() * k;
    let mean_power = members
        .map(|&i| linalg::norm_sqr(samples[i].subcarrier(target_subcarrier)).as_f64())
        .sum::<f64>()
        / count as f64;

    let per_group: Vec<Vec<f64>> = partition
        .groups()
        .par_iter()
        .map(|g| -> Result<Vec<f64>> {
            let truth: Vec<&[Complex<T>]> = g.iter().map(|&i| samples[i].subcarrier(target_subcarrier)).collect();
            let est = g.iter().map(|&i| estimate(samples[i])).collect::<Result<Vec<_>>>()?;
            let est_refs: Vec<&[Complex<T>]> = est.iter().map(Vec::as_slice).collect();
            let h = columns(&truth);
            let h_hat = columns(&est_refs);
            let true_mrt = mrt_precoder(&h)?;
            let learned_mrt = mrt_precoder(&h_hat)?;
            let mut out = Vec::with_capacity(snr_grid_db.len() * 4);
            for &snr in snr_grid_db {
                let s2 = T::lit(noise_variance_for_snr(mean_power, k, snr));
                let noise = vec![s2; k];
                for kind in PrecoderKind::ALL {
                    let w = match kind {
                        PrecoderKind::LearnedMrt => learned_mrt.clone(),
                        PrecoderKind::TrueMrt => true_mrt.clone(),
                        PrecoderKind::LearnedMmse => mmse_precoder(&h_hat, s2)?,
                        PrecoderKind::TrueMmse => mmse_precoder(&h, s2)?,
                    };
                    out.push(sum_rate(&h, w.matrix(), &noise)?.as_f64());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let groups = per_group.len() as f64;
    let mut points = Vec::with_capacity(snr_grid_db.len() * 4);
    for (si, &snr) in snr_grid_db.iter().enumerate() {
        for (ki, kind) in PrecoderKind::ALL.into_iter().enumerate() {
            let total: f64 = per_group.iter().map(|r| r[si * 4 + ki]).sum();
            points.push(SumRatePoint {
                precoder: kind,
                snr_db: snr,
                rate: total / groups,
            });
        }
    }
    Ok(SumRateCurve {
        user_count: k,
        group_count: per_group.len(),
        points,
    })
}

/// Sum-rate sweep for a trained model over seeded random groups of `k` users.
/// Learned estimates are `||h_target|| * decode(encode(h))`.
pub fn sum_rate_sweep<T: Scalar>(
    model: &Model<T>,
    samples: &[&ChannelSample<T>],
    k: usize,
    snr_grid_db: &[f64],
    group_seed: u64,
) -> Result<SumRateCurve> {
    let partition = GroupPartition::random(samples.len(), k, group_seed)?;
    let target = model.target_subcarrier;
    sum_rate_sweep_by(samples, target, &partition, snr_grid_db, |s| {
        reconstruct_channel(&model.precoder(&s.h)?, s.subcarrier_norms[target])
    })
}

/// `2 Na Ns / (d + 1)`: raw real coefficients over chart location plus norm.
pub fn compression_ratio(antenna_count: u64, subcarrier_count: u64, embedding_dim: u64) -> Result<Ratio<u64>> {
    if antenna_count == 0 || subcarrier_count == 0 || embedding_dim == 0 {
        return Err(Error::config("compression ratio arguments must be >= 1"));
    }
    Ok(Ratio::new(2 * antenna_count * subcarrier_count, embedding_dim + 1))
}

/// `2 Na Ns / d`: the ratio when the channel norm is not counted.
pub fn compression_ratio_without_norm(
    antenna_count: u64,
    subcarrier_count: u64,
    embedding_dim: u64,
) -> Result<Ratio<u64>> {
    if antenna_count == 0 || subcarrier_count == 0 || embedding_dim == 0 {
        return Err(Error::config("compression ratio arguments must be >= 1"));
    }
    Ok(Ratio::new(2 * antenna_count * subcarrier_count, embedding_dim))
}

/// Learnable real scalars of a model with `calibration` encoder columns.
pub fn param_count(shape: &ParamShape, calibration: usize, encoder_learnable: bool) -> u64 {
    shape.param_count(calibration, encoder_learnable)
}

#[cfg(test)]
mod tests;
