//! CSV and JSON metric exports.

use std::io::Write;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{RhoStats, SumRateCurve};
use crate::error::Result;
use crate::scalar::Scalar;

/// `index,rho`, one row per sample.
pub fn write_rho_csv<T: Scalar, W: Write>(stats: &RhoStats<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "rho"])?;
    for (i, r) in stats.values.iter().enumerate() {
        w.write_record([i.to_string(), r.as_f64().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `rho,cdf` on the fixed grid.
pub fn write_cdf_csv<T: Scalar, W: Write>(stats: &RhoStats<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "cdf"])?;
    for (x, f) in &stats.cdf {
        w.write_record([x.as_f64().to_string(), f.as_f64().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `precoder,snr_db,sum_rate`, one row per (precoder, SNR) pair.
pub fn write_sum_rate_csv<W: Write>(curve: &SumRateCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["precoder", "snr_db", "sum_rate"])?;
    for p in &curve.points {
        w.write_record([p.precoder.name().to_string(), p.snr_db.to_string(), p.rate.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
}

impl From<Ratio<u64>> for CompressionSummary {
    fn from(r: Ratio<u64>) -> Self {
        CompressionSummary {
            numerator: *r.numer(),
            denominator: *r.denom(),
            value: *r.numer() as f64 / *r.denom() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub test_count: usize,
    pub median_rho: f64,
    pub mean_rho: f64,
    /// `2 Na Ns / (d + 1)`.
    pub compression_ratio: CompressionSummary,
    /// `2 Na Ns / d`.
    pub compression_ratio_without_norm: CompressionSummary,
    pub param_count: u64,
    pub encoder_param_count: u64,
    pub decoder_param_count: u64,
    pub oracle: bool,
}
