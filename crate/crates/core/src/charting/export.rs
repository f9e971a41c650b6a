//! Chart files and chart-quality measurement.
//!
//! CSV columns are `index,z_1,...,z_d`; JSON is `{"dim": d, "locations": [[..], ..]}`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Chart;
use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;

pub fn write_chart_csv<T: Scalar, W: Write>(chart: &Chart<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend((1..=chart.dim()).map(|k| format!("z_{k}")));
    w.write_record(&header)?;
    for (i, row) in chart.locations.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|x| format!("{:e}", x.as_f64())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chart_csv<T: Scalar, R: Read>(input: R) -> Result<Chart<T>> {
    let mut r = csv::Reader::from_reader(input);
    let d = r.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(FormatError::Malformed("chart CSV has no coordinate columns".into()).into());
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| FormatError::Malformed(format!("bad index on row {row}")))?;
        if idx != row {
            return Err(FormatError::Malformed(format!("row {row} has index {idx}")).into());
        }
        for field in rec.iter().skip(1) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| FormatError::Malformed(format!("bad coordinate on row {row}")))?;
            values.push(T::lit(x));
        }
        n += 1;
    }
    let locations = Array2::from_shape_vec((n, d), values).map_err(|e| FormatError::Malformed(e.to_string()))?;
    Chart::from_locations(locations)
}

#[derive(Serialize, Deserialize)]
struct ChartJson {
    dim: usize,
    locations: Vec<Vec<f64>>,
}

pub fn write_chart_json<T: Scalar, W: Write>(chart: &Chart<T>, out: W) -> Result<()> {
    let doc = ChartJson {
        dim: chart.dim(),
        locations: chart
            .locations
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect(),
    };
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

pub fn read_chart_json<T: Scalar, R: Read>(input: R) -> Result<Chart<T>> {
    let doc: ChartJson = serde_json::from_reader(input)?;
    let n = doc.locations.len();
    if doc.locations.iter().any(|r| r.len() != doc.dim) {
        return Err(FormatError::Malformed("chart row length disagrees with dim".into()).into());
    }
    let flat = doc.locations.into_iter().flatten().map(T::lit).collect();
    let locations = Array2::from_shape_vec((n, doc.dim), flat).map_err(|e| FormatError::Malformed(e.to_string()))?;
    Chart::from_locations(locations)
}

/// Least-squares affine map from chart locations to ground-truth positions.
#[derive(Debug, Clone)]
pub struct AffineAlignment {
    pub mean_error: f64,
    pub max_error: f64,
    /// `(d + 1) x 2`: linear part followed by the offset row.
    pub coefficients: Vec<[f64; 2]>,
}

pub fn affine_alignment<T: Scalar>(chart: &Chart<T>, positions: &[[f64; 2]]) -> Result<AffineAlignment> {
    let n = chart.len();
    let d = chart.dim();
    if positions.len() != n {
        return Err(Error::Dimension {
            what: "position count",
            expected: n,
            found: positions.len(),
        });
    }
    if n <= d {
        return Err(Error::config("affine alignment needs more points than dimensions"));
    }
    let x = DMatrix::from_fn(
        n,
        d + 1,
        |i, j| if j < d { chart.locations[[i, j]].as_f64() } else { 1.0 },
    );
    let p = DMatrix::from_fn(n, 2, |i, j| positions[i][j]);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&p, 1e-12)
        .map_err(|e| Error::domain(format!("affine fit failed: {e}")))?;
    let fit = &x * &coef;
    let errors: Vec<f64> = (0..n)
        .map(|i| (fit[(i, 0)] - p[(i, 0)]).hypot(fit[(i, 1)] - p[(i, 1)]))
        .collect();
    Ok(AffineAlignment {
        mean_error: errors.iter().sum::<f64>() / n as f64,
        max_error: errors.iter().cloned().fold(0.0, f64::max),
        coefficients: (0..=d).map(|r| [coef[(r, 0)], coef[(r, 1)]]).collect(),
    })
}
