//! Model checkpoints.
//!
//! Binary layout (little-endian, f64 payloads):
//!
//! ```text
//! "CCKP" | u16 version = 1
//! u64 d | u64 F | u64 T | u64 N | u64 D | u64 N_out | f64 beta | u64 target subcarrier
//! calibration D x N, column-major (re, im) | chart d x N, column-major
//! B (F x d, row-major) | W1, b1, W2, b2, W3, b3 (row-major, (re, im))
//! u32 CRC-32 of every byte after the version field
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{ComplexDense, DecoderParams, EncoderParams, Model};
use crate::binio::{Reader, Writer};
use crate::error::{FormatError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let enc = &model.encoder;
    let dec = &model.decoder;
    let mut w = Writer::new(&CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    for v in [
        enc.embedding_dim(),
        dec.frequency_count(),
        dec.hidden_width(),
        enc.len(),
        enc.channel_dim(),
        dec.output_dim(),
    ] {
        w.u64(v as u64);
    }
    w.f64(enc.beta.as_f64());
    w.u64(model.target_subcarrier as u64);
    let complex = |w: &mut Writer, z: &Complex<T>| {
        w.f64(z.re.as_f64());
        w.f64(z.im.as_f64());
    };
    enc.calibration.iter().for_each(|z| complex(&mut w, z));
    enc.chart.iter().for_each(|x| w.f64(x.as_f64()));
    dec.frequencies.iter().for_each(|x| w.f64(x.as_f64()));
    for layer in &dec.layers {
        layer.weights.iter().for_each(|z| complex(&mut w, z));
        layer.bias.iter().for_each(|z| complex(&mut w, z));
    }
    w.finish()
}

fn read_complex<T: Scalar>(r: &mut Reader<'_>) -> Result<Complex<T>, FormatError> {
    Ok(Complex::new(T::lit(r.f64()?), T::lit(r.f64()?)))
}

fn read_dense<T: Scalar>(r: &mut Reader<'_>, outputs: usize, inputs: usize) -> Result<ComplexDense<T>> {
    let mut vals = Vec::with_capacity(outputs * inputs);
    for _ in 0..outputs * inputs {
        vals.push(read_complex(r)?);
    }
    let mut bias = Vec::with_capacity(outputs);
    for _ in 0..outputs {
        bias.push(read_complex(r)?);
    }
    Ok(ComplexDense {
        weights: Array2::from_shape_vec((outputs, inputs), vals).expect("shape"),
        bias: Array1::from(bias),
    })
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader::open(bytes, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let d = r.usize()?;
    let f = r.usize()?;
    let t = r.usize()?;
    let n = r.usize()?;
    let dim = r.usize()?;
    let n_out = r.usize()?;
    let beta = r.f64()?;
    let target = r.usize()?;
    let scalars = [
        n.checked_mul(dim).and_then(|x| x.checked_mul(2)),
        n.checked_mul(d),
        f.checked_mul(d),
        f.checked_add(1)
            .and_then(|x| x.checked_mul(t))
            .and_then(|x| x.checked_mul(2)),
        t.checked_add(1)
            .and_then(|x| x.checked_mul(t))
            .and_then(|x| x.checked_mul(2)),
        t.checked_add(1)
            .and_then(|x| x.checked_mul(n_out))
            .and_then(|x| x.checked_mul(2)),
    ]
    .into_iter()
    .try_fold(0usize, |acc, x| x.and_then(|x| acc.checked_add(x)))
    .and_then(|x| x.checked_mul(8))
    .ok_or_else(|| FormatError::Malformed("checkpoint dimensions overflow".into()))?;
    r.require(scalars)?;

    let mut cal = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        cal.push(read_complex(&mut r)?);
    }
    let mut chart = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        chart.push(T::lit(r.f64()?));
    }
    let mut freq = Vec::with_capacity(f * d);
    for _ in 0..f * d {
        freq.push(T::lit(r.f64()?));
    }
    let l1 = read_dense(&mut r, t, f)?;
    let l2 = read_dense(&mut r, t, t)?;
    let l3 = read_dense(&mut r, n_out, t)?;
    r.finish()?;

    let encoder = EncoderParams::new(
        Array2::from_shape_vec((n, dim), cal).expect("shape"),
        Array2::from_shape_vec((n, d), chart).expect("shape"),
        T::lit(beta),
    )?;
    let decoder = DecoderParams::new(Array2::from_shape_vec((f, d), freq).expect("shape"), [l1, l2, l3])?;
    Model::new(encoder, decoder, n_out, target)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(crate::binio::write_atomic(path.as_ref(), &write_checkpoint(model))?)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    read_checkpoint(&std::fs::read(path)?)
}

type Pairs = Vec<Vec<[f64; 2]>>;

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weights: Pairs,
    bias: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: u16,
    antenna_count: usize,
    target_subcarrier: usize,
    beta: f64,
    /// One row per calibration channel.
    calibration: Pairs,
    chart: Vec<Vec<f64>>,
    frequencies: Vec<Vec<f64>>,
    layers: Vec<LayerJson>,
}

fn pairs<T: Scalar>(a: &Array2<Complex<T>>) -> Pairs {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect())
        .collect()
}

fn reals<T: Scalar>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect()
}

fn from_pairs<T: Scalar>(rows: &Pairs, what: &str) -> Result<Array2<Complex<T>>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(FormatError::Malformed(format!("ragged {what}")).into());
    }
    let flat = rows
        .iter()
        .flatten()
        .map(|&[re, im]| Complex::new(T::lit(re), T::lit(im)))
        .collect();
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("shape"))
}

fn from_reals<T: Scalar>(rows: &[Vec<f64>], what: &str) -> Result<Array2<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(FormatError::Malformed(format!("ragged {what}")).into());
    }
    let flat = rows.iter().flatten().map(|&x| T::lit(x)).collect();
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("shape"))
}

pub fn save_checkpoint_json<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let doc = CheckpointJson {
        version: CHECKPOINT_VERSION,
        antenna_count: model.antenna_count,
        target_subcarrier: model.target_subcarrier,
        beta: model.encoder.beta.as_f64(),
        calibration: pairs(&model.encoder.calibration),
        chart: reals(&model.encoder.chart),
        frequencies: reals(&model.decoder.frequencies),
        layers: model
            .decoder
            .layers
            .iter()
            .map(|l| LayerJson {
                weights: pairs(&l.weights),
                bias: l.bias.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect(),
            })
            .collect(),
    };
    Ok(crate::binio::write_atomic(
        path.as_ref(),
        serde_json::to_string_pretty(&doc)?.as_bytes(),
    )?)
}

pub fn load_checkpoint_json<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let doc: CheckpointJson = serde_json::from_slice(&std::fs::read(path)?)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: CHECKPOINT_VERSION,
            found: doc.version,
        }
        .into());
    }
    if doc.layers.len() != 3 {
        return Err(FormatError::Malformed(format!("expected 3 layers, found {}", doc.layers.len())).into());
    }
    let mut layers = Vec::with_capacity(3);
    for l in &doc.layers {
        let weights = from_pairs::<T>(&l.weights, "layer weights")?;
        let bias = l
            .bias
            .iter()
            .map(|&[re, im]| Complex::new(T::lit(re), T::lit(im)))
            .collect();
        layers.push(ComplexDense {
            weights,
            bias: Array1::from_vec(bias),
        });
    }
    let layers: [ComplexDense<T>; 3] = layers
        .try_into()
        .unwrap_or_else(|_| unreachable!("exactly three layers are parsed"));
    let encoder = EncoderParams::new(
        from_pairs(&doc.calibration, "calibration")?,
        from_reals(&doc.chart, "chart")?,
        T::lit(doc.beta),
    )?;
    let decoder = DecoderParams::new(from_reals(&doc.frequencies, "frequencies")?, layers)?;
    Model::new(encoder, decoder, doc.antenna_count, doc.target_subcarrier)
}
