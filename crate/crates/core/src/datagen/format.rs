//! Dataset files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "CCDS" | u16 version = 1
//! u64 Na | u64 Ns | f64 carrier Hz | f64 bandwidth Hz | u64 sample count
//! per sample: u8 split (0 cal, 1 train, 2 test) | f64 x | f64 y | Na*Ns x (f64 re, f64 im)
//! u32 CRC-32 of every byte after the version field
//! ```
//!
//! The JSON mirror carries the same fields and is meant for small fixtures.

use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{ChannelSample, Dataset, DatasetMeta, Split};
use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;

pub const DATASET_MAGIC: [u8; 4] = *b"CCDS";
pub const DATASET_VERSION: u16 = 1;

pub fn write_dataset<T: Scalar>(ds: &Dataset<T>) -> Vec<u8> {
    let mut w = Writer::new(&DATASET_MAGIC, DATASET_VERSION);
    w.u64(ds.meta.antenna_count as u64);
    w.u64(ds.meta.subcarrier_count as u64);
    w.f64(ds.meta.carrier_frequency);
    w.f64(ds.meta.bandwidth);
    w.u64(ds.samples.len() as u64);
    for s in &ds.samples {
        w.u8(s.split.tag());
        w.f64(s.position[0]);
        w.f64(s.position[1]);
        for z in &s.h {
            w.f64(z.re.as_f64());
            w.f64(z.im.as_f64());
        }
    }
    w.finish()
}

pub fn read_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let mut r = Reader::open(bytes, &DATASET_MAGIC, DATASET_VERSION)?;
    let antenna_count = r.usize()?;
    let subcarrier_count = r.usize()?;
    let carrier_frequency = r.f64()?;
    let bandwidth = r.f64()?;
    let count = r.usize()?;
    if antenna_count == 0 || subcarrier_count == 0 {
        return Err(FormatError::Malformed("zero antenna or subcarrier count".into()).into());
    }
    let dim = antenna_count
        .checked_mul(subcarrier_count)
        .ok_or_else(|| FormatError::Malformed("channel dimension overflows".into()))?;
    let per_sample = dim
        .checked_mul(16)
        .and_then(|b| b.checked_add(17))
        .ok_or_else(|| FormatError::Malformed("sample size overflows".into()))?;
    r.require(per_sample.saturating_mul(count))?;

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.u8()?;
        let split = Split::from_tag(tag).ok_or_else(|| FormatError::Malformed(format!("unknown split tag {tag}")))?;
        let position = [r.f64()?, r.f64()?];
        let mut h = Vec::with_capacity(dim);
        for _ in 0..dim {
            let re = r.f64()?;
            let im = r.f64()?;
            h.push(Complex::new(T::lit(re), T::lit(im)));
        }
        samples.push(ChannelSample::new(h, position, antenna_count, split)?);
    }
    r.finish()?;
    Dataset::new(
        DatasetMeta {
            antenna_count,
            subcarrier_count,
            carrier_frequency,
            bandwidth,
        },
        samples,
    )
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(crate::binio::write_atomic(path.as_ref(), &write_dataset(ds))?)
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    read_dataset(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct JsonSample {
    split: Split,
    position: [f64; 2],
    /// `[re, im]` pairs, antenna-major.
    h: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    version: u16,
    #[serde(flatten)]
    meta: DatasetMeta,
    samples: Vec<JsonSample>,
}

pub fn save_dataset_json<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let doc = JsonDataset {
        version: DATASET_VERSION,
        meta: ds.meta,
        samples: ds
            .samples
            .iter()
            .map(|s| JsonSample {
                split: s.split,
                position: s.position,
                h: s.h.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect(),
            })
            .collect(),
    };
    Ok(crate::binio::write_atomic(
        path.as_ref(),
        serde_json::to_string_pretty(&doc)?.as_bytes(),
    )?)
}

pub fn load_dataset_json<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let doc: JsonDataset = serde_json::from_slice(&std::fs::read(path)?)?;
    if doc.version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: DATASET_VERSION,
            found: doc.version,
        }
        .into());
    }
    let samples = doc
        .samples
        .into_iter()
        .map(|s| {
            let h =
                s.h.iter()
                    .map(|&[re, im]| Complex::new(T::lit(re), T::lit(im)))
                    .collect();
            ChannelSample::new(h, s.position, doc.meta.antenna_count, s.split)
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.iter().any(|s| s.h.len() != doc.meta.channel_dim()) {
        return Err(Error::Format(FormatError::Malformed(
            "sample length disagrees with header".into(),
        )));
    }
    Dataset::new(doc.meta, samples)
}
