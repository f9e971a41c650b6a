//! Loss and reverse-mode gradients.
//!
//! Complex parameters are treated as independent real and imaginary parts.
//! A complex gradient entry `g` stores `dL/dRe + j dL/dIm`; with that
//! convention the affine layer `y = W x + b` back-propagates as
//! `g_x = W^H g_y`, `g_W = g_y x^H`, `g_b = g_y`.

use ndarray::Array2;
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ComplexDense, Model};
use crate::scalar::Scalar;

/// Samples per parallel work unit. Fixed so the reduction order, and thus
/// every summed gradient, does not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub calibration: Array2<Complex<T>>,
    pub chart: Array2<T>,
    pub beta: T,
}

/// One gradient per learnable real scalar, shaped like the model.
/// `encoder` is `None` when the encoder is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub encoder: Option<EncoderGrads<T>>,
    pub frequencies: Array2<T>,
    pub layers: [ComplexDense<T>; 3],
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros(model: &Model<T>, include_encoder: bool) -> Self {
        let enc = &model.encoder;
        let dec = &model.decoder;
        let layers = dec.layers();
        GradientSet {
            encoder: include_encoder.then(|| EncoderGrads {
                calibration: Array2::zeros(enc.calibration().dim()),
                chart: Array2::zeros(enc.chart().dim()),
                beta: T::zero(),
            }),
            frequencies: Array2::zeros(dec.frequencies().dim()),
            layers: [
                ComplexDense::zeros(layers[0].outputs(), layers[0].inputs()),
                ComplexDense::zeros(layers[1].outputs(), layers[1].inputs()),
                ComplexDense::zeros(layers[2].outputs(), layers[2].inputs()),
            ],
        }
    }

    pub fn includes_encoder(&self) -> bool {
        self.encoder.is_some()
    }

    /// Flattened in the order of [`Model::for_each_param_mut`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            for z in &e.calibration {
                out.push(z.re);
                out.push(z.im);
            }
            out.extend(e.chart.iter().copied());
            out.push(e.beta);
        }
        out.extend(self.frequencies.iter().copied());
        for l in &self.layers {
            for z in l.weights.iter().chain(l.bias.iter()) {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Self) {
        if let (Some(a), Some(b)) = (&mut self.encoder, &other.encoder) {
            a.calibration += &b.calibration;
            a.chart += &b.chart;
            a.beta += b.beta;
        }
        self.frequencies += &other.frequencies;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

/// Per-sample loss term `1 - |v^H t|^2 / ||t||^2` for the target block `t`.
fn loss_term<T: Scalar>(model: &Model<T>, h: &[Complex<T>]) -> Result<T> {
    let t = target_checked(model, h)?;
    let v = model.precoder(h)?;
    Ok(T::one() - linalg::inner(&v, t).norm_sqr() / linalg::norm_sqr(t))
}

fn target_checked<'a, T: Scalar>(model: &Model<T>, h: &'a [Complex<T>]) -> Result<&'a [Complex<T>]> {
    if h.len() != model.channel_dim() {
        return Err(Error::Dimension {
            what: "channel length",
            expected: model.channel_dim(),
            found: h.len(),
        });
    }
    let t = model.target(h);
    if !(linalg::norm_sqr(t) > T::zero()) {
        return Err(Error::domain("target subcarrier channel has zero norm"));
    }
    Ok(t)
}

/// `1 - mean |v^H t|^2 / ||t||^2` over the batch, `v = decode(encode(h))`.
pub fn loss_batch<T: Scalar, V: AsRef<[Complex<T>]> + Sync>(model: &Model<T>, batch: &[V]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let terms = batch
        .par_iter()
        .map(|h| loss_term(model, h.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let loss = terms.into_iter().sum::<T>() / T::lit(batch.len() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }
    Ok(loss)
}

fn finite<T: Scalar>(v: &[Complex<T>], stage: &'static str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage })
    }
}

fn relu_mask<T: Scalar>(g: &mut [Complex<T>], pre: &[Complex<T>]) {
    for (gi, p) in g.iter_mut().zip(pre) {
        if !(p.re > T::zero()) {
            gi.re = T::zero();
        }
        if !(p.im > T::zero()) {
            gi.im = T::zero();
        }
    }
}

/// Accumulates `g_W += g_y x^H`, `g_b += g_y` and returns `W^H g_y`.
fn dense_backward<T: Scalar>(
    layer: &ComplexDense<T>,
    grad: &mut ComplexDense<T>,
    x: &[Complex<T>],
    g_y: &[Complex<T>],
) -> Vec<Complex<T>> {
    let mut g_x = vec![Complex::new(T::zero(), T::zero()); x.len()];
    for (o, &gy) in g_y.iter().enumerate() {
        grad.bias[o] += gy;
        let mut grow = grad.weights.row_mut(o);
        let wrow = layer.weights.row(o);
        for (i, xi) in x.iter().enumerate() {
            grow[i] += gy * xi.conj();
            g_x[i] += wrow[i].conj() * gy;
        }
    }
    g_x
}

/// Adds `scale * d(loss term)/d(params)` for sample `h` into `acc` and
/// returns the unscaled loss term.
#[allow(clippy::needless_range_loop)] // Index walks several parallel per-column arrays.
fn sample_backward<T: Scalar>(model: &Model<T>, h: &[Complex<T>], scale: T, acc: &mut GradientSet<T>) -> Result<T> {
    let t = target_checked(model, h)?;
    let enc = &model.encoder;
    let dec = &model.decoder;
    let et = enc.trace(h)?;
    let dt = dec.trace(&et.z)?;
    let t_norm_sqr = linalg::norm_sqr(t);
    let u = linalg::inner(&dt.v, t);
    let term = T::one() - u.norm_sqr() / t_norm_sqr;

    // d term / d conj(v), doubled: -2 conj(u) t / ||t||^2
    let coef = u.conj() * (-(scale + scale) / t_norm_sqr);
    let g_v: Vec<Complex<T>> = t.iter().map(|ti| coef * ti).collect();

    // v = y / ||y||
    let radial = linalg::inner(&dt.v, &g_v).re;
    let g_y: Vec<Complex<T>> = g_v
        .iter()
        .zip(&dt.v)
        .map(|(g, v)| (g - v * radial) / dt.raw_norm)
        .collect();
    finite(&g_y, "normalization backward")?;

    let layers = dec.layers();
    let mut g = dense_backward(&layers[2], &mut acc.layers[2], &dt.act2, &g_y);
    relu_mask(&mut g, &dt.pre2);
    let mut g = dense_backward(&layers[1], &mut acc.layers[1], &dt.act1, &g);
    relu_mask(&mut g, &dt.pre1);
    let g_f = dense_backward(&layers[0], &mut acc.layers[0], &dt.features, &g);
    finite(&g_f, "MLP backward")?;

    // f = exp(j p), p = 2pi B z
    let two_pi = T::two_pi();
    let freqs = dec.frequencies();
    let d = et.z.len();
    let mut g_z = vec![T::zero(); d];
    for (i, (f, gf)) in dt.features.iter().zip(&g_f).enumerate() {
        let g_p = (f.conj() * gf).im * two_pi;
        for k in 0..d {
            acc.frequencies[(i, k)] += g_p * et.z[k];
            g_z[k] += g_p * freqs[(i, k)];
        }
    }
    if g_z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            stage: "feature backward",
        });
    }

    let Some(eg) = acc.encoder.as_mut() else {
        return Ok(term);
    };
    // z = sum_i w_i Z_i
    let chart = enc.chart();
    let n = enc.len();
    let mut g_w = vec![T::zero(); n];
    for i in 0..n {
        let mut dot = T::zero();
        for k in 0..d {
            eg.chart[(i, k)] += et.weights[i] * g_z[k];
            dot += chart[(i, k)] * g_z[k];
        }
        g_w[i] = dot;
    }
    // w = softmax(beta s)
    let mean: T = et.weights.iter().zip(&g_w).map(|(&w, &g)| w * g).sum();
    let beta = enc.beta();
    let h_norm = et.h_norm;
    for i in 0..n {
        let g_l = et.weights[i] * (g_w[i] - mean);
        eg.beta += g_l * et.similarities[i];
        let g_s = beta * g_l;
        let a = et.abs_inner[i];
        let cn = et.column_norms[i];
        let s = et.similarities[i];
        let col = enc.calibration().row(i);
        let mut grow = eg.calibration.row_mut(i);
        // s = |D_i^H h| / (||h|| ||D_i||); zero subgradient at |D_i^H h| = 0.
        if a > T::zero() {
            let ph = et.inner[i].conj() * (g_s / (a * h_norm * cn));
            let pd = g_s * s / (cn * cn);
            for j in 0..h.len() {
                grow[j] += ph * h[j] - col[j] * pd;
            }
        }
    }
    if !eg.beta.is_finite() {
        return Err(Error::NonFinite {
            stage: "encoder backward",
        });
    }
    Ok(term)
}

/// Batch loss and its exact gradient. With `include_encoder == false` the
/// encoder is treated as constant and its gradients are not formed.
pub fn backward<T: Scalar, V: AsRef<[Complex<T>]> + Sync>(
    model: &Model<T>,
    batch: &[V],
    include_encoder: bool,
) -> Result<(T, GradientSet<T>)> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = GradientSet::zeros(model, include_encoder);
            let mut loss = T::zero();
            for h in chunk {
                loss += sample_backward(model, h.as_ref(), scale, &mut acc)?;
            }
            Ok((loss, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = partials.into_iter();
    let (mut loss, mut grads) = it.next().expect("nonempty batch");
    for (l, g) in it {
        loss += l;
        grads.add_assign(&g);
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            stage: "gradient reduction",
        });
    }
    Ok((loss, grads))
}
