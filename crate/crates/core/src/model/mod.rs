//! Charting encoder and random-Fourier-feature decoder.
//!
//! The encoder maps a channel `h` (length `D = Na * Ns`) to a chart location
//! `z` (length `d`) as a convex combination of calibration chart locations,
//! weighted by a softmax over modulus cosine similarities to the calibration
//! channels. The decoder maps `z` through `exp(j 2pi B z)` and a three-layer
//! complex MLP with `relu_c` activations to a unit-norm precoder for one
//! subcarrier (length `Na`).

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_json, read_checkpoint, save_checkpoint, save_checkpoint_json, write_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::charting::Chart;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

fn default_dim() -> usize {
    2
}
fn default_frequencies() -> usize {
    200
}
fn default_width() -> usize {
    128
}
fn default_sigma_b() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    DEFAULT_INITIAL_BETA
}

/// Initial softmax temperature.
pub const DEFAULT_INITIAL_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_frequencies")]
    pub frequency_count: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_sigma_b")]
    pub sigma_b: f64,
    /// Defaults to `Ns / 2`.
    #[serde(default)]
    pub target_subcarrier: Option<usize>,
    #[serde(default = "default_beta")]
    pub initial_beta: f64,
    pub rng_seed: u64,
}

impl ModelConfig {
    pub fn new(rng_seed: u64) -> Self {
        ModelConfig {
            embedding_dim: default_dim(),
            frequency_count: default_frequencies(),
            hidden_width: default_width(),
            sigma_b: default_sigma_b(),
            target_subcarrier: None,
            initial_beta: default_beta(),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.frequency_count == 0 || self.hidden_width == 0 {
            return Err(Error::config(
                "embedding_dim, frequency_count and hidden_width must be >= 1",
            ));
        }
        if !(self.sigma_b >= 0.0) {
            return Err(Error::config("sigma_b must be >= 0"));
        }
        if !(self.initial_beta > 0.0) {
            return Err(Error::config("initial_beta must be > 0"));
        }
        Ok(())
    }
}

/// Output of the encoder: the chart location and its attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T> {
    pub z: Vec<T>,
    pub weights: Vec<T>,
}

/// Learnable charting encoder.
///
/// `calibration` is `N x D` (row `i` is calibration channel `i`, i.e. the
/// transpose of the `D x N` matrix), `chart` is `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub(crate) calibration: Array2<Complex<T>>,
    pub(crate) chart: Array2<T>,
    pub(crate) beta: T,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace<T> {
    pub h_norm: T,
    pub inner: Vec<Complex<T>>,
    pub abs_inner: Vec<T>,
    pub column_norms: Vec<T>,
    pub similarities: Vec<T>,
    pub weights: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn new(calibration: Array2<Complex<T>>, chart: Array2<T>, beta: T) -> Result<Self> {
        if calibration.nrows() != chart.nrows() {
            return Err(Error::Dimension {
                what: "chart rows vs calibration channels",
                expected: calibration.nrows(),
                found: chart.nrows(),
            });
        }
        if calibration.nrows() == 0 || calibration.ncols() == 0 || chart.ncols() == 0 {
            return Err(Error::config("encoder needs at least one calibration channel"));
        }
        if !(beta > T::zero()) {
            return Err(Error::config("softmax temperature beta must be > 0"));
        }
        for (i, row) in calibration.rows().into_iter().enumerate() {
            if !(row.iter().map(|z| z.norm_sqr()).sum::<T>() > T::zero()) {
                return Err(Error::domain(format!("calibration channel {i} has zero norm")));
            }
        }
        Ok(EncoderParams {
            calibration,
            chart,
            beta,
        })
    }

    pub fn calibration(&self) -> &Array2<Complex<T>> {
        &self.calibration
    }

    pub fn chart(&self) -> &Array2<T> {
        &self.chart
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Number of calibration columns `N`.
    pub fn len(&self) -> usize {
        self.calibration.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_dim(&self) -> usize {
        self.calibration.ncols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.chart.ncols()
    }

    pub fn encode(&self, h: &[Complex<T>]) -> Result<Encoding<T>> {
        let t = self.trace(h)?;
        Ok(Encoding {
            z: t.z,
            weights: t.weights,
        })
    }

    pub(crate) fn trace(&self, h: &[Complex<T>]) -> Result<EncoderTrace<T>> {
        if h.len() != self.channel_dim() {
            return Err(Error::Dimension {
                what: "encoder input length",
                expected: self.channel_dim(),
                found: h.len(),
            });
        }
        let h_norm = linalg::norm(h);
        if !(h_norm > T::zero()) {
            return Err(Error::domain("cannot encode a zero-norm channel"));
        }
        let n = self.len();
        let mut inner = Vec::with_capacity(n);
        let mut abs_inner = Vec::with_capacity(n);
        let mut column_norms = Vec::with_capacity(n);
        let mut similarities = Vec::with_capacity(n);
        for row in self.calibration.rows() {
            let col = row.as_slice().expect("standard layout");
            let c = linalg::inner(col, h);
            let cn = linalg::norm(col);
            if !(cn > T::zero()) {
                return Err(Error::domain("calibration channel collapsed to zero norm"));
            }
            let a = c.norm();
            similarities.push(a / (h_norm * cn));
            inner.push(c);
            abs_inner.push(a);
            column_norms.push(cn);
        }
        let weights = softmax(&similarities, self.beta);
        let d = self.embedding_dim();
        let mut z = vec![T::zero(); d];
        for (w, loc) in weights.iter().zip(self.chart.rows()) {
            for (zk, &lk) in z.iter_mut().zip(loc.iter()) {
                *zk += *w * lk;
            }
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { stage: "encoder" });
        }
        Ok(EncoderTrace {
            h_norm,
            inner,
            abs_inner,
            column_norms,
            similarities,
            weights,
            z,
        })
    }
}

/// `softmax(beta * s)` with max subtraction.
pub fn softmax<T: Scalar>(s: &[T], beta: T) -> Vec<T> {
    let m = s.iter().fold(T::neg_infinity(), |m, &x| m.max(beta * x));
    let mut w: Vec<T> = s.iter().map(|&x| (beta * x - m).exp()).collect();
    let total: T = w.iter().copied().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// `ReLU(re) + j ReLU(im)`, elementwise.
pub fn relu_c<T: Scalar>(x: &[Complex<T>]) -> Vec<Complex<T>> {
    x.iter()
        .map(|z| Complex::new(z.re.max(T::zero()), z.im.max(T::zero())))
        .collect()
}

/// Random Fourier features packed as one complex vector:
/// `cos(2pi B z) + j sin(2pi B z)`.
pub fn rff_features<T: Scalar>(frequencies: &Array2<T>, z: &[T]) -> Vec<Complex<T>> {
    debug_assert_eq!(frequencies.ncols(), z.len());
    frequencies
        .rows()
        .into_iter()
        .map(|b| {
            let phase = T::two_pi() * b.iter().zip(z).map(|(&bk, &zk)| bk * zk).sum::<T>();
            Complex::new(phase.cos(), phase.sin())
        })
        .collect()
}

/// Complex affine layer `W x + b`, `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDense<T> {
    pub weights: Array2<Complex<T>>,
    pub bias: Array1<Complex<T>>,
}

impl<T: Scalar> ComplexDense<T> {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        ComplexDense {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        self.weights
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| {
                let mut acc = b;
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                acc
            })
            .collect()
    }

    fn uniform(outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || {
            Complex::new(
                T::lit(rng.random_range(-bound..=bound)),
                T::lit(rng.random_range(-bound..=bound)),
            )
        };
        let weights = Array2::from_shape_simple_fn((outputs, inputs), &mut draw);
        let bias = Array1::from_shape_simple_fn(outputs, &mut draw);
        ComplexDense { weights, bias }
    }
}

/// The decoder `D1`: frequency matrix `B` (`F x d`, real) and three complex layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub(crate) frequencies: Array2<T>,
    pub(crate) layers: [ComplexDense<T>; 3],
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderTrace<T> {
    pub features: Vec<Complex<T>>,
    pub pre1: Vec<Complex<T>>,
    pub act1: Vec<Complex<T>>,
    pub pre2: Vec<Complex<T>>,
    pub act2: Vec<Complex<T>>,
    pub raw_norm: T,
    pub v: Vec<Complex<T>>,
}

impl<T: Scalar> DecoderParams<T> {
    pub fn new(frequencies: Array2<T>, layers: [ComplexDense<T>; 3]) -> Result<Self> {
        let f = frequencies.nrows();
        let dims = [
            (layers[0].inputs(), f, "layer 1 inputs"),
            (layers[1].inputs(), layers[0].outputs(), "layer 2 inputs"),
            (layers[2].inputs(), layers[1].outputs(), "layer 3 inputs"),
        ];
        for (found, expected, what) in dims {
            if found != expected {
                return Err(Error::Dimension { what, expected, found });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Dimension {
                    what: "bias length",
                    expected: l.outputs(),
                    found: l.bias.len(),
                });
            }
        }
        let finite = frequencies.iter().all(|x| x.is_finite())
            && layers.iter().all(|l| {
                l.weights
                    .iter()
                    .chain(l.bias.iter())
                    .all(|z| z.re.is_finite() && z.im.is_finite())
            });
        if !finite {
            return Err(Error::NonFinite {
                stage: "decoder parameters",
            });
        }
        Ok(DecoderParams { frequencies, layers })
    }

    pub fn frequencies(&self) -> &Array2<T> {
        &self.frequencies
    }

    pub fn layers(&self) -> &[ComplexDense<T>; 3] {
        &self.layers
    }

    pub fn embedding_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequency_count(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].outputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].outputs()
    }

    /// Raw MLP output `W3 relu_c(W2 relu_c(W1 f + b1) + b2) + b3`.
    pub fn mlp_forward(&self, features: &[Complex<T>]) -> Vec<Complex<T>> {
        let a1 = relu_c(&self.layers[0].forward(features));
        let a2 = relu_c(&self.layers[1].forward(&a1));
        self.layers[2].forward(&a2)
    }

    /// Unit-norm precoder for chart location `z`.
    pub fn decode(&self, z: &[T]) -> Result<Vec<Complex<T>>> {
        Ok(self.trace(z)?.v)
    }

    pub(crate) fn trace(&self, z: &[T]) -> Result<DecoderTrace<T>> {
        if z.len() != self.embedding_dim() {
            return Err(Error::Dimension {
                what: "chart location length",
                expected: self.embedding_dim(),
                found: z.len(),
            });
        }
        let features = rff_features(&self.frequencies, z);
        let pre1 = self.layers[0].forward(&features);
        let act1 = relu_c(&pre1);
        let pre2 = self.layers[1].forward(&act1);
        let act2 = relu_c(&pre2);
        let raw = self.layers[2].forward(&act2);
        let raw_norm = linalg::norm(&raw);
        if !raw_norm.is_finite() {
            return Err(Error::NonFinite { stage: "decoder MLP" });
        }
        if raw_norm == T::zero() {
            return Err(Error::DegenerateOutput);
        }
        let v = raw.iter().map(|x| x / raw_norm).collect();
        Ok(DecoderTrace {
            features,
            pre1,
            act1,
            pre2,
            act2,
            raw_norm,
            v,
        })
    }
}

/// Encoder, decoder and the channel layout they operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
    pub antenna_count: usize,
    pub target_subcarrier: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        encoder: EncoderParams<T>,
        decoder: DecoderParams<T>,
        antenna_count: usize,
        target_subcarrier: usize,
    ) -> Result<Self> {
        if encoder.embedding_dim() != decoder.embedding_dim() {
            return Err(Error::Dimension {
                what: "decoder embedding dimension",
                expected: encoder.embedding_dim(),
                found: decoder.embedding_dim(),
            });
        }
        if decoder.output_dim() != antenna_count {
            return Err(Error::Dimension {
                what: "decoder output length (antenna count)",
                expected: antenna_count,
                found: decoder.output_dim(),
            });
        }
        if antenna_count == 0 || !encoder.channel_dim().is_multiple_of(antenna_count) {
            return Err(Error::Dimension {
                what: "channel length (multiple of antenna count)",
                expected: antenna_count,
                found: encoder.channel_dim(),
            });
        }
        let ns = encoder.channel_dim() / antenna_count;
        if target_subcarrier >= ns {
            return Err(Error::config(format!(
                "target subcarrier {target_subcarrier} out of range for {ns} subcarriers"
            )));
        }
        Ok(Model {
            encoder,
            decoder,
            antenna_count,
            target_subcarrier,
        })
    }

    pub fn subcarrier_count(&self) -> usize {
        self.encoder.channel_dim() / self.antenna_count
    }

    pub fn channel_dim(&self) -> usize {
        self.encoder.channel_dim()
    }

    /// The target-subcarrier block of a full channel.
    pub fn target<'a>(&self, h: &'a [Complex<T>]) -> &'a [Complex<T>] {
        let na = self.antenna_count;
        &h[self.target_subcarrier * na..(self.target_subcarrier + 1) * na]
    }

    pub fn encode(&self, h: &[Complex<T>]) -> Result<Encoding<T>> {
        self.encoder.encode(h)
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<Complex<T>>> {
        self.decoder.decode(z)
    }

    /// `decode(encode(h))`.
    pub fn precoder(&self, h: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        self.decode(&self.encode(h)?.z)
    }

    pub fn shape(&self) -> ParamShape {
        ParamShape {
            channel_dim: self.channel_dim(),
            embedding_dim: self.encoder.embedding_dim(),
            frequency_count: self.decoder.frequency_count(),
            hidden_width: self.decoder.hidden_width(),
            output_dim: self.decoder.output_dim(),
        }
    }

    /// Learnable real scalars, counting complex entries twice.
    pub fn param_count(&self, encoder_learnable: bool) -> u64 {
        self.shape().param_count(self.encoder.len(), encoder_learnable)
    }

    /// Visits every learnable real scalar in checkpoint order. The encoder
    /// block (calibration, chart, beta) is skipped when `include_encoder` is false.
    pub fn for_each_param_mut(&mut self, include_encoder: bool, mut f: impl FnMut(&mut T)) {
        if include_encoder {
            for z in self.encoder.calibration.iter_mut() {
                f(&mut z.re);
                f(&mut z.im);
            }
            self.encoder.chart.iter_mut().for_each(&mut f);
            f(&mut self.encoder.beta);
        }
        self.decoder.frequencies.iter_mut().for_each(&mut f);
        for layer in &mut self.decoder.layers {
            for z in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                f(&mut z.re);
                f(&mut z.im);
            }
        }
    }

    pub fn to_flat(&self, include_encoder: bool) -> Vec<T> {
        let mut clone = self.clone();
        let mut out = Vec::new();
        clone.for_each_param_mut(include_encoder, |x| out.push(*x));
        out
    }

    pub fn set_flat(&mut self, include_encoder: bool, values: &[T]) {
        let mut it = values.iter();
        self.for_each_param_mut(include_encoder, |x| *x = *it.next().expect("flat length"));
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let r = |x: &T| U::lit(x.as_f64());
        let c = |z: &Complex<T>| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64()));
        let layer = |l: &ComplexDense<T>| ComplexDense {
            weights: l.weights.map(c),
            bias: l.bias.map(c),
        };
        Model {
            encoder: EncoderParams {
                calibration: self.encoder.calibration.map(c),
                chart: self.encoder.chart.map(r),
                beta: r(&self.encoder.beta),
            },
            decoder: DecoderParams {
                frequencies: self.decoder.frequencies.map(r),
                layers: [
                    layer(&self.decoder.layers[0]),
                    layer(&self.decoder.layers[1]),
                    layer(&self.decoder.layers[2]),
                ],
            },
            antenna_count: self.antenna_count,
            target_subcarrier: self.target_subcarrier,
        }
    }
}

/// Dimensions that determine the learnable-parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    /// `D = Na * Ns`.
    pub channel_dim: usize,
    pub embedding_dim: usize,
    pub frequency_count: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl ParamShape {
    pub fn decoder_params(&self) -> u64 {
        let (d, f, t, o) = (
            self.embedding_dim as u64,
            self.frequency_count as u64,
            self.hidden_width as u64,
            self.output_dim as u64,
        );
        f * d + 2 * ((f + 1) * t + (t + 1) * t + (t + 1) * o)
    }

    pub fn encoder_params(&self, calibration: usize) -> u64 {
        let n = calibration as u64;
        2 * self.channel_dim as u64 * n + self.embedding_dim as u64 * n + 1
    }

    pub fn param_count(&self, calibration: usize, encoder_learnable: bool) -> u64 {
        let enc = if encoder_learnable {
            self.encoder_params(calibration)
        } else {
            0
        };
        enc + self.decoder_params()
    }
}

/// Builds a model from an ISOMAP chart and its calibration channels.
///
/// Calibration channels are stored scaled to unit norm. The encoder is
/// invariant to per-column scaling, and unit columns keep optimizer steps
/// commensurate with the entries.
///
/// `B` entries are i.i.d. `N(0, sigma_b^2)`; MLP weights and biases are
/// uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` on both real and
/// imaginary parts. Deterministic for a fixed `rng_seed`.
pub fn init_model<T: Scalar, V: AsRef<[Complex<T>]>>(
    config: &ModelConfig,
    chart: &Chart<T>,
    calibration: &[V],
    antenna_count: usize,
) -> Result<Model<T>> {
    config.validate()?;
    if chart.len() != calibration.len() {
        return Err(Error::Dimension {
            what: "chart rows vs calibration channels",
            expected: calibration.len(),
            found: chart.len(),
        });
    }
    if chart.dim() != config.embedding_dim {
        return Err(Error::Dimension {
            what: "chart dimension",
            expected: config.embedding_dim,
            found: chart.dim(),
        });
    }
    let dim = calibration.first().map_or(0, |h| h.as_ref().len());
    let mut cal = Array2::zeros((calibration.len(), dim));
    for (i, h) in calibration.iter().enumerate() {
        let h = h.as_ref();
        if h.len() != dim {
            return Err(Error::Dimension {
                what: "calibration channel length",
                expected: dim,
                found: h.len(),
            });
        }
        let n = linalg::norm(h);
        if !(n > T::zero()) {
            return Err(Error::domain(format!("calibration channel {i} has zero norm")));
        }
        cal.row_mut(i).iter_mut().zip(h).for_each(|(dst, src)| *dst = *src / n);
    }
    let encoder = EncoderParams::new(cal, chart.locations.clone(), T::lit(config.initial_beta))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let (d, f, t) = (config.embedding_dim, config.frequency_count, config.hidden_width);
    let frequencies = if config.sigma_b > 0.0 {
        let normal = Normal::new(0.0, config.sigma_b).expect("finite sigma");
        Array2::from_shape_simple_fn((f, d), || T::lit(normal.sample(&mut rng)))
    } else {
        Array2::zeros((f, d))
    };
    let layers = [
        ComplexDense::uniform(t, f, &mut rng),
        ComplexDense::uniform(t, t, &mut rng),
        ComplexDense::uniform(antenna_count, t, &mut rng),
    ];
    let decoder = DecoderParams::new(frequencies, layers)?;
    let ns = dim.checked_div(antenna_count).unwrap_or(0);
    let target = config.target_subcarrier.unwrap_or(ns / 2);
    Model::new(encoder, decoder, antenna_count, target)
}

#[cfg(test)]
mod tests;
