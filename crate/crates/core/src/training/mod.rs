//! Task-oriented training: loss, gradients, Adam, the epoch loop and
//! similarity subsampling of the calibration set.

mod grad;
mod subsample;

pub use grad::{backward, loss_batch, EncoderGrads, GradientSet};
pub use subsample::{
    chart_cosine_similarity, embedding_cosine_similarity, subsample, subsample_embeddings, SubsampleConfig,
    SubsampleTrace, Swap, MIN_EMBEDDING_NORM,
};

use std::io::Write;
use std::time::Instant;

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::ChannelSample;
use crate::error::{Error, Result};
use crate::evaluate::rho_stats;
use crate::model::Model;
use crate::scalar::Scalar;

/// Lower bound kept on the softmax temperature after every step.
pub const MIN_BETA: f64 = 1e-6;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}
fn default_validation() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub rng_seed: u64,
    /// Epochs without a new best validation median rho before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub freeze_encoder: bool,
    /// Share of the training split held out for model selection. Zero
    /// selects on the training samples themselves.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn new(rng_seed: u64) -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_eps(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            rng_seed,
            patience: default_patience(),
            freeze_encoder: false,
            validation_fraction: default_validation(),
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must be in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    /// `(fit, validation)` sizes for a training split of `n` samples.
    pub fn holdout_sizes(&self, n: usize) -> (usize, usize) {
        let val = (self.validation_fraction * n as f64).round() as usize;
        let val = if self.validation_fraction > 0.0 { val.max(1) } else { 0 };
        (n.saturating_sub(val), val.min(n))
    }

    pub fn validate_for(&self, train_size: usize) -> Result<()> {
        self.validate()?;
        let (fit, _) = self.holdout_sizes(train_size);
        if fit == 0 {
            return Err(Error::config("training split is empty after the validation holdout"));
        }
        if self.batch_size > fit {
            return Err(Error::config(format!(
                "batch_size {} exceeds the {fit} fitting samples",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one per learnable scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn for_model(model: &Model<T>, include_encoder: bool) -> Self {
        Self::new(model.to_flat(include_encoder).len())
    }
}

/// One bias-corrected Adam update of every parameter covered by `grads`.
pub fn adam_step<T: Scalar>(
    model: &mut Model<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != state.m.len() {
        return Err(Error::Dimension {
            what: "optimizer state length",
            expected: g.len(),
            found: state.m.len(),
        });
    }
    state.step += 1;
    let b1 = T::lit(config.adam_beta1);
    let b2 = T::lit(config.adam_beta2);
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.adam_epsilon);
    let c1 = T::one() - b1.powi(state.step as i32);
    let c2 = T::one() - b2.powi(state.step as i32);
    let mut i = 0;
    let (m, v) = (&mut state.m, &mut state.v);
    model.for_each_param_mut(grads.includes_encoder(), |p| {
        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        i += 1;
    });
    let floor = T::lit(MIN_BETA);
    if model.encoder.beta < floor {
        model.encoder.beta = floor;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_median_rho: f64,
    pub val_mean_rho: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped { epoch: usize },
    Diverged { epoch: usize, stage: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation median rho (the initial model
    /// counts as epoch 0).
    pub model: Model<T>,
    pub best_epoch: usize,
    pub best_val_median_rho: f64,
    pub initial_train_loss: f64,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
}

fn is_divergence(e: &Error) -> Option<String> {
    match e {
        Error::NonFinite { stage } => Some((*stage).to_string()),
        Error::DegenerateOutput => Some("decoder output".to_string()),
        _ => None,
    }
}

fn params_finite<T: Scalar>(model: &Model<T>, include_encoder: bool) -> bool {
    model.to_flat(include_encoder).iter().all(|x| x.is_finite())
}

/// [`train_with`] without a per-epoch callback.
pub fn train<T: Scalar>(
    model: Model<T>,
    samples: &[&ChannelSample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, samples, config, |_, _| Ok(()))
}

/// Mini-batch Adam on the training split with early stopping on the
/// validation median rho.
///
/// A seeded shuffle holds out `validation_fraction` of `samples`; the rest
/// is reshuffled every epoch. `on_epoch` sees each epoch's record and the
/// current parameters. A non-finite loss, gradient or parameter stops the
/// run with [`StopReason::Diverged`] and returns the best parameters so far.
pub fn train_with<T, F>(
    mut model: Model<T>,
    samples: &[&ChannelSample<T>],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(&EpochRecord, &Model<T>) -> Result<()>,
{
    config.validate_for(samples.len())?;
    let include_encoder = !config.freeze_encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let (fit_count, val_count) = config.holdout_sizes(samples.len());
    let mut fit: Vec<&[Complex<T>]> = order[..fit_count].iter().map(|&i| samples[i].h.as_slice()).collect();
    let val: Vec<&ChannelSample<T>> = if val_count == 0 {
        order[..fit_count].iter().map(|&i| samples[i]).collect()
    } else {
        order[fit_count..].iter().map(|&i| samples[i]).collect()
    };

    let start = Instant::now();
    let initial_train_loss = loss_batch(&model, &fit)?.as_f64();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_median = rho_stats(&model, &val)?.median.as_f64();
    let mut state = AdamState::for_model(&model, include_encoder);
    let mut log = Vec::with_capacity(config.epochs);
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=config.epochs {
        fit.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in fit.chunks(config.batch_size) {
            let step = backward(&model, batch, include_encoder)
                .and_then(|(loss, grads)| adam_step(&mut model, &grads, &mut state, config).map(|_| loss));
            match step {
                Ok(loss) if params_finite(&model, include_encoder) => total += loss.as_f64() * batch.len() as f64,
                Ok(_) => {
                    stop = StopReason::Diverged {
                        epoch,
                        stage: "optimizer step".into(),
                    };
                    break 'epochs;
                }
                Err(e) => match is_divergence(&e) {
                    Some(stage) => {
                        stop = StopReason::Diverged { epoch, stage };
                        break 'epochs;
                    }
                    None => return Err(e),
                },
            }
        }
        let stats = match rho_stats(&model, &val) {
            Ok(s) => s,
            Err(e) => match is_divergence(&e) {
                Some(stage) => {
                    stop = StopReason::Diverged { epoch, stage };
                    break 'epochs;
                }
                None => return Err(e),
            },
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / fit.len() as f64,
            val_median_rho: stats.median.as_f64(),
            val_mean_rho: stats.mean.as_f64(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log.push(record);
        on_epoch(&record, &model)?;
        if record.val_median_rho > best_median {
            best_median = record.val_median_rho;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= config.patience {
            stop = StopReason::EarlyStopped { epoch };
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_val_median_rho: best_median,
        initial_train_loss,
        log,
        stop,
    })
}

/// `epoch,train_loss,val_median_rho,val_mean_rho,wall_time_s`.
pub fn write_training_log<W: Write>(log: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r)?;
    }
    if log.is_empty() {
        w.write_record(["epoch", "train_loss", "val_median_rho", "val_mean_rho", "wall_time_s"])?;
    }
    w.flush()?;
    Ok(())
}
