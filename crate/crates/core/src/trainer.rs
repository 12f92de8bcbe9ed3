//! SGD with momentum over labelled volumes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::{self, ConfusionMatrix, EvalError, Prf1Report};
use crate::ingest::FrameVolume;
use crate::strnet::{Network, StrnetError, Weights};
use crate::tensor::{Scalar, Tensor};
use crate::Category;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("volume {0} has no label")]
    Unlabelled(usize),
    #[error("volume {index} has shape {actual:?}, the network expects {expected:?}")]
    VolumeShape {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label histogram is all zero")]
    EmptyHistogram,
    #[error("shape mismatch in {0}")]
    ShapeMismatch(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] StrnetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub weighting: Weighting,
    /// Random mirror images and time reversal of each volume, all of which
    /// keep its category.
    #[serde(default)]
    pub augment: bool,
    /// Stop once the weights at the end of an epoch classify at least this
    /// fraction of the training set correctly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch_size: 8,
            shuffle_seed: 0,
            weighting: Weighting::InverseFrequency,
            augment: false,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Tab-separated `epoch loss accuracy`, one line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\taccuracy\n");
        for r in &self.epochs {
            writeln!(out, "{}\t{:.6}\t{:.6}", r.epoch, r.loss, r.accuracy).expect("write to string");
        }
        out
    }
}

/// Momentum SGD, `v = momentum*v - lr*g; w = w + v`, over matching
/// parameter lists.
pub fn sgd_step<T: Scalar>(
    weights: &mut Weights<T>,
    gradients: &Weights<T>,
    velocity: &mut Weights<T>,
    learning_rate: T,
    momentum: T,
) -> Result<()> {
    if weights.len() != gradients.len() || weights.len() != velocity.len() {
        return Err(TrainError::ShapeMismatch("parameter count".into()));
    }
    for ((w, g), v) in weights.entries.iter_mut().zip(&gradients.entries).zip(velocity.entries.iter_mut()) {
        if w.tensor.shape() != g.tensor.shape() || w.tensor.shape() != v.tensor.shape() {
            return Err(TrainError::ShapeMismatch(w.name.clone()));
        }
    }
    for ((w, g), v) in weights.tensors_mut().zip(gradients.tensors()).zip(velocity.tensors_mut()) {
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi - learning_rate * gi;
            *wi += *vi;
        }
    }
    Ok(())
}

/// Inverse-frequency weights scaled to mean 1 over the present categories;
/// absent categories get 10.
pub fn category_weights(histogram: [u64; 3]) -> Result<[f64; 3]> {
    const CAP: f64 = 10.0;
    let present: Vec<usize> = (0..3).filter(|&i| histogram[i] > 0).collect();
    if present.is_empty() {
        return Err(TrainError::EmptyHistogram);
    }
    // w_i = n / (c_i * sum_j 1/c_j), evaluated over integers scaled by the
    // product of the counts so balanced data gives exactly 1.
    let n = present.len();
    let mut out = [CAP; 3];
    let product = present
        .iter()
        .try_fold(1u128, |acc, &i| acc.checked_mul(histogram[i] as u128))
        .filter(|p| p.checked_mul(n as u128 * u64::MAX as u128).is_some());
    match product {
        Some(product) => {
            let sum: u128 = present.iter().map(|&i| product / histogram[i] as u128).sum();
            for &i in &present {
                out[i] = (n as u128 * product) as f64 / (histogram[i] as u128 * sum) as f64;
            }
        }
        None => {
            let sum: f64 = present.iter().map(|&i| 1.0 / histogram[i] as f64).sum();
            for &i in &present {
                out[i] = n as f64 / (histogram[i] as f64 * sum);
            }
        }
    }
    Ok(out)
}

pub fn label_histogram(volumes: &[FrameVolume]) -> Result<[u64; 3]> {
    let mut h = [0u64; 3];
    for (i, v) in volumes.iter().enumerate() {
        h[v.category.ok_or(TrainError::Unlabelled(i))?.index()] += 1;
    }
    Ok(h)
}

fn check_dataset(net: &Network<f32>, volumes: &[FrameVolume], need_labels: bool) -> Result<()> {
    if volumes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let expected = net.config().input.dims().to_vec();
    for (index, v) in volumes.iter().enumerate() {
        if v.data.shape() != expected.as_slice() {
            return Err(TrainError::VolumeShape {
                index,
                expected,
                actual: v.data.shape().to_vec(),
            });
        }
        if need_labels && v.category.is_none() {
            return Err(TrainError::Unlabelled(index));
        }
    }
    Ok(())
}

fn stack(volumes: &[FrameVolume], order: &[usize]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = order.iter().map(|&i| volumes[i].data.clone()).collect();
    Ok(Tensor::stack(&items).map_err(StrnetError::from)?)
}

/// Reverses the frame, row and/or column axes of a `[C, N, H, W]` volume.
pub fn flip_volume(v: &Tensor<f32>, frames: bool, rows: bool, cols: bool) -> Tensor<f32> {
    let &[c, n, h, w] = v.shape() else {
        panic!("volume must be rank 4");
    };
    let src = v.data();
    let mut out = Vec::with_capacity(src.len());
    for ci in 0..c {
        for ni in 0..n {
            let ns = if frames { n - 1 - ni } else { ni };
            for hi in 0..h {
                let hs = if rows { h - 1 - hi } else { hi };
                let row = &src[((ci * n + ns) * h + hs) * w..][..w];
                if cols {
                    out.extend(row.iter().rev());
                } else {
                    out.extend_from_slice(row);
                }
            }
        }
    }
    Tensor::from_vec(v.shape(), out).expect("same shape")
}

/// Trains in place. Epoch `e` visits the data in a permutation drawn from
/// `shuffle_seed + e`; the result is a pure function of the initial
/// weights, the data order and the configuration.
pub fn train(net: &mut Network<f32>, volumes: &[FrameVolume], cfg: &TrainConfig) -> Result<History> {
    train_with_validation(net, volumes, None, cfg)
}

pub fn train_with_validation(
    net: &mut Network<f32>,
    volumes: &[FrameVolume],
    validation: Option<&[FrameVolume]>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    check_dataset(net, volumes, true)?;
    if let Some(v) = validation {
        check_dataset(net, v, true)?;
    }
    let class_weights = match cfg.weighting {
        Weighting::Uniform => [1.0; 3],
        Weighting::InverseFrequency => category_weights(label_histogram(volumes)?)?,
    };
    let class_weights = class_weights.map(|w| w as f32);
    let labels: Vec<Category> = volumes.iter().map(|v| v.category.expect("checked")).collect();
    let mut velocity = Weights::zeros_like(net.weights());
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..volumes.len()).collect();
        let mut rng = SplitMix64::seed_from_u64(cfg.shuffle_seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = if cfg.augment {
                let items: Vec<Tensor<f32>> = batch
                    .iter()
                    .map(|&i| {
                        let bits: u8 = rng.random();
                        flip_volume(&volumes[i].data, bits & 1 != 0, bits & 2 != 0, bits & 4 != 0)
                    })
                    .collect();
                Tensor::stack(&items).map_err(StrnetError::from)?
            } else {
                stack(volumes, batch)?
            };
            let targets: Vec<Category> = batch.iter().map(|&i| labels[i]).collect();
            let out = net.backward(&x, &targets, &class_weights)?;
            loss_sum += out.loss as f64 * batch.len() as f64;
            for (row, &t) in out.probs.data().chunks_exact(Category::COUNT).zip(&targets) {
                correct += usize::from(Category::argmax(row) == t);
            }
            sgd_step(
                net.weights_mut(),
                &out.gradients,
                &mut velocity,
                cfg.learning_rate as f32,
                cfg.momentum as f32,
            )?;
        }
        let loss = loss_sum / volumes.len() as f64;
        if !loss.is_finite() {
            return Err(StrnetError::NonFinite(format!("training loss at epoch {epoch}")).into());
        }
        let accuracy = correct as f64 / volumes.len() as f64;
        let validation = validation.map(|v| evaluate(net, v)).transpose()?;
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            accuracy,
            validation,
        });
        if let Some(target) = cfg.target_accuracy {
            // the running accuracy lags the final step of the epoch
            let pred = predict_categories(net, volumes, cfg.batch_size)?;
            let hits = pred.iter().zip(&labels).filter(|(p, t)| p == t).count();
            if hits as f64 / volumes.len() as f64 >= target {
                break;
            }
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub classification: Prf1Report,
}

pub fn predict_categories(net: &Network<f32>, volumes: &[FrameVolume], batch: usize) -> Result<Vec<Category>> {
    check_dataset(net, volumes, false)?;
    let mut out = Vec::with_capacity(volumes.len());
    let order: Vec<usize> = (0..volumes.len()).collect();
    for chunk in order.chunks(batch.max(1)) {
        let probs = net.forward(&stack(volumes, chunk)?)?;
        out.extend(probs.data().chunks_exact(Category::COUNT).map(Category::argmax));
    }
    Ok(out)
}

pub fn evaluate(net: &Network<f32>, volumes: &[FrameVolume]) -> Result<Metrics> {
    check_dataset(net, volumes, true)?;
    let pred = predict_categories(net, volumes, 32)?;
    let truth: Vec<Category> = volumes.iter().map(|v| v.category.expect("checked")).collect();
    metrics_from(&pred, &truth)
}

pub fn metrics_from(pred: &[Category], truth: &[Category]) -> Result<Metrics> {
    let confusion = evalkit::confusion_matrix(pred, truth)?;
    Ok(Metrics {
        accuracy: confusion.accuracy(),
        classification: evalkit::prf1(&confusion),
        confusion,
    })
}
