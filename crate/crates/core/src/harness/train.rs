use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, augment_slice, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Activation, Network};
use crate::optim::{label_smooth, Optimizer};
use crate::smoothing::{smooth_sample, SmoothingMode};
use crate::tensor::max_index;

use super::config::{DatasetConfig, DatasetKind, ExperimentConfig, RegularizerKind};

/// Named RNG substreams of a trial seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
}

/// `ChaCha8` generator for `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One row of the per-epoch learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample training objective over the epoch.
    pub train_loss: f64,
    /// Percent of training samples classified correctly before each update.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Sigmoid scale used for the epoch's final mini-batch.
    pub s_t: f64,
    /// Mean diffusivity over the epoch's final mini-batch.
    pub mean_kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean unsmoothed squared residual against one-hot targets.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
}

fn first_existing(dir: &Path, names: &[&str]) -> PathBuf {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join(names[0]))
}

fn required(path: &Option<PathBuf>, dir: &Option<PathBuf>, names: &[&str], what: &str) -> Result<PathBuf> {
    match (path, dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(d)) => Ok(first_existing(d, names)),
        (None, None) => Err(Error::Config(format!("dataset needs `dir` or `{what}`"))),
    }
}

/// Loads both splits and applies the configured subsets.
pub fn load_data(config: &DatasetConfig) -> Result<PreparedData> {
    config.validate()?;
    let (train, test) = match config.kind {
        DatasetKind::FashionMnist => {
            let p = |path: &Option<PathBuf>, stem: &str, what: &str| {
                let gz = format!("{stem}.gz");
                required(path, &config.dir, &[gz.as_str(), stem], what)
            };
            let train = data::load_idx(
                &p(&config.train_images, "train-images-idx3-ubyte", "train_images")?,
                &p(&config.train_labels, "train-labels-idx1-ubyte", "train_labels")?,
                Split::Train,
            )?;
            let test = data::load_idx(
                &p(&config.test_images, "t10k-images-idx3-ubyte", "test_images")?,
                &p(&config.test_labels, "t10k-labels-idx1-ubyte", "test_labels")?,
                Split::Test,
            )?;
            (train, test)
        }
        DatasetKind::Cifar10 => {
            let files = |list: &[PathBuf], names: Vec<String>| -> Result<Vec<PathBuf>> {
                if !list.is_empty() {
                    return Ok(list.to_vec());
                }
                let dir = config
                    .dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("cifar10 dataset needs `dir` or explicit files".into()))?;
                Ok(names.iter().map(|n| dir.join(n)).collect())
            };
            let train_files = files(
                &config.train_files,
                (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            )?;
            let test_files = files(&config.test_files, vec!["test_batch.bin".into()])?;
            (
                data::load_cifar10_bin(&train_files, Split::Train)?,
                data::load_cifar10_bin(&test_files, Split::Test)?,
            )
        }
    };
    let mut train = train;
    if let Some(limit) = config.train_limit {
        train = data::subsample_count(&train, limit, &mut substream(config.seed, 0))?;
    }
    train = data::subsample(&train, config.ratio, &mut substream(config.seed, 1))?;
    let mut val = test;
    if let Some(limit) = config.val_limit {
        val = data::subsample_count(&val, limit, &mut substream(config.seed, 2))?;
    }
    if train.is_empty() {
        return Err(Error::Input("training split is empty after subsetting".into()));
    }
    Ok(PreparedData { train, val })
}

/// Builds the configured network for `input_dim → hidden… → classes`.
pub fn build_network(config: &ExperimentConfig, input_dim: usize, classes: usize) -> Result<Network> {
    let mut layers: Vec<(usize, Activation)> = config.model.hidden.iter().map(|&w| (w, Activation::Relu)).collect();
    layers.push((classes, config.model.output_activation));
    Network::new(input_dim, &layers)
}

/// Accuracy (percent, first-max tie-break) and mean squared residual.
pub fn evaluate(network: &Network, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    if dataset.input_dim() != network.input_dim() || dataset.class_count() != network.output_dim() {
        return Err(Error::Shape("dataset does not match network dims".into()));
    }
    const CHUNK: usize = 500;
    let n = dataset.len();
    let m = network.output_dim();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let rows = end - start;
        let inputs = &dataset.inputs()[start * dataset.input_dim()..end * dataset.input_dim()];
        let cache = network.forward_batch(inputs, rows)?;
        for r in 0..rows {
            let pred = cache.output_row(r);
            let label = dataset.labels()[start + r];
            if max_index(pred) == label {
                correct += 1;
            }
            loss += (0..m)
                .map(|j| {
                    let y = if j == label { 1.0 } else { 0.0 };
                    (pred[j] - y) * (pred[j] - y)
                })
                .sum::<f64>();
        }
    }
    Ok(Evaluation {
        accuracy: 100.0 * correct as f64 / n as f64,
        loss: loss / n as f64,
    })
}

/// Loads data and trains one trial.
pub fn train(config: &ExperimentConfig, trial_seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let data = load_data(&config.dataset)?;
    train_prepared(config, &data, trial_seed)
}

/// Plain squared error `‖p − y‖²` and its gradient `2 (p − y)`.
fn squared_error(pred: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for ((g, p), y) in grad.iter_mut().zip(pred).zip(target) {
        let diff = p - y;
        loss += diff * diff;
        *g = 2.0 * diff;
    }
    loss
}

/// Trains one trial on already-loaded data.
///
/// Each iteration draws the next mini-batch, evaluates every sample's
/// residual, passes it through the smoothing layer built from its own
/// diffusivity (when smoothing is active), accumulates the batch-mean loss
/// gradient and takes one optimizer step.
pub fn train_prepared(config: &ExperimentConfig, data: &PreparedData, trial_seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let train = &data.train;
    let classes = train.class_count();
    let mut network = build_network(config, train.input_dim(), classes)?;
    network.he_init(&mut substream(trial_seed, streams::INIT));
    let mut optimizer = Optimizer::new(config.optimizer, &network)?;
    let mut shuffle_rng = substream(trial_seed, streams::SHUFFLE);
    let mut augment_rng = substream(trial_seed, streams::AUGMENT);

    let reg = &config.regularizer;
    let smoothing = reg.smoothing_active();
    let targets: Vec<Vec<f64>> = (0..classes)
        .map(|label| {
            let hot = data::one_hot(label, classes)?;
            let t = if reg.kind == RegularizerKind::LabelSmoothing {
                label_smooth(&hot, reg.label_smoothing)?
            } else {
                hot
            };
            Ok(t.into_data())
        })
        .collect::<Result<_>>()?;

    let n = train.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_iterations = (config.epochs * batches_per_epoch) as f64;
    let dim = train.input_dim();
    let mut iteration = 0usize;
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = data::epoch_batches(n, config.batch_size, &mut shuffle_rng)?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut last_scale = 0.0;
        let mut last_kappa = 0.0;

        for (batch_index, batch) in batches.iter().enumerate() {
            let progress = iteration as f64 / total_iterations;
            let rows = batch.size();
            let mut inputs = Vec::with_capacity(rows * dim);
            for &i in &batch.indices {
                if config.dataset.augment {
                    inputs.extend(augment_slice(train.input(i), train.image_shape(), &mut augment_rng));
                } else {
                    inputs.extend_from_slice(train.input(i));
                }
            }
            let cache = network.forward_batch(&inputs, rows)?;

            let scale = if smoothing {
                match reg.smoothing.mode {
                    SmoothingMode::Local => reg.smoothing.local_scale,
                    _ => reg.schedule.scale_at(progress)?,
                }
            } else {
                0.0
            };
            let mut d_out = vec![0.0; rows * classes];
            let mut batch_loss = 0.0;
            let mut kappa_sum = 0.0;
            for (r, &i) in batch.indices.iter().enumerate() {
                let pred = cache.output_row(r);
                let label = train.labels()[i];
                if max_index(pred) == label {
                    correct += 1;
                }
                let grad_row = &mut d_out[r * classes..(r + 1) * classes];
                let loss = if smoothing {
                    let out = smooth_sample(pred, &targets[label], scale, &reg.smoothing);
                    grad_row.copy_from_slice(&out.grad);
                    kappa_sum += out.mean_kappa;
                    out.loss
                } else {
                    squared_error(pred, &targets[label], grad_row)
                };
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    epoch,
                    batch: batch_index,
                    layer: network.first_non_finite().unwrap_or_else(|| "none (loss only)".into()),
                });
            }
            let denom = rows as f64;
            d_out.iter_mut().for_each(|g| *g /= denom);
            let grads = network.backward(&cache, &d_out)?;
            optimizer.step(&mut network, &grads, progress)?;
            if let Some(layer) = network.first_non_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    epoch,
                    batch: batch_index,
                    layer,
                });
            }

            loss_sum += batch_loss;
            last_scale = scale;
            last_kappa = kappa_sum / denom;
            iteration += 1;
        }

        let val = evaluate(&network, &data.val)?;
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_accuracy: 100.0 * correct as f64 / n as f64,
            val_accuracy: val.accuracy,
            s_t: last_scale,
            mean_kappa: last_kappa,
        });
    }
    Ok(TrainOutcome { network, metrics })
}
