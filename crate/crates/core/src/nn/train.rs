use crate::error::{Error, Result};
use crate::rng::{tag, SplitMix64};
use crate::tensor::Tensor;

use super::checkpoint::ModelCheckpoint;
use super::model::{default_architecture, sgd_step, Gradients, Model};

/// One preprocessed frame and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
}

/// Fraction of `samples` whose argmax prediction equals the label.
pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("cannot score an empty sample set".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let logits = model.forward(&s.input)?;
        if argmax(logits.data()) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn validate(train: &[Sample], val: &[Sample], config: &TrainConfig, classes: usize) -> Result<[usize; 3]> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty corpora (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Usage(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    if config.batch_size == 0 || config.batch_size > train.len() {
        return Err(Error::Usage(format!(
            "batch size {} must be between 1 and the training-set size {}",
            config.batch_size,
            train.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Usage("at least one class name is required".into()));
    }
    let shape = train[0].input.shape().to_vec();
    let [c, h, w] = shape[..] else {
        return Err(Error::Data(format!("frames must be [C, H, W], got {shape:?}")));
    };
    for (i, s) in train.iter().chain(val).enumerate() {
        if s.input.shape() != shape {
            return Err(Error::Data(format!(
                "frame {i} has shape {:?}, expected {shape:?}",
                s.input.shape()
            )));
        }
        if s.label >= classes {
            return Err(Error::Data(format!(
                "frame {i} has label {} but only {classes} classes exist",
                s.label
            )));
        }
    }
    if c != 1 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Usage(format!(
            "the classifier needs single-channel frames with sides divisible by 4, got {shape:?}"
        )));
    }
    Ok([c, h, w])
}

/// Trains the default classifier with mini-batch SGD.
///
/// Weights are initialized from `config.seed`; each epoch visits the
/// training set in an order drawn from the `(seed, SHUFFLE, epoch)` stream,
/// averages per-sample gradients over each mini-batch (the last batch may be
/// short) and takes one SGD step per batch. The whole run is sequential and
/// bit-for-bit reproducible.
pub fn train_model(
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    class_names: &[String],
) -> Result<TrainOutcome> {
    let input_shape = validate(train, val, config, class_names.len())?;
    let specs = default_architecture(input_shape[1], input_shape[2], class_names.len());
    let mut model = Model::initialize(input_shape, &specs, config.seed)?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        SplitMix64::stream(config.seed, &[tag::SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_for(&model);
            for &i in batch {
                let s = &train[i];
                let (loss, g) = model.loss_and_grad(&s.input, s.label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
                }
                loss_sum += loss as f64;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f32);
            sgd_step(&mut model, &grads, config.learning_rate)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite mean loss in epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy: accuracy(&model, val)?,
        });
    }

    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint::new(model, config.seed, class_names.to_vec())?,
        history,
    })
}
