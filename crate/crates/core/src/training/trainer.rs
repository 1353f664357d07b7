use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    adadelta_step, cross_entropy_gradient, cross_entropy_loss, AdadeltaState, CrossEntropyBatch,
    EarlyStopper, EpochRecord, PlateauScheduler, StopDecision,
};
use crate::cnn4::{Cnn4Model, Gradients};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images per gradient work unit. Partial sums are formed per chunk and then
/// added in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f32,
    pub gamma: f32,
    pub epsilon: f32,
    pub plateau_factor: f32,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    /// Applied after each hidden dense ReLU during training; 0 disables it.
    pub dropout: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            max_epochs: 100,
            learning_rate: 0.1,
            gamma: 0.95,
            epsilon: 1e-7,
            plateau_factor: 0.5,
            plateau_patience: 3,
            early_stop_patience: 8,
            min_delta: 1e-4,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LabeledImages<'a> {
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
}

impl<'a> LabeledImages<'a> {
    pub fn new(images: &'a [Tensor], labels: &'a [usize]) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: images.len(),
                right: labels.len(),
            });
        }
        Ok(LabeledImages { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation-accuracy epoch.
    pub model: Cnn4Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn sample_loss_and_grad(
    model: &Cnn4Model,
    image: &Tensor,
    label: usize,
    dropout: f32,
    rng_seed: u64,
) -> Result<(f64, Gradients)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let trace = model.forward_trace(image, (dropout > 0.0).then_some((dropout, &mut rng)))?;
    let c = model.num_classes();
    let batch = CrossEntropyBatch::new(trace.logits().clone().reshape(vec![1, c])?, vec![label])?;
    let loss = cross_entropy_loss(&batch)?;
    let grad = cross_entropy_gradient(&batch)?.reshape(vec![c])?;
    Ok((loss, model.backward(&trace, &grad)?))
}

/// Summed loss and summed gradients over `indices`.
fn batch_gradients(
    model: &Cnn4Model,
    data: LabeledImages<'_>,
    indices: &[usize],
    dropout: f32,
    seed_base: u64,
) -> Result<(f64, Gradients)> {
    let partials: Vec<(f64, Gradients)> = indices
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut loss = 0.0;
            let mut acc = Gradients::zeros_like(model);
            for (j, &i) in chunk.iter().enumerate() {
                let seed = seed_base.wrapping_add((ci * CHUNK + j) as u64);
                let (l, g) = sample_loss_and_grad(model, &data.images[i], data.labels[i], dropout, seed)?;
                loss += l;
                acc.accumulate(&g);
            }
            Ok((loss, acc))
        })
        .collect::<Result<_>>()?;
    let mut parts = partials.into_iter();
    let (mut loss, mut total) = parts.next().expect("non-empty batch");
    for (l, g) in parts {
        loss += l;
        total.accumulate(&g);
    }
    Ok((loss, total))
}

/// Mean cross-entropy and accuracy of the softmax head over a labelled set.
pub fn evaluate_set(model: &Cnn4Model, data: LabeledImages<'_>) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.num_classes();
    let per: Vec<(f64, bool)> = data
        .images
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(im, &label)| {
            let trace = model.forward_trace::<ChaCha8Rng>(im, None)?;
            let logits = trace.logits();
            let batch = CrossEntropyBatch::new(logits.clone().reshape(vec![1, c])?, vec![label])?;
            Ok((cross_entropy_loss(&batch)?, argmax(logits.data()) == label))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|(l, _)| l).sum::<f64>() / per.len() as f64;
    let acc = per.iter().filter(|(_, ok)| *ok).count() as f64 / per.len() as f64;
    Ok((loss, acc))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn train_model(
    model: Cnn4Model,
    train: LabeledImages<'_>,
    val: LabeledImages<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model_with(model, train, val, config, |_| {})
}

/// [`train_model`] with a callback after every epoch.
pub fn train_model_with(
    mut model: Cnn4Model,
    train: LabeledImages<'_>,
    val: LabeledImages<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    if let Some(&label) = train.labels.iter().chain(val.labels).find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    // Without a validation slice the training set doubles as the monitor.
    let monitor = if val.is_empty() { train } else { val };

    let lens: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut state = AdadeltaState::new(&lens, config.gamma, config.learning_rate, config.epsilon)?;
    let mut plateau = PlateauScheduler::new(config.plateau_factor, config.plateau_patience, config.min_delta);
    let mut stopper = EarlyStopper::new(config.early_stop_patience, config.min_delta);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = model.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let seed_base = config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(((epoch as u64) << 32) | ((bi as u64) << 12));
            let (loss, mut grads) = batch_gradients(&model, train, batch, config.dropout, seed_base)?;
            if !loss.is_finite() {
                return Err(Error::Config(format!(
                    "training diverged in epoch {epoch} (non-finite loss); lower the learning rate"
                )));
            }
            loss_sum += loss;
            grads.scale(1.0 / batch.len() as f32);
            let grad_refs: Vec<&[f32]> = grads.0.iter().map(|t| t.data()).collect();
            adadelta_step(&mut model.parameters_mut(), &grad_refs, &mut state)?;
        }
        let (val_loss, val_accuracy) = evaluate_set(&model, monitor).map_err(|e| match e {
            Error::NonFinite => Error::Config(format!("training diverged in epoch {epoch}; lower the learning rate")),
            other => other,
        })?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: state.eta,
        };
        on_epoch(&record);
        history.push(record);
        state.eta = plateau.step(val_loss, state.eta);
        match stopper.check(val_accuracy) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn4::{model_bytes, Cnn4Config};

    fn toy_config() -> Cnn4Config {
        Cnn4Config {
            input_shape: [16, 16, 4],
            conv_channels: vec![4, 8],
            kernel: 3,
            dense_sizes: vec![16, 8],
            num_classes: 2,
        }
    }

    /// Solid-colour images: class 0 reddish, class 1 bluish (in H,S,V,gray).
    fn toy_set() -> (Vec<Tensor>, Vec<usize>) {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let label = i % 2;
            let jitter = i as f32 * 0.01;
            let px = if label == 0 {
                [0.02 + jitter, 0.9, 0.8, 0.35]
            } else {
                [0.62 + jitter, 0.7, 0.6, 0.45]
            };
            let data: Vec<f32> = std::iter::repeat_n(px, 16 * 16).flatten().collect();
            images.push(Tensor::new(vec![16, 16, 4], data).unwrap());
            labels.push(label);
        }
        (images, labels)
    }

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 20,
            learning_rate: 1e-3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (x, y) = toy_set();
        let data = LabeledImages::new(&x, &y).unwrap();
        let model = Cnn4Model::build(toy_config(), 3).unwrap();
        let out = train_model(model, data, data, &cfg(3)).unwrap();
        assert!(out.history.len() <= 20);
        let (_, acc) = evaluate_set(&out.model, data).unwrap();
        assert_eq!(acc, 1.0);
        let losses: Vec<f64> = out.history.iter().take(6).map(|r| r.train_loss).collect();
        let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(non_increasing >= 4, "{losses:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = toy_set();
        let data = LabeledImages::new(&x, &y).unwrap();
        let run = || {
            let model = Cnn4Model::build(toy_config(), 5).unwrap();
            let mut c = cfg(5);
            c.max_epochs = 3;
            c.dropout = 0.25;
            train_model(model, data, data, &c).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(model_bytes(&a.model), model_bytes(&b.model));
    }

    #[test]
    fn best_epoch_parameters_are_restored() {
        let (x, y) = toy_set();
        let data = LabeledImages::new(&x, &y).unwrap();
        let model = Cnn4Model::build(toy_config(), 8).unwrap();
        let mut c = cfg(8);
        c.max_epochs = 6;
        let out = train_model(model, data, data, &c).unwrap();
        let best = out
            .history
            .iter()
            .find(|r| r.epoch == out.best_epoch)
            .unwrap();
        let (_, acc) = evaluate_set(&out.model, data).unwrap();
        assert_eq!(acc, best.val_accuracy);
        assert!(out.history.iter().all(|r| r.val_accuracy <= best.val_accuracy));
    }

    #[test]
    fn empty_training_set() {
        let model = Cnn4Model::build(toy_config(), 0).unwrap();
        let empty = LabeledImages::new(&[], &[]).unwrap();
        assert!(matches!(train_model(model, empty, empty, &cfg(0)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
