use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{adamw_step, clip_grad_norm, AdamState, TrainConfig};
use super::store::{Bound, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Labeled images, each `[channels, size, size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(dim_err(format!("{} images, {} labels", images.len(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(crate::Error::Index { index: l, extent: classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// An image classifier whose parameters live in a [`ParamStore`].
pub trait Model {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn num_classes(&self) -> usize;
    /// Logits `[1, classes]` for one image. `rng` is present during
    /// training passes and drives per-pass randomness.
    fn logits(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: &Tensor,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;

    fn parameter_count(&self) -> usize {
        self.store().parameter_count()
    }
}

/// Stacked logits `[batch, classes]`.
pub fn batch_logits(
    model: &dyn Model,
    tape: &mut Tape,
    bound: &Bound,
    images: &[&Tensor],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let rows = images
        .iter()
        .map(|img| model.logits(tape, bound, img, rng.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = &logits.data()[i * classes..(i + 1) * classes];
            let best = (0..classes).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count()
}

/// Mean loss and accuracy over `data` in evaluation mode.
pub fn evaluate(model: &dyn Model, data: &Dataset, batch: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut hits = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape);
        let images: Vec<&Tensor> = chunk.iter().map(|&i| &data.images[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let logits = batch_logits(model, &mut tape, &bound, &images, None)?;
        let l = tape.cross_entropy(logits, &labels)?;
        loss += tape.value(l).data()[0] * chunk.len() as f64;
        hits += correct(tape.value(logits), &labels);
    }
    let n = data.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Running mean over the epoch's training batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

/// One optimizer step on a batch; returns the batch loss and hit count.
pub fn train_step(
    model: &mut dyn Model,
    images: &[&Tensor],
    labels: &[usize],
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let bound = model.store().bind(&mut tape);
    let logits = batch_logits(model, &mut tape, &bound, images, Some(rng))?;
    let loss = tape.cross_entropy(logits, labels)?;
    let hits = correct(tape.value(logits), labels);
    let value = tape.value(loss).data()[0];
    let g = tape.backward(loss)?;
    let mut grads = bound.trainable_grads(&tape, &g);
    clip_grad_norm(&mut grads, cfg.clip_norm);
    adamw_step(model.store_mut().trainable_mut(), &grads, state, t, cfg)?;
    Ok((value, hits))
}

/// Mini-batch AdamW training with per-epoch evaluation on `test`.
pub fn fit(
    model: &mut dyn Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(model.store().trainable());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch) {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            t += 1;
            let (l, h) = train_step(model, &images, &labels, &mut state, t, cfg, &mut rng)?;
            loss += l * chunk.len() as f64;
            hits += h;
        }
        let n = train.len().max(1) as f64;
        let (test_loss, test_accuracy) = evaluate(model, test, cfg.batch)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss / n,
            train_accuracy: hits as f64 / n,
            test_loss,
            test_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}",
            stats.train_loss,
            stats.train_accuracy,
            stats.test_loss,
            stats.test_accuracy
        );
        on_epoch(&stats);
        let done = cfg
            .target_train_accuracy
            .is_some_and(|target| stats.train_accuracy >= target);
        history.push(stats);
        if done {
            break;
        }
    }
    Ok(history)
}
