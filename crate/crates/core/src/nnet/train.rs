use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Dataset, PixelScale};
use crate::error::{Error, Result};

use super::forward::{backward, forward, forward_train, Captured, ForwardOptions, Gradients};
use super::network::{Layer, NetworkDef};
use super::ops::softmax_cross_entropy;
use super::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Zero-based epochs at which the learning rate is divided by
    /// `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Shuffling seed. Not part of the JSON form; runs derive it from the
    /// run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            base_lr: 0.1,
            lr_drop_epochs: vec![5, 8],
            lr_drop_factor: 10.0,
            momentum: 0.9,
            nesterov: false,
            weight_decay: 0.0,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::config("base_lr", "must be positive"));
        }
        if self.lr_drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "lr_drop_epochs",
                "must be strictly increasing",
            ));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return Err(Error::config("lr_drop_factor", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| epoch >= d).count();
        self.base_lr / self.lr_drop_factor.powi(drops as i32)
    }
}

/// SGD with (optionally Nesterov) momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    velocity: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Sgd {
    pub fn new(momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum,
            nesterov,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    pub fn step(&mut self, net: &mut NetworkDef, grads: &Gradients, lr: f64) {
        if self.velocity.len() != net.layers.len() {
            self.velocity = vec![None; net.layers.len()];
        }
        for ((layer, grad), vel) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity)
        {
            let Some(grad) = grad else { continue };
            let (w, b) = match layer {
                Layer::Conv(c) => (&mut c.weight, &mut c.bias),
                Layer::Linear(l) => (&mut l.weight, &mut l.bias),
                _ => continue,
            };
            let v = vel.get_or_insert_with(|| (vec![0.0; w.len()], vec![0.0; b.len()]));
            if v.0.len() != w.len() || v.1.len() != b.len() {
                *v = (vec![0.0; w.len()], vec![0.0; b.len()]);
            }
            update(
                w,
                &grad.weight,
                &mut v.0,
                lr,
                self.momentum,
                self.nesterov,
                self.weight_decay,
            );
            update(
                b,
                &grad.bias,
                &mut v.1,
                lr,
                self.momentum,
                self.nesterov,
                0.0,
            );
        }
    }
}

fn update(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64, nesterov: bool, wd: f64) {
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        let d = if nesterov { g + mu * *v } else { *v };
        *p -= lr * d;
    }
}

/// One SGD step on a batch. Returns the mean loss and the logits.
pub fn backward_step(
    net: &mut NetworkDef,
    batch: Tensor4,
    labels: &[usize],
    opt: &mut Sgd,
    lr: f64,
) -> Result<(f64, Vec<f64>)> {
    let trace = forward_train(net, batch, &[])?;
    let (loss, grad) = softmax_cross_entropy(&trace.output.logits, labels, trace.output.classes);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} (lr {lr}, max |logit| {})",
            max_abs(&trace.output.logits)
        )));
    }
    let (grads, _) = backward(net, &trace, &grad)?;
    opt.step(net, &grads, lr);
    Ok((loss, trace.output.logits))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Callbacks driven by [`train`].
pub trait TrainObserver {
    /// Conv layer ids whose training activations are passed to `on_batch`.
    fn capture(&self) -> Vec<usize> {
        Vec::new()
    }

    fn on_batch(&mut self, _epoch: usize, _captured: &[Captured], _labels: &[usize]) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _net: &NetworkDef, _metrics: &EpochMetrics) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct(logits: &[f64], labels: &[usize]) -> usize {
    let classes = logits.len() / labels.len().max(1);
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(&logits[i * classes..(i + 1) * classes]) == y)
        .count()
}

/// Trains in place. Captured activations come from the same forward pass
/// that produces the gradients, i.e. with the parameters before the step.
pub fn train(
    net: &mut NetworkDef,
    data: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let plan = make_batches(data.len(), config.seed, config.batch_size);
    let mut opt = Sgd::new(config.momentum, config.nesterov, config.weight_decay);
    let capture = observer.capture();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for idx in plan.epoch(epoch as u64) {
            let x = data.tensor(&idx, PixelScale::Standardized);
            let labels = data.labels_of(&idx);
            let trace = forward_train(net, x, &capture)?;
            let (loss, grad) =
                softmax_cross_entropy(&trace.output.logits, &labels, trace.output.classes);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch} (lr {lr}, max |logit| {})",
                    max_abs(&trace.output.logits)
                )));
            }
            if !trace.output.captured.is_empty() && idx.len() >= 2 {
                observer.on_batch(epoch, &trace.output.captured, &labels)?;
            }
            let (grads, _) = backward(net, &trace, &grad)?;
            opt.step(net, &grads, lr);
            loss_sum += loss * idx.len() as f64;
            hits += correct(&trace.output.logits, &labels);
        }
        let test_accuracy = test.map(|t| evaluate(net, t, 500)).transpose()?;
        let metrics = EpochMetrics {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            train_accuracy: hits as f64 / data.len() as f64,
            test_accuracy,
        };
        log::info!(
            "epoch {epoch}: lr {lr} loss {:.4} train {:.4} test {}",
            metrics.loss,
            metrics.train_accuracy,
            test_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        observer.on_epoch_end(net, &metrics)?;
        log.push(metrics);
    }
    Ok(log)
}

/// Classification accuracy in `[0, 1]`.
pub fn evaluate(net: &NetworkDef, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut hits = 0;
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let x = data.tensor(idx, PixelScale::Standardized);
        let out = forward(net, &x, &ForwardOptions::default())?;
        hits += correct(&out.logits, &data.labels_of(idx));
    }
    Ok(hits as f64 / data.len() as f64)
}
