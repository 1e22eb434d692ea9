use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{backward, cross_entropy, forward, softmax, DenseNet, Mode, Weights};
use super::{encode_instance, Batch, CnnError, DenseNetConfig, InputMode};
use crate::cohort::Label;
use crate::rng::task_rng;
use crate::scalar::Scalar;
use crate::segmentation::BreathWindow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Heavy-ball coefficient; 0 is plain SGD.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// After each epoch, replace the batch-norm running statistics with
    /// averages of batch statistics over one ordered pass of the training set.
    #[serde(default)]
    pub recalibrate_batch_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            recalibrate_batch_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CnnError::InvalidConfig("learning_rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CnnError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(CnnError::InvalidConfig(
                "epochs >= 1 and batch_size >= 2 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the train-mode predictions made during the epoch.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub net: DenseNet<T>,
    pub epochs: Vec<EpochReport>,
    /// Parameters at the end of each epoch.
    pub snapshots: Vec<DenseNet<T>>,
}

impl<T> TrainOutcome<T> {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Shuffled mini-batches; a trailing batch of one is merged into its
/// predecessor because train-mode batch norm needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let k = out.len() - 1;
        let start = k * size;
        out[k] = &order[start..];
    }
    out
}

/// Mini-batch SGD on cross-entropy. `inputs` are encoded instances
/// (`channels * length` values each). Initialization and shuffling derive
/// from `train_cfg.seed`. `on_epoch` sees the parameters after every epoch.
pub fn train_cnn_with<T: Scalar, F>(
    inputs: &[Vec<T>],
    labels: &[Label],
    model_cfg: &DenseNetConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(DenseNet<T>, Vec<EpochReport>), CnnError>
where
    F: FnMut(usize, &DenseNet<T>, &EpochReport) -> Result<(), CnnError>,
{
    train_cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(CnnError::ShapeMismatch(format!(
            "{} inputs and {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if !(labels.contains(&Label::Ards) && labels.contains(&Label::NonArds)) {
        return Err(CnnError::SingleClassTraining);
    }
    let mut net = DenseNet::init(model_cfg.clone(), &mut task_rng(train_cfg.seed, &[0]))?;
    let mut shuffle_rng = task_rng(train_cfg.seed, &[1]);
    let y: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();
    let (ch, len) = (model_cfg.input_channels, model_cfg.input_length);
    let lr = T::lit(train_cfg.learning_rate);
    let mu = T::lit(train_cfg.momentum);
    let mut velocity: Option<Weights<T>> = None;
    let mut reports = Vec::with_capacity(train_cfg.epochs);

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(&order, train_cfg.batch_size) {
            let rows: Vec<&[T]> = idx.iter().map(|&i| inputs[i].as_slice()).collect();
            let batch = Batch::from_rows(&rows, ch, len)?;
            let by: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let out = forward(&net, &batch, Mode::Train)?;
            let loss = cross_entropy(&out.logits, &by).to_f64_lossy();
            if !loss.is_finite() {
                return Err(CnnError::DivergenceDetected { epoch });
            }
            loss_sum += loss * idx.len() as f64;
            correct += out
                .logits
                .iter()
                .zip(&by)
                .filter(|(z, &t)| usize::from(z[1] > z[0]) == t)
                .count();
            let grad = backward(&net, &out.cache, &out.logits, &by)?;
            net.absorb_batch_stats(&out.cache);
            let step = match velocity.as_mut() {
                Some(v) => {
                    for (va, ga) in v.arrays_mut().into_iter().zip(grad.named()) {
                        for (a, &g) in va.iter_mut().zip(ga.1) {
                            *a = mu * *a + g;
                        }
                    }
                    v.clone()
                }
                None => {
                    velocity = Some(grad.clone());
                    grad
                }
            };
            net.apply_step(&step, lr);
        }
        if train_cfg.recalibrate_batch_norm {
            recalibrate_batch_norm(&mut net, inputs, train_cfg.batch_size)?;
        }
        let report = EpochReport {
            epoch,
            mean_loss: loss_sum / inputs.len() as f64,
            train_accuracy: correct as f64 / inputs.len() as f64,
        };
        if !report.mean_loss.is_finite() {
            return Err(CnnError::DivergenceDetected { epoch });
        }
        on_epoch(epoch, &net, &report)?;
        reports.push(report);
    }
    Ok((net, reports))
}

/// Sets every batch-norm running mean and variance to the count-weighted
/// average of the batch means and unbiased batch variances seen when
/// `inputs` pass through the network in order, `batch_size` at a time.
/// Parameters are left untouched.
pub fn recalibrate_batch_norm<T: Scalar>(
    net: &mut DenseNet<T>,
    inputs: &[Vec<T>],
    batch_size: usize,
) -> Result<(), CnnError> {
    let order: Vec<usize> = (0..inputs.len()).collect();
    let mut sums: Vec<(Vec<T>, Vec<T>)> = net
        .running
        .iter()
        .map(|r| (vec![T::zero(); r.mean.len()], vec![T::zero(); r.var.len()]))
        .collect();
    let mut total = 0usize;
    for idx in batches(&order, batch_size.max(2)) {
        if idx.len() < 2 {
            continue;
        }
        let rows: Vec<&[T]> = idx.iter().map(|&i| inputs[i].as_slice()).collect();
        let batch = Batch::from_rows(&rows, net.config.input_channels, net.config.input_length)?;
        let out = forward(net, &batch, Mode::Train)?;
        let w = T::from_usize_lossy(idx.len());
        for ((m, v), st) in sums.iter_mut().zip(out.cache.bn_stats()) {
            let cnt = T::from_usize_lossy(st.count);
            let unbias = cnt / (cnt - T::one());
            for c in 0..m.len() {
                m[c] += w * st.mean[c];
                v[c] += w * st.batch_var[c] * unbias;
            }
        }
        total += idx.len();
    }
    if total == 0 {
        return Err(CnnError::BatchTooSmall(inputs.len()));
    }
    let inv = T::one() / T::from_usize_lossy(total);
    for (run, (m, v)) in net.running.iter_mut().zip(sums) {
        for c in 0..m.len() {
            run.mean[c] = m[c] * inv;
            run.var[c] = v[c] * inv;
        }
    }
    Ok(())
}

/// [`train_cnn_with`] keeping a parameter snapshot per epoch.
pub fn train_cnn<T: Scalar>(
    inputs: &[Vec<T>],
    labels: &[Label],
    model_cfg: &DenseNetConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, CnnError> {
    let mut snapshots = Vec::with_capacity(train_cfg.epochs);
    let (net, epochs) = train_cnn_with(inputs, labels, model_cfg, train_cfg, |_, net, _| {
        snapshots.push(net.clone());
        Ok(())
    })?;
    Ok(TrainOutcome { net, epochs, snapshots })
}

/// Eval-mode ARDS probability of each encoded instance.
pub fn predict_instances<T: Scalar>(net: &DenseNet<T>, inputs: &[Vec<T>]) -> Result<Vec<f64>, CnnError> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(64) {
        let rows: Vec<&[T]> = chunk.iter().map(Vec::as_slice).collect();
        let batch = Batch::from_rows(&rows, net.config.input_channels, net.config.input_length)?;
        let f = forward(net, &batch, Mode::Eval)?;
        out.extend(f.logits.iter().map(|z| softmax(*z)[1].to_f64_lossy()));
    }
    Ok(out)
}

/// Mean ARDS probability over the window's instances.
pub fn predict_window<T: Scalar>(net: &DenseNet<T>, window: &BreathWindow, mode: InputMode) -> Result<f64, CnnError> {
    let inputs = window
        .instances
        .iter()
        .map(|i| encode_instance::<T>(&i.values, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let p = predict_instances(net, &inputs)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}
