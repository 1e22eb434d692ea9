//! One-dimensional DenseNet classifier with hand-written reverse-mode
//! gradients, SGD training and Grad-CAM saliency.

mod cam;
mod kernels;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectral::spectral_input;

pub use cam::{
    average_cam, cam_from_activations, grad_cam, grad_cam_batch, normalize_cam, summarize_cams, CamMap, CamSummary,
};
pub use model::{
    backward, backward_from_logits, cross_entropy, forward, loss_logit_gradient, softmax, BnParams, DenseNet,
    ForwardCache, ForwardOutput, Gradients, Mode, RunningStats, Weights,
};
pub use train::{
    predict_instances, predict_window, recalibrate_batch_norm, train_cnn, train_cnn_with, EpochReport, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("train-mode batch norm needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("activation cache was produced by parameter version {cache}, parameters are at {params}")]
    StaleCache { cache: u64, params: u64 },
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("training set must contain both classes")]
    SingleClassTraining,
    #[error("need at least {needed} maps per class, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// What the network sees for each 224-sample instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Flow samples.
    Raw,
    /// DC-centered magnitude spectrum.
    Fft,
    /// Flow and magnitude spectrum as two channels.
    RawPlusFft,
    /// Window feature vectors (random forest only).
    Features,
}

impl InputMode {
    pub fn channels(self) -> Option<usize> {
        match self {
            InputMode::Raw | InputMode::Fft => Some(1),
            InputMode::RawPlusFft => Some(2),
            InputMode::Features => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Raw => "raw",
            InputMode::Fft => "fft",
            InputMode::RawPlusFft => "raw_plus_fft",
            InputMode::Features => "features",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(InputMode::Raw),
            "fft" => Ok(InputMode::Fft),
            "raw_plus_fft" | "raw+fft" => Ok(InputMode::RawPlusFft),
            "features" => Ok(InputMode::Features),
            other => Err(format!("unknown input mode `{other}`")),
        }
    }
}

/// Channel-major network input for one instance.
pub fn encode_instance<T: Scalar>(values: &[f64], mode: InputMode) -> Result<Vec<T>, CnnError> {
    let raw = || values.iter().map(|&v| T::lit(v));
    let fft = || spectral_input(values).into_iter().map(T::lit);
    match mode {
        InputMode::Raw => Ok(raw().collect()),
        InputMode::Fft => Ok(fft().collect()),
        InputMode::RawPlusFft => Ok(raw().chain(fft()).collect()),
        InputMode::Features => Err(CnnError::InvalidConfig("the CNN does not take feature vectors".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub input_channels: usize,
    pub input_length: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub stem_channels: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_padding: usize,
    /// Layers per dense block.
    pub blocks: Vec<usize>,
    pub growth_rate: usize,
    /// Channel factor of each transition.
    pub compression: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig::desk(1)
    }
}

impl DenseNetConfig {
    /// Stem, two dense blocks of four layers, growth 8: 11 weighted layers.
    pub fn desk(input_channels: usize) -> Self {
        DenseNetConfig {
            input_channels,
            input_length: 224,
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            stem_channels: 16,
            pool_kernel: 3,
            pool_stride: 2,
            pool_padding: 1,
            blocks: vec![4, 4],
            growth_rate: 8,
            compression: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Full-depth variant, blocks of 4, 5 and 5 layers: 18 weighted layers.
    pub fn full(input_channels: usize) -> Self {
        DenseNetConfig {
            blocks: vec![4, 5, 5],
            ..DenseNetConfig::desk(input_channels)
        }
    }

    /// Convolutions, transitions and the classifier.
    pub fn weighted_layers(&self) -> usize {
        1 + self.blocks.iter().sum::<usize>() + self.blocks.len().saturating_sub(1) + 1
    }

    fn conv_len(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
    }

    pub fn stem_length(&self) -> usize {
        Self::conv_len(self.input_length, self.stem_kernel, self.stem_stride, self.stem_padding).unwrap_or(0)
    }

    /// Sequence length inside each dense block.
    pub fn block_lengths(&self) -> Vec<usize> {
        let mut len = Self::conv_len(
            self.stem_length(),
            self.pool_kernel,
            self.pool_stride,
            self.pool_padding,
        )
        .unwrap_or(0);
        let mut out = Vec::with_capacity(self.blocks.len());
        for _ in &self.blocks {
            out.push(len);
            len /= 2;
        }
        out
    }

    /// Input channels of each dense block.
    pub fn block_input_channels(&self) -> Vec<usize> {
        let mut c = self.stem_channels;
        let mut out = Vec::with_capacity(self.blocks.len());
        for &n in &self.blocks {
            out.push(c);
            c = self.transition_channels(c + n * self.growth_rate);
        }
        out
    }

    pub fn transition_channels(&self, c: usize) -> usize {
        ((c as f64 * self.compression).floor() as usize).max(1)
    }

    /// Channels of the map that Grad-CAM explains.
    pub fn final_channels(&self) -> usize {
        let last = self.blocks.len() - 1;
        self.block_input_channels()[last] + self.blocks[last] * self.growth_rate
    }

    pub fn final_length(&self) -> usize {
        *self.block_lengths().last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::InvalidConfig(m.into()));
        if [
            self.input_channels,
            self.input_length,
            self.stem_kernel,
            self.stem_stride,
            self.stem_channels,
            self.pool_kernel,
            self.pool_stride,
            self.growth_rate,
        ]
        .contains(&0)
        {
            return bad("all sizes must be positive");
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return bad("every dense block needs at least one layer");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad("compression must lie in (0, 1]");
        }
        if self.pool_padding >= self.pool_kernel || self.stem_padding >= self.stem_kernel {
            return bad("padding must be smaller than the kernel");
        }
        if !(self.bn_eps > 0.0 && self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("bn_eps must be positive and bn_momentum in (0, 1]");
        }
        if self.stem_length() == 0 || self.block_lengths().contains(&0) {
            return bad("input too short: a stage would have length 0");
        }
        Ok(())
    }
}

/// A batch of `n` inputs laid out `[n, channels, length]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub data: Vec<T>,
    pub n: usize,
    pub channels: usize,
    pub length: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn from_rows(rows: &[&[T]], channels: usize, length: usize) -> Result<Self, CnnError> {
        let mut data = Vec::with_capacity(rows.len() * channels * length);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != channels * length {
                return Err(CnnError::ShapeMismatch(format!(
                    "row {i} has {} values, expected {channels}x{length}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Batch {
            data,
            n: rows.len(),
            channels,
            length,
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.channels * self.length;
        &self.data[i * w..(i + 1) * w]
    }
}
