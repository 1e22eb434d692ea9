//! Ventilator flow waveform workbench.
//!
//! Breath segmentation of 50 Hz flow recordings, brick-wall spectral
//! ablation, expert breath features with a random forest, a 1-D DenseNet
//! with Grad-CAM, patient-level cross-validation and a synthetic cohort
//! generator with class signal planted in a chosen frequency band.
//!
//! Numerical cores (FFT, CNN) are generic over [`scalar::Scalar`]; the
//! aliases below fix the precision.

pub mod cnn;
pub mod cohort;
pub mod eval;
pub mod features;
pub mod forest;
pub mod render;
pub mod rng;
pub mod scalar;
pub mod segmentation;
pub mod spectral;
pub mod stats;
pub mod synth;

use thiserror::Error;

pub type DenseNet64 = cnn::DenseNet<f64>;
pub type DenseNet32 = cnn::DenseNet<f32>;
pub type Spectrum64 = spectral::Spectrum<f64>;
pub type Spectrum32 = spectral::Spectrum<f32>;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cohort(#[from] cohort::CohortError),
    #[error(transparent)]
    Segmentation(#[from] segmentation::SegmentationError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Forest(#[from] forest::ForestError),
    #[error(transparent)]
    Cnn(#[from] cnn::CnnError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

impl Error {
    /// Short stable tag naming the failing component.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Cohort(_) => "cohort",
            Error::Segmentation(_) => "segmentation",
            Error::Spectral(_) => "spectral",
            Error::Feature(_) => "features",
            Error::Forest(_) => "forest",
            Error::Cnn(_) => "cnn",
            Error::Synth(_) => "synth",
            Error::Eval(_) => "eval",
        }
    }
}
