//! Patient-level evaluation: stratified splits, rebalancing, majority-vote
//! aggregation, metrics with confidence intervals and the experiment and
//! ablation-sweep drivers.

mod experiment;
mod metrics;
mod split;
mod sweep;

use thiserror::Error;

use crate::cnn::CnnError;
use crate::cohort::{CohortError, Label};
use crate::forest::ForestError;
use crate::segmentation::SegmentationError;
use crate::spectral::SpectralError;

pub use experiment::{
    run_experiment, Aggregate, EpochSummary, ExperimentConfig, FoldFailure, MetricCell, MetricsReport, ModelKind,
    PatientScoreRecord, RocSummary, WindowCounts, METRIC_NAMES, ROC_GRID_POINTS,
};
pub use metrics::{
    confusion_metrics, interpolate_tpr, patient_is_ards, patient_score, roc_auc, roc_curve, window_is_ards,
    ConfusionMetrics,
};
pub use split::{
    bootstrap_split, holdout_split, oversample, oversample_instances, plan_splits, stratified_kfold, Fold, SplitPlan,
    SplitScheme,
};
pub use sweep::{ablation_sweep, SweepConfig, SweepEntry, SweepReport, TABLE2_CUTOFFS_HZ};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class counts {counts:?} are not both divisible by k = {k}")]
    UnbalancedCohort { counts: [usize; 2], k: usize },
    #[error("split leaves no {class} patient on one side")]
    EmptySide { class: Label },
    #[error("both classes are required")]
    SingleClass,
    #[error("patient has no windows to score")]
    NoWindows,
    #[error("patient `{0}` appears in both train and test sets")]
    Leakage(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Forest(#[from] ForestError),
}
