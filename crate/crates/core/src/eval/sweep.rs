use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, EpochSummary, ExperimentConfig, ModelKind, WindowCounts};
use super::EvalError;
use crate::cohort::FlowSeries;
use crate::spectral::AblationBand;

/// Lowpass cutoffs of the standard sweep, highest first.
pub const TABLE2_CUTOFFS_HZ: [f64; 9] = [20.0, 15.0, 10.0, 8.0, 6.0, 4.0, 2.0, 1.0, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Base configurations; each is run unfiltered and at every cutoff.
    pub cnn: Option<ExperimentConfig>,
    pub rf: Option<ExperimentConfig>,
    pub cutoffs_hz: Vec<f64>,
}

/// Final-epoch results of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub model: ModelKind,
    /// `None` for the unfiltered baseline.
    pub cutoff_hz: Option<f64>,
    pub summary: EpochSummary,
    pub best_epoch: usize,
    pub invalid_folds: usize,
    pub total_folds: usize,
    pub windows: WindowCounts,
}

/// Baselines (A), CNN under lowpass filtering (B), forest under lowpass
/// filtering (C).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub baselines: Vec<SweepEntry>,
    pub cnn: Vec<SweepEntry>,
    pub rf: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn entry(&self, model: ModelKind, cutoff_hz: Option<f64>) -> Option<&SweepEntry> {
        let list = match (model, cutoff_hz) {
            (_, None) => &self.baselines,
            (ModelKind::Cnn, Some(_)) => &self.cnn,
            (ModelKind::Rf, Some(_)) => &self.rf,
        };
        list.iter().find(|e| e.model == model && e.cutoff_hz == cutoff_hz)
    }
}

fn run_one(cohort: &[FlowSeries], base: &ExperimentConfig, cutoff: Option<f64>) -> Result<SweepEntry, EvalError> {
    let cfg = ExperimentConfig {
        ablation: cutoff.map(AblationBand::lowpass),
        ..base.clone()
    };
    let report = run_experiment(cohort, &cfg)?;
    Ok(SweepEntry {
        model: cfg.model,
        cutoff_hz: cutoff,
        summary: report.final_epoch().clone(),
        best_epoch: report.best_epoch,
        invalid_folds: report.failures.len(),
        total_folds: report.plan.assignments.iter().map(Vec::len).sum(),
        windows: report.windows,
    })
}

/// One experiment per model and cutoff plus each model's unfiltered baseline.
pub fn ablation_sweep(cohort: &[FlowSeries], cfg: &SweepConfig) -> Result<SweepReport, EvalError> {
    if let Some(c) = cfg.cutoffs_hz.iter().find(|&&c| !(c > 0.0 && c <= 25.0)) {
        return Err(EvalError::InvalidConfig(format!("cutoff {c} Hz is outside (0, 25]")));
    }
    let mut report = SweepReport {
        baselines: Vec::new(),
        cnn: Vec::new(),
        rf: Vec::new(),
    };
    for (base, expected) in [(&cfg.rf, ModelKind::Rf), (&cfg.cnn, ModelKind::Cnn)] {
        let Some(base) = base else { continue };
        if base.model != expected {
            return Err(EvalError::InvalidConfig(format!(
                "{} slot holds a {} configuration",
                expected.as_str(),
                base.model.as_str()
            )));
        }
        report.baselines.push(run_one(cohort, base, None)?);
        let filtered = cfg
            .cutoffs_hz
            .iter()
            .map(|&c| run_one(cohort, base, Some(c)))
            .collect::<Result<Vec<_>, _>>()?;
        match expected {
            ModelKind::Cnn => report.cnn = filtered,
            ModelKind::Rf => report.rf = filtered,
        }
    }
    Ok(report)
}
