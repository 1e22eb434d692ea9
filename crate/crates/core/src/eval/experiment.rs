use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    confusion_metrics, interpolate_tpr, nan_as_null, nan_as_null_vec, patient_is_ards, patient_score, roc_auc,
    roc_curve, window_is_ards,
};
use super::split::{oversample, plan_splits, SplitPlan, SplitScheme};
use super::EvalError;
use crate::cnn::{encode_instance, predict_instances, train_cnn_with, DenseNetConfig, InputMode, TrainConfig};
use crate::cohort::{FlowSeries, Label};
use crate::features::{window_features, N_FEATURES};
use crate::forest::{train_random_forest, ForestConfig};
use crate::rng::{derive_seed, task_rng};
use crate::segmentation::{segment_series, SegmentationConfig};
use crate::spectral::{band_ablate, AblationBand};
use crate::stats::{ci95_half_width, mean};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Rf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Rf => "rf",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "rf" => Ok(ModelKind::Rf),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub input_mode: InputMode,
    /// Filter applied to every raw series before segmentation.
    pub ablation: Option<AblationBand>,
    pub split: SplitScheme,
    pub trials: usize,
    /// CNN training epochs; the forest always reports a single epoch.
    pub epochs: usize,
    pub master_seed: u64,
    /// Use only the first `n` patients of each class.
    pub patients_per_class: Option<usize>,
    pub segmentation: SegmentationConfig,
    /// Input channels follow `input_mode`.
    pub network: DenseNetConfig,
    /// `epochs` and `seed` are set per task.
    pub training: TrainConfig,
    /// `seed` is set per task.
    pub forest: ForestConfig,
}

impl ExperimentConfig {
    pub fn cnn(input_mode: InputMode, split: SplitScheme, master_seed: u64) -> Self {
        let channels = input_mode.channels().unwrap_or(1);
        ExperimentConfig {
            model: ModelKind::Cnn,
            input_mode,
            ablation: None,
            split,
            trials: 10,
            epochs: 10,
            master_seed,
            patients_per_class: None,
            segmentation: SegmentationConfig::default(),
            network: DenseNetConfig::desk(channels),
            training: TrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }

    pub fn rf(split: SplitScheme, master_seed: u64) -> Self {
        ExperimentConfig {
            model: ModelKind::Rf,
            input_mode: InputMode::Features,
            epochs: 1,
            ..ExperimentConfig::cnn(InputMode::Raw, split, master_seed)
        }
    }

    fn epochs_run(&self) -> usize {
        match self.model {
            ModelKind::Cnn => self.epochs,
            ModelKind::Rf => 1,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        match (self.model, self.input_mode) {
            (ModelKind::Rf, InputMode::Features) => {}
            (ModelKind::Rf, m) => return bad(format!("the forest needs feature input, got {}", m.as_str())),
            (ModelKind::Cnn, InputMode::Features) => return bad("the CNN cannot take feature input".into()),
            (ModelKind::Cnn, m) => {
                if Some(self.network.input_channels) != m.channels() {
                    return bad(format!(
                        "network has {} input channels but {} input has {}",
                        self.network.input_channels,
                        m.as_str(),
                        m.channels().unwrap_or(0)
                    ));
                }
                if self.network.input_length != self.segmentation.instance_length {
                    return bad("network input length differs from the instance length".into());
                }
                self.network.validate()?;
                self.training.validate()?;
            }
        }
        if self.trials == 0 || self.epochs == 0 {
            return bad("trials and epochs must be positive".into());
        }
        if let Some(band) = &self.ablation {
            band.validate()?;
        }
        self.split.validate()?;
        self.segmentation.validate()?;
        self.forest.validate()?;
        Ok(())
    }
}

/// Metrics of one (trial, fold, epoch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub trial: usize,
    pub fold: usize,
    pub epoch: usize,
    #[serde(with = "nan_as_null")]
    pub auc: f64,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub sensitivity: f64,
    #[serde(with = "nan_as_null")]
    pub specificity: f64,
    #[serde(with = "nan_as_null")]
    pub ppv: f64,
    #[serde(with = "nan_as_null")]
    pub npv: f64,
}

impl MetricCell {
    fn metric(&self, name: &str) -> f64 {
        match name {
            "auc" => self.auc,
            "accuracy" => self.accuracy,
            "sensitivity" => self.sensitivity,
            "specificity" => self.specificity,
            "ppv" => self.ppv,
            "npv" => self.npv,
            _ => unreachable!("unknown metric {name}"),
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = ["auc", "accuracy", "sensitivity", "specificity", "ppv", "npv"];

/// A fold whose results are excluded, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub trial: usize,
    pub fold: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientScoreRecord {
    pub trial: usize,
    pub fold: usize,
    pub epoch: usize,
    pub patient_id: String,
    pub label: Label,
    /// Fraction of windows labelled ARDS.
    pub score: f64,
}

/// Mean and 95% t-interval half-width over per-trial values. Trials with no
/// defined value are `null` and left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub ci95: f64,
    pub per_trial: Vec<Option<f64>>,
}

impl Aggregate {
    pub fn from_trials(per_trial: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = per_trial.iter().flatten().copied().collect();
        let (mean_v, ci) = if defined.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean(&defined), ci95_half_width(&defined))
        };
        Aggregate {
            mean: mean_v,
            ci95: ci,
            per_trial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub auc: Aggregate,
    pub accuracy: Aggregate,
    pub sensitivity: Aggregate,
    pub specificity: Aggregate,
    pub ppv: Aggregate,
    pub npv: Aggregate,
}

impl EpochSummary {
    pub fn metric(&self, name: &str) -> &Aggregate {
        match name {
            "auc" => &self.auc,
            "accuracy" => &self.accuracy,
            "sensitivity" => &self.sensitivity,
            "specificity" => &self.specificity,
            "ppv" => &self.ppv,
            "npv" => &self.npv,
            _ => panic!("unknown metric {name}"),
        }
    }
}

pub const ROC_GRID_POINTS: usize = 101;

/// Final-epoch ROC: per trial, pooled test-patient scores of the valid
/// folds, interpolated on an even false-positive-rate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub fpr: Vec<f64>,
    #[serde(with = "nan_as_null_vec")]
    pub tpr_mean: Vec<f64>,
    #[serde(with = "nan_as_null_vec")]
    pub tpr_ci95: Vec<f64>,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub usable: usize,
    /// Windows whose features could not be extracted.
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub plan: SplitPlan,
    pub windows: WindowCounts,
    pub cells: Vec<MetricCell>,
    pub failures: Vec<FoldFailure>,
    /// One summary per epoch, in order.
    pub epochs: Vec<EpochSummary>,
    /// Epoch with the highest mean AUC (earliest on ties).
    pub best_epoch: usize,
    pub roc: RocSummary,
    pub patient_scores: Vec<PatientScoreRecord>,
}

impl MetricsReport {
    pub fn final_epoch(&self) -> &EpochSummary {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn best(&self) -> &EpochSummary {
        &self.epochs[self.best_epoch - 1]
    }
}

enum WindowData {
    Instances(Vec<Vec<f64>>),
    Features([f64; N_FEATURES]),
}

struct PreparedPatient {
    id: String,
    label: Label,
    windows: Vec<WindowData>,
    failed_windows: usize,
}

fn select_patients(cohort: &[FlowSeries], per_class: Option<usize>) -> Vec<&FlowSeries> {
    let mut taken = [0usize; 2];
    cohort
        .iter()
        .filter(|s| {
            let c = &mut taken[s.label.class_index()];
            *c += 1;
            per_class.is_none_or(|n| *c <= n)
        })
        .collect()
}

fn prepare(series: &FlowSeries, cfg: &ExperimentConfig) -> Result<PreparedPatient, EvalError> {
    let filtered = match &cfg.ablation {
        Some(band) => series.with_samples(band_ablate(&series.samples, band)?)?,
        None => series.clone(),
    };
    let seg = segment_series(&filtered, &cfg.segmentation)?;
    let mut windows = Vec::with_capacity(seg.windows.len());
    let mut failed_windows = 0;
    for w in &seg.windows {
        match cfg.model {
            ModelKind::Cnn => {
                let rows = w
                    .instances
                    .iter()
                    .map(|i| encode_instance::<f64>(&i.values, cfg.input_mode))
                    .collect::<Result<Vec<_>, _>>()?;
                windows.push(WindowData::Instances(rows));
            }
            ModelKind::Rf => match window_features(
                w,
                &filtered.samples,
                &seg.onsets,
                filtered.sample_rate,
                &cfg.segmentation,
            ) {
                Ok(f) => windows.push(WindowData::Features(f.values)),
                Err(_) => failed_windows += 1,
            },
        }
    }
    Ok(PreparedPatient {
        id: series.patient_id.clone(),
        label: series.label,
        windows,
        failed_windows,
    })
}

struct TaskOutcome {
    cells: Vec<MetricCell>,
    scores: Vec<PatientScoreRecord>,
    failure: Option<String>,
}

/// Scores every test patient and computes the cell metrics.
fn score_fold(
    trial: usize,
    fold: usize,
    epoch: usize,
    test: &[&PreparedPatient],
    window_probs: &[Vec<f64>],
) -> Result<(MetricCell, Vec<PatientScoreRecord>), EvalError> {
    let mut scores = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    let mut records = Vec::with_capacity(test.len());
    for (p, probs) in test.iter().zip(window_probs) {
        let labels: Vec<bool> = probs.iter().map(|&q| window_is_ards(q)).collect();
        let s = patient_score(&labels)?;
        scores.push(s);
        truth.push(p.label.is_ards());
        records.push(PatientScoreRecord {
            trial,
            fold,
            epoch,
            patient_id: p.id.clone(),
            label: p.label,
            score: s,
        });
    }
    let auc = roc_auc(&scores, &truth)?;
    let pred: Vec<bool> = scores.iter().map(|&s| patient_is_ards(s)).collect();
    let m = confusion_metrics(&pred, &truth)?;
    Ok((
        MetricCell {
            trial,
            fold,
            epoch,
            auc,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            ppv: m.ppv,
            npv: m.npv,
        },
        records,
    ))
}

fn run_task(
    cfg: &ExperimentConfig,
    patients: &BTreeMap<&str, &PreparedPatient>,
    trial: usize,
    fold: usize,
    train_ids: &[String],
    test_ids: &[String],
) -> Result<TaskOutcome, EvalError> {
    let invalid = |reason: String| TaskOutcome {
        cells: Vec::new(),
        scores: Vec::new(),
        failure: Some(reason),
    };
    let train_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    if let Some(id) = test_ids.iter().find(|id| train_set.contains(id.as_str())) {
        return Err(EvalError::Leakage(id.clone()));
    }
    let test: Vec<&PreparedPatient> = test_ids.iter().map(|id| patients[id.as_str()]).collect();
    if let Some(p) = test.iter().find(|p| p.windows.is_empty()) {
        return Ok(invalid(format!("test patient `{}` has no usable windows", p.id)));
    }

    let task_seed = |purpose: u64| derive_seed(cfg.master_seed, &[trial as u64, fold as u64, purpose]);
    let mut oversample_rng = task_rng(cfg.master_seed, &[trial as u64, fold as u64, 2]);
    let mut cells = Vec::new();
    let mut scores = Vec::new();

    match cfg.model {
        ModelKind::Cnn => {
            let mut items: Vec<(&[f64], Label)> = Vec::new();
            for id in train_ids {
                let p = patients[id.as_str()];
                for w in &p.windows {
                    if let WindowData::Instances(rows) = w {
                        items.extend(rows.iter().map(|r| (r.as_slice(), p.label)));
                    }
                }
            }
            let items = match oversample(items, |(_, l)| *l, &mut oversample_rng) {
                Ok(v) => v,
                Err(EvalError::SingleClass) => return Ok(invalid("training set has a single class".into())),
                Err(e) => return Err(e),
            };
            let inputs: Vec<Vec<f64>> = items.iter().map(|(r, _)| r.to_vec()).collect();
            let labels: Vec<Label> = items.iter().map(|(_, l)| *l).collect();
            drop(items);
            let mut network = cfg.network.clone();
            network.input_channels = cfg.input_mode.channels().unwrap_or(1);
            let training = TrainConfig {
                epochs: cfg.epochs,
                seed: task_seed(1),
                ..cfg.training.clone()
            };
            let test_rows: Vec<Vec<f64>> = test
                .iter()
                .flat_map(|p| p.windows.iter())
                .flat_map(|w| match w {
                    WindowData::Instances(rows) => rows.clone(),
                    WindowData::Features(_) => Vec::new(),
                })
                .collect();
            train_cnn_with(&inputs, &labels, &network, &training, |epoch, net, _| {
                let probs = predict_instances(net, &test_rows)?;
                let mut cursor = 0;
                let window_probs: Vec<Vec<f64>> = test
                    .iter()
                    .map(|p| {
                        p.windows
                            .iter()
                            .map(|w| {
                                let n = match w {
                                    WindowData::Instances(rows) => rows.len(),
                                    WindowData::Features(_) => 0,
                                };
                                let q = probs[cursor..cursor + n].iter().sum::<f64>() / n as f64;
                                cursor += n;
                                q
                            })
                            .collect()
                    })
                    .collect();
                // test sets always hold both classes and every patient has a window
                let (cell, recs) = score_fold(trial, fold, epoch, &test, &window_probs).expect("validated test set");
                cells.push(cell);
                scores.extend(recs);
                Ok(())
            })?;
        }
        ModelKind::Rf => {
            let mut items: Vec<(&[f64; N_FEATURES], Label)> = Vec::new();
            for id in train_ids {
                let p = patients[id.as_str()];
                for w in &p.windows {
                    if let WindowData::Features(f) = w {
                        items.push((f, p.label));
                    }
                }
            }
            let items = match oversample(items, |(_, l)| *l, &mut oversample_rng) {
                Ok(v) => v,
                Err(EvalError::SingleClass) => return Ok(invalid("training set has a single class".into())),
                Err(e) => return Err(e),
            };
            let x: Vec<Vec<f64>> = items.iter().map(|(f, _)| f.to_vec()).collect();
            let y: Vec<Label> = items.iter().map(|(_, l)| *l).collect();
            let forest_cfg = ForestConfig {
                seed: task_seed(1),
                ..cfg.forest.clone()
            };
            let forest = train_random_forest(&x, &y, &forest_cfg)?;
            let mut window_probs = Vec::with_capacity(test.len());
            for p in &test {
                let mut probs = Vec::with_capacity(p.windows.len());
                for w in &p.windows {
                    if let WindowData::Features(f) = w {
                        probs.push(forest.predict_proba(f)?);
                    }
                }
                window_probs.push(probs);
            }
            let (cell, recs) = score_fold(trial, fold, 1, &test, &window_probs)?;
            cells.push(cell);
            scores.extend(recs);
        }
    }
    Ok(TaskOutcome {
        cells,
        scores,
        failure: None,
    })
}

fn summarize(cfg: &ExperimentConfig, cells: &[MetricCell], invalid: &BTreeSet<(usize, usize)>) -> Vec<EpochSummary> {
    (1..=cfg.epochs_run())
        .map(|epoch| {
            let agg = |name: &str| {
                let per_trial = (0..cfg.trials)
                    .map(|t| {
                        let vals: Vec<f64> = cells
                            .iter()
                            .filter(|c| c.trial == t && c.epoch == epoch && !invalid.contains(&(t, c.fold)))
                            .map(|c| c.metric(name))
                            .filter(|v| !v.is_nan())
                            .collect();
                        (!vals.is_empty()).then(|| mean(&vals))
                    })
                    .collect();
                Aggregate::from_trials(per_trial)
            };
            EpochSummary {
                epoch,
                auc: agg("auc"),
                accuracy: agg("accuracy"),
                sensitivity: agg("sensitivity"),
                specificity: agg("specificity"),
                ppv: agg("ppv"),
                npv: agg("npv"),
            }
        })
        .collect()
}

fn roc_summary(cfg: &ExperimentConfig, scores: &[PatientScoreRecord]) -> RocSummary {
    let last = cfg.epochs_run();
    let fpr: Vec<f64> = (0..ROC_GRID_POINTS)
        .map(|i| i as f64 / (ROC_GRID_POINTS - 1) as f64)
        .collect();
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for t in 0..cfg.trials {
        let (s, y): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .filter(|r| r.trial == t && r.epoch == last)
            .map(|r| (r.score, r.label.is_ards()))
            .unzip();
        if let Ok(curve) = roc_curve(&s, &y) {
            curves.push(fpr.iter().map(|&f| interpolate_tpr(&curve, f)).collect());
        }
    }
    let column = |i: usize| curves.iter().map(|c| c[i]).collect::<Vec<f64>>();
    let (tpr_mean, tpr_ci95) = if curves.is_empty() {
        (vec![f64::NAN; fpr.len()], vec![f64::NAN; fpr.len()])
    } else {
        (
            (0..fpr.len()).map(|i| mean(&column(i))).collect(),
            (0..fpr.len()).map(|i| ci95_half_width(&column(i))).collect(),
        )
    };
    RocSummary {
        fpr,
        tpr_mean,
        tpr_ci95,
        trials: curves.len(),
    }
}

/// Runs every (trial, fold) task in parallel and assembles the report. The
/// result depends only on the cohort and `cfg`, not on scheduling.
pub fn run_experiment(cohort: &[FlowSeries], cfg: &ExperimentConfig) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let selected = select_patients(cohort, cfg.patients_per_class);
    let prepared: Vec<PreparedPatient> = selected.par_iter().map(|s| prepare(s, cfg)).collect::<Result<_, _>>()?;
    let mut by_id: BTreeMap<&str, &PreparedPatient> = BTreeMap::new();
    for p in &prepared {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::InvalidConfig(format!("duplicate patient id `{}`", p.id)));
        }
    }
    let roster: Vec<(String, Label)> = prepared.iter().map(|p| (p.id.clone(), p.label)).collect();
    let plan = plan_splits(&roster, cfg.split, cfg.trials, cfg.master_seed)?;

    let tasks: Vec<(usize, usize)> = plan
        .assignments
        .iter()
        .enumerate()
        .flat_map(|(t, folds)| (0..folds.len()).map(move |f| (t, f)))
        .collect();
    let outcomes: Vec<TaskOutcome> = tasks
        .par_iter()
        .map(|&(t, f)| {
            let fold = &plan.assignments[t][f];
            run_task(cfg, &by_id, t, f, &fold.train, &fold.test)
        })
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::new();
    let mut patient_scores = Vec::new();
    let mut failures = Vec::new();
    for (&(trial, fold), o) in tasks.iter().zip(outcomes) {
        if let Some(reason) = o.failure {
            failures.push(FoldFailure { trial, fold, reason });
        }
        cells.extend(o.cells);
        patient_scores.extend(o.scores);
    }
    let invalid: BTreeSet<(usize, usize)> = failures.iter().map(|f| (f.trial, f.fold)).collect();
    let epochs = summarize(cfg, &cells, &invalid);
    let best_epoch = epochs
        .iter()
        .filter(|e| !e.auc.mean.is_nan())
        .fold(None::<&EpochSummary>, |best, e| match best {
            Some(b) if b.auc.mean >= e.auc.mean => Some(b),
            _ => Some(e),
        })
        .map_or(epochs.len(), |e| e.epoch);
    let roc = roc_summary(cfg, &patient_scores);
    Ok(MetricsReport {
        config: cfg.clone(),
        plan,
        windows: WindowCounts {
            usable: prepared.iter().map(|p| p.windows.len()).sum(),
            failed: prepared.iter().map(|p| p.failed_windows).sum(),
        },
        cells,
        failures,
        epochs,
        best_epoch,
        roc,
        patient_scores,
    })
}
