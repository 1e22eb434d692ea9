//! `vwd`: command-line front end for the ventilator waveform workbench.
//!
//! Exit status is 0 on success, 2 for usage errors and 1 for runtime
//! errors. Errors go to standard error as `error[<kind>]: <message>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vwd_core::cnn::{
    average_cam, encode_instance, predict_instances, train_cnn_with, CamSummary, DenseNetConfig, InputMode, TrainConfig,
};
use vwd_core::cohort::{
    load_cohort, load_manifest, write_flow_file, write_manifest, CohortManifest, FlowSeries, Label, ManifestEntry,
};
use vwd_core::eval::{
    ablation_sweep, oversample_instances, patient_is_ards, patient_score, run_experiment, window_is_ards,
    ExperimentConfig, MetricsReport, ModelKind, SplitScheme, SweepConfig, SweepReport,
};
use vwd_core::features::{window_features, FEATURE_NAMES};
use vwd_core::forest::{train_random_forest, ForestConfig, RandomForest};
use vwd_core::render::{fmt3, gradcam_svg, roc_svg, table1_csv, table2_csv};
use vwd_core::segmentation::{segment_series, Segmentation, SegmentationConfig};
use vwd_core::spectral::{band_ablate, spectral_input_frequencies, AblationBand};
use vwd_core::synth::{generate_cohort, SynthConfig, FLOW_DIR, MANIFEST_FILE};
use vwd_core::DenseNet64;

#[derive(Parser)]
#[command(name = "vwd", version, about = "Ventilator waveform ARDS classification workbench")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "VWD_OUT_DIR", default_value = "vwd-out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct CohortInput {
    /// Cohort manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Lowpass cutoff (Hz) applied to every series before anything else.
    #[arg(long)]
    cutoff: Option<f64>,
}

#[derive(Args, Clone)]
struct CnnTraining {
    #[arg(long, value_enum, default_value_t = Mode::Raw)]
    input_mode: Mode,
    #[arg(long, value_enum, default_value_t = Architecture::Desk)]
    architecture: Architecture,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Re-estimate batch-norm statistics over the training set after each epoch.
    #[arg(long)]
    recalibrate_bn: bool,
}

#[derive(Args, Clone)]
struct ForestTraining {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args, Clone)]
struct Evaluation {
    #[arg(long, value_enum, default_value_t = Scheme::Kfold)]
    scheme: Scheme,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Training share for holdout and bootstrap splits.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Use only the first N patients of each class.
    #[arg(long)]
    patients_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Raw,
    Fft,
    RawPlusFft,
}

impl From<Mode> for InputMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Raw => InputMode::Raw,
            Mode::Fft => InputMode::Fft,
            Mode::RawPlusFft => InputMode::RawPlusFft,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Architecture {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Kfold,
    RandomKfold,
    Holdout,
    Bootstrap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Cnn,
    Rf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    HighBand,
    LowBand,
    NoiseFree,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth {
        /// Patients per class.
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::HighBand)]
        preset: Preset,
        /// Seconds of flow per patient.
        #[arg(long)]
        duration: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Detect breath onsets and count instances and windows.
    Segment {
        #[command(flatten)]
        input: CohortInput,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write a band-filtered copy of a cohort.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        /// Upper passband edge (Hz).
        #[arg(long)]
        cutoff: f64,
        /// Lower passband edge (Hz).
        #[arg(long, default_value_t = 0.0)]
        low: f64,
        /// Remove the mean as well.
        #[arg(long)]
        drop_dc: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Window feature vectors as CSV.
    Featurize {
        #[command(flatten)]
        input: CohortInput,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train the CNN on a whole cohort.
    TrainCnn {
        #[command(flatten)]
        input: CohortInput,
        #[command(flatten)]
        training: CnnTraining,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train the random forest on a whole cohort.
    TrainRf {
        #[command(flatten)]
        input: CohortInput,
        #[command(flatten)]
        forest: ForestTraining,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Patient scores from a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Cross-validated patient-level evaluation.
    Evaluate {
        #[command(flatten)]
        input: CohortInput,
        #[arg(long, value_enum, default_value_t = Model::Cnn)]
        model: Model,
        #[command(flatten)]
        eval: Evaluation,
        #[command(flatten)]
        training: CnnTraining,
        #[command(flatten)]
        forest: ForestTraining,
        #[command(flatten)]
        out: OutDir,
    },
    /// Evaluate each model unfiltered and at every lowpass cutoff.
    AblationSweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vwd_core::eval::TABLE2_CUTOFFS_HZ.to_vec())]
        cutoffs: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![Model::Cnn, Model::Rf])]
        models: Vec<Model>,
        #[command(flatten)]
        eval: Evaluation,
        #[command(flatten)]
        training: CnnTraining,
        #[command(flatten)]
        forest: ForestTraining,
        #[command(flatten)]
        out: OutDir,
    },
    /// Class-averaged Grad-CAM of a saved CNN over a cohort.
    Gradcam {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Render CSV tables and SVG figures from saved documents.
    Report {
        /// Evaluation document(s); the first also gives table1.csv.
        #[arg(long)]
        evaluation: Vec<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        gradcam: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(vwd_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    Json { path: PathBuf, source: serde_json::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Json { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl<E: Into<vwd_core::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn check_cutoff(cutoff: Option<f64>) -> Result<Option<AblationBand>> {
    match cutoff {
        None => Ok(None),
        Some(c) if c > 0.0 && c <= 25.0 => Ok(Some(AblationBand::lowpass(c))),
        Some(c) => Err(usage(format!("--cutoff must lie in (0, 25] Hz, got {c}"))),
    }
}

fn load(manifest: &Path, band: Option<&AblationBand>) -> Result<Vec<FlowSeries>> {
    let m = load_manifest(manifest)?;
    let cohort = load_cohort(&m)?;
    match band {
        None => Ok(cohort),
        Some(b) => cohort
            .iter()
            .map(|s| Ok(s.with_samples(band_ablate(&s.samples, b)?)?))
            .collect(),
    }
}

/// What a saved model file holds.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SavedModel {
    Cnn {
        input_mode: InputMode,
        ablation: Option<AblationBand>,
        segmentation: SegmentationConfig,
        training: TrainConfig,
        network: DenseNet64,
    },
    Rf {
        ablation: Option<AblationBand>,
        segmentation: SegmentationConfig,
        forest: RandomForest,
    },
}

fn split_scheme(e: &Evaluation) -> Result<SplitScheme> {
    let s = match e.scheme {
        Scheme::Kfold => SplitScheme::KFold { k: e.k },
        Scheme::RandomKfold => SplitScheme::RandomKFold { k: e.k },
        Scheme::Holdout => SplitScheme::Holdout {
            train_fraction: e.train_fraction,
        },
        Scheme::Bootstrap => SplitScheme::Bootstrap {
            train_fraction: e.train_fraction,
        },
    };
    s.validate().map_err(|err| usage(err.to_string()))?;
    Ok(s)
}

fn network_config(t: &CnnTraining) -> DenseNetConfig {
    let channels = InputMode::from(t.input_mode).channels().unwrap_or(1);
    match t.architecture {
        Architecture::Desk => DenseNetConfig::desk(channels),
        Architecture::Full => DenseNetConfig::full(channels),
    }
}

fn experiment_config(
    model: Model,
    e: &Evaluation,
    t: &CnnTraining,
    f: &ForestTraining,
    ablation: Option<AblationBand>,
) -> Result<ExperimentConfig> {
    let split = split_scheme(e)?;
    let mut cfg = match model {
        Model::Cnn => ExperimentConfig::cnn(t.input_mode.into(), split, e.seed),
        Model::Rf => ExperimentConfig::rf(split, e.seed),
    };
    cfg.ablation = ablation;
    cfg.trials = e.trials;
    cfg.epochs = if matches!(model, Model::Rf) { 1 } else { e.epochs };
    cfg.patients_per_class = e.patients_per_class;
    cfg.network = network_config(t);
    cfg.training = TrainConfig {
        learning_rate: t.lr,
        momentum: t.momentum,
        batch_size: t.batch_size,
        epochs: e.epochs,
        seed: e.seed,
        recalibrate_batch_norm: t.recalibrate_bn,
    };
    cfg.forest = ForestConfig {
        n_trees: f.trees,
        max_depth: f.max_depth,
        seed: e.seed,
        ..ForestConfig::default()
    };
    cfg.validate().map_err(|err| usage(err.to_string()))?;
    Ok(cfg)
}

fn synth(patients: usize, seed: u64, preset: Preset, duration: Option<f64>, out: &Path) -> Result<()> {
    let mut cfg = match preset {
        Preset::Default => SynthConfig {
            seed,
            ..SynthConfig::default()
        },
        Preset::HighBand => SynthConfig::high_band(seed),
        Preset::LowBand => SynthConfig::low_band(seed),
        Preset::NoiseFree => SynthConfig::noise_free(seed),
    };
    cfg.n_patients_per_class = patients;
    if let Some(d) = duration {
        cfg.duration_s = d;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_cohort(&cfg, out)?;
    println!("wrote {} patients to {}", manifest.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SegmentSummary {
    patient_id: String,
    label: Label,
    onsets: Vec<usize>,
    instances: usize,
    windows: usize,
}

fn segment(input: &CohortInput, out: &Path) -> Result<()> {
    let band = check_cutoff(input.cutoff)?;
    let cohort = load(&input.manifest, band.as_ref())?;
    let cfg = SegmentationConfig::default();
    let mut rows = Vec::with_capacity(cohort.len());
    for s in &cohort {
        let Segmentation {
            onsets,
            instances,
            windows,
        } = segment_series(s, &cfg)?;
        rows.push(SegmentSummary {
            patient_id: s.patient_id.clone(),
            label: s.label,
            onsets,
            instances: instances.len(),
            windows: windows.len(),
        });
    }
    let path = out.join("segmentation.json");
    write_json(&path, &rows)?;
    let windows: usize = rows.iter().map(|r| r.windows).sum();
    println!("{} patients, {windows} windows -> {}", rows.len(), path.display());
    Ok(())
}

fn filter(manifest_path: &Path, low: f64, cutoff: f64, drop_dc: bool, out: &Path) -> Result<()> {
    let band = AblationBand {
        low_hz: low,
        high_hz: cutoff,
        keep_dc: !drop_dc,
    };
    band.validate().map_err(|e| usage(e.to_string()))?;
    let cohort = load(manifest_path, Some(&band))?;
    create_dir(&out.join(FLOW_DIR))?;
    let mut entries = Vec::with_capacity(cohort.len());
    for s in &cohort {
        let rel = format!("{FLOW_DIR}/{}.txt", s.patient_id);
        write_flow_file(out.join(&rel), &s.samples)?;
        entries.push(ManifestEntry {
            id: s.patient_id.clone(),
            label: s.label,
            flow_file: PathBuf::from(rel),
            sample_rate_hz: s.sample_rate as u32,
        });
    }
    write_manifest(out.join(MANIFEST_FILE), &CohortManifest::new(entries))?;
    println!("filtered {} patients into {}", cohort.len(), out.display());
    Ok(())
}

fn featurize(input: &CohortInput, out: &Path) -> Result<()> {
    let band = check_cutoff(input.cutoff)?;
    let cohort = load(&input.manifest, band.as_ref())?;
    let cfg = SegmentationConfig::default();
    let mut csv = format!("patient_id,label,start_index,{}\n", FEATURE_NAMES.join(","));
    let (mut ok, mut failed) = (0usize, 0usize);
    for s in &cohort {
        let seg = segment_series(s, &cfg)?;
        for w in &seg.windows {
            match window_features(w, &s.samples, &seg.onsets, s.sample_rate, &cfg) {
                Ok(f) => {
                    ok += 1;
                    let vals: Vec<String> = f.values.iter().map(|&v| format!("{v:.6}")).collect();
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        f.patient_id,
                        f.label,
                        f.start_index,
                        vals.join(",")
                    ));
                }
                Err(_) => failed += 1,
            }
        }
    }
    let path = out.join("features.csv");
    write_text(&path, &csv)?;
    println!("{ok} windows featurized, {failed} degenerate -> {}", path.display());
    Ok(())
}

fn train_cnn_cmd(input: &CohortInput, t: &CnnTraining, epochs: usize, seed: u64, out: &Path) -> Result<()> {
    let band = check_cutoff(input.cutoff)?;
    let mode: InputMode = t.input_mode.into();
    let training = TrainConfig {
        learning_rate: t.lr,
        momentum: t.momentum,
        batch_size: t.batch_size,
        epochs,
        seed,
        recalibrate_batch_norm: t.recalibrate_bn,
    };
    training.validate().map_err(|e| usage(e.to_string()))?;
    let cohort = load(&input.manifest, band.as_ref())?;
    let seg = SegmentationConfig::default();
    let mut items = Vec::new();
    for s in &cohort {
        for w in segment_series(s, &seg)?.windows {
            for i in &w.instances {
                items.push((encode_instance::<f64>(&i.values, mode)?, s.label));
            }
        }
    }
    let items = oversample_instances(items, seed)?;
    let (x, y): (Vec<Vec<f64>>, Vec<Label>) = items.into_iter().unzip();
    let (network, _) = train_cnn_with(&x, &y, &network_config(t), &training, |e, _, r| {
        eprintln!(
            "epoch {e}: loss {:.4}, train accuracy {:.3}",
            r.mean_loss, r.train_accuracy
        );
        Ok(())
    })?;
    let path = out.join("model.json");
    write_json(
        &path,
        &SavedModel::Cnn {
            input_mode: mode,
            ablation: band,
            segmentation: seg,
            training,
            network,
        },
    )?;
    println!("trained on {} instances -> {}", x.len(), path.display());
    Ok(())
}

fn train_rf_cmd(input: &CohortInput, f: &ForestTraining, seed: u64, out: &Path) -> Result<()> {
    let band = check_cutoff(input.cutoff)?;
    let cohort = load(&input.manifest, band.as_ref())?;
    let seg = SegmentationConfig::default();
    let mut items = Vec::new();
    for s in &cohort {
        let g = segment_series(s, &seg)?;
        for w in &g.windows {
            if let Ok(v) = window_features(w, &s.samples, &g.onsets, s.sample_rate, &seg) {
                items.push((v.values.to_vec(), s.label));
            }
        }
    }
    let items = oversample_instances(items, seed)?;
    let (x, y): (Vec<Vec<f64>>, Vec<Label>) = items.into_iter().unzip();
    let cfg = ForestConfig {
        n_trees: f.trees,
        max_depth: f.max_depth,
        seed,
        ..ForestConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let forest = train_random_forest(&x, &y, &cfg)?;
    let path = out.join("model.json");
    write_json(
        &path,
        &SavedModel::Rf {
            ablation: band,
            segmentation: seg,
            forest,
        },
    )?;
    println!("trained on {} windows -> {}", x.len(), path.display());
    Ok(())
}

fn predict(model_path: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let model: SavedModel = read_json(model_path)?;
    let (band, seg) = match &model {
        SavedModel::Cnn {
            ablation, segmentation, ..
        }
        | SavedModel::Rf {
            ablation, segmentation, ..
        } => (*ablation, segmentation.clone()),
    };
    let cohort = load(manifest, band.as_ref())?;
    let mut csv = String::from("patient_id,label,windows,score,predicted\n");
    for s in &cohort {
        let g = segment_series(s, &seg)?;
        let mut probs = Vec::with_capacity(g.windows.len());
        for w in &g.windows {
            match &model {
                SavedModel::Cnn {
                    input_mode, network, ..
                } => {
                    let rows = w
                        .instances
                        .iter()
                        .map(|i| encode_instance::<f64>(&i.values, *input_mode))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    let p = predict_instances(network, &rows)?;
                    probs.push(p.iter().sum::<f64>() / p.len() as f64);
                }
                SavedModel::Rf { forest, .. } => {
                    if let Ok(v) = window_features(w, &s.samples, &g.onsets, s.sample_rate, &seg) {
                        probs.push(forest.predict_proba(&v.values)?);
                    }
                }
            }
        }
        let labels: Vec<bool> = probs.iter().map(|&p| window_is_ards(p)).collect();
        let (score, predicted) = match patient_score(&labels) {
            Ok(sc) => (
                fmt3(sc),
                Label::from_class_index(usize::from(patient_is_ards(sc))).to_string(),
            ),
            Err(_) => ("NA".into(), "NA".into()),
        };
        csv.push_str(&format!(
            "{},{},{},{score},{predicted}\n",
            s.patient_id,
            s.label,
            labels.len()
        ));
    }
    let path = out.join("predictions.csv");
    write_text(&path, &csv)?;
    println!("scored {} patients -> {}", cohort.len(), path.display());
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    let f = report.final_epoch();
    println!(
        "epoch {}: auc {} ± {}, accuracy {} ± {}; best epoch {}; {} invalid folds",
        f.epoch,
        fmt3(f.auc.mean),
        fmt3(f.auc.ci95),
        fmt3(f.accuracy.mean),
        fmt3(f.accuracy.ci95),
        report.best_epoch,
        report.failures.len()
    );
}

fn evaluate(
    input: &CohortInput,
    model: Model,
    e: &Evaluation,
    t: &CnnTraining,
    f: &ForestTraining,
    out: &Path,
) -> Result<()> {
    let band = check_cutoff(input.cutoff)?;
    let cfg = experiment_config(model, e, t, f, band)?;
    let cohort = load(&input.manifest, None)?;
    let report = run_experiment(&cohort, &cfg)?;
    let path = out.join("evaluation.json");
    write_json(&path, &report)?;
    print_summary(&report);
    println!("report -> {}", path.display());
    Ok(())
}

fn sweep(
    manifest: &Path,
    cutoffs: &[f64],
    models: &[Model],
    e: &Evaluation,
    t: &CnnTraining,
    f: &ForestTraining,
    out: &Path,
) -> Result<()> {
    if let Some(c) = cutoffs.iter().find(|&&c| !(c > 0.0 && c <= 25.0)) {
        return Err(usage(format!("cutoff {c} Hz is outside (0, 25]")));
    }
    let mut cfg = SweepConfig {
        cnn: None,
        rf: None,
        cutoffs_hz: cutoffs.to_vec(),
    };
    for &m in models {
        let c = experiment_config(m, e, t, f, None)?;
        match m {
            Model::Cnn => cfg.cnn = Some(c),
            Model::Rf => cfg.rf = Some(c),
        }
    }
    let cohort = load(manifest, None)?;
    let report = ablation_sweep(&cohort, &cfg)?;
    write_json(&out.join("sweep.json"), &report)?;
    write_text(&out.join("table2.csv"), &table2_csv(&report))?;
    println!("sweep -> {}", out.join("table2.csv").display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GradcamDocument {
    input_mode: InputMode,
    /// Frequency (Hz) for spectral inputs, otherwise seconds from onset.
    axis: Vec<f64>,
    classes: Vec<CamSummary>,
}

fn gradcam(model_path: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let SavedModel::Cnn {
        input_mode,
        ablation,
        segmentation,
        network,
        ..
    } = read_json(model_path)?
    else {
        return Err(usage("Grad-CAM needs a CNN model"));
    };
    let cohort = load(manifest, ablation.as_ref())?;
    let mut groups: Vec<(Label, Vec<Vec<f64>>)> = Label::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for s in &cohort {
        for w in segment_series(s, &segmentation)?.windows {
            for i in &w.instances {
                groups[s.label.class_index()]
                    .1
                    .push(encode_instance::<f64>(&i.values, input_mode)?);
            }
        }
    }
    let classes = average_cam(&network, &groups)?;
    let n = network.config.input_length;
    let axis = match input_mode {
        InputMode::Fft => spectral_input_frequencies(n, vwd_core::cohort::SAMPLE_RATE_HZ),
        _ => (0..n).map(|i| i as f64 / vwd_core::cohort::SAMPLE_RATE_HZ).collect(),
    };
    let doc = GradcamDocument {
        input_mode,
        axis,
        classes,
    };
    write_json(&out.join("gradcam.json"), &doc)?;
    write_text(&out.join("gradcam.svg"), &gradcam_svg(&doc.axis, &doc.classes))?;
    println!("grad-cam -> {}", out.join("gradcam.json").display());
    Ok(())
}

fn report(evaluations: &[PathBuf], sweep: Option<&Path>, gradcam: Option<&Path>, out: &Path) -> Result<()> {
    if evaluations.is_empty() && sweep.is_none() && gradcam.is_none() {
        return Err(usage("give at least one of --evaluation, --sweep, --gradcam"));
    }
    let reports: Vec<MetricsReport> = evaluations.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    if let Some(first) = reports.first() {
        write_text(&out.join("table1.csv"), &table1_csv(first))?;
        let names: Vec<String> = reports
            .iter()
            .map(|r| match r.config.model {
                ModelKind::Rf => "RF".to_string(),
                ModelKind::Cnn => format!("CNN ({})", r.config.input_mode.as_str()),
            })
            .collect();
        let curves: Vec<(&str, &vwd_core::eval::RocSummary)> = names
            .iter()
            .map(String::as_str)
            .zip(reports.iter().map(|r| &r.roc))
            .collect();
        write_text(&out.join("roc.svg"), &roc_svg(&curves))?;
    }
    if let Some(p) = sweep {
        let s: SweepReport = read_json(p)?;
        write_text(&out.join("table2.csv"), &table2_csv(&s))?;
    }
    if let Some(p) = gradcam {
        let g: GradcamDocument = read_json(p)?;
        write_text(&out.join("gradcam.svg"), &gradcam_svg(&g.axis, &g.classes))?;
    }
    println!("report -> {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth {
            patients,
            seed,
            preset,
            duration,
            out,
        } => synth(*patients, *seed, *preset, *duration, &out.out),
        Command::Segment { input, out } => segment(input, &out.out),
        Command::Filter {
            manifest,
            cutoff,
            low,
            drop_dc,
            out,
        } => filter(manifest, *low, *cutoff, *drop_dc, &out.out),
        Command::Featurize { input, out } => featurize(input, &out.out),
        Command::TrainCnn {
            input,
            training,
            epochs,
            seed,
            out,
        } => train_cnn_cmd(input, training, *epochs, *seed, &out.out),
        Command::TrainRf {
            input,
            forest,
            seed,
            out,
        } => train_rf_cmd(input, forest, *seed, &out.out),
        Command::Predict { model, manifest, out } => predict(model, manifest, &out.out),
        Command::Evaluate {
            input,
            model,
            eval,
            training,
            forest,
            out,
        } => evaluate(input, *model, eval, training, forest, &out.out),
        Command::AblationSweep {
            manifest,
            cutoffs,
            models,
            eval,
            training,
            forest,
            out,
        } => sweep(manifest, cutoffs, models, eval, training, forest, &out.out),
        Command::Gradcam { model, manifest, out } => gradcam(model, manifest, &out.out),
        Command::Report {
            evaluation,
            sweep,
            gradcam,
            out,
        } => report(evaluation, sweep.as_deref(), gradcam.as_deref(), &out.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            eprint!("error[usage]: {text}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
