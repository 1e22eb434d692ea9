//! Cohort data model: labelled 50 Hz flow recordings and the manifest that
//! lists them.
//!
//! Flow files are plain UTF-8 text, one decimal flow value (L/min) per
//! LF-terminated line. The manifest is a JSON document:
//!
//! ```json
//! { "patients": [
//!     { "id": "p01", "label": "ards", "flow_file": "p01.flow", "sample_rate_hz": 50 }
//! ] }
//! ```
//!
//! Relative `flow_file` paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling rate of every flow recording handled by the workbench.
pub const SAMPLE_RATE_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate patient id `{0}` in manifest")]
    DuplicatePatient(String),
    #[error("flow file {0} contains no samples")]
    EmptySeries(String),
    #[error("patient `{id}`: flow file {path} does not exist")]
    MissingFlowFile { id: String, path: String },
    #[error("patient `{id}`: sample rate {rate} Hz is not supported (must be 50)")]
    UnsupportedSampleRate { id: String, rate: u32 },
    #[error("invalid flow series: {0}")]
    InvalidSeries(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Patient class. `Ards` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonArds,
    Ards,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonArds, Label::Ards];

    /// Class index used by the classifiers: non-ARDS = 0, ARDS = 1.
    #[inline]
    pub fn class_index(self) -> usize {
        match self {
            Label::NonArds => 0,
            Label::Ards => 1,
        }
    }

    #[inline]
    pub fn from_class_index(i: usize) -> Label {
        if i == 0 {
            Label::NonArds
        } else {
            Label::Ards
        }
    }

    #[inline]
    pub fn is_ards(self) -> bool {
        self == Label::Ards
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonArds => "non_ards",
            Label::Ards => "ards",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ards" => Ok(Label::Ards),
            "non_ards" => Ok(Label::NonArds),
            other => Err(format!("unknown label `{other}` (expected ards|non_ards)")),
        }
    }
}

/// One patient's raw flow signal. Timestamps are implicit: sample `i` is at
/// `i / sample_rate` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub patient_id: String,
    pub label: Label,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl FlowSeries {
    pub fn new(patient_id: impl Into<String>, label: Label, samples: Vec<f64>) -> Result<Self, CohortError> {
        let patient_id = patient_id.into();
        if samples.is_empty() {
            return Err(CohortError::EmptySeries(patient_id));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(CohortError::InvalidSeries(format!(
                "patient `{patient_id}`: sample {i} is not finite"
            )));
        }
        Ok(FlowSeries {
            patient_id,
            label,
            sample_rate: SAMPLE_RATE_HZ,
            samples,
        })
    }

    /// Same patient and label, different samples (e.g. after filtering).
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self, CohortError> {
        FlowSeries::new(self.patient_id.clone(), self.label, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub flow_file: PathBuf,
    pub sample_rate_hz: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub patients: Vec<ManifestEntry>,
    /// Directory that relative flow paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn new(patients: Vec<ManifestEntry>) -> Self {
        CohortManifest {
            patients,
            base_dir: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.flow_file.is_absolute() {
            entry.flow_file.clone()
        } else {
            self.base_dir.join(&entry.flow_file)
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.patients.iter().filter(|e| e.label == label).count()
    }
}

/// Parses and validates a manifest. Entry order is preserved.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest, CohortError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut manifest: CohortManifest = serde_json::from_str(&text).map_err(|e| CohortError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut seen = HashSet::new();
    for entry in &manifest.patients {
        if !seen.insert(entry.id.as_str()) {
            return Err(CohortError::DuplicatePatient(entry.id.clone()));
        }
        if entry.sample_rate_hz != SAMPLE_RATE_HZ as u32 {
            return Err(CohortError::UnsupportedSampleRate {
                id: entry.id.clone(),
                rate: entry.sample_rate_hz,
            });
        }
        let flow = manifest.resolve(entry);
        if !flow.is_file() {
            return Err(CohortError::MissingFlowFile {
                id: entry.id.clone(),
                path: flow.display().to_string(),
            });
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &CohortManifest) -> Result<(), CohortError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Reads one flow file. Blank lines are ignored; anything else must parse as
/// a finite decimal.
pub fn read_flow_file(path: impl AsRef<Path>) -> Result<Vec<f64>, CohortError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut samples = Vec::with_capacity(text.len() / 6);
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: f64 = trimmed.parse().map_err(|_| CohortError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            column: line.len() - line.trim_start().len() + 1,
            message: format!("`{trimmed}` is not a decimal flow value"),
        })?;
        if !value.is_finite() {
            return Err(CohortError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                column: 1,
                message: format!("`{trimmed}` is not finite"),
            });
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(CohortError::EmptySeries(path.display().to_string()));
    }
    Ok(samples)
}

/// Writes samples using the shortest representation that parses back to the
/// identical `f64`.
pub fn write_flow_file(path: impl AsRef<Path>, samples: &[f64]) -> Result<(), CohortError> {
    let path = path.as_ref();
    let mut text = String::with_capacity(samples.len() * 8);
    for x in samples {
        writeln!(text, "{x}").expect("writing to a String cannot fail");
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_flow_series(manifest: &CohortManifest, entry: &ManifestEntry) -> Result<FlowSeries, CohortError> {
    let samples = read_flow_file(manifest.resolve(entry))?;
    FlowSeries::new(entry.id.clone(), entry.label, samples)
}

/// Loads every patient in manifest order. Files are read in parallel.
pub fn load_cohort(manifest: &CohortManifest) -> Result<Vec<FlowSeries>, CohortError> {
    manifest
        .patients
        .par_iter()
        .map(|e| load_flow_series(manifest, e))
        .collect()
}
