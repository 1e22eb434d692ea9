//! Synthetic ventilator-flow cohorts with a class signal planted in a known
//! frequency band, plus the analytic ground truth the tests compare against.
//!
//! Each breath is a half-sine inspiration followed by a two-exponential
//! expiration `-K (e^{-t/tau} - e^{-t/tau_r})` whose gain `K` returns a set
//! fraction of the inspired volume. The plant is a Hann-windowed tone burst
//! inside the inspiratory phase, so it never adds zero crossings.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{
    write_flow_file, write_manifest, CohortError, CohortManifest, FlowSeries, Label, ManifestEntry, SAMPLE_RATE_HZ,
};
use crate::rng::{task_rng, TaskRng};
use crate::segmentation::SegmentationConfig;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Rise time of the expiratory limb (s).
pub const EXP_RISE_TAU_S: f64 = 0.08;

/// A normal draw at two levels: patient means scatter by `patient_sd` around
/// `mean`; breaths scatter by `sd` around their patient's mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
    #[serde(default)]
    pub patient_sd: f64,
}

impl Spread {
    pub const fn fixed(mean: f64) -> Spread {
        Spread {
            mean,
            sd: 0.0,
            patient_sd: 0.0,
        }
    }

    pub const fn new(mean: f64, sd: f64, patient_sd: f64) -> Spread {
        Spread { mean, sd, patient_sd }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathParams {
    /// breaths/min
    pub resp_rate: Spread,
    /// L/min
    pub peak_insp_flow: Spread,
    pub insp_fraction: Spread,
    /// expiratory decay time constant (s)
    pub exp_tau: Spread,
}

impl Default for BreathParams {
    fn default() -> Self {
        BreathParams {
            resp_rate: Spread::new(22.0, 1.5, 2.0),
            peak_insp_flow: Spread::new(40.0, 3.0, 5.0),
            insp_fraction: Spread::new(0.33, 0.02, 0.02),
            exp_tau: Spread::new(0.45, 0.05, 0.08),
        }
    }
}

// Draws are clamped so a breath always has both phases and a real peak.
const RR_RANGE: (f64, f64) = (4.0, 60.0);
const PEAK_RANGE: (f64, f64) = (5.0, 150.0);
const INSP_FRACTION_RANGE: (f64, f64) = (0.15, 0.6);
const TAU_RANGE: (f64, f64) = (0.05, 3.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// L/min
    pub amplitude: f64,
    pub class: Label,
    /// Fresh burst phase per breath; when false every burst starts at phase 0.
    pub random_phase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients_per_class: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub ards: BreathParams,
    pub non_ards: BreathParams,
    /// White-noise sd (L/min).
    pub noise_sd: f64,
    pub plant: Option<PlantConfig>,
    /// Expired over inspired volume per breath.
    pub exp_volume_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients_per_class: 20,
            duration_s: 300.0,
            seed: 0,
            ards: BreathParams::default(),
            non_ards: BreathParams::default(),
            noise_sd: 0.3,
            plant: None,
            exp_volume_ratio: 1.0,
        }
    }
}

impl SynthConfig {
    /// Class signal in a 10-12 Hz burst on ARDS inspirations. Breaths are
    /// long (about 9 vs 11 per minute) with matched inspiratory time, so the
    /// classes also differ in expiratory time and rate, but only after the
    /// first 4.5 s of each breath.
    pub fn high_band(seed: u64) -> SynthConfig {
        let base = BreathParams::default();
        SynthConfig {
            seed,
            duration_s: 600.0,
            ards: BreathParams {
                resp_rate: Spread::new(9.0, 0.6, 0.3),
                insp_fraction: Spread::new(0.18, 0.01, 0.01),
                ..base
            },
            non_ards: BreathParams {
                resp_rate: Spread::new(11.0, 0.6, 0.3),
                insp_fraction: Spread::new(0.22, 0.01, 0.01),
                ..base
            },
            plant: Some(PlantConfig {
                band_low_hz: 10.0,
                band_high_hz: 12.0,
                amplitude: 5.0,
                class: Label::Ards,
                random_phase: true,
            }),
            ..SynthConfig::default()
        }
    }

    /// Class signal in a slow phase-locked distortion of inspiration.
    pub fn low_band(seed: u64) -> SynthConfig {
        SynthConfig {
            plant: Some(PlantConfig {
                band_low_hz: 0.3,
                band_high_hz: 0.6,
                amplitude: 20.0,
                class: Label::Ards,
                random_phase: false,
            }),
            ..SynthConfig::high_band(seed)
        }
    }

    /// No noise, no plant, one fixed breath shape for every patient.
    pub fn noise_free(seed: u64) -> SynthConfig {
        let fixed = BreathParams {
            resp_rate: Spread::fixed(15.0),
            peak_insp_flow: Spread::fixed(40.0),
            insp_fraction: Spread::fixed(0.33),
            exp_tau: Spread::fixed(0.45),
        };
        SynthConfig {
            seed,
            ards: fixed,
            non_ards: fixed,
            noise_sd: 0.0,
            plant: None,
            ..SynthConfig::default()
        }
    }

    pub fn params(&self, label: Label) -> &BreathParams {
        match label {
            Label::Ards => &self.ards,
            Label::NonArds => &self.non_ards,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        if self.n_patients_per_class == 0 {
            return bad("n_patients_per_class must be positive".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if !(self.exp_volume_ratio > 0.0 && self.exp_volume_ratio.is_finite()) {
            return bad("exp_volume_ratio must be positive".into());
        }
        for (name, p) in [("ards", &self.ards), ("non_ards", &self.non_ards)] {
            for (field, s) in [
                ("resp_rate", p.resp_rate),
                ("peak_insp_flow", p.peak_insp_flow),
                ("insp_fraction", p.insp_fraction),
                ("exp_tau", p.exp_tau),
            ] {
                if !(s.mean > 0.0 && s.sd >= 0.0 && s.patient_sd >= 0.0) {
                    return bad(format!("{name}.{field}: mean must be positive and sds non-negative"));
                }
            }
            if p.insp_fraction.mean >= 1.0 {
                return bad(format!("{name}.insp_fraction mean must be below 1"));
            }
        }
        if let Some(pl) = &self.plant {
            let nyquist = SAMPLE_RATE_HZ / 2.0;
            if !(pl.band_low_hz > 0.0 && pl.band_low_hz <= pl.band_high_hz && pl.band_high_hz <= nyquist) {
                return bad(format!(
                    "plant band [{}, {}] Hz must lie within (0, {nyquist}]",
                    pl.band_low_hz, pl.band_high_hz
                ));
            }
            if !(pl.amplitude > 0.0 && pl.amplitude.is_finite()) {
                return bad("plant amplitude must be positive".into());
            }
        }
        Ok(())
    }
}

/// Analytic description of one generated breath.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathTruth {
    /// Continuous start of inspiration (s).
    pub start_s: f64,
    /// First sample whose noise-free flow exceeds the onset threshold.
    pub onset_index: usize,
    pub i_time: f64,
    pub e_time: f64,
    pub peak_insp_flow: f64,
    /// Inspired volume (L), including any planted burst.
    pub tidal_volume: f64,
    /// Planted burst frequency (Hz), if any.
    pub plant_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub label: Label,
    pub n_samples: usize,
    pub onsets: Vec<usize>,
    pub breaths: Vec<BreathTruth>,
}

pub type GroundTruth = BTreeMap<String, PatientTruth>;

/// `int_0^T sin(w t + phi) dt`.
fn int_sin(w: f64, phi: f64, t: f64) -> f64 {
    if w.abs() < 1e-12 {
        return t * phi.sin();
    }
    (phi.cos() - (w * t + phi).cos()) / w
}

/// `int_0^Ti sin^2(pi t / Ti) sin(w t + phi) dt`.
fn burst_integral(w: f64, phi: f64, ti: f64) -> f64 {
    let beta = 2.0 * PI / ti;
    0.5 * int_sin(w, phi, ti) - 0.25 * (int_sin(w + beta, phi, ti) + int_sin(w - beta, phi, ti))
}

struct Breath {
    start: f64,
    ti: f64,
    te: f64,
    peak: f64,
    /// Expiratory gain.
    k: f64,
    tau: f64,
    plant: Option<(f64, f64, f64)>, // amplitude, angular frequency, phase
}

impl Breath {
    /// Noise-free flow at `t` seconds after breath start.
    fn flow(&self, t: f64) -> f64 {
        if t < self.ti {
            let s = (PI * t / self.ti).sin();
            let burst = self.plant.map_or(0.0, |(a, w, phi)| a * s * s * (w * t + phi).sin());
            self.peak * s + burst
        } else {
            let u = t - self.ti;
            -self.k * ((-u / self.tau).exp() - (-u / EXP_RISE_TAU_S).exp())
        }
    }

    /// Inspired volume in L/min * s.
    fn insp_volume(&self) -> f64 {
        let base = 2.0 * self.peak * self.ti / PI;
        base + self
            .plant
            .map_or(0.0, |(a, w, phi)| a * burst_integral(w, phi, self.ti))
    }
}

fn clamp_normal(rng: &mut TaskRng, mean: f64, sd: f64, range: (f64, f64)) -> f64 {
    let v = if sd > 0.0 {
        Normal::new(mean, sd).expect("sd is positive").sample(rng)
    } else {
        mean
    };
    v.clamp(range.0, range.1)
}

struct PatientDraw {
    rr: f64,
    peak: f64,
    frac: f64,
    tau: f64,
}

fn draw_breath(
    rng: &mut TaskRng,
    p: &BreathParams,
    mean: &PatientDraw,
    plant: Option<&PlantConfig>,
    ratio: f64,
    start: f64,
) -> Breath {
    let rr = clamp_normal(rng, mean.rr, p.resp_rate.sd, RR_RANGE);
    let peak = clamp_normal(rng, mean.peak, p.peak_insp_flow.sd, PEAK_RANGE);
    let frac = clamp_normal(rng, mean.frac, p.insp_fraction.sd, INSP_FRACTION_RANGE);
    let tau = clamp_normal(rng, mean.tau, p.exp_tau.sd, TAU_RANGE);
    let period = 60.0 / rr;
    let ti = frac * period;
    let te = period - ti;
    let plant = plant.map(|pl| {
        let f = rng.random_range(pl.band_low_hz..=pl.band_high_hz);
        let phi = if pl.random_phase {
            rng.random_range(0.0..2.0 * PI)
        } else {
            0.0
        };
        // keep the burst below the half-sine so inspiration stays positive
        (pl.amplitude.min(0.9 * peak), 2.0 * PI * f, phi)
    });
    let mut b = Breath {
        start,
        ti,
        te,
        peak,
        k: 0.0,
        tau,
        plant,
    };
    let shape = tau * (1.0 - (-te / tau).exp()) - EXP_RISE_TAU_S * (1.0 - (-te / EXP_RISE_TAU_S).exp());
    b.k = ratio * b.insp_volume() / shape;
    b
}

/// Generates one patient's series and its ground truth. The series opens
/// partway through an expiration so the first full breath is detectable.
pub fn generate_patient(
    patient_id: &str,
    label: Label,
    cfg: &SynthConfig,
    rng: &mut TaskRng,
) -> Result<(FlowSeries, PatientTruth), SynthError> {
    cfg.validate()?;
    let p = cfg.params(label);
    let plant = cfg.plant.as_ref().filter(|pl| pl.class == label);
    let mean = PatientDraw {
        rr: clamp_normal(rng, p.resp_rate.mean, p.resp_rate.patient_sd, RR_RANGE),
        peak: clamp_normal(rng, p.peak_insp_flow.mean, p.peak_insp_flow.patient_sd, PEAK_RANGE),
        frac: clamp_normal(
            rng,
            p.insp_fraction.mean,
            p.insp_fraction.patient_sd,
            INSP_FRACTION_RANGE,
        ),
        tau: clamp_normal(rng, p.exp_tau.mean, p.exp_tau.patient_sd, TAU_RANGE),
    };

    let fs = SAMPLE_RATE_HZ;
    let n = (cfg.duration_s * fs).round() as usize;
    let ratio = cfg.exp_volume_ratio;

    let lead = draw_breath(rng, p, &mean, plant, ratio, 0.0);
    let lead_start = -(lead.ti + rng.random_range(0.3..0.7) * lead.te);
    let mut breaths = vec![Breath {
        start: lead_start,
        ..lead
    }];
    loop {
        let last = breaths.last().expect("non-empty");
        let next = last.start + last.ti + last.te;
        if next * fs >= n as f64 {
            break;
        }
        breaths.push(draw_breath(rng, p, &mean, plant, ratio, next));
    }

    let mut clean = vec![0.0; n];
    let mut bi = 0;
    for (i, v) in clean.iter_mut().enumerate() {
        let t = i as f64 / fs;
        while bi + 1 < breaths.len() && breaths[bi + 1].start <= t {
            bi += 1;
        }
        *v = breaths[bi].flow(t - breaths[bi].start);
    }

    let threshold = SegmentationConfig::default().onset_threshold;
    let mut truth = Vec::new();
    for b in breaths.iter().skip(1) {
        let first = (b.start * fs).ceil() as usize;
        let last = ((b.start + b.ti) * fs).ceil() as usize;
        let Some(onset) = (first..last.min(n)).find(|&i| clean[i] > threshold) else {
            continue;
        };
        truth.push(BreathTruth {
            start_s: b.start,
            onset_index: onset,
            i_time: b.ti,
            e_time: b.te,
            peak_insp_flow: b.peak,
            tidal_volume: b.insp_volume() / 60.0,
            plant_hz: b.plant.map(|(_, w, _)| w / (2.0 * PI)),
        });
    }

    let samples = if cfg.noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sd).expect("noise sd is positive");
        clean.iter().map(|&v| v + noise.sample(rng)).collect()
    } else {
        clean
    };
    let series = FlowSeries::new(patient_id, label, samples)?;
    Ok((
        series,
        PatientTruth {
            patient_id: patient_id.to_string(),
            label,
            n_samples: n,
            onsets: truth.iter().map(|b| b.onset_index).collect(),
            breaths: truth,
        },
    ))
}

/// Patient ids in generation order: ARDS first, then non-ARDS.
pub fn patient_ids(cfg: &SynthConfig) -> Vec<(String, Label)> {
    let mut ids = Vec::with_capacity(2 * cfg.n_patients_per_class);
    for label in [Label::Ards, Label::NonArds] {
        let tag = match label {
            Label::Ards => "ards",
            Label::NonArds => "ctrl",
        };
        for i in 0..cfg.n_patients_per_class {
            ids.push((format!("{tag}{:03}", i + 1), label));
        }
    }
    ids
}

/// Generates every patient in memory; patient `i` draws from an RNG seeded by
/// `(seed, i)`.
pub fn generate_cohort_series(cfg: &SynthConfig) -> Result<Vec<(FlowSeries, PatientTruth)>, SynthError> {
    cfg.validate()?;
    patient_ids(cfg)
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, label))| {
            let mut rng = task_rng(cfg.seed, &[i as u64]);
            generate_patient(&id, label, cfg, &mut rng)
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const FLOW_DIR: &str = "flow";

/// Writes `manifest.json`, one flow file per patient under `flow/`, and
/// `ground_truth.json` into `out_dir`.
pub fn generate_cohort(cfg: &SynthConfig, out_dir: &Path) -> Result<CohortManifest, SynthError> {
    let cohort = generate_cohort_series(cfg)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let flow_dir = out_dir.join(FLOW_DIR);
    std::fs::create_dir_all(&flow_dir).map_err(io(&flow_dir))?;

    let mut entries = Vec::with_capacity(cohort.len());
    let mut truth = GroundTruth::new();
    for (series, t) in &cohort {
        let rel = format!("{FLOW_DIR}/{}.txt", series.patient_id);
        write_flow_file(out_dir.join(&rel), &series.samples)?;
        entries.push(ManifestEntry {
            id: series.patient_id.clone(),
            label: series.label,
            flow_file: PathBuf::from(rel),
            sample_rate_hz: SAMPLE_RATE_HZ as u32,
        });
        truth.insert(t.patient_id.clone(), t.clone());
    }
    let mut manifest = CohortManifest::new(entries);
    write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    let gt_path = out_dir.join(GROUND_TRUTH_FILE);
    let json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    std::fs::write(&gt_path, json).map_err(io(&gt_path))?;
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        SynthError::Cohort(CohortError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    })
}
