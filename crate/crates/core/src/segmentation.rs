//! Breath segmentation: inhalation-onset detection and the fixed-length
//! instances and 20-instance windows that the classifiers consume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{FlowSeries, Label};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Flow (L/min) that a sample must exceed to mark inspiration.
    pub onset_threshold: f64,
    /// Non-positive samples required before an onset.
    pub pre_onset_nonpositive_run: usize,
    pub instance_length: usize,
    pub window_size: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            onset_threshold: 2.0,
            pre_onset_nonpositive_run: 5,
            instance_length: 224,
            window_size: 20,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.onset_threshold > 0.0 && self.onset_threshold.is_finite()) {
            return Err(SegmentationError::InvalidConfig(format!(
                "onset_threshold must be positive, got {}",
                self.onset_threshold
            )));
        }
        for (name, v) in [
            ("pre_onset_nonpositive_run", self.pre_onset_nonpositive_run),
            ("instance_length", self.instance_length),
            ("window_size", self.window_size),
        ] {
            if v == 0 {
                return Err(SegmentationError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A fixed-length slice of flow starting at an inhalation onset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathInstance {
    pub patient_id: String,
    pub label: Label,
    pub start_index: usize,
    pub values: Vec<f64>,
}

/// `window_size` consecutive instances from one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathWindow {
    pub patient_id: String,
    pub label: Label,
    pub instances: Vec<BreathInstance>,
}

impl BreathWindow {
    pub fn onsets(&self) -> impl Iterator<Item = usize> + '_ {
        self.instances.iter().map(|i| i.start_index)
    }
}

/// Samples from one onset up to (not including) the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathSegment {
    pub patient_id: String,
    pub onset_index: usize,
    pub values: Vec<f64>,
}

/// Finds inhalation onsets.
///
/// Sample `i` is an onset when it is the first sample above
/// `onset_threshold` after a run of at least `pre_onset_nonpositive_run`
/// samples that are `<= 0`. Samples in `(0, threshold]` between the run and
/// the crossing (the leading edge of a ramped inspiration) neither break nor
/// extend the run. After an onset the detector re-arms only once another full
/// non-positive run has been seen.
pub fn detect_breath_onsets(samples: &[f64], cfg: &SegmentationConfig) -> Vec<usize> {
    let mut onsets = Vec::new();
    let mut run = 0usize;
    let mut armed = false;
    for (i, &x) in samples.iter().enumerate() {
        if x <= 0.0 {
            run += 1;
            if run >= cfg.pre_onset_nonpositive_run {
                armed = true;
            }
        } else {
            run = 0;
            if armed && x > cfg.onset_threshold {
                onsets.push(i);
                armed = false;
            }
        }
    }
    onsets
}

/// One instance per onset that has `instance_length` samples remaining.
/// Instances overlap when breaths are shorter than the instance.
pub fn make_instances(series: &FlowSeries, onsets: &[usize], cfg: &SegmentationConfig) -> Vec<BreathInstance> {
    let n = cfg.instance_length;
    onsets
        .iter()
        .filter(|&&o| o + n <= series.samples.len())
        .map(|&o| BreathInstance {
            patient_id: series.patient_id.clone(),
            label: series.label,
            start_index: o,
            values: series.samples[o..o + n].to_vec(),
        })
        .collect()
}

/// Groups consecutive instances into non-overlapping windows; a trailing
/// partial group is discarded.
pub fn make_windows(instances: &[BreathInstance], cfg: &SegmentationConfig) -> Vec<BreathWindow> {
    instances
        .chunks_exact(cfg.window_size)
        .map(|chunk| BreathWindow {
            patient_id: chunk[0].patient_id.clone(),
            label: chunk[0].label,
            instances: chunk.to_vec(),
        })
        .collect()
}

/// Minimum tail (seconds) for the last onset to yield a segment.
pub const MIN_TAIL_S: f64 = 0.5;

/// Segment `k` spans `[onset_k, onset_{k+1})`. The final onset produces a
/// segment to the end of the series only if at least 0.5 s remains.
pub fn segment_breaths(series: &FlowSeries, onsets: &[usize]) -> Vec<BreathSegment> {
    let min_tail = (MIN_TAIL_S * series.sample_rate).ceil() as usize;
    let len = series.samples.len();
    let mut out = Vec::with_capacity(onsets.len());
    for (k, &start) in onsets.iter().enumerate() {
        let end = match onsets.get(k + 1) {
            Some(&next) => next,
            None if len.saturating_sub(start) >= min_tail => len,
            None => break,
        };
        if end >= start + 2 {
            out.push(BreathSegment {
                patient_id: series.patient_id.clone(),
                onset_index: start,
                values: series.samples[start..end].to_vec(),
            });
        }
    }
    out
}

/// The end index (exclusive) of the breath starting at `onset`, using the same
/// tail rule as [`segment_breaths`].
pub fn breath_end(onsets: &[usize], onset: usize, series_len: usize, sample_rate: f64) -> Option<usize> {
    let k = onsets.binary_search(&onset).ok()?;
    match onsets.get(k + 1) {
        Some(&next) => Some(next),
        None => {
            let min_tail = (MIN_TAIL_S * sample_rate).ceil() as usize;
            (series_len.saturating_sub(onset) >= min_tail).then_some(series_len)
        }
    }
}

/// Everything segmentation produces for one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub onsets: Vec<usize>,
    pub instances: Vec<BreathInstance>,
    pub windows: Vec<BreathWindow>,
}

pub fn segment_series(series: &FlowSeries, cfg: &SegmentationConfig) -> Result<Segmentation, SegmentationError> {
    cfg.validate()?;
    let onsets = detect_breath_onsets(&series.samples, cfg);
    let instances = make_instances(series, &onsets, cfg);
    let windows = make_windows(&instances, cfg);
    Ok(Segmentation {
        onsets,
        instances,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(samples: Vec<f64>) -> FlowSeries {
        FlowSeries::new("p", Label::Ards, samples).unwrap()
    }

    #[test]
    fn onset_after_nonpositive_run() {
        let mut s = vec![-5.0; 5];
        s.extend([3.0, 10.0, 12.0]);
        assert_eq!(detect_breath_onsets(&s, &SegmentationConfig::default()), vec![5]);
    }

    #[test]
    fn no_onsets_without_crossing() {
        let s = vec![-1.0, 0.0, -3.0, -0.5, 0.0, -2.0, -7.0];
        assert!(detect_breath_onsets(&s, &SegmentationConfig::default()).is_empty());
    }

    #[test]
    fn short_run_does_not_arm() {
        let s = vec![-1.0, -1.0, -1.0, -1.0, 5.0, 5.0];
        assert!(detect_breath_onsets(&s, &SegmentationConfig::default()).is_empty());
    }

    #[test]
    fn ramped_onset_fires_at_threshold_crossing() {
        let s = vec![-1.0, -1.0, -1.0, -1.0, -1.0, 0.0, 1.0, 1.9, 2.5, 8.0];
        assert_eq!(detect_breath_onsets(&s, &SegmentationConfig::default()), vec![8]);
    }

    #[test]
    fn instances_cover_onsets_with_room() {
        let cfg = SegmentationConfig::default();
        let s = series((0..500).map(|i| i as f64).collect());
        let inst = make_instances(&s, &[0, 250], &cfg);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].values, (0..224).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(inst[1].start_index, 250);
        assert_eq!(inst[1].values[0], 250.0);
        assert_eq!(*inst[1].values.last().unwrap(), 473.0);

        let s = series(vec![0.0; 300]);
        assert_eq!(make_instances(&s, &[0, 200], &cfg).len(), 1);
    }

    fn dummy_instances(n: usize) -> Vec<BreathInstance> {
        (0..n)
            .map(|i| BreathInstance {
                patient_id: "p".into(),
                label: Label::NonArds,
                start_index: i * 10,
                values: vec![0.0; 4],
            })
            .collect()
    }

    #[test]
    fn window_counts() {
        let cfg = SegmentationConfig::default();
        assert_eq!(make_windows(&dummy_instances(45), &cfg).len(), 2);
        assert!(make_windows(&dummy_instances(19), &cfg).is_empty());
        let w = make_windows(&dummy_instances(2000), &cfg);
        assert_eq!(w.len(), 100);
        assert!(w.iter().all(|w| w.instances.len() == 20));
        assert_eq!(w[1].instances[0].start_index, 200);
    }

    #[test]
    fn segments_and_tail_rule() {
        let s = series(vec![1.0; 400]);
        let seg = segment_breaths(&s, &[5, 155]);
        assert_eq!(seg.len(), 2);
        assert_eq!((seg[0].onset_index, seg[0].values.len()), (5, 150));
        assert_eq!((seg[1].onset_index, seg[1].values.len()), (155, 245));
        assert!(segment_breaths(&s, &[390]).is_empty());
        assert_eq!(breath_end(&[5, 155], 155, 400, 50.0), Some(400));
        assert_eq!(breath_end(&[390], 390, 400, 50.0), None);
        assert_eq!(breath_end(&[5, 155], 7, 400, 50.0), None);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SegmentationConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.window_size = 0;
        assert!(cfg.validate().is_err());
        let cfg = SegmentationConfig {
            onset_threshold: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn onsets_satisfy_rule(samples in prop::collection::vec(-20.0f64..20.0, 0..400)) {
            let cfg = SegmentationConfig::default();
            let onsets = detect_breath_onsets(&samples, &cfg);
            for w in onsets.windows(2) {
                prop_assert!(w[1] > w[0] + cfg.pre_onset_nonpositive_run);
            }
            for &o in &onsets {
                prop_assert!(samples[o] > cfg.onset_threshold);
                // some full non-positive run ends before a ramp that stays at
                // or below the threshold until the onset
                let run = cfg.pre_onset_nonpositive_run;
                let ok = (run..=o).any(|j| {
                    samples[j - run..j].iter().all(|&x| x <= 0.0)
                        && samples[j..o].iter().all(|&x| x <= cfg.onset_threshold)
                });
                prop_assert!(ok, "onset {} lacks a preceding run", o);
            }
        }

        #[test]
        fn window_count_is_floor(n in 0usize..200, w in 1usize..30) {
            let cfg = SegmentationConfig { window_size: w, ..Default::default() };
            prop_assert_eq!(make_windows(&dummy_instances(n), &cfg).len(), n / w);
        }
    }
}
