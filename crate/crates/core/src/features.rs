//! Hand-engineered respiratory features computed per breath from flow alone,
//! and their per-window medians (the random forest's input rows).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{FlowSeries, Label};
use crate::segmentation::{
    breath_end, detect_breath_onsets, make_instances, make_windows, BreathSegment, BreathWindow, SegmentationConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("degenerate breath morphology: {0}")]
    DegenerateMorphology(String),
}

pub const N_FEATURES: usize = 10;

/// Column order of every feature vector and CSV export.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "i_time",
    "e_time",
    "ie_ratio",
    "tv_insp",
    "tv_exp",
    "peak_insp_flow",
    "peak_exp_flow",
    "mean_insp_flow",
    "resp_rate",
    "minute_vent",
];

/// Lowest inspiratory peak (L/min) that still counts as a breath.
pub const MIN_PEAK_INSP_FLOW: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreathFeatures {
    /// s
    pub i_time: f64,
    /// s
    pub e_time: f64,
    pub ie_ratio: f64,
    /// L
    pub tv_insp: f64,
    /// L, reported positive
    pub tv_exp: f64,
    /// L/min
    pub peak_insp_flow: f64,
    /// L/min, magnitude
    pub peak_exp_flow: f64,
    /// L/min
    pub mean_insp_flow: f64,
    /// breaths/min
    pub resp_rate: f64,
    /// L/min
    pub minute_vent: f64,
}

impl BreathFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.i_time,
            self.e_time,
            self.ie_ratio,
            self.tv_insp,
            self.tv_exp,
            self.peak_insp_flow,
            self.peak_exp_flow,
            self.mean_insp_flow,
            self.resp_rate,
            self.minute_vent,
        ]
    }
}

/// Per-feature medians over one window's breaths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatureVector {
    pub patient_id: String,
    pub label: Label,
    pub start_index: usize,
    pub values: [f64; N_FEATURES],
}

/// Splits a breath into inspiration and expiration and integrates each.
///
/// Inspiration runs from the first sample until flow first falls to `<= 0`
/// after having exceeded `onset_threshold`; expiration is the remainder.
/// Volumes are rectangular sums of `flow * dt / 60`.
pub fn extract_breath_features(
    segment: &BreathSegment,
    sample_rate: f64,
    onset_threshold: f64,
) -> Result<BreathFeatures, FeatureError> {
    let v = &segment.values;
    let degenerate = |why: &str| {
        Err(FeatureError::DegenerateMorphology(format!(
            "breath at sample {}: {why}",
            segment.onset_index
        )))
    };
    if v.len() < 2 {
        return degenerate("fewer than two samples");
    }
    let Some(crossing) = v.iter().position(|&x| x > onset_threshold) else {
        return degenerate("flow never exceeds the onset threshold");
    };
    let Some(offset) = v[crossing..].iter().position(|&x| x <= 0.0) else {
        return degenerate("no expiratory phase");
    };
    let boundary = crossing + offset;
    let (insp, exp) = v.split_at(boundary);

    let dt = 1.0 / sample_rate;
    let i_time = insp.len() as f64 * dt;
    let e_time = exp.len() as f64 * dt;
    let tv_insp = insp.iter().sum::<f64>() * dt / 60.0;
    let tv_exp = -exp.iter().sum::<f64>() * dt / 60.0;
    let peak_insp_flow = insp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let peak_exp_flow = exp.iter().map(|&x| -x).fold(f64::NEG_INFINITY, f64::max);
    if peak_insp_flow < MIN_PEAK_INSP_FLOW {
        return degenerate("inspiratory peak below 1 L/min");
    }
    if tv_insp <= 0.0 {
        return degenerate("non-positive inspiratory volume");
    }
    let resp_rate = 60.0 / (i_time + e_time);
    Ok(BreathFeatures {
        i_time,
        e_time,
        ie_ratio: i_time / e_time,
        tv_insp,
        tv_exp,
        peak_insp_flow,
        peak_exp_flow,
        mean_insp_flow: tv_insp * 60.0 / i_time,
        resp_rate,
        minute_vent: tv_insp * resp_rate,
    })
}

/// Median of a non-empty slice (mean of the two middle values for even
/// lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of per-breath features over a window.
///
/// `samples` is the series the features are measured on and `onsets` the
/// onset list that delimits breaths in it; each window instance's start must
/// be one of those onsets. Breaths that fail extraction are left out of the
/// medians; if more than half fail the window fails.
pub fn window_features(
    window: &BreathWindow,
    samples: &[f64],
    onsets: &[usize],
    sample_rate: f64,
    cfg: &SegmentationConfig,
) -> Result<WindowFeatureVector, FeatureError> {
    let total = window.instances.len();
    let mut rows: Vec<[f64; N_FEATURES]> = Vec::with_capacity(total);
    let mut failures = 0usize;
    let mut first_reason = None;
    for start in window.onsets() {
        let result = match breath_end(onsets, start, samples.len(), sample_rate) {
            Some(end) => extract_breath_features(
                &BreathSegment {
                    patient_id: window.patient_id.clone(),
                    onset_index: start,
                    values: samples[start..end].to_vec(),
                },
                sample_rate,
                cfg.onset_threshold,
            ),
            None => Err(FeatureError::DegenerateMorphology(format!(
                "breath at sample {start} has no recoverable segment"
            ))),
        };
        match result {
            Ok(f) => rows.push(f.to_array()),
            Err(FeatureError::DegenerateMorphology(why)) => {
                failures += 1;
                first_reason.get_or_insert(why);
            }
        }
    }
    if total == 0 || 2 * failures > total {
        return Err(FeatureError::DegenerateMorphology(format!(
            "{failures} of {total} breaths in window at sample {} are degenerate (first: {})",
            window.instances.first().map_or(0, |i| i.start_index),
            first_reason.unwrap_or_else(|| "empty window".into())
        )));
    }
    let mut values = [0.0; N_FEATURES];
    let mut column = Vec::with_capacity(rows.len());
    for (j, slot) in values.iter_mut().enumerate() {
        column.clear();
        column.extend(rows.iter().map(|r| r[j]));
        *slot = median(&mut column);
    }
    Ok(WindowFeatureVector {
        patient_id: window.patient_id.clone(),
        label: window.label,
        start_index: window.instances[0].start_index,
        values,
    })
}

/// Segments a series and featurizes each of its windows.
pub fn series_window_features(
    series: &FlowSeries,
    cfg: &SegmentationConfig,
) -> Vec<Result<WindowFeatureVector, FeatureError>> {
    let onsets = detect_breath_onsets(&series.samples, cfg);
    let windows = make_windows(&make_instances(series, &onsets, cfg), cfg);
    windows
        .iter()
        .map(|w| window_features(w, &series.samples, &onsets, series.sample_rate, cfg))
        .collect()
}

/// Outcome of featurizing a fixed breath grid on altered data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizationSurvey {
    pub windows: usize,
    pub succeeded: usize,
}

impl FeaturizationSurvey {
    pub fn failed(&self) -> usize {
        self.windows - self.succeeded
    }

    pub fn success_rate(&self) -> f64 {
        if self.windows == 0 {
            return 0.0;
        }
        self.succeeded as f64 / self.windows as f64
    }

    pub fn merge(self, other: FeaturizationSurvey) -> FeaturizationSurvey {
        FeaturizationSurvey {
            windows: self.windows + other.windows,
            succeeded: self.succeeded + other.succeeded,
        }
    }
}

/// Featurizes `filtered` over the breath windows of the original `raw`
/// series: breaths are delimited by the onsets detected on `raw`, so every
/// window is attempted regardless of what filtering did to the onsets.
pub fn survey_featurization(raw: &FlowSeries, filtered: &[f64], cfg: &SegmentationConfig) -> FeaturizationSurvey {
    assert_eq!(raw.samples.len(), filtered.len(), "filtered length differs from raw");
    let onsets = detect_breath_onsets(&raw.samples, cfg);
    let windows = make_windows(&make_instances(raw, &onsets, cfg), cfg);
    let succeeded = windows
        .iter()
        .filter(|w| window_features(w, filtered, &onsets, raw.sample_rate, cfg).is_ok())
        .count();
    FeaturizationSurvey {
        windows: windows.len(),
        succeeded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::BreathInstance;
    use proptest::prelude::*;

    fn seg(values: Vec<f64>) -> BreathSegment {
        BreathSegment {
            patient_id: "p".into(),
            onset_index: 0,
            values,
        }
    }

    fn square_breath() -> Vec<f64> {
        let mut v = vec![30.0; 50];
        v.extend(std::iter::repeat_n(-30.0, 100));
        v
    }

    #[test]
    fn square_wave_closed_form() {
        let f = extract_breath_features(&seg(square_breath()), 50.0, 2.0).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(f.i_time, 1.0));
        assert!(close(f.e_time, 2.0));
        assert!(close(f.ie_ratio, 0.5));
        assert!(close(f.tv_insp, 0.5));
        assert!(close(f.tv_exp, 1.0));
        assert!(close(f.peak_insp_flow, 30.0));
        assert!(close(f.peak_exp_flow, 30.0));
        assert!(close(f.mean_insp_flow, 30.0));
        assert!(close(f.resp_rate, 20.0));
        assert!(close(f.minute_vent, 10.0));
    }

    #[test]
    fn degenerate_cases() {
        let all_pos = vec![10.0; 100];
        assert!(extract_breath_features(&seg(all_pos), 50.0, 2.0).is_err());
        let flat = vec![0.5; 20];
        assert!(extract_breath_features(&seg(flat), 50.0, 2.0).is_err());
        assert!(extract_breath_features(&seg(vec![5.0]), 50.0, 2.0).is_err());
        let mut weak = vec![0.8; 10];
        weak.extend([-0.5; 10]);
        assert!(extract_breath_features(&seg(weak), 50.0, 0.5).is_err());
    }

    #[test]
    fn median_oracle() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [7.0]), 7.0);
    }

    fn window_over(series: &[f64], onsets: &[usize]) -> BreathWindow {
        BreathWindow {
            patient_id: "p".into(),
            label: Label::Ards,
            instances: onsets
                .iter()
                .map(|&o| BreathInstance {
                    patient_id: "p".into(),
                    label: Label::Ards,
                    start_index: o,
                    values: series[o..o + 1].to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_breaths_give_single_breath_features() {
        let mut s = vec![];
        let mut onsets = vec![];
        for _ in 0..21 {
            onsets.push(s.len());
            s.extend(square_breath());
        }
        let w = window_over(&s, &onsets[..20]);
        let cfg = SegmentationConfig::default();
        let v = window_features(&w, &s, &onsets, 50.0, &cfg).unwrap();
        let single = extract_breath_features(&seg(square_breath()), 50.0, 2.0).unwrap();
        assert_eq!(v.values, single.to_array());
    }

    #[test]
    fn majority_degenerate_window_fails() {
        let mut s = vec![];
        let mut onsets = vec![];
        for i in 0..21 {
            onsets.push(s.len());
            if i < 11 {
                // never drops below zero after inspiration
                s.extend(std::iter::repeat_n(30.0, 150));
            } else {
                s.extend(square_breath());
            }
        }
        let cfg = SegmentationConfig::default();
        let w = window_over(&s, &onsets[..20]);
        assert!(window_features(&w, &s, &onsets, 50.0, &cfg).is_err());

        // 10 of 20 degenerate is still a majority of good breaths? no: exactly half passes
        let mut s = vec![];
        let mut onsets = vec![];
        for i in 0..21 {
            onsets.push(s.len());
            if i < 10 {
                s.extend(std::iter::repeat_n(30.0, 150));
            } else {
                s.extend(square_breath());
            }
        }
        let w = window_over(&s, &onsets[..20]);
        assert!(window_features(&w, &s, &onsets, 50.0, &cfg).is_ok());
    }

    #[test]
    fn mixed_window_matches_sorted_middle() {
        // breaths with different inspiratory lengths and amplitudes
        let mut s = vec![];
        let mut onsets = vec![];
        let mut per_breath = vec![];
        for i in 0..21usize {
            onsets.push(s.len());
            let n_in = 30 + (i * 7) % 23;
            let amp = 20.0 + ((i * 13) % 17) as f64;
            let mut b = vec![amp; n_in];
            b.extend(std::iter::repeat_n(-amp / 2.0, 90));
            per_breath.push(extract_breath_features(&seg(b.clone()), 50.0, 2.0).unwrap());
            s.extend(b);
        }
        let cfg = SegmentationConfig::default();
        let w = window_over(&s, &onsets[..20]);
        let v = window_features(&w, &s, &onsets, 50.0, &cfg).unwrap();
        for j in 0..N_FEATURES {
            let mut col: Vec<f64> = per_breath[..20].iter().map(|f| f.to_array()[j]).collect();
            col.sort_by(f64::total_cmp);
            let want = (col[9] + col[10]) / 2.0;
            assert_eq!(v.values[j], want, "feature {}", FEATURE_NAMES[j]);
        }
    }

    fn breath_train(amp: f64, n_in: usize, n_ex: usize, count: usize) -> Vec<f64> {
        let mut s = vec![-1.0; 10];
        for _ in 0..count {
            for k in 0..n_in {
                s.push(amp * (std::f64::consts::PI * (k as f64 + 0.5) / n_in as f64).sin());
            }
            for k in 0..n_ex {
                s.push(-amp * 0.6 * (-(k as f64) / 20.0).exp() - 0.5);
            }
        }
        s
    }

    proptest! {
        #[test]
        fn time_shift_invariance(shift in 0usize..=50, amp in 10.0f64..60.0, n_in in 30usize..70) {
            let cfg = SegmentationConfig::default();
            let base = breath_train(amp, n_in, 120, 3);
            let mut shifted = vec![0.0; shift];
            shifted.extend(&base);
            let feats = |s: &[f64]| {
                let series = FlowSeries::new("p", Label::Ards, s.to_vec()).unwrap();
                let onsets = detect_breath_onsets(s, &cfg);
                crate::segmentation::segment_breaths(&series, &onsets)
                    .iter()
                    .map(|g| extract_breath_features(g, 50.0, 2.0).unwrap())
                    .collect::<Vec<_>>()
            };
            prop_assert_eq!(feats(&base), feats(&shifted));
        }

        #[test]
        fn amplitude_scaling(c in 0.5f64..3.0, amp in 20.0f64..50.0, n_in in 30usize..70) {
            let mut b: Vec<f64> = (0..n_in)
                .map(|k| amp * (std::f64::consts::PI * (k as f64 + 0.5) / n_in as f64).sin())
                .collect();
            b.extend((0..100).map(|k| -amp * 0.7 * (-(k as f64) / 25.0).exp() - 0.2));
            let f = extract_breath_features(&seg(b.clone()), 50.0, 2.0).unwrap();
            let g = extract_breath_features(&seg(b.iter().map(|x| x * c).collect()), 50.0, 2.0).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
            prop_assert_eq!(f.i_time, g.i_time);
            prop_assert_eq!(f.e_time, g.e_time);
            prop_assert_eq!(f.ie_ratio, g.ie_ratio);
            prop_assert_eq!(f.resp_rate, g.resp_rate);
            prop_assert!(rel(f.tv_insp * c, g.tv_insp));
            prop_assert!(rel(f.tv_exp * c, g.tv_exp));
            prop_assert!(rel(f.peak_insp_flow * c, g.peak_insp_flow));
            prop_assert!(rel(f.peak_exp_flow * c, g.peak_exp_flow));
            prop_assert!(rel(f.mean_insp_flow * c, g.mean_insp_flow));
            prop_assert!(rel(f.minute_vent * c, g.minute_vent));
        }
    }
}
