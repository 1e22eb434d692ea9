//! CSV tables and SVG figures built from evaluation reports. Numbers are
//! written with three decimals; undefined values are written as `NA`.

use std::fmt::Write;

use crate::cnn::CamSummary;
use crate::eval::{Aggregate, MetricsReport, RocSummary, SweepEntry, SweepReport, METRIC_NAMES};
use crate::stats::{ci95_half_width, mean};

pub const TABLE1_HEADER: &str =
    "k_fold,auc,auc_ci95,accuracy,accuracy_ci95,sensitivity,sensitivity_ci95,specificity,specificity_ci95,ppv,ppv_ci95,npv,npv_ci95";

pub const TABLE2_HEADER: &str =
    "subtable,row,auc,auc_ci95,accuracy,accuracy_ci95,sensitivity,sensitivity_ci95,specificity,specificity_ci95";

pub fn fmt3(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "NA".into()
    }
}

fn push_pair(line: &mut String, m: f64, ci: f64) {
    let _ = write!(line, ",{},{}", fmt3(m), fmt3(ci));
}

/// One row per fold (mean and interval over trials at the final epoch) and a
/// closing `mean` row taken from the report's aggregate.
pub fn table1_csv(report: &MetricsReport) -> String {
    let mut out = String::from(TABLE1_HEADER);
    out.push('\n');
    let last = report.final_epoch().epoch;
    let folds = report.plan.assignments.first().map_or(0, Vec::len);
    for f in 0..folds {
        let mut line = format!("{}", f + 1);
        for name in METRIC_NAMES {
            let vals: Vec<f64> = report
                .cells
                .iter()
                .filter(|c| c.fold == f && c.epoch == last)
                .map(|c| match name {
                    "auc" => c.auc,
                    "accuracy" => c.accuracy,
                    "sensitivity" => c.sensitivity,
                    "specificity" => c.specificity,
                    "ppv" => c.ppv,
                    _ => c.npv,
                })
                .filter(|v| !v.is_nan())
                .collect();
            if vals.is_empty() {
                push_pair(&mut line, f64::NAN, f64::NAN);
            } else {
                push_pair(&mut line, mean(&vals), ci95_half_width(&vals));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    let mut line = String::from("mean");
    for name in METRIC_NAMES {
        let a: &Aggregate = report.final_epoch().metric(name);
        push_pair(&mut line, a.mean, a.ci95);
    }
    out.push_str(&line);
    out.push('\n');
    out
}

fn table2_row(out: &mut String, sub: &str, row: &str, e: &SweepEntry) {
    let mut line = format!("{sub},{row}");
    for name in ["auc", "accuracy", "sensitivity", "specificity"] {
        let a = e.summary.metric(name);
        push_pair(&mut line, a.mean, a.ci95);
    }
    out.push_str(&line);
    out.push('\n');
}

fn cutoff_label(c: Option<f64>) -> String {
    c.map_or_else(|| "none".into(), |v| format!("{v}"))
}

/// Sub-table A holds the unfiltered baselines (rows named by model), B the
/// CNN and C the forest under lowpass filtering (rows named by cutoff in Hz).
pub fn table2_csv(report: &SweepReport) -> String {
    let mut out = String::from(TABLE2_HEADER);
    out.push('\n');
    for e in &report.baselines {
        table2_row(&mut out, "A", e.model.as_str(), e);
    }
    for e in &report.cnn {
        table2_row(&mut out, "B", &cutoff_label(e.cutoff_hz), e);
    }
    for e in &report.rf {
        table2_row(&mut out, "C", &cutoff_label(e.cutoff_hz), e);
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }

    fn polyline(&self, xs: &[f64], ys: &[f64]) -> String {
        xs.iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Closed polygon between `lo` and `hi`.
    fn band(&self, xs: &[f64], lo: &[f64], hi: &[f64]) -> String {
        let mut pts: Vec<String> = Vec::with_capacity(2 * xs.len());
        for i in 0..xs.len() {
            if lo[i].is_finite() {
                pts.push(format!("{:.2},{:.2}", self.px(xs[i]), self.py(lo[i])));
            }
        }
        for i in (0..xs.len()).rev() {
            if hi[i].is_finite() {
                pts.push(format!("{:.2},{:.2}", self.px(xs[i]), self.py(hi[i])));
            }
        }
        pts.join(" ")
    }

    fn axes(&self, svg: &mut String, x_label: &str, y_label: &str, title: &str) {
        let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let _ = writeln!(
            svg,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for i in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * i as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                self.px(fx),
                b + 14.0,
                trim_num(fx)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                l - 4.0,
                self.py(fy) + 3.0,
                trim_num(fy)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_label}</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{y_label}</text>"#,
            H / 2.0,
            H / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="30" font-size="13" text-anchor="middle">{title}</text>"#,
            W / 2.0
        );
    }
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn open_svg() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#) + "\n"
}

fn legend(svg: &mut String, i: usize, name: &str) {
    let y = MARGIN + 14.0 + 16.0 * i as f64;
    let x = W - MARGIN - 110.0;
    let _ = writeln!(
        svg,
        r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{name}</text>"#,
        x + 18.0,
        PALETTE[i % PALETTE.len()],
        x + 22.0,
        y + 4.0
    );
}

/// Mean ROC curves with shaded 95% bands and the chance diagonal.
pub fn roc_svg(curves: &[(&str, &RocSummary)]) -> String {
    let frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut svg = open_svg();
    frame.axes(&mut svg, "False positive rate", "True positive rate", "ROC");
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        frame.px(0.0),
        frame.py(0.0),
        frame.px(1.0),
        frame.py(1.0)
    );
    for (i, (name, roc)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let lo: Vec<f64> = roc
            .tpr_mean
            .iter()
            .zip(&roc.tpr_ci95)
            .map(|(m, c)| (m - c).max(0.0))
            .collect();
        let hi: Vec<f64> = roc
            .tpr_mean
            .iter()
            .zip(&roc.tpr_ci95)
            .map(|(m, c)| (m + c).min(1.0))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            frame.band(&roc.fpr, &lo, &hi)
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            frame.polyline(&roc.fpr, &roc.tpr_mean)
        );
        legend(&mut svg, i, name);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Class-averaged Grad-CAM intensity against frequency with 95% bands.
pub fn gradcam_svg(frequencies: &[f64], summaries: &[CamSummary]) -> String {
    let (x0, x1) = match (frequencies.first(), frequencies.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let frame = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: 1.0,
    };
    let mut svg = open_svg();
    frame.axes(
        &mut svg,
        "Frequency (Hz)",
        "average Grad-CAM intensity (range 0-1.0)",
        "Average Grad-CAM",
    );
    for (i, s) in summaries.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let lo: Vec<f64> = s.mean.iter().zip(&s.ci95).map(|(m, c)| (m - c).max(0.0)).collect();
        let hi: Vec<f64> = s.mean.iter().zip(&s.ci95).map(|(m, c)| (m + c).min(1.0)).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            frame.band(frequencies, &lo, &hi)
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            frame.polyline(frequencies, &s.mean)
        );
        legend(&mut svg, i, s.class.as_str());
    }
    svg.push_str("</svg>\n");
    svg
}
