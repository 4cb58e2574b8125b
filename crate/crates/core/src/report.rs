//! Detection metrics, text tables and an optional SVG residue plot.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cases::experiments::CaseReport;
use crate::conformal::{first_detection, Verdict};

/// Verdicts of one scenario with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub faulty: bool,
    pub verdicts: Vec<Verdict>,
}

impl ScenarioResult {
    pub fn first_detection(&self) -> Option<usize> {
        first_detection(&self.verdicts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    /// None when there are no faulty scenarios.
    pub tpr: Option<f64>,
    /// None when nothing was flagged.
    pub ppv: Option<f64>,
}

/// A scenario counts as flagged when any of its windows is Detected.
pub fn detection_metrics(results: &[ScenarioResult]) -> DetectionMetrics {
    let (mut tp, mut fp, mut tn, mut fnn) = (0, 0, 0, 0);
    for r in results {
        match (r.faulty, r.first_detection().is_some()) {
            (true, true) => tp += 1,
            (true, false) => fnn += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    DetectionMetrics {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fnn,
        tpr: ratio(tp, tp + fnn),
        ppv: ratio(tp, tp + fp),
    }
}

/// Windows by which the coefficient method beats the output baseline; positive
/// means the coefficient method detected first. None unless both detect.
pub fn detection_lead(coefficient: &[Verdict], baseline: &[Verdict]) -> Option<i64> {
    Some(first_detection(baseline)? as i64 - first_detection(coefficient)? as i64)
}

/// Fault outcomes of a case study as scenario results (all faulty, one
/// verdict each).
pub fn case_results(report: &CaseReport) -> (Vec<ScenarioResult>, Vec<ScenarioResult>) {
    let coef = report
        .outcomes
        .iter()
        .map(|o| ScenarioResult { name: o.label.clone(), faulty: true, verdicts: vec![o.verdict.clone()] })
        .collect();
    let base = report
        .outcomes
        .iter()
        .filter_map(|o| {
            o.baseline.as_ref().map(|b| ScenarioResult {
                name: o.label.clone(),
                faulty: true,
                verdicts: vec![b.clone()],
            })
        })
        .collect();
    (coef, base)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.0}%", 100.0 * x))
}

pub fn case_table(report: &CaseReport) -> String {
    let p = &report.profile;
    let mut s = String::new();
    let _ = writeln!(s, "case {}: interval [{:.4}, {:.4}], d = {:.4}", report.case, p.lo(), p.hi(), p.d);
    let _ = writeln!(s, "{:<40} {:>10} {:>4} {:>12} {:>4}", "scenario", "residue", "", "output rob.", "");
    for o in &report.outcomes {
        let (br, bl) = match &o.baseline {
            Some(b) => (format!("{:.4}", b.residue), b.label.short()),
            None => ("-".into(), "-"),
        };
        let _ = writeln!(
            s,
            "{:<40} {:>10.4} {:>4} {:>12} {:>4}",
            o.label,
            o.verdict.residue,
            o.verdict.label.short(),
            br,
            bl
        );
    }
    let (coef, base) = case_results(report);
    let m = detection_metrics(&coef);
    let _ = writeln!(s, "coefficient method: TPR {}, PPV {}", pct(m.tpr), pct(m.ppv));
    if !base.is_empty() {
        let b = detection_metrics(&base);
        let _ = writeln!(s, "output baseline:    TPR {}, PPV {}", pct(b.tpr), pct(b.ppv));
    }
    s
}

/// Residue of each verdict as a dot against the shaded interval.
pub fn residue_svg(title: &str, verdicts: &[Verdict]) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in verdicts {
        for x in [v.residue, v.lo, v.hi] {
            if x.is_finite() {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let n = verdicts.len().max(1) as f64;
    let x = |i: usize| pad + (i as f64 + 0.5) / n * (w - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20">{}</text>"#, escape(title));
    if let Some(v) = verdicts.first() {
        let (top, bottom) = (y(v.hi), y(v.lo));
        let _ = writeln!(
            s,
            r##"<rect x="{pad}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#cde" />"##,
            w - 2.0 * pad,
            (bottom - top).max(0.5)
        );
    }
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{pad}" y2="{pad}" stroke="black" />"#, h - pad);
    let _ = writeln!(s, r#"<text x="2" y="{:.1}">{hi:.3}</text>"#, pad + 4.0);
    let _ = writeln!(s, r#"<text x="2" y="{:.1}">{lo:.3}</text>"#, h - pad);
    for (i, v) in verdicts.iter().enumerate() {
        let color = if v.label.is_detected() { "#c22" } else { "#262" };
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}" />"#, x(i), y(v.residue));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
