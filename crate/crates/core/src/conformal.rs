//! Split-conformal calibration of coefficient residues and per-window verdicts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dihrnn::{mine_segments, CoefficientVector, MinedCoefficients, MiningConfig, RnnStructure};
use crate::error::{Error, Result};
use crate::ode::Segment;
use crate::stl::deviation_residue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPolicy {
    Zero,
    #[default]
    Median,
}

fn default_miscoverage() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    #[serde(default = "default_miscoverage")]
    pub miscoverage: f64,
    /// Constant subtracted from every residue.
    #[serde(default)]
    pub residue_offset: f64,
    #[serde(default)]
    pub center_policy: CenterPolicy,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { miscoverage: default_miscoverage(), residue_offset: 0.0, center_policy: CenterPolicy::Median }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.miscoverage > 0.0 && self.miscoverage < 1.0) {
            return Err(Error::invalid(format!("miscoverage must lie in (0, 1), got {}", self.miscoverage)));
        }
        if !self.residue_offset.is_finite() {
            return Err(Error::invalid("residue_offset must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub omega_e: CoefficientVector,
    /// Calibration residues, ascending.
    pub residues: Vec<f64>,
    pub d: f64,
    pub interval: [f64; 2],
    pub miscoverage: f64,
    pub residue_offset: f64,
    pub center_policy: CenterPolicy,
}

impl CalibrationProfile {
    pub fn lo(&self) -> f64 {
        self.interval[0]
    }

    pub fn hi(&self) -> f64 {
        self.interval[1]
    }

    pub fn contains(&self, residue: f64) -> bool {
        residue >= self.interval[0] && residue <= self.interval[1]
    }

    /// Same profile with the half-width replaced by `d` around the same center.
    pub fn with_d(&self, d: f64) -> Self {
        let center = 0.5 * (self.interval[0] + self.interval[1]);
        Self { d, interval: [center - d, center + d], ..self.clone() }
    }
}

/// Seeded shuffle, then the first `floor(n/2)` items train and the rest test.
/// Each half keeps the original order.
pub fn split_error_free<T: Clone>(items: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 error-free segments to split, got {}", items.len())));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at(items.len() / 2);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a.iter().map(|&i| items[i].clone()).collect(), b.iter().map(|&i| items[i].clone()).collect()))
}

/// 1-based conformal rank `ceil((n/2 + 1)(1 - miscoverage))`.
pub fn conformal_rank(n_total: usize, miscoverage: f64) -> usize {
    // guard against values like 4.000000000000001 from the product
    ((n_total as f64 / 2.0 + 1.0) * (1.0 - miscoverage) - 1e-9).ceil().max(0.0) as usize
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Rank rule applied to already computed scores. Returns the sorted scores, the
/// half-width, the interval and any warnings.
pub fn conformal_interval(
    mut scores: Vec<f64>,
    n_total: usize,
    miscoverage: f64,
    center_policy: CenterPolicy,
) -> Result<(Vec<f64>, f64, [f64; 2], Vec<String>)> {
    if scores.is_empty() {
        return Err(Error::invalid("no calibration scores"));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("calibration score {i} is not finite")));
    }
    scores.sort_by(f64::total_cmp);
    let mut warnings = Vec::new();
    let rank = conformal_rank(n_total, miscoverage);
    let used = rank.clamp(1, scores.len());
    if used != rank {
        warnings.push(format!(
            "conformal rank {rank} (n = {n_total}, miscoverage = {miscoverage}) clamped to {used} of {} scores",
            scores.len()
        ));
    }
    let mut d = scores[used - 1];
    if d < 0.0 {
        warnings.push(format!("score at the conformal rank is negative ({d}); half-width set to 0"));
        d = 0.0;
    }
    let center = match center_policy {
        CenterPolicy::Zero => 0.0,
        CenterPolicy::Median => median(&scores),
    };
    Ok((scores, d, [center - d, center + d], warnings))
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub profile: CalibrationProfile,
    /// Mined coefficients of each calibration (test) window, in input order.
    pub test_mined: Vec<MinedCoefficients>,
    pub reference: MinedCoefficients,
    pub warnings: Vec<String>,
}

/// Mine one operational window the same way calibration windows are mined.
pub fn mine_window(
    seg: &Segment,
    structure: &RnnStructure,
    cfg: &MiningConfig,
    index: usize,
) -> Result<MinedCoefficients> {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(index as u64 + 1);
    mine_segments(std::slice::from_ref(seg), structure, &c, None)
}

/// Mine a reference on `train` jointly, mine every `test` window, and turn their
/// residues into a conformal interval. `n_total` defaults to
/// `train.len() + test.len()`.
pub fn calibrate(
    train: &[Segment],
    test: &[Segment],
    structure: &RnnStructure,
    cfg: &MiningConfig,
    settings: &CalibrationSettings,
    n_total: Option<usize>,
) -> Result<Calibration> {
    settings.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("calibration needs non-empty train and test sets"));
    }
    let reference = mine_segments(train, structure, cfg, None)?;
    let omega_e = reference.omega.clone();
    let test_mined = test
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            mine_window(seg, structure, cfg, i).map_err(|e| Error::Window { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let residues = test_mined
        .iter()
        .map(|m| deviation_residue(&m.omega, &omega_e, settings.residue_offset))
        .collect::<Result<Vec<_>>>()?;
    let n = n_total.unwrap_or(train.len() + test.len());
    let (residues, d, interval, mut warnings) =
        conformal_interval(residues, n, settings.miscoverage, settings.center_policy)?;
    warnings.extend(reference.report.warnings.iter().cloned());
    let profile = CalibrationProfile {
        omega_e,
        residues,
        d,
        interval,
        miscoverage: settings.miscoverage,
        residue_offset: settings.residue_offset,
        center_policy: settings.center_policy,
    };
    Ok(Calibration { profile, test_mined, reference, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Detected,
    NotDetected,
}

impl Label {
    pub fn is_detected(self) -> bool {
        self == Label::Detected
    }

    pub fn short(self) -> &'static str {
        match self {
            Label::Detected => "D",
            Label::NotDetected => "ND",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub window: usize,
    pub residue: f64,
    pub lo: f64,
    pub hi: f64,
    pub label: Label,
}

impl Verdict {
    pub fn from_score(window: usize, residue: f64, interval: [f64; 2]) -> Self {
        let inside = residue >= interval[0] && residue <= interval[1];
        Self {
            window,
            residue,
            lo: interval[0],
            hi: interval[1],
            label: if inside { Label::NotDetected } else { Label::Detected },
        }
    }
}

pub fn detect(omega: &CoefficientVector, profile: &CalibrationProfile, window: usize) -> Result<Verdict> {
    let r = deviation_residue(omega, &profile.omega_e, profile.residue_offset)?;
    Ok(Verdict::from_score(window, r, profile.interval))
}

pub fn first_detection(verdicts: &[Verdict]) -> Option<usize> {
    verdicts.iter().find(|v| v.label.is_detected()).map(|v| v.window)
}

fn fmt(v: f64) -> String {
    format!("{}", v + 0.0)
}

/// `window,residue,lo,hi,label`, plus `detect_time` when given.
pub fn write_verdicts_csv<W: Write>(w: W, verdicts: &[Verdict], detect_time: Option<Option<f64>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["window", "residue", "lo", "hi", "label"];
    if detect_time.is_some() {
        header.push("detect_time");
    }
    out.write_record(&header)?;
    for v in verdicts {
        let mut row = vec![v.window.to_string(), fmt(v.residue), fmt(v.lo), fmt(v.hi), format!("{:?}", v.label)];
        if let Some(t) = detect_time {
            row.push(t.map(fmt).unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_verdicts_csv<R: std::io::Read>(r: R) -> Result<Vec<Verdict>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::invalid(format!("verdict row {} is short", i + 2)));
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse().map_err(|_| Error::invalid(format!("verdict row {}: bad number", i + 2)))
        };
        let label = match field(4)? {
            "Detected" | "D" => Label::Detected,
            "NotDetected" | "ND" => Label::NotDetected,
            other => return Err(Error::invalid(format!("verdict row {}: unknown label `{other}`", i + 2))),
        };
        out.push(Verdict {
            window: field(0)?.parse().map_err(|_| Error::invalid(format!("verdict row {}: bad window", i + 2)))?,
            residue: num(1)?,
            lo: num(2)?,
            hi: num(3)?,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let six: Vec<u32> = (0..6).collect();
        let (a, b) = split_error_free(&six, 1).unwrap();
        assert_eq!((a.len(), b.len()), (3, 3));
        let seven: Vec<u32> = (0..7).collect();
        let (a, b) = split_error_free(&seven, 1).unwrap();
        assert_eq!((a.len(), b.len()), (3, 4));
        let mut all: Vec<u32> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, seven);
        assert!(split_error_free(&[1u32], 0).is_err());
        assert_eq!(split_error_free(&seven, 9).unwrap(), split_error_free(&seven, 9).unwrap());
    }

    #[test]
    fn rank_and_clamp_by_hand() {
        assert_eq!(conformal_rank(8, 0.1), 5);
        assert_eq!(conformal_rank(20, 0.1), 10);
        let (s, d, _, warnings) = conformal_interval(vec![0.3, 0.1, 0.4, 0.2], 8, 0.1, CenterPolicy::Zero).unwrap();
        assert_eq!(s, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(d, 0.4);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn degenerate_and_centered_intervals() {
        let (_, d, iv, _) = conformal_interval(vec![0.0; 5], 10, 0.1, CenterPolicy::Median).unwrap();
        assert_eq!((d, iv), (0.0, [0.0, 0.0]));
        let (_, d, iv, _) = conformal_interval(vec![0.01, 0.02, 0.03], 6, 0.2, CenterPolicy::Median).unwrap();
        // rank ceil(4 * 0.8) = 4 -> clamped to 3
        assert_eq!(d, 0.03);
        assert!((iv[0] + 0.01).abs() < 1e-15 && (iv[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn verdict_csv_round_trip() {
        let v = vec![Verdict::from_score(0, 0.5, [0.0, 1.0]), Verdict::from_score(1, 2.0, [0.0, 1.0])];
        assert_eq!(v[1].label, Label::Detected);
        let mut buf = Vec::new();
        write_verdicts_csv(&mut buf, &v, None).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("window,residue,lo,hi,label\n"));
        assert_eq!(read_verdicts_csv(&buf[..]).unwrap(), v);
        let mut buf = Vec::new();
        write_verdicts_csv(&mut buf, &v, Some(Some(1.5))).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains(",Detected,1.5\n"));
    }

    #[test]
    fn widening_never_adds_detections() {
        let w = CoefficientVector::new(vec!["a".into()], vec![1.0]).unwrap();
        let profile = CalibrationProfile {
            omega_e: w,
            residues: vec![0.1],
            d: 0.1,
            interval: [0.0, 0.2],
            miscoverage: 0.1,
            residue_offset: 0.0,
            center_policy: CenterPolicy::Median,
        };
        for x in [0.9, 1.05, 1.15, 1.3, 2.0] {
            let w = CoefficientVector::new(vec!["a".into()], vec![x]).unwrap();
            let narrow = detect(&w, &profile, 0).unwrap();
            let wide = detect(&w, &profile.with_d(0.5), 0).unwrap();
            if !narrow.label.is_detected() {
                assert!(!wide.label.is_detected());
            }
        }
    }
}
