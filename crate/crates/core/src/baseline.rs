//! Output-level conformance: conformal range on the robustness of a safety
//! formula evaluated over sensed output trajectories.

use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_interval, CalibrationSettings, CenterPolicy, Verdict};
use crate::error::{Error, Result};
use crate::ode::{LinearOdeSystem, Trajectory};
use crate::stl::{channel_registry, robustness, AtomRegistry, StlFormula};

/// An observed state exposed to the safety formula as an atom, shifted by
/// `offset` (e.g. basal glucose to turn deviations into absolute values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputChannel {
    pub state: String,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConformalProfile {
    pub safety: StlFormula,
    pub channels: Vec<OutputChannel>,
    /// Calibration robustness values, ascending.
    pub scores: Vec<f64>,
    pub d: f64,
    pub interval: [f64; 2],
    pub miscoverage: f64,
    pub center_policy: CenterPolicy,
}

fn registry(sys: &LinearOdeSystem, channels: &[OutputChannel]) -> Result<AtomRegistry<Vec<f64>>> {
    let mut spec = Vec::with_capacity(channels.len());
    for c in channels {
        let i = sys.state_index(&c.state).ok_or_else(|| Error::invalid(format!("unknown output `{}`", c.state)))?;
        if !sys.beta_diag()[i] {
            return Err(Error::invalid(format!("`{}` is not an observed output", c.state)));
        }
        spec.push((c.state.clone(), i, c.offset));
    }
    Ok(channel_registry(&spec))
}

/// Robustness of `safety` at the first sample of `traj`.
pub fn output_robustness(
    traj: &Trajectory,
    sys: &LinearOdeSystem,
    safety: &StlFormula,
    channels: &[OutputChannel],
) -> Result<f64> {
    let reg = registry(sys, channels)?;
    reg.check(safety)?;
    let samples: Vec<Vec<f64>> = (0..traj.len()).map(|k| traj.state_at(k)).collect();
    Ok(robustness(safety, &samples, 0, &reg)?.value)
}

pub fn baseline_calibrate(
    clean: &[Trajectory],
    sys: &LinearOdeSystem,
    safety: &StlFormula,
    channels: &[OutputChannel],
    settings: &CalibrationSettings,
) -> Result<(OutputConformalProfile, Vec<String>)> {
    settings.validate()?;
    if clean.is_empty() {
        return Err(Error::invalid("baseline calibration needs at least one error-free trajectory"));
    }
    let scores = clean.iter().map(|t| output_robustness(t, sys, safety, channels)).collect::<Result<Vec<_>>>()?;
    // every error-free trajectory is scored, so it forms the full calibration set
    let n_total = 2 * scores.len();
    let (scores, d, interval, warnings) =
        conformal_interval(scores, n_total, settings.miscoverage, settings.center_policy)?;
    Ok((
        OutputConformalProfile {
            safety: safety.clone(),
            channels: channels.to_vec(),
            scores,
            d,
            interval,
            miscoverage: settings.miscoverage,
            center_policy: settings.center_policy,
        },
        warnings,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub verdicts: Vec<Verdict>,
    pub detect_window: Option<usize>,
    pub detect_time: Option<f64>,
}

impl BaselineOutcome {
    pub fn detected(&self) -> bool {
        self.detect_window.is_some()
    }
}

/// Score each window of a trace against the output range.
pub fn baseline_detect(
    windows: &[Trajectory],
    sys: &LinearOdeSystem,
    profile: &OutputConformalProfile,
) -> Result<BaselineOutcome> {
    let mut verdicts = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let r = output_robustness(w, sys, &profile.safety, &profile.channels)?;
        verdicts.push(Verdict::from_score(i, r, profile.interval));
    }
    let detect_window = verdicts.iter().find(|v| v.label.is_detected()).map(|v| v.window);
    let detect_time = detect_window.map(|i| windows[i].t0());
    Ok(BaselineOutcome { verdicts, detect_window, detect_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::Interval;

    fn sys() -> LinearOdeSystem {
        let mut s = LinearOdeSystem::zeros(2).unwrap();
        s.set_beta(vec![true, false]).unwrap();
        s
    }

    fn band() -> StlFormula {
        StlFormula::globally(
            Interval::from(0),
            StlFormula::And(vec![StlFormula::ge("x0", 70.0), StlFormula::le("x0", 180.0)]),
        )
    }

    fn traj(v: &[f64]) -> Trajectory {
        Trajectory::new(1.0, 0.0, vec![v.to_vec(), vec![0.0; v.len()]]).unwrap()
    }

    #[test]
    fn identical_traces_give_a_degenerate_range() {
        let ch = [OutputChannel { state: "x0".into(), offset: 110.0 }];
        let t = traj(&[0.0, 5.0, -3.0]);
        let (p, _) =
            baseline_calibrate(&vec![t.clone(); 4], &sys(), &band(), &ch, &CalibrationSettings::default()).unwrap();
        assert_eq!(p.scores, vec![37.0; 4]);
        assert_eq!(p.interval, [0.0, 74.0]);
        let out = baseline_detect(&[t, traj(&[0.0, -45.0])], &sys(), &p).unwrap();
        assert_eq!(out.detect_window, Some(1));
        assert_eq!(out.detect_time, Some(0.0));
    }

    #[test]
    fn hidden_channels_are_not_outputs() {
        let ch = [OutputChannel { state: "x1".into(), offset: 0.0 }];
        assert!(output_robustness(&traj(&[1.0]), &sys(), &StlFormula::ge("x1", 0.0), &ch).is_err());
    }
}
