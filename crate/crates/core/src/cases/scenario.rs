//! Closed-loop scenario runner producing logged traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cases::control::{setpoint_at, Pid, PidGains, SetpointStep};
use crate::cases::fault::{wrap_signed, AoACorruption, Blockade, FaultSpec};
use crate::cases::plants::{
    bmm_system, bmm_template, brake_lqr_gain, brake_system, brake_template, pitch_system, pitch_template, BmmParams,
    BrakeParams, LqrWeights, PitchParams,
};
use crate::dihrnn::ModelTemplate;
use crate::error::{Error, Result};
use crate::ode::{InputSignal, LinearOdeSystem, Segment, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub enum PlantConfig {
    Bmm(BmmParams),
    Pitch(PitchParams),
    Brake(BrakeParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bolus {
    pub t: f64,
    pub units: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meal {
    pub t: f64,
    pub grams: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// Open-loop insulin pump delivering the listed boluses.
    Bolus { schedule: Vec<Bolus> },
    /// Pitch-angle PID driving the elevator.
    Pid { gains: PidGains, schedule: Vec<SetpointStep> },
    /// Full-state LQR holding the braking rest point.
    Lqr { gains: LqrWeights },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Same explicit Euler step the miner uses.
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub fault: Option<FaultSpec>,
    pub horizon: f64,
    pub tau: f64,
    pub seed: u64,
    /// Standard deviation of additive noise on every sensed channel.
    pub noise_std: f64,
    pub initial_state: Option<Vec<f64>>,
    pub meals: Vec<Meal>,
    pub integrator: Integrator,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioJson {
    plant: String,
    #[serde(default)]
    params: Option<serde_json::Value>,
    controller: ControllerConfig,
    #[serde(default)]
    fault: Option<FaultSpec>,
    horizon: f64,
    tau: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    meals: Vec<Meal>,
    #[serde(default)]
    integrator: Integrator,
}

fn params_of<T: serde::de::DeserializeOwned>(v: Option<serde_json::Value>, default: Option<T>) -> Result<T> {
    match (v, default) {
        (Some(v), _) => serde_json::from_value(v).map_err(|e| Error::invalid(format!("params: {e}"))),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(Error::invalid("params: missing")),
    }
}

impl TryFrom<ScenarioJson> for Scenario {
    type Error = Error;

    fn try_from(j: ScenarioJson) -> Result<Self> {
        let plant = match j.plant.as_str() {
            "bmm" => PlantConfig::Bmm(params_of(j.params, Some(BmmParams::nominal()))?),
            "pitch" => PlantConfig::Pitch(params_of(j.params, Some(PitchParams::nominal()))?),
            "brake" => PlantConfig::Brake(params_of(j.params, Some(BrakeParams::default()))?),
            other => return Err(Error::invalid(format!("plant: unknown plant `{other}` (bmm | pitch | brake)"))),
        };
        let s = Scenario {
            plant,
            controller: j.controller,
            fault: j.fault,
            horizon: j.horizon,
            tau: j.tau,
            seed: j.seed,
            noise_std: j.noise_std,
            initial_state: j.initial_state,
            meals: j.meals,
            integrator: j.integrator,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<&Scenario> for ScenarioJson {
    fn from(s: &Scenario) -> Self {
        let (plant, params) = match &s.plant {
            PlantConfig::Bmm(p) => ("bmm", serde_json::to_value(p)),
            PlantConfig::Pitch(p) => ("pitch", serde_json::to_value(p)),
            PlantConfig::Brake(p) => ("brake", serde_json::to_value(p)),
        };
        ScenarioJson {
            plant: plant.into(),
            params: params.ok(),
            controller: s.controller.clone(),
            fault: s.fault.clone(),
            horizon: s.horizon,
            tau: s.tau,
            seed: s.seed,
            noise_std: s.noise_std,
            initial_state: s.initial_state.clone(),
            meals: s.meals.clone(),
            integrator: s.integrator,
        }
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScenarioJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Scenario::try_from(ScenarioJson::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) || self.tau > self.horizon {
            return Err(Error::invalid(format!("tau must be positive and at most the horizon, got {}", self.tau)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be >= 0"));
        }
        if let Some(x0) = &self.initial_state {
            if x0.len() != 3 || x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("initial_state must hold 3 finite values"));
            }
        }
        match (&self.plant, &self.controller) {
            (PlantConfig::Bmm(p), ControllerConfig::Bolus { .. }) => p.validate()?,
            (PlantConfig::Pitch(_), ControllerConfig::Pid { .. }) => {}
            (PlantConfig::Brake(_), ControllerConfig::Lqr { gains }) => gains.validate()?,
            _ => {
                return Err(Error::invalid(
                    "controller type does not fit the plant (bmm: bolus, pitch: pid, brake: lqr)",
                ))
            }
        }
        if let Some(f) = &self.fault {
            f.validate()?;
            let ok = matches!(
                (&self.plant, f),
                (PlantConfig::Bmm(_), FaultSpec::InsulinBlockade { .. })
                    | (PlantConfig::Pitch(_), FaultSpec::AoAError { .. })
                    | (PlantConfig::Brake(_), FaultSpec::QOverflow { .. })
            );
            if !ok {
                return Err(Error::invalid("fault kind does not apply to this plant"));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.tau).round() as usize
    }

    /// The plant as a linear system over the logged channels.
    pub fn system(&self) -> Result<LinearOdeSystem> {
        match &self.plant {
            PlantConfig::Bmm(p) => bmm_system(p),
            PlantConfig::Pitch(p) => pitch_system(p),
            PlantConfig::Brake(p) => brake_system(p),
        }
    }

    /// The template a miner should use for traces of this scenario, built from
    /// the nominal (fault-free) configuration.
    pub fn template(&self) -> Result<ModelTemplate> {
        match (&self.plant, &self.controller) {
            (PlantConfig::Bmm(p), _) => bmm_template(p),
            (PlantConfig::Pitch(p), _) => pitch_template(p),
            (PlantConfig::Brake(p), ControllerConfig::Lqr { gains }) => {
                brake_template(p, &brake_lqr_gain(p, gains, self.tau)?)
            }
            _ => Err(Error::invalid("controller type does not fit the plant")),
        }
    }
}

/// Output of one run: what a logger would record, plus ground truth.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub system: LinearOdeSystem,
    /// Commanded inputs and sensed states (hidden states carry true values).
    pub logged: Segment,
    pub truth: Trajectory,
    /// Inputs the plant actually received.
    pub applied: InputSignal,
}

fn advance(sys: &LinearOdeSystem, integ: Integrator, x: &[f64], u: &[f64], tau: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    match integ {
        Integrator::Euler => crate::ode::euler_step(sys, x, u, tau, &mut out),
        Integrator::Rk4 => {
            let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            sys.derivative(x, u, &mut k1);
            let t: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * tau * k1[i]).collect();
            sys.derivative(&t, u, &mut k2);
            let t: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * tau * k2[i]).collect();
            sys.derivative(&t, u, &mut k3);
            let t: Vec<f64> = (0..n).map(|i| x[i] + tau * k3[i]).collect();
            sys.derivative(&t, u, &mut k4);
            for i in 0..n {
                out[i] = x[i] + tau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    out
}

/// Simulate the closed loop for `scenario.horizon` and record its trace.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun> {
    scenario.validate()?;
    let sys = scenario.system()?;
    let n = sys.n();
    let tau = scenario.tau;
    let steps = scenario.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = Normal::new(0.0, scenario.noise_std).map_err(|e| Error::invalid(e.to_string()))?;

    let mut x = scenario.initial_state.clone().unwrap_or_else(|| match &scenario.plant {
        PlantConfig::Brake(p) => p.equilibrium().0,
        _ => vec![0.0; n],
    });
    let mut truth = vec![Vec::with_capacity(steps + 1); n];
    let mut logged = vec![Vec::with_capacity(steps + 1); n];
    let mut cmd_log = vec![Vec::with_capacity(steps + 1); n];
    let mut applied_log = vec![Vec::with_capacity(steps + 1); n];

    let mut blockade = match scenario.fault {
        Some(FaultSpec::InsulinBlockade { percent, release_min, phantom, onset_min }) => {
            Some(Blockade::new(percent, release_min, phantom, onset_min))
        }
        _ => None,
    };
    let aoa = match scenario.fault {
        Some(FaultSpec::AoAError { magnitude_rad, onset_s, noise_rate }) => {
            Some(AoACorruption::new(magnitude_rad, onset_s, noise_rate))
        }
        _ => None,
    };
    let mut pid = match &scenario.controller {
        ControllerConfig::Pid { gains, .. } => Some(Pid::new(*gains, tau)),
        _ => None,
    };
    let lqr = match (&scenario.plant, &scenario.controller) {
        (PlantConfig::Brake(p), ControllerConfig::Lqr { gains }) => {
            let mut w = gains.clone();
            if let Some(FaultSpec::QOverflow { declared_width }) = scenario.fault {
                if let Some(q) = w.q_diag.first_mut() {
                    *q = wrap_signed(*q, declared_width);
                }
            }
            let (xs, us) = p.equilibrium();
            Some((brake_lqr_gain(p, &w, tau)?, xs, us))
        }
        _ => None,
    };

    for k in 0..=steps {
        let t = k as f64 * tau;
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::ControllerDivergence { t });
        }
        // sensing
        let mut sensed = x.clone();
        if let Some(c) = &aoa {
            sensed[0] = c.apply(t, sensed[0], &mut rng);
        }
        for i in 0..n {
            if sys.beta_diag()[i] && scenario.noise_std > 0.0 {
                sensed[i] += noise.sample(&mut rng);
            }
        }
        for i in 0..n {
            truth[i].push(x[i]);
            logged[i].push(if sys.beta_diag()[i] { sensed[i] } else { x[i] });
        }
        if k == steps {
            for i in 0..n {
                cmd_log[i].push(0.0);
                applied_log[i].push(0.0);
            }
            break;
        }

        // control
        let mut cmd = vec![0.0; n];
        match &scenario.controller {
            ControllerConfig::Bolus { schedule } => {
                cmd[0] = schedule.iter().filter(|b| (b.t / tau).round() as usize == k).map(|b| b.units / tau).sum();
                if let PlantConfig::Bmm(p) = &scenario.plant {
                    cmd[2] = scenario.meals.iter().map(|m| p.meal_rate(m.grams, m.t, t)).sum();
                }
            }
            ControllerConfig::Pid { schedule, .. } => {
                let pid = pid.as_mut().expect("pid controller");
                let d = pid.step(setpoint_at(schedule, t), sensed[2]);
                cmd[0] = d;
                cmd[1] = d;
            }
            ControllerConfig::Lqr { .. } => {
                let (gain, xs, us) = lqr.as_ref().expect("lqr controller");
                cmd[0] = us - gain.iter().zip(x.iter().zip(xs)).map(|(g, (xi, si))| g * (xi - si)).sum::<f64>();
            }
        }

        // actuation
        let mut applied = cmd.clone();
        if let Some(b) = blockade.as_mut() {
            applied[0] = b.step(t, tau, cmd[0]);
        }
        for i in 0..n {
            cmd_log[i].push(cmd[i]);
            applied_log[i].push(applied[i]);
        }
        x = advance(&sys, scenario.integrator, &x, &applied, tau);
    }

    let logged_seg = Segment::new(InputSignal::new(tau, cmd_log)?, Trajectory::new(tau, 0.0, logged)?)?;
    Ok(ScenarioRun {
        system: sys,
        logged: logged_seg,
        truth: Trajectory::new(tau, 0.0, truth)?,
        applied: InputSignal::new(tau, applied_log)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn aid(fault: Option<FaultSpec>) -> Scenario {
        Scenario {
            plant: PlantConfig::Bmm(BmmParams::nominal()),
            controller: ControllerConfig::Bolus { schedule: vec![Bolus { t: 10.0, units: 7.5 }] },
            fault,
            horizon: 300.0,
            tau: 1.0,
            seed: 1,
            noise_std: 0.0,
            initial_state: None,
            meals: vec![Meal { t: 10.0, grams: 20.0 }],
            integrator: Integrator::Euler,
        }
    }

    #[test]
    fn nominal_aid_returns_toward_basal_without_hypoglycemia() {
        let run = run_scenario(&aid(None)).unwrap();
        let g = run.truth.channel(2);
        let peak = g.iter().enumerate().fold((0, f64::MIN), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
        assert!(peak.1 > 5.0);
        let end = g[g.len() - 1];
        assert!(end.abs() < peak.1.abs() * 0.5, "end {end}, peak {peak:?}");
        assert!(g.iter().all(|&v| v + 110.0 > 70.0));
        assert_eq!(run.logged.trajectory.len(), 301);
    }

    #[test]
    fn blockade_leaves_logged_commands_untouched_and_conserves_insulin() {
        let spec = FaultSpec::InsulinBlockade { percent: 40.0, release_min: 120.0, phantom: false, onset_min: 0.0 };
        let nominal = run_scenario(&aid(None)).unwrap();
        let faulty = run_scenario(&aid(Some(spec))).unwrap();
        assert_eq!(nominal.logged.input, faulty.logged.input);
        let total = |u: &InputSignal| u.channel(0).iter().sum::<f64>();
        assert!((total(&faulty.applied) - total(&nominal.applied)).abs() < 1e-12);
        // the late depot pushes glucose lower than the nominal run after release
        let late = |r: &ScenarioRun| r.truth.channel(2)[121..].iter().copied().fold(f64::MAX, f64::min);
        assert!(late(&faulty) < late(&nominal));
    }

    #[test]
    fn scenario_json_round_trip() {
        let s =
            aid(Some(FaultSpec::InsulinBlockade { percent: 20.0, release_min: 150.0, phantom: true, onset_min: 0.0 }));
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        let bad = s.to_json().unwrap().replace("\"bmm\"", "\"boat\"");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn mismatched_fault_is_rejected() {
        let s = aid(Some(FaultSpec::QOverflow { declared_width: 8 }));
        assert!(run_scenario(&s).is_err());
    }
}
