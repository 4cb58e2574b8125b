//! Drivers for the case studies: clean calibration sets, fault tables, and
//! the output-level baseline scored on the same traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_calibrate, baseline_detect, output_robustness, OutputChannel, OutputConformalProfile};
use crate::cases::control::{PidGains, SetpointStep};
use crate::cases::fault::FaultSpec;
use crate::cases::plants::{BmmParams, BrakeParams, LqrWeights, PitchParams};
use crate::cases::scenario::{run_scenario, Bolus, ControllerConfig, Integrator, Meal, PlantConfig, Scenario};
use crate::conformal::{
    calibrate, first_detection, mine_window, split_error_free, CalibrationProfile, CalibrationSettings, Verdict,
};
use crate::dihrnn::{induce_structure, InitPolicy, MinedCoefficients, MiningConfig, ModelTemplate, RnnStructure};
use crate::error::{Error, Result};
use crate::ode::{Segment, Trace};
use crate::stl::{deviation_residue, Interval, StlFormula};

/// Everything needed to calibrate and score one case study.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub name: String,
    pub template: ModelTemplate,
    pub mining: MiningConfig,
    pub settings: CalibrationSettings,
    /// Safety formula and output channels for the baseline.
    pub safety: Option<(StlFormula, Vec<OutputChannel>)>,
    pub split_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FaultCase {
    pub label: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultOutcome {
    pub label: String,
    pub mined: crate::dihrnn::CoefficientVector,
    pub distance: f64,
    /// False when the replay distance stayed above `upsilon`; the best
    /// estimate is still scored.
    pub mining_ok: bool,
    pub verdict: Verdict,
    pub baseline: Option<Verdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: String,
    pub profile: CalibrationProfile,
    pub baseline_profile: Option<OutputConformalProfile>,
    pub outcomes: Vec<FaultOutcome>,
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn detected(&self) -> usize {
        self.outcomes.iter().filter(|o| o.verdict.label.is_detected()).count()
    }

    pub fn baseline_detected(&self) -> usize {
        self.outcomes.iter().filter(|o| o.baseline.as_ref().is_some_and(|v| v.label.is_detected())).count()
    }
}

/// Mine a window, falling back to the best estimate when the replay distance
/// target is missed.
fn mine_or_best(
    seg: &Segment,
    structure: &RnnStructure,
    cfg: &MiningConfig,
    index: usize,
) -> Result<(MinedCoefficients, bool)> {
    match mine_window(seg, structure, cfg, index) {
        Ok(m) => Ok((m, true)),
        Err(Error::NonConvergence { best, .. }) => Ok((*best, false)),
        Err(e) => Err(e),
    }
}

pub fn run_all(scenarios: &[Scenario]) -> Result<Vec<Segment>> {
    scenarios.par_iter().map(|s| run_scenario(s).map(|r| r.logged)).collect()
}

/// Calibrate on the clean scenarios, then score every fault case.
pub fn run_case(setup: &CaseSetup, clean: &[Scenario], faults: &[FaultCase]) -> Result<CaseReport> {
    let structure = induce_structure(&setup.template)?;
    let clean_segs = run_all(clean)?;
    let (train, test) = split_error_free(&clean_segs, setup.split_seed)?;
    let cal = calibrate(&train, &test, &structure, &setup.mining, &setup.settings, None)?;
    let mut warnings = cal.warnings;

    let sys = structure.system().clone();
    let baseline_profile = match &setup.safety {
        Some((phi, channels)) => {
            let trajs: Vec<_> = clean_segs.iter().map(|s| s.trajectory.clone()).collect();
            let (p, w) = baseline_calibrate(&trajs, &sys, phi, channels, &setup.settings)?;
            warnings.extend(w);
            Some(p)
        }
        None => None,
    };

    let profile = cal.profile;
    let outcomes = faults
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let seg = run_scenario(&f.scenario)?.logged;
            // fault windows get seeds disjoint from the calibration windows
            let (m, ok) = mine_or_best(&seg, &structure, &setup.mining, 1000 + i)?;
            let residue = deviation_residue(&m.omega, &profile.omega_e, profile.residue_offset)?;
            let baseline = match &baseline_profile {
                Some(bp) => {
                    let r = output_robustness(&seg.trajectory, &sys, &bp.safety, &bp.channels)?;
                    Some(Verdict::from_score(i, r, bp.interval))
                }
                None => None,
            };
            Ok(FaultOutcome {
                label: f.label.clone(),
                distance: m.report.distance,
                mined: m.omega,
                mining_ok: ok,
                verdict: Verdict::from_score(i, residue, profile.interval),
                baseline,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CaseReport { case: setup.name.clone(), profile, baseline_profile, outcomes, warnings })
}

// ---- artificial pancreas -------------------------------------------------

pub const AID_DOSE_U: f64 = 7.5;
pub const AID_MEAL_G: f64 = 20.0;

pub fn aid_setup() -> Result<CaseSetup> {
    let p = BmmParams::nominal();
    let mut mining = MiningConfig::new(1.0, 5.0);
    mining.psi = 0.02;
    mining.prior_weight = 10.0;
    mining.init = InitPolicy::Anchor { jitter: 0.05 };
    mining.max_epochs = 500;
    let safety = StlFormula::globally(
        Interval::from(0),
        StlFormula::And(vec![StlFormula::ge("G", 70.0), StlFormula::le("G", 180.0)]),
    );
    Ok(CaseSetup {
        name: "aid".into(),
        template: crate::cases::plants::bmm_template(&p)?,
        mining,
        settings: CalibrationSettings::default(),
        safety: Some((safety, vec![OutputChannel { state: "G".into(), offset: p.basal_glucose }])),
        split_seed: 7,
    })
}

/// Bolus and meal at `t_meal` minutes, logged every minute for `samples` samples.
pub fn aid_scenario(
    t_meal: f64,
    units: f64,
    grams: f64,
    samples: usize,
    fault: Option<FaultSpec>,
    seed: u64,
) -> Scenario {
    Scenario {
        plant: PlantConfig::Bmm(BmmParams::nominal()),
        controller: ControllerConfig::Bolus { schedule: vec![Bolus { t: t_meal, units }] },
        fault,
        horizon: (samples - 1) as f64,
        tau: 1.0,
        seed,
        noise_std: 0.5,
        initial_state: None,
        meals: vec![Meal { t: t_meal, grams }],
        integrator: Integrator::Euler,
    }
}

/// Clean runs with the meal at a random whole minute in `[5, 30)`.
pub fn aid_clean(n: usize, units: f64, grams: f64, samples: usize, seed: u64) -> Vec<Scenario> {
    (0..n as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let t_meal = ChaCha8Rng::seed_from_u64(s).gen_range(5..30) as f64;
            aid_scenario(t_meal, units, grams, samples, None, s)
        })
        .collect()
}

/// Blockade percent and release delay of the five scenario pairs; each is run
/// with and without a phantom depot.
pub const AID_BLOCKADES: [(f64, f64); 5] = [(20.0, 150.0), (40.0, 120.0), (80.0, 90.0), (70.0, 70.0), (60.0, 50.0)];

pub fn aid_faults() -> Vec<FaultCase> {
    let mut out = Vec::new();
    for &(percent, release_min) in &AID_BLOCKADES {
        for phantom in [false, true] {
            let fault = FaultSpec::InsulinBlockade { percent, release_min, phantom, onset_min: 0.0 };
            let label = format!("{percent:.0}% / {release_min:.0} min{}", if phantom { " phantom" } else { "" });
            let seed = 100 + percent as u64;
            out.push(FaultCase { label, scenario: aid_scenario(10.0, AID_DOSE_U, AID_MEAL_G, 300, Some(fault), seed) });
        }
    }
    out
}

pub fn run_aid_table() -> Result<CaseReport> {
    run_case(&aid_setup()?, &aid_clean(20, AID_DOSE_U, AID_MEAL_G, 300, 0), &aid_faults())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub mined: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub distance: f64,
}

impl RecoveryReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Mine one coefficient vector jointly from `n` clean glucose traces and
/// compare it with the generating values.
pub fn run_aid_recovery(n: usize, jitter: f64, seed: u64) -> Result<RecoveryReport> {
    let setup = aid_setup()?;
    let structure = induce_structure(&setup.template)?;
    let segs = run_all(&aid_clean(n, AID_DOSE_U, AID_MEAL_G, 300, seed))?;
    let mut cfg = setup.mining.clone();
    cfg.init = InitPolicy::Anchor { jitter };
    cfg.seed = seed;
    let m = crate::dihrnn::mine_segments(&segs, &structure, &cfg, None)?;
    let truth = structure.anchor();
    let relative_error =
        m.omega.values().iter().zip(truth.values()).map(|(w, t)| ((w - t) / t).abs()).collect::<Vec<_>>();
    Ok(RecoveryReport {
        names: truth.names().to_vec(),
        truth: truth.values().to_vec(),
        mined: m.omega.values().to_vec(),
        relative_error,
        distance: m.report.distance,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub window_len: usize,
    pub coefficient: Vec<Verdict>,
    pub baseline: Vec<Verdict>,
    pub coefficient_first: Option<usize>,
    pub baseline_first: Option<usize>,
    /// Lowest true absolute glucose over the run.
    pub min_glucose: f64,
}

pub const LATENCY_WINDOW: usize = 150;

/// A large blockade whose depot is released late enough to cause
/// hypoglycemia, scored window by window with both methods.
pub fn run_aid_latency() -> Result<LatencyReport> {
    let (units, grams) = (15.0, 40.0);
    let setup = aid_setup()?;
    let structure = induce_structure(&setup.template)?;
    let clean = run_all(&aid_clean(20, units, grams, LATENCY_WINDOW, 0))?;
    let (train, test) = split_error_free(&clean, setup.split_seed)?;
    let cal = calibrate(&train, &test, &structure, &setup.mining, &setup.settings, None)?;
    let sys = structure.system().clone();
    let (phi, channels) = setup.safety.clone().expect("aid has a safety formula");
    let trajs: Vec<_> = clean.iter().map(|s| s.trajectory.clone()).collect();
    let (bp, _) = baseline_calibrate(&trajs, &sys, &phi, &channels, &setup.settings)?;

    let fault = FaultSpec::InsulinBlockade { percent: 80.0, release_min: 150.0, phantom: false, onset_min: 0.0 };
    let run = run_scenario(&aid_scenario(10.0, units, grams, 2 * LATENCY_WINDOW, Some(fault), 300))?;
    let windows = Trace::windowed(&run.logged, LATENCY_WINDOW, LATENCY_WINDOW)?.into_segments();
    let mut coefficient = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let (m, _) = mine_or_best(w, &structure, &setup.mining, 1000 + i)?;
        let r = deviation_residue(&m.omega, &cal.profile.omega_e, cal.profile.residue_offset)?;
        coefficient.push(Verdict::from_score(i, r, cal.profile.interval));
    }
    let trajs: Vec<_> = windows.iter().map(|w| w.trajectory.clone()).collect();
    let baseline = baseline_detect(&trajs, &sys, &bp)?;
    let basal = BmmParams::nominal().basal_glucose;
    Ok(LatencyReport {
        window_len: LATENCY_WINDOW,
        coefficient_first: first_detection(&coefficient),
        baseline_first: baseline.detect_window,
        coefficient,
        baseline: baseline.verdicts,
        min_glucose: run.truth.channel(2).iter().copied().fold(f64::INFINITY, f64::min) + basal,
    })
}

// ---- aircraft pitch --------------------------------------------------------

pub const PITCH_GAINS: PidGains = PidGains { kp: 2.0, ki: 0.5, kd: 1.0 };
pub const PITCH_HORIZON: f64 = 20.0;

pub fn pitch_setup() -> Result<CaseSetup> {
    let mut mining = MiningConfig::new(0.01, 0.5);
    mining.prior_weight = 1e-4;
    mining.init = InitPolicy::Anchor { jitter: 0.05 };
    mining.max_epochs = 500;
    let safety = StlFormula::globally(
        Interval::from(0),
        StlFormula::And(vec![StlFormula::ge("theta", -1.0), StlFormula::le("theta", 1.0)]),
    );
    Ok(CaseSetup {
        name: "pitch".into(),
        template: crate::cases::plants::pitch_template(&PitchParams::nominal())?,
        mining,
        settings: CalibrationSettings::default(),
        safety: Some((safety, vec![OutputChannel { state: "theta".into(), offset: 0.0 }])),
        split_seed: 7,
    })
}

pub fn pitch_scenario(setpoint: f64, t_step: f64, fault: Option<FaultSpec>, seed: u64) -> Scenario {
    Scenario {
        plant: PlantConfig::Pitch(PitchParams::nominal()),
        controller: ControllerConfig::Pid {
            gains: PITCH_GAINS,
            schedule: vec![SetpointStep { t: t_step, value: setpoint }],
        },
        fault,
        horizon: PITCH_HORIZON,
        tau: 0.01,
        seed,
        noise_std: 0.002,
        initial_state: None,
        meals: Vec::new(),
        integrator: Integrator::Euler,
    }
}

/// Setpoints in `[0.1, 0.8]` rad stepped at a time in `[0, 10]` s.
pub fn pitch_clean(n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| {
            let sp = rng.gen_range(0.1..=0.8);
            let t = rng.gen_range(0.0..=10.0);
            pitch_scenario(sp, t, None, i)
        })
        .collect()
}

/// (setpoint rad, step time s, AoA offset rad, fault onset s).
pub const PITCH_ROWS: [(f64, f64, f64, f64); 10] = [
    (0.2, 0.0, 0.6, 5.0),
    (0.5, 5.0, 0.2, 7.0),
    (0.4, 2.0, 0.4, 10.0),
    (0.8, 5.0, 0.4, 5.0),
    (0.1, 5.0, 0.6, 5.0),
    (0.1, 7.0, 0.6, 5.0),
    (0.1, 9.0, 0.7, 2.0),
    (0.4, 9.0, 0.9, 2.0),
    (0.1, 10.0, 0.6, 10.0),
    (0.3, 1.0, 0.3, 10.0),
];

pub const PITCH_NOISE_RATE: f64 = 0.22;

pub fn pitch_faults() -> Vec<FaultCase> {
    PITCH_ROWS
        .iter()
        .enumerate()
        .map(|(j, &(sp, t, mag, onset))| {
            let fault = FaultSpec::AoAError { magnitude_rad: mag, onset_s: onset, noise_rate: PITCH_NOISE_RATE };
            FaultCase {
                label: format!("SP {sp} @ {t} s, AoA {mag} rad @ {onset} s"),
                scenario: pitch_scenario(sp, t, Some(fault), 100 + j as u64),
            }
        })
        .collect()
}

pub fn run_pitch_table() -> Result<CaseReport> {
    run_case(&pitch_setup()?, &pitch_clean(20, 5), &pitch_faults())
}

// ---- emergency braking -------------------------------------------------------

pub fn brake_setup() -> Result<CaseSetup> {
    let p = BrakeParams::default();
    let gain = crate::cases::plants::brake_lqr_gain(&p, &LqrWeights::nominal(), 0.1)?;
    let mut mining = MiningConfig::new(0.1, 0.1);
    mining.psi = 0.02;
    mining.init = InitPolicy::Anchor { jitter: 0.05 };
    mining.max_epochs = 500;
    Ok(CaseSetup {
        name: "brake".into(),
        template: crate::cases::plants::brake_template(&p, &gain)?,
        mining,
        settings: CalibrationSettings::default(),
        safety: None,
        split_seed: 7,
    })
}

pub fn brake_scenario(v0: f64, s0: f64, fault: Option<FaultSpec>, seed: u64) -> Scenario {
    Scenario {
        plant: PlantConfig::Brake(BrakeParams::default()),
        controller: ControllerConfig::Lqr { gains: LqrWeights::nominal() },
        fault,
        horizon: 30.0,
        tau: 0.1,
        seed,
        noise_std: 0.01,
        initial_state: Some(vec![0.0, v0, s0]),
        meals: Vec::new(),
        integrator: Integrator::Euler,
    }
}

/// Initial speeds `2.5 + U[2, 4]` and positions `-U[15, 25]`.
pub fn brake_initial_conditions(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (2.5 + rng.gen_range(2.0..=4.0), -rng.gen_range(15.0..=25.0))).collect()
}

pub fn run_brake_study() -> Result<CaseReport> {
    let ics = brake_initial_conditions(11, 1);
    let clean: Vec<_> = ics.iter().enumerate().map(|(i, &(v, s))| brake_scenario(v, s, None, i as u64)).collect();
    let faults: Vec<_> = ics
        .iter()
        .enumerate()
        .map(|(i, &(v, s))| FaultCase {
            label: format!("v0 {v:.2}, s0 {s:.2}"),
            scenario: brake_scenario(v, s, Some(FaultSpec::QOverflow { declared_width: 8 }), 50 + i as u64),
        })
        .collect();
    run_case(&brake_setup()?, &clean, &faults)
}
