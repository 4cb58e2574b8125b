use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dihrnn::grad::{data_loss, validate_segments, Objective};
use crate::dihrnn::optim::{gradient_descent, lbfgs, OptimizerKind};
use crate::dihrnn::structure::{CoefficientVector, RnnStructure};
use crate::error::{Error, Result};
use crate::ode::{simulate_euler, InputSignal, LinearOdeSystem, Segment, Trace, Trajectory};

/// How learnable coefficients are initialized when no warm start is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPolicy {
    /// Uniform in `[-init_scale, init_scale]`.
    #[default]
    Uniform,
    /// Template value times `1 + jitter * U[-1, 1]`.
    Anchor { jitter: f64 },
}

fn default_psi() -> f64 {
    0.01
}
fn default_xi() -> f64 {
    0.05
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-12
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_window() -> usize {
    60
}
fn default_memory() -> usize {
    10
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    /// Sample period; must match the data.
    pub tau: f64,
    /// Relative error factor for the Euler step bound.
    #[serde(default = "default_psi")]
    pub psi: f64,
    /// Per-coefficient relative error tolerated when comparing to a known truth.
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Mining succeeds when the replay distance is below this.
    pub upsilon: f64,
    /// Step size for plain gradient descent.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Relative loss change that counts as a plateau.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_memory")]
    pub lbfgs_memory: usize,
    /// Weight of the ridge term toward the template values, in scaled
    /// coordinates. Zero disables it.
    #[serde(default)]
    pub prior_weight: f64,
    /// Optimize `omega_j / |template_j|` instead of `omega_j` (for nonzero
    /// template entries), which evens out coefficient magnitudes.
    #[serde(default = "yes")]
    pub scale_by_template: bool,
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_window")]
    pub window_stride: usize,
    /// Start each window from the previous window's result.
    #[serde(default = "yes")]
    pub warm_start: bool,
    /// Proceed (with a recorded warning) when `tau` exceeds the step bound.
    #[serde(default)]
    pub allow_step_override: bool,
}

impl MiningConfig {
    pub fn new(tau: f64, upsilon: f64) -> Self {
        Self {
            tau,
            psi: default_psi(),
            xi: default_xi(),
            upsilon,
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            convergence_tol: default_tol(),
            init_scale: default_init_scale(),
            seed: 0,
            init: InitPolicy::Uniform,
            optimizer: OptimizerKind::Lbfgs,
            lbfgs_memory: default_memory(),
            prior_weight: 0.0,
            scale_by_template: true,
            window_len: default_window(),
            window_stride: default_window(),
            warm_start: true,
            allow_step_override: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tau", self.tau),
            ("psi", self.psi),
            ("xi", self.xi),
            ("upsilon", self.upsilon),
            ("learning_rate", self.learning_rate),
            ("convergence_tol", self.convergence_tol),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("mining.{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_epochs == 0 || self.lbfgs_memory == 0 {
            return Err(Error::invalid("mining.max_epochs and mining.lbfgs_memory must be >= 1"));
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::invalid("mining.prior_weight must be >= 0"));
        }
        if let InitPolicy::Anchor { jitter } = self.init {
            if !(jitter >= 0.0 && jitter.is_finite()) {
                return Err(Error::invalid("mining.init.jitter must be >= 0"));
            }
        }
        if self.window_len < 2 || self.window_stride == 0 {
            return Err(Error::invalid("mining.window_len must be >= 2 and window_stride >= 1"));
        }
        Ok(())
    }
}

/// Largest Euler step with local truncation error within `psi` on every
/// diagonal mode: `min_i sqrt(2 psi) / |a_ii|`, ignoring zero diagonals.
pub fn step_bound(sys: &LinearOdeSystem, psi: f64) -> f64 {
    let num = (2.0 * psi).sqrt();
    (0..sys.n()).map(|i| sys.a(i, i).abs()).filter(|&a| a != 0.0).map(|a| num / a).fold(f64::INFINITY, f64::min)
}

impl RnnStructure {
    pub fn step_bound(&self, omega: &CoefficientVector, psi: f64) -> Result<f64> {
        Ok(step_bound(&self.system_with(omega)?, psi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub trajectory: Trajectory,
    /// Set when the step bound was exceeded and the caller allowed it.
    pub step_warning: Option<String>,
}

fn bound_message(tau: f64, bound: f64, psi: f64) -> String {
    format!("tau = {tau} exceeds the Euler step bound {bound:.6} for psi = {psi}")
}

/// Unroll the estimator for `steps` transitions from `x0`.
pub fn forward_pass(
    structure: &RnnStructure,
    omega: &CoefficientVector,
    u: &InputSignal,
    x0: &[f64],
    steps: usize,
    psi: f64,
    allow_step_override: bool,
) -> Result<ForwardPass> {
    let sys = structure.system_with(omega)?;
    let bound = step_bound(&sys, psi);
    let mut step_warning = None;
    if u.tau() > bound {
        if !allow_step_override {
            return Err(Error::StepBound { tau: u.tau(), bound, psi });
        }
        step_warning = Some(bound_message(u.tau(), bound, psi));
    }
    let trajectory = simulate_euler(&sys, u, x0, steps)?;
    Ok(ForwardPass { trajectory, step_warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean-squared observed error (without the ridge term).
    pub loss: f64,
    pub epochs: usize,
    /// Observed-channel RMSE of the replay, pooled over windows.
    pub distance: f64,
    /// Whether the optimizer reached its plateau criterion.
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedCoefficients {
    pub omega: CoefficientVector,
    pub report: FitReport,
}

fn initial_omega(structure: &RnnStructure, cfg: &MiningConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let anchor = structure.anchor();
    match cfg.init {
        InitPolicy::Uniform => {
            (0..structure.n_params()).map(|_| rng.gen_range(-cfg.init_scale..=cfg.init_scale)).collect()
        }
        InitPolicy::Anchor { jitter } => {
            anchor.values().iter().map(|&a| a * (1.0 + jitter * rng.gen_range(-1.0..=1.0))).collect()
        }
    }
}

/// Replay distance over all windows (pooled observed-channel RMSE).
pub(crate) fn replay_distance(structure: &RnnStructure, sys: &LinearOdeSystem, segments: &[Segment]) -> Result<f64> {
    let obs = sys.observable_indices();
    let mut sse = 0.0;
    let mut count = 0usize;
    for seg in segments {
        let x0 = structure.initial_state(seg);
        let sim = simulate_euler(sys, &seg.input, &x0, seg.steps())?;
        for &i in &obs {
            for (a, b) in sim.channel(i).iter().zip(seg.trajectory.channel(i)) {
                sse += (a - b) * (a - b);
            }
        }
        count += obs.len() * seg.trajectory.len();
    }
    Ok((sse / count as f64).sqrt())
}

/// Fit one coefficient vector jointly to all `segments`, optionally starting
/// from `start`.
pub fn mine_segments(
    segments: &[Segment],
    structure: &RnnStructure,
    cfg: &MiningConfig,
    start: Option<&CoefficientVector>,
) -> Result<MinedCoefficients> {
    cfg.validate()?;
    validate_segments(structure, segments)?;
    let tau = segments[0].tau();
    if (tau - cfg.tau).abs() > 1e-9 * cfg.tau {
        return Err(Error::invalid(format!("data sample period {tau} differs from mining.tau {}", cfg.tau)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anchor = structure.anchor();
    let scale: Vec<f64> =
        anchor.values().iter().map(|&a| if cfg.scale_by_template && a != 0.0 { a.abs() } else { 1.0 }).collect();
    let omega0 = match start {
        Some(w) => {
            structure.check(w)?;
            w.values().to_vec()
        }
        None => initial_omega(structure, cfg, &mut rng),
    };
    let omega0 = structure.coefficients(omega0)?;

    let mut warnings = Vec::new();
    let bound = structure.step_bound(&omega0, cfg.psi)?;
    if tau > bound {
        if !cfg.allow_step_override {
            return Err(Error::StepBound { tau, bound, psi: cfg.psi });
        }
        warnings.push(bound_message(tau, bound, cfg.psi));
    }

    let obj = Objective {
        structure,
        segments,
        prior_center: anchor.values().iter().zip(&scale).map(|(a, s)| a / s).collect(),
        scale,
        prior_weight: cfg.prior_weight,
    };
    let theta0: Vec<f64> = omega0.values().iter().zip(&obj.scale).map(|(w, s)| w / s).collect();
    let out = match cfg.optimizer {
        OptimizerKind::Lbfgs => {
            lbfgs(|t, g| obj.eval(t, g), theta0, cfg.max_epochs, cfg.convergence_tol, cfg.lbfgs_memory)
        }
        OptimizerKind::GradientDescent => {
            gradient_descent(|t, g| obj.eval(t, g), theta0, cfg.learning_rate, cfg.max_epochs, cfg.convergence_tol)
        }
    };
    if !out.f.is_finite() {
        // the starting point itself diverges; report it with the step index
        let sys = structure.system_with(&omega0)?;
        data_loss(structure, &sys, segments, None)?;
        return Err(Error::Divergence { step: 0 });
    }

    let omega = structure.coefficients(obj.omega(&out.x))?;
    let sys = structure.system_with(&omega)?;
    let loss = data_loss(structure, &sys, segments, None)?;
    let distance = replay_distance(structure, &sys, segments)?;
    let final_bound = step_bound(&sys, cfg.psi);
    if tau > final_bound {
        warnings.push(format!("mined coefficients: {}", bound_message(tau, final_bound, cfg.psi)));
    }
    let mined = MinedCoefficients {
        omega,
        report: FitReport { loss, epochs: out.iters, distance, converged: out.converged, warnings },
    };
    if distance < cfg.upsilon {
        Ok(mined)
    } else {
        Err(Error::NonConvergence { best: Box::new(mined), upsilon: cfg.upsilon })
    }
}

/// Fit coefficients to a single (input, trajectory) window.
pub fn mine_coefficients(segment: &Segment, structure: &RnnStructure, cfg: &MiningConfig) -> Result<MinedCoefficients> {
    mine_segments(std::slice::from_ref(segment), structure, cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCoefficients {
    /// Sample index of the window start, relative to the first window.
    pub start: usize,
    pub len: usize,
    pub omega: CoefficientVector,
    pub loss: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSequence {
    pub structure_hash: String,
    pub windows: Vec<WindowCoefficients>,
}

impl CoefficientSequence {
    pub fn omegas(&self) -> Vec<CoefficientVector> {
        self.windows.iter().map(|w| w.omega.clone()).collect()
    }
}

fn window_start(trace: &Trace, seg: &Segment) -> usize {
    let t0 = trace.segments()[0].trajectory.t0();
    ((seg.trajectory.t0() - t0) / seg.tau()).round().max(0.0) as usize
}

/// Mine every window, returning per-window outcomes instead of stopping at the
/// first failure. With warm starts, a failed window still seeds the next one
/// with its best estimate.
pub fn mine_windows(trace: &Trace, structure: &RnnStructure, cfg: &MiningConfig) -> Vec<Result<MinedCoefficients>> {
    let segs = trace.segments();
    if cfg.warm_start {
        let mut out = Vec::with_capacity(segs.len());
        let mut prev: Option<CoefficientVector> = None;
        for seg in segs {
            let r = mine_segments(std::slice::from_ref(seg), structure, cfg, prev.as_ref());
            match &r {
                Ok(m) => prev = Some(m.omega.clone()),
                Err(Error::NonConvergence { best, .. }) => prev = Some(best.omega.clone()),
                Err(_) => {}
            }
            out.push(r);
        }
        out
    } else {
        segs.par_iter()
            .enumerate()
            .map(|(i, seg)| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(i as u64);
                mine_segments(std::slice::from_ref(seg), structure, &c, None)
            })
            .collect()
    }
}

/// Map a trace to one coefficient vector per segment.
pub fn continuous_mine(trace: &Trace, structure: &RnnStructure, cfg: &MiningConfig) -> Result<CoefficientSequence> {
    if trace.is_empty() {
        return Err(Error::invalid("trace has no segments"));
    }
    let results = mine_windows(trace, structure, cfg);
    let mut windows = Vec::with_capacity(results.len());
    for (index, (r, seg)) in results.into_iter().zip(trace.segments()).enumerate() {
        let m = r.map_err(|e| Error::Window { index, source: Box::new(e) })?;
        windows.push(WindowCoefficients {
            start: window_start(trace, seg),
            len: seg.trajectory.len(),
            omega: m.omega,
            loss: m.report.loss,
            distance: m.report.distance,
        });
    }
    Ok(CoefficientSequence { structure_hash: structure.hash().to_string(), windows })
}
