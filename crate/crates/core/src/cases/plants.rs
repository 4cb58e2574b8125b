//! The three case-study plants as linear systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cases::control::dlqr;
use crate::dihrnn::ModelTemplate;
use crate::error::{Error, Result};
use crate::ode::LinearOdeSystem;

fn basal_glucose() -> f64 {
    110.0
}
fn meal_k() -> f64 {
    0.03
}

/// Linearized glucose-insulin model. `gb` is signed: it is the coupling from
/// remote insulin action to glucose, so it is negative for insulin to lower
/// glucose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmmParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub n: f64,
    #[serde(rename = "VoI")]
    pub voi: f64,
    #[serde(rename = "Gb")]
    pub gb: f64,
    #[serde(default)]
    pub i_b: f64,
    /// Absolute glucose (mg/dl) at the operating point; states are deviations.
    #[serde(default = "basal_glucose")]
    pub basal_glucose: f64,
    /// Meal absorption rate (1/min).
    #[serde(default = "meal_k")]
    pub meal_k: f64,
}

impl BmmParams {
    /// Nominal values used to generate the glucose data sets.
    pub fn nominal() -> Self {
        Self {
            p1: 0.098,
            p2: 0.035,
            p3: 0.028,
            p4: 0.05,
            n: 0.1406,
            voi: 199.6,
            gb: -80.0,
            i_b: 0.0,
            basal_glucose: basal_glucose(),
            meal_k: meal_k(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voi > 0.0) {
            return Err(Error::invalid("VoI must be positive"));
        }
        if !(self.meal_k > 0.0) {
            return Err(Error::invalid("meal_k must be positive"));
        }
        Ok(())
    }

    /// Meal appearance rate (mg/min) at time `t` for a meal of `grams` at `t_meal`.
    pub fn meal_rate(&self, grams: f64, t_meal: f64, t: f64) -> f64 {
        if t + 1e-9 < t_meal {
            0.0
        } else {
            grams * 1000.0 * self.meal_k * (-self.meal_k * (t - t_meal)).exp()
        }
    }
}

/// States `(i, i_s, G)` as deviations from basal; only `G` is observed.
pub fn bmm_system(p: &BmmParams) -> Result<LinearOdeSystem> {
    p.validate()?;
    #[rustfmt::skip]
    let a = vec![
        -p.n, 0.0,   0.0,
        p.p2, -p.p1, 0.0,
        0.0,  p.gb,  -p.p3,
    ];
    LinearOdeSystem::new(
        vec!["i".into(), "i_s".into(), "G".into()],
        vec![Some("u_insulin".into()), None, Some("u_meal".into())],
        a,
        vec![p.p4, 0.0, 1.0 / p.voi],
        vec![false, false, true],
        vec![0.0, -p.p2 * p.i_b, 0.0],
    )
}

/// Mining template for the glucose model: all nonzero coefficients learnable,
/// hidden insulin states start at their zero-input equilibrium.
pub fn bmm_template(p: &BmmParams) -> Result<ModelTemplate> {
    let sys = bmm_system(p)?;
    ModelTemplate::from_nonzero(sys).with_basal_state(vec![0.0, -p.p2 * p.i_b / p.p1, 0.0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchParams {
    pub c_aa: f64,
    pub c_aq: f64,
    pub c_ad: f64,
    pub c_qa: f64,
    pub c_qq: f64,
    pub c_qd: f64,
    pub c_tq: f64,
}

impl PitchParams {
    pub fn nominal() -> Self {
        Self { c_aa: -0.28, c_aq: 55.0, c_ad: 0.25, c_qa: -0.0127, c_qq: -0.43, c_qd: 0.022, c_tq: 62.0 }
    }
}

/// States `(alpha, q, theta)`. The elevator command drives both `alpha` and
/// `q`, so it is logged on two input channels to keep `B` diagonal. The
/// sensed outputs are `alpha` and `theta`.
pub fn pitch_system(p: &PitchParams) -> Result<LinearOdeSystem> {
    #[rustfmt::skip]
    let a = vec![
        p.c_aa, p.c_aq, 0.0,
        p.c_qa, p.c_qq, 0.0,
        0.0,    p.c_tq, 0.0,
    ];
    LinearOdeSystem::new(
        vec!["alpha".into(), "q".into(), "theta".into()],
        vec![Some("delta_alpha".into()), Some("delta_q".into()), None],
        a,
        vec![p.c_ad, p.c_qd, 0.0],
        vec![true, false, true],
        vec![0.0; 3],
    )
}

pub fn pitch_template(p: &PitchParams) -> Result<ModelTemplate> {
    Ok(ModelTemplate::from_nonzero(pitch_system(p)?))
}

fn d_ks() -> f64 {
    -0.01
}
fn d_kc() -> f64 {
    0.737
}
fn d_kv() -> f64 {
    -0.3
}
fn d_ka() -> f64 {
    -0.5
}
fn d_vg() -> f64 {
    0.1
}
fn d_sd() -> f64 {
    -2.5
}

/// Car kinematics: `a' = k_a a + k_v v + k_s s + k_c + u`, `v' = v_gain a`,
/// `s' = v + s_drift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrakeParams {
    #[serde(default = "d_ka")]
    pub k_a: f64,
    #[serde(default = "d_kv")]
    pub k_v: f64,
    #[serde(default = "d_ks")]
    pub k_s: f64,
    #[serde(default = "d_kc")]
    pub k_c: f64,
    #[serde(default = "d_vg")]
    pub v_gain: f64,
    #[serde(default = "d_sd")]
    pub s_drift: f64,
}

impl Default for BrakeParams {
    fn default() -> Self {
        Self { k_a: d_ka(), k_v: d_kv(), k_s: d_ks(), k_c: d_kc(), v_gain: d_vg(), s_drift: d_sd() }
    }
}

impl BrakeParams {
    /// Rest point `(a, v, s) = (0, -s_drift, 0)` and the input holding it.
    pub fn equilibrium(&self) -> (Vec<f64>, f64) {
        let v = -self.s_drift;
        (vec![0.0, v, 0.0], -(self.k_c + self.k_v * v))
    }
}

/// States `(a_x, v_x, s_x)`, all sensed; constant terms live in the offset.
pub fn brake_system(p: &BrakeParams) -> Result<LinearOdeSystem> {
    #[rustfmt::skip]
    let a = vec![
        p.k_a,    p.k_v, p.k_s,
        p.v_gain, 0.0,   0.0,
        0.0,      1.0,   0.0,
    ];
    LinearOdeSystem::new(
        vec!["a_x".into(), "v_x".into(), "s_x".into()],
        vec![Some("u_brake".into()), None, None],
        a,
        vec![1.0, 0.0, 0.0],
        vec![true, true, true],
        vec![p.k_c, 0.0, p.s_drift],
    )
}

fn default_q_order() -> Vec<String> {
    vec!["v_x".into(), "s_x".into(), "a_x".into()]
}

/// LQR weights. `q_diag[k]` weighs the state named `q_order[k]`; the first
/// entry is the one exposed to the overflow fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q_diag: Vec<f64>,
    #[serde(default = "default_q_order")]
    pub q_order: Vec<String>,
    pub r: f64,
}

impl LqrWeights {
    pub fn nominal() -> Self {
        Self { q_diag: vec![10_000.0, 100.0, 1.0], q_order: default_q_order(), r: 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_diag.len() != self.q_order.len() {
            return Err(Error::invalid("q_diag and q_order lengths differ"));
        }
        if self.q_diag.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::invalid("LQR state weights must be >= 0"));
        }
        if !(self.r > 0.0) {
            return Err(Error::invalid("LQR input weight must be positive"));
        }
        Ok(())
    }
}

/// State-feedback gain for the Euler-discretized braking plant at period `tau`.
pub fn brake_lqr_gain(p: &BrakeParams, w: &LqrWeights, tau: f64) -> Result<Vec<f64>> {
    w.validate()?;
    let sys = brake_system(p)?;
    let n = sys.n();
    let mut q = DMatrix::zeros(n, n);
    for (name, &qv) in w.q_order.iter().zip(&w.q_diag) {
        let i = sys.state_index(name).ok_or_else(|| Error::invalid(format!("unknown state `{name}` in q_order")))?;
        q[(i, i)] = qv * tau;
    }
    let ad = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + tau * sys.a(i, j));
    let bd = DMatrix::from_fn(n, 1, |i, _| tau * sys.b_diag()[i]);
    let r = DMatrix::from_element(1, 1, w.r * tau);
    let k = dlqr(&ad, &bd, &q, &r)?;
    Ok((0..n).map(|j| k[(0, j)]).collect())
}

/// Closed loop under `u = -K (x - x*) + u*`, as an input-free system.
pub fn brake_closed_loop(p: &BrakeParams, gain: &[f64]) -> Result<LinearOdeSystem> {
    let open = brake_system(p)?;
    let (xs, us) = p.equilibrium();
    let mut sys = open.clone();
    let kx: f64 = gain.iter().zip(&xs).map(|(k, x)| k * x).sum();
    for j in 0..3 {
        sys.set_a(0, j, open.a(0, j) - open.b_diag()[0] * gain[j])?;
    }
    sys.set_offset(0, open.affine_offset()[0] + open.b_diag()[0] * (kx + us))?;
    sys.set_b(0, 0.0)?;
    LinearOdeSystem::new(
        sys.state_names().to_vec(),
        vec![None; 3],
        sys.a_matrix().to_vec(),
        sys.b_diag().to_vec(),
        sys.beta_diag().to_vec(),
        sys.affine_offset().to_vec(),
    )
}

/// Template for mining the braking loop: the acceleration row and its offset
/// are learnable; the kinematic rows are known.
pub fn brake_template(p: &BrakeParams, nominal_gain: &[f64]) -> Result<ModelTemplate> {
    let sys = brake_closed_loop(p, nominal_gain)?;
    let mut t = ModelTemplate::from_nonzero(sys);
    t.learn_a = vec![true, true, true, false, false, false, false, false, false];
    t.learn_b = vec![false; 3];
    t.learn_offset = vec![true, false, false];
    Ok(t)
}
