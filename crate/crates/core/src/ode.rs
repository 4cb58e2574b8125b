//! Linear time-invariant systems `dx/dt = A x + B u + c` and their trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An LTI system with diagonal input gain and diagonal 0/1 observability mask.
///
/// `A` is stored row-major. Input channel `i` drives state `i` through `B[i][i]`,
/// so there are always exactly `n` input channels; unused channels have a zero
/// gain and usually no name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemJson", into = "SystemJson")]
pub struct LinearOdeSystem {
    a: Vec<f64>,
    b_diag: Vec<f64>,
    beta_diag: Vec<bool>,
    affine_offset: Vec<f64>,
    state_names: Vec<String>,
    input_names: Vec<Option<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemJson {
    n: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B_diag")]
    b_diag: Vec<f64>,
    beta_diag: Vec<u8>,
    #[serde(default)]
    affine_offset: Option<Vec<f64>>,
    state_names: Vec<String>,
    #[serde(default)]
    input_names: Option<Vec<Option<String>>>,
    // Template extensions, parsed by `ModelTemplate`; accepted here so a
    // template file is also a valid system file.
    #[serde(default, skip_serializing, rename = "learnable")]
    _learnable: Option<serde_json::Value>,
    #[serde(default, skip_serializing, rename = "basal_state")]
    _basal_state: Option<serde_json::Value>,
}

impl TryFrom<SystemJson> for LinearOdeSystem {
    type Error = Error;

    fn try_from(j: SystemJson) -> Result<Self> {
        let n = j.n;
        let beta = j
            .beta_diag
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!("beta_diag entries must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let sys = LinearOdeSystem::new(
            j.state_names,
            j.input_names.unwrap_or_else(|| vec![None; n]),
            j.a,
            j.b_diag,
            beta,
            j.affine_offset.unwrap_or_else(|| vec![0.0; n]),
        )?;
        if sys.n() != n {
            return Err(Error::LengthMismatch { what: "state_names", expected: n, found: sys.n() });
        }
        Ok(sys)
    }
}

impl From<LinearOdeSystem> for SystemJson {
    fn from(s: LinearOdeSystem) -> Self {
        SystemJson {
            n: s.n(),
            beta_diag: s.beta_diag.iter().map(|&b| b as u8).collect(),
            a: s.a,
            b_diag: s.b_diag,
            affine_offset: Some(s.affine_offset),
            state_names: s.state_names,
            input_names: Some(s.input_names),
            _learnable: None,
            _basal_state: None,
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, expected, found })
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::invalid(format!("{what}[{i}] is not finite"))),
    }
}

impl LinearOdeSystem {
    pub fn new(
        state_names: Vec<String>,
        input_names: Vec<Option<String>>,
        a: Vec<f64>,
        b_diag: Vec<f64>,
        beta_diag: Vec<bool>,
        affine_offset: Vec<f64>,
    ) -> Result<Self> {
        let n = state_names.len();
        if n == 0 {
            return Err(Error::invalid("a system needs at least one state"));
        }
        check_len("A", n * n, a.len())?;
        check_len("B_diag", n, b_diag.len())?;
        check_len("beta_diag", n, beta_diag.len())?;
        check_len("affine_offset", n, affine_offset.len())?;
        check_len("input_names", n, input_names.len())?;
        check_finite("A", &a)?;
        check_finite("B_diag", &b_diag)?;
        check_finite("affine_offset", &affine_offset)?;
        let mut seen = std::collections::HashSet::new();
        for name in state_names.iter().chain(input_names.iter().flatten()) {
            if name.is_empty() || name.contains(',') {
                return Err(Error::invalid(format!("bad channel name {name:?}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name {name:?}")));
            }
        }
        Ok(Self { a, b_diag, beta_diag, affine_offset, state_names, input_names })
    }

    /// System with all-zero coefficients, fully observable, inputs named `u0..`.
    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(
            (0..n).map(|i| format!("x{i}")).collect(),
            (0..n).map(|i| Some(format!("u{i}"))).collect(),
            vec![0.0; n * n],
            vec![0.0; n],
            vec![true; n],
            vec![0.0; n],
        )
    }

    pub fn n(&self) -> usize {
        self.state_names.len()
    }

    pub fn a(&self, row: usize, col: usize) -> f64 {
        self.a[row * self.n() + col]
    }

    pub fn a_matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn b_diag(&self) -> &[f64] {
        &self.b_diag
    }

    pub fn beta_diag(&self) -> &[bool] {
        &self.beta_diag
    }

    pub fn affine_offset(&self) -> &[f64] {
        &self.affine_offset
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn input_names(&self) -> &[Option<String>] {
        &self.input_names
    }

    pub fn observable_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.beta_diag[i]).collect()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    pub fn set_a(&mut self, row: usize, col: usize, v: f64) -> Result<()> {
        let n = self.n();
        if row >= n || col >= n {
            return Err(Error::OutOfRange { index: row.max(col), len: n });
        }
        check_finite("A", &[v])?;
        self.a[row * n + col] = v;
        Ok(())
    }

    pub fn set_b(&mut self, i: usize, v: f64) -> Result<()> {
        let n = self.n();
        if i >= n {
            return Err(Error::OutOfRange { index: i, len: n });
        }
        check_finite("B_diag", &[v])?;
        self.b_diag[i] = v;
        Ok(())
    }

    pub fn set_offset(&mut self, i: usize, v: f64) -> Result<()> {
        let n = self.n();
        if i >= n {
            return Err(Error::OutOfRange { index: i, len: n });
        }
        check_finite("affine_offset", &[v])?;
        self.affine_offset[i] = v;
        Ok(())
    }

    pub fn set_beta(&mut self, beta: Vec<bool>) -> Result<()> {
        check_len("beta_diag", self.n(), beta.len())?;
        self.beta_diag = beta;
        Ok(())
    }

    /// `A x + B u + c` written into `out`.
    pub fn derivative(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let row = &self.a[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            out[i] = acc + self.b_diag[i] * u[i] + self.affine_offset[i];
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One Euler step, shared by the simulator and the recurrent estimator so the two
/// agree to the last bit.
#[inline]
pub(crate) fn euler_step(sys: &LinearOdeSystem, x: &[f64], u: &[f64], tau: f64, out: &mut [f64]) {
    sys.derivative(x, u, out);
    for i in 0..out.len() {
        out[i] = x[i] + tau * out[i];
    }
}

/// Sampled input channels, one per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    tau: f64,
    channels: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
}

impl InputSignal {
    pub fn new(tau: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("sample period must be positive, got {tau}")));
        }
        if channels.is_empty() {
            return Err(Error::invalid("an input signal needs at least one channel"));
        }
        let len = channels[0].len();
        for (i, c) in channels.iter().enumerate() {
            check_len("input channel", len, c.len())?;
            check_finite(&format!("input channel {i}"), c)?;
        }
        Ok(Self { tau, channels, theta: None })
    }

    pub fn zeros(tau: f64, n: usize, len: usize) -> Result<Self> {
        Self::new(tau, vec![vec![0.0; len]; n])
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn theta(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    pub fn sample(&self, k: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c[k];
        }
    }

    /// Samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::OutOfRange { index: start + len, len: self.len() });
        }
        Ok(Self {
            tau: self.tau,
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
            theta: self.theta.clone(),
        })
    }
}

/// Sampled state channels starting at `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    tau: f64,
    t0: f64,
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(tau: f64, t0: f64, states: Vec<Vec<f64>>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("sample period must be positive, got {tau}")));
        }
        if states.is_empty() {
            return Err(Error::invalid("a trajectory needs at least one channel"));
        }
        let len = states[0].len();
        for (i, c) in states.iter().enumerate() {
            check_len("state channel", len, c.len())?;
            check_finite(&format!("state channel {i}"), c)?;
        }
        Ok(Self { tau, t0, states })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn len(&self) -> usize {
        self.states[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn channels_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.states
    }

    pub fn state_at(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|c| c[k]).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.tau * (self.len().saturating_sub(1)) as f64
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::OutOfRange { index: start + len, len: self.len() });
        }
        Ok(Self {
            tau: self.tau,
            t0: self.t0 + self.tau * start as f64,
            states: self.states.iter().map(|c| c[start..start + len].to_vec()).collect(),
        })
    }
}

/// A trajectory together with the inputs that drove it. `input` must cover every
/// transition, i.e. at least `trajectory.len() - 1` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub input: InputSignal,
    pub trajectory: Trajectory,
}

impl Segment {
    pub fn new(input: InputSignal, trajectory: Trajectory) -> Result<Self> {
        if (input.tau() - trajectory.tau()).abs() > 1e-12 * input.tau().abs().max(1.0) {
            return Err(Error::invalid(format!(
                "input and trajectory sample periods differ ({} vs {})",
                input.tau(),
                trajectory.tau()
            )));
        }
        check_len("input channels", trajectory.n(), input.n_channels())?;
        if input.len() + 1 < trajectory.len() {
            return Err(Error::LengthMismatch {
                what: "input samples",
                expected: trajectory.len().saturating_sub(1),
                found: input.len(),
            });
        }
        Ok(Self { input, trajectory })
    }

    pub fn tau(&self) -> f64 {
        self.trajectory.tau()
    }

    /// Number of Euler transitions covered by this segment.
    pub fn steps(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }
}

/// Time-ordered segments of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    segments: Vec<Segment>,
}

impl Trace {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for w in segments.windows(2) {
            let end = w[0].trajectory.end_time();
            let next = w[1].trajectory.t0();
            let tol = 1e-9 * end.abs().max(1.0);
            // consecutive windows either share their boundary sample or abut
            if (next - end).abs() > tol && (next - end - w[0].tau()).abs() > tol {
                return Err(Error::invalid(format!(
                    "segments are not time-contiguous: one ends at {end}, next starts at {next}"
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn single(segment: Segment) -> Self {
        Self { segments: vec![segment] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Cut one long segment into fixed windows of `len` samples every `stride`
    /// samples. A trailing partial window is dropped.
    pub fn windowed(segment: &Segment, len: usize, stride: usize) -> Result<Self> {
        if len < 2 || stride == 0 {
            return Err(Error::invalid(format!("window length must be >= 2 and stride >= 1 (got {len}, {stride})")));
        }
        let total = segment.trajectory.len();
        let mut segments = Vec::new();
        let mut start = 0;
        while start + len <= total {
            segments.push(Segment {
                input: segment.input.slice(start, len - 1)?,
                trajectory: segment.trajectory.slice(start, len)?,
            });
            start += stride;
        }
        Ok(Self { segments })
    }
}

fn check_sim_args(sys: &LinearOdeSystem, u: &InputSignal, x0: &[f64], steps: usize) -> Result<()> {
    check_len("x0", sys.n(), x0.len())?;
    check_len("input channels", sys.n(), u.n_channels())?;
    check_finite("x0", x0)?;
    if u.len() < steps {
        return Err(Error::LengthMismatch { what: "input samples", expected: steps, found: u.len() });
    }
    Ok(())
}

/// Explicit Euler: `x[k+1] = x[k] + tau (A x[k] + B u[k] + c)`, `steps + 1` samples.
pub fn simulate_euler(sys: &LinearOdeSystem, u: &InputSignal, x0: &[f64], steps: usize) -> Result<Trajectory> {
    check_sim_args(sys, u, x0, steps)?;
    let n = sys.n();
    let tau = u.tau();
    let mut states = vec![Vec::with_capacity(steps + 1); n];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut uk = vec![0.0; n];
    for (c, &v) in states.iter_mut().zip(&x) {
        c.push(v);
    }
    for k in 0..steps {
        u.sample(k, &mut uk);
        euler_step(sys, &x, &uk, tau, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        std::mem::swap(&mut x, &mut next);
        for (c, &v) in states.iter_mut().zip(&x) {
            c.push(v);
        }
    }
    Trajectory::new(tau, 0.0, states)
}

/// Classical RK4 with inputs held constant across each sample period.
pub fn simulate_rk4(sys: &LinearOdeSystem, u: &InputSignal, x0: &[f64], steps: usize) -> Result<Trajectory> {
    check_sim_args(sys, u, x0, steps)?;
    let n = sys.n();
    let tau = u.tau();
    let mut states = vec![Vec::with_capacity(steps + 1); n];
    let mut x = x0.to_vec();
    let mut uk = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for (c, &v) in states.iter_mut().zip(&x) {
        c.push(v);
    }
    for k in 0..steps {
        u.sample(k, &mut uk);
        sys.derivative(&x, &uk, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * tau * k1[i];
        }
        sys.derivative(&tmp, &uk, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * tau * k2[i];
        }
        sys.derivative(&tmp, &uk, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + tau * k3[i];
        }
        sys.derivative(&tmp, &uk, &mut k4);
        for i in 0..n {
            x[i] += tau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        for (c, &v) in states.iter_mut().zip(&x) {
            c.push(v);
        }
    }
    Trajectory::new(tau, 0.0, states)
}

/// RK4 on a grid `substeps` times finer than the input's, sampled back on the
/// input grid. Inputs are still held over each original period.
pub fn simulate_rk4_fine(
    sys: &LinearOdeSystem,
    u: &InputSignal,
    x0: &[f64],
    steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    check_sim_args(sys, u, x0, steps)?;
    let fine_channels = u
        .channels()
        .iter()
        .map(|c| c[..steps].iter().flat_map(|&v| std::iter::repeat(v).take(substeps)).collect())
        .collect();
    let fine = InputSignal::new(u.tau() / substeps as f64, fine_channels)?;
    let traj = simulate_rk4(sys, &fine, x0, steps * substeps)?;
    let states = traj.channels().iter().map(|c| c.iter().step_by(substeps).copied().collect()).collect();
    Trajectory::new(u.tau(), 0.0, states)
}

/// RMSE over the observable channels.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory, beta: &[bool]) -> Result<f64> {
    check_len("trajectory samples", a.len(), b.len())?;
    check_len("trajectory channels", a.n(), b.n())?;
    check_len("beta_diag", a.n(), beta.len())?;
    if (a.tau() - b.tau()).abs() > 1e-12 * a.tau().max(1.0) {
        return Err(Error::invalid(format!("sample periods differ ({} vs {})", a.tau(), b.tau())));
    }
    let obs: Vec<usize> = (0..a.n()).filter(|&i| beta[i]).collect();
    if obs.is_empty() {
        return Err(Error::invalid("no observable channels"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &i in &obs {
        for (x, y) in a.channel(i).iter().zip(b.channel(i)) {
            sum += (x - y) * (x - y);
        }
    }
    Ok((sum / (obs.len() * a.len()) as f64).sqrt())
}
