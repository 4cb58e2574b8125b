//! Training loss of the unrolled recurrence and its exact gradient.
//!
//! For one window with `K` transitions and observed channel set `O`:
//!
//! ```text
//! L = 1/(K |O|) * sum_{k=1..K} sum_{i in O} (x_i[k] - y_i[k])^2
//! ```
//!
//! averaged over windows. The adjoint runs backwards with
//! `g[k] = dL/dx[k] + (I + tau A)^T g[k+1]`, and each transition `k -> k+1`
//! contributes `tau g[k+1]_i x_j[k]` to `dL/dA_ij`, `tau g[k+1]_i u_i[k]` to
//! `dL/dB_ii` and `tau g[k+1]_i` to `dL/dc_i`.

use crate::dihrnn::structure::{CoefficientVector, ParamSlot, RnnStructure};
use crate::error::{Error, Result};
use crate::ode::{euler_step, LinearOdeSystem, Segment};

pub(crate) fn validate_segments(structure: &RnnStructure, segments: &[Segment]) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to mine"));
    }
    let n = structure.n();
    if structure.system().observable_indices().is_empty() {
        return Err(Error::invalid("the template has no observable states"));
    }
    let tau = segments[0].tau();
    for (i, s) in segments.iter().enumerate() {
        if s.trajectory.n() != n {
            return Err(Error::LengthMismatch { what: "segment channels", expected: n, found: s.trajectory.n() });
        }
        if s.steps() == 0 {
            return Err(Error::invalid(format!("segment {i} has fewer than two samples")));
        }
        if (s.tau() - tau).abs() > 1e-12 * tau.max(1.0) {
            return Err(Error::invalid("segments have different sample periods"));
        }
    }
    Ok(())
}

/// Sum of squared observed errors and sample count for one window, plus the
/// gradient contribution (unnormalized) when `grad` is given.
fn segment_pass(
    structure: &RnnStructure,
    sys: &LinearOdeSystem,
    seg: &Segment,
    weight: f64,
    grad: Option<&mut [f64]>,
    xs: &mut Vec<f64>,
) -> Result<f64> {
    let n = sys.n();
    let steps = seg.steps();
    let tau = seg.tau();
    let obs = sys.beta_diag();
    let y = &seg.trajectory;

    xs.clear();
    xs.resize((steps + 1) * n, 0.0);
    let x0 = structure.initial_state(seg);
    xs[..n].copy_from_slice(&x0);
    let mut uk = vec![0.0; n];
    let mut sse = 0.0;
    for k in 0..steps {
        seg.input.sample(k, &mut uk);
        let (done, rest) = xs.split_at_mut((k + 1) * n);
        let next = &mut rest[..n];
        euler_step(sys, &done[k * n..], &uk, tau, next);
        for i in 0..n {
            if !next[i].is_finite() {
                return Err(Error::Divergence { step: k + 1 });
            }
            if obs[i] {
                let e = next[i] - y.channel(i)[k + 1];
                sse += e * e;
            }
        }
    }

    let Some(grad) = grad else { return Ok(sse * weight) };

    // adjoint sweep
    let mut g = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    for k in (0..steps).rev() {
        // g holds dL/dx[k+1] including the propagated term
        for i in 0..n {
            let direct = if obs[i] { 2.0 * weight * (xs[(k + 1) * n + i] - y.channel(i)[k + 1]) } else { 0.0 };
            g[i] += direct;
        }
        let xk = &xs[k * n..(k + 1) * n];
        for (p, slot) in structure.slots().iter().enumerate() {
            grad[p] += match *slot {
                ParamSlot::A { row, col } => tau * g[row] * xk[col],
                ParamSlot::B { row } => tau * g[row] * seg.input.channel(row)[k],
                ParamSlot::Offset { row } => tau * g[row],
            };
        }
        // g[k] (without its direct term) = (I + tau A)^T g[k+1]
        for j in 0..n {
            let mut acc = g[j];
            for i in 0..n {
                acc += tau * sys.a(i, j) * g[i];
            }
            g_prev[j] = acc;
        }
        std::mem::swap(&mut g, &mut g_prev);
    }
    Ok(sse * weight)
}

/// Mean-squared observed error over `segments` and its gradient with respect to
/// the coefficients, in canonical order.
pub fn loss_and_gradient(
    structure: &RnnStructure,
    segments: &[Segment],
    omega: &CoefficientVector,
) -> Result<(f64, Vec<f64>)> {
    validate_segments(structure, segments)?;
    let sys = structure.system_with(omega)?;
    let mut grad = vec![0.0; structure.n_params()];
    let loss = data_loss(structure, &sys, segments, Some(&mut grad))?;
    Ok((loss, grad))
}

pub(crate) fn data_loss(
    structure: &RnnStructure,
    sys: &LinearOdeSystem,
    segments: &[Segment],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let m = sys.observable_indices().len() as f64;
    let s = segments.len() as f64;
    let mut xs = Vec::new();
    let mut total = 0.0;
    for seg in segments {
        let weight = 1.0 / (seg.steps() as f64 * m * s);
        total += segment_pass(structure, sys, seg, weight, grad.as_deref_mut(), &mut xs)?;
    }
    Ok(total)
}

/// Loss in scaled coordinates `theta_j = omega_j / scale_j`, with an optional
/// ridge term pulling `theta` toward `prior_center`.
pub(crate) struct Objective<'a> {
    pub structure: &'a RnnStructure,
    pub segments: &'a [Segment],
    pub scale: Vec<f64>,
    pub prior_weight: f64,
    pub prior_center: Vec<f64>,
}

impl Objective<'_> {
    pub fn omega(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.scale).map(|(t, s)| t * s).collect()
    }

    /// Returns `+inf` for parameters whose unroll diverges so line searches back off.
    pub fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Ok(omega) = self.structure.coefficients(self.omega(theta)) else { return f64::INFINITY };
        let Ok(sys) = self.structure.system_with(&omega) else { return f64::INFINITY };
        let loss = match data_loss(self.structure, &sys, self.segments, Some(grad)) {
            Ok(l) if l.is_finite() => l,
            _ => return f64::INFINITY,
        };
        let mut penalty = 0.0;
        for j in 0..theta.len() {
            grad[j] *= self.scale[j];
            if self.prior_weight > 0.0 {
                let d = theta[j] - self.prior_center[j];
                penalty += self.prior_weight * d * d;
                grad[j] += 2.0 * self.prior_weight * d;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return f64::INFINITY;
        }
        loss + penalty
    }
}
