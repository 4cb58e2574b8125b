//! Conventional controllers used to close the loop around the plants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Piecewise-constant reference: `value` from time `t` on (0 before the first step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointStep {
    pub t: f64,
    pub value: f64,
}

pub fn setpoint_at(schedule: &[SetpointStep], t: f64) -> f64 {
    schedule.iter().rfind(|s| t >= s.t - 1e-12).map_or(0.0, |s| s.value)
}

/// Discrete PID with the derivative taken on the measurement, so setpoint
/// steps do not kick the actuator.
#[derive(Debug, Clone)]
pub struct Pid {
    gains: PidGains,
    tau: f64,
    integral: f64,
    prev_meas: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains, tau: f64) -> Self {
        Self { gains, tau, integral: 0.0, prev_meas: None }
    }

    pub fn step(&mut self, setpoint: f64, measured: f64) -> f64 {
        let e = setpoint - measured;
        self.integral += e * self.tau;
        let d = match self.prev_meas {
            Some(p) => -(measured - p) / self.tau,
            None => 0.0,
        };
        self.prev_meas = Some(measured);
        self.gains.kp * e + self.gains.ki * self.integral + self.gains.kd * d
    }
}

/// Infinite-horizon discrete LQR gain `K` (for `u = -K x`) by iterating the
/// Riccati recursion to a fixed point.
pub fn dlqr(ad: &DMatrix<f64>, bd: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ad.nrows();
    let m = bd.ncols();
    if ad.ncols() != n || bd.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::invalid("dlqr: inconsistent matrix shapes"));
    }
    let mut p = q.clone();
    for _ in 0..200_000 {
        let btp = bd.transpose() * &p;
        let s = r + &btp * bd;
        let k = s.clone().lu().solve(&(&btp * ad)).ok_or_else(|| Error::invalid("dlqr: singular R + B'PB"))?;
        let next = q + ad.transpose() * &p * ad - ad.transpose() * &p * bd * &k;
        let next = 0.5 * (&next + next.transpose());
        let diff = (&next - &p).abs().max();
        let scale = next.abs().max().max(1.0);
        p = next;
        if !diff.is_finite() {
            return Err(Error::invalid("dlqr: Riccati iteration diverged (is the pair stabilizable?)"));
        }
        if diff <= 1e-13 * scale {
            let btp = bd.transpose() * &p;
            let s = r + &btp * bd;
            return s.lu().solve(&(&btp * ad)).ok_or_else(|| Error::invalid("dlqr: singular R + B'PB"));
        }
    }
    Err(Error::invalid("dlqr: Riccati iteration did not converge"))
}
