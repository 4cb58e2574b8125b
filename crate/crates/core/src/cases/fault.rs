//! Injectors for unknown errors: insulin delivery blockade, corrupted angle of
//! attack sensing, and a cost weight stored in a too-narrow integer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_width() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum FaultSpec {
    /// `percent` of every commanded dose is withheld into a depot from
    /// `onset_min` on; the depot is delivered as one bolus `release_min`
    /// minutes after onset, or never when `phantom` is set.
    InsulinBlockade {
        percent: f64,
        release_min: f64,
        #[serde(default)]
        phantom: bool,
        #[serde(default)]
        onset_min: f64,
    },
    /// From `onset_s` on, the sensed angle of attack is offset by
    /// `magnitude_rad` and scaled by `1 + noise_rate * N(0, 1)`.
    AoAError { magnitude_rad: f64, onset_s: f64, noise_rate: f64 },
    /// The first state-cost weight passes through a signed integer of
    /// `declared_width` bits before gain synthesis.
    QOverflow {
        #[serde(default = "default_width")]
        declared_width: u32,
    },
}

impl FaultSpec {
    /// Ranges: blockade 0 (identity) or 20..=80 percent with release in
    /// 50..=150 min; AoA noise rate 0 or 0.20..=0.25; widths 8, 16 or 32.
    pub fn validate(&self) -> Result<()> {
        match *self {
            FaultSpec::InsulinBlockade { percent, release_min, onset_min, .. } => {
                if !(percent == 0.0 || (20.0..=80.0).contains(&percent)) {
                    return Err(Error::FaultRange(format!("blockade percent {percent} outside [20, 80]")));
                }
                if !(50.0..=150.0).contains(&release_min) {
                    return Err(Error::FaultRange(format!("release_min {release_min} outside [50, 150]")));
                }
                if !(onset_min >= 0.0 && onset_min.is_finite()) {
                    return Err(Error::FaultRange(format!("onset_min {onset_min} must be >= 0")));
                }
            }
            FaultSpec::AoAError { magnitude_rad, onset_s, noise_rate } => {
                if !magnitude_rad.is_finite() || !(onset_s >= 0.0 && onset_s.is_finite()) {
                    return Err(Error::FaultRange("AoA magnitude and onset must be finite, onset >= 0".into()));
                }
                if !(noise_rate == 0.0 || (0.20..=0.25).contains(&noise_rate)) {
                    return Err(Error::FaultRange(format!("AoA noise rate {noise_rate} outside [0.20, 0.25]")));
                }
            }
            FaultSpec::QOverflow { declared_width } => {
                if ![8, 16, 32].contains(&declared_width) {
                    return Err(Error::FaultRange(format!("declared width {declared_width} is not 8, 16 or 32")));
                }
            }
        }
        Ok(())
    }
}

/// Value after being stored in a signed two's-complement integer of `bits`
/// bits (fractional part truncated first).
pub fn wrap_signed(v: f64, bits: u32) -> f64 {
    let i = v.trunc() as i64;
    match bits {
        8 => i as i8 as f64,
        16 => i as i16 as f64,
        32 => i as i32 as f64,
        _ => i as f64,
    }
}

/// Online blockade: feed commanded doses (as rates) one sample at a time.
#[derive(Debug, Clone)]
pub struct Blockade {
    fraction: f64,
    onset: f64,
    release_at: f64,
    phantom: bool,
    depot: f64,
    released: bool,
}

impl Blockade {
    pub fn new(percent: f64, release_min: f64, phantom: bool, onset_min: f64) -> Self {
        Self {
            fraction: percent / 100.0,
            onset: onset_min,
            release_at: onset_min + release_min,
            phantom,
            depot: 0.0,
            released: false,
        }
    }

    /// Delivered rate for commanded rate `cmd` over `[t, t + tau)`.
    pub fn step(&mut self, t: f64, tau: f64, cmd: f64) -> f64 {
        let eps = 1e-9 * tau;
        let mut out = cmd;
        if t + eps >= self.onset && t + eps < self.release_at {
            let held = self.fraction * cmd;
            self.depot += held * tau;
            out -= held;
        }
        if !self.phantom && !self.released && t + eps >= self.release_at {
            out += self.depot / tau;
            self.depot = 0.0;
            self.released = true;
        }
        out
    }

    /// Insulin still held back.
    pub fn depot(&self) -> f64 {
        self.depot
    }
}

/// Sensor corruption for the angle of attack.
#[derive(Debug, Clone)]
pub struct AoACorruption {
    magnitude: f64,
    onset: f64,
    rate: f64,
}

impl AoACorruption {
    pub fn new(magnitude: f64, onset: f64, rate: f64) -> Self {
        Self { magnitude, onset, rate }
    }

    pub fn apply<R: Rng>(&self, t: f64, alpha: f64, rng: &mut R) -> f64 {
        if t + 1e-12 < self.onset {
            return alpha;
        }
        let xi: f64 = rng.sample(StandardNormal);
        (alpha + self.magnitude) * (1.0 + self.rate * xi)
    }
}

/// Apply `fault` to a sampled stream: commanded insulin rates for a blockade,
/// sensed angles of attack for an AoA error, raw weights for an overflow.
pub fn inject_fault<R: Rng>(stream: &[f64], tau: f64, fault: &FaultSpec, rng: &mut R) -> Result<Vec<f64>> {
    fault.validate()?;
    if !(tau > 0.0) {
        return Err(Error::invalid("sample period must be positive"));
    }
    Ok(match *fault {
        FaultSpec::InsulinBlockade { percent, release_min, phantom, onset_min } => {
            let mut b = Blockade::new(percent, release_min, phantom, onset_min);
            stream.iter().enumerate().map(|(k, &u)| b.step(k as f64 * tau, tau, u)).collect()
        }
        FaultSpec::AoAError { magnitude_rad, onset_s, noise_rate } => {
            let c = AoACorruption::new(magnitude_rad, onset_s, noise_rate);
            stream.iter().enumerate().map(|(k, &a)| c.apply(k as f64 * tau, a, rng)).collect()
        }
        FaultSpec::QOverflow { declared_width } => stream.iter().map(|&v| wrap_signed(v, declared_width)).collect(),
    })
}
