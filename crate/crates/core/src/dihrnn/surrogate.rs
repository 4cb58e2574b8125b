//! Monte-Carlo check that mined coefficients preserve STL robustness of the
//! true coefficients within `delta`, with probability at least `1 - epsilon`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::dihrnn::mine::{mine_segments, MiningConfig};
use crate::dihrnn::structure::{CoefficientVector, RnnStructure};
use crate::error::{Error, Result};
use crate::ode::Segment;
use crate::stl::{robustness, AtomRegistry, StlFormula};

/// A simulator whose true coefficients are known.
pub trait Plant: Sync {
    fn true_coefficients(&self) -> CoefficientVector;

    /// Generate the windows observed for input parameter `theta`.
    fn run(&self, theta: &[f64], seed: u64) -> Result<Vec<Segment>>;
}

/// Independent uniform ranges for each input parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCheck {
    pub delta: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    /// One-sided confidence level of the Clopper-Pearson bound.
    pub confidence: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateVerdict {
    Pass,
    Fail,
    /// `epsilon = 0` can never be certified from finitely many samples.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEstimate {
    pub samples: usize,
    pub within: usize,
    pub mining_failures: usize,
    pub rate: f64,
    pub lower_bound: f64,
    pub verdict: SurrogateVerdict,
}

/// One-sided Clopper-Pearson lower bound on a success probability.
pub fn clopper_pearson_lower(successes: usize, n: usize, confidence: f64) -> Result<f64> {
    if n == 0 || successes > n {
        return Err(Error::invalid("need 0 <= successes <= n and n >= 1"));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    let beta = Beta::new(successes as f64, (n - successes + 1) as f64)
        .map_err(|e| Error::invalid(format!("beta distribution: {e}")))?;
    // statrs' inverse stops at a coarse tolerance; bisect on the cdf instead
    let target = 1.0 - confidence;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta.cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn validate_surrogate<P: Plant>(
    plant: &P,
    inputs: &InputBox,
    phi: &StlFormula,
    registry: &AtomRegistry<CoefficientVector>,
    check: &SurrogateCheck,
    structure: &RnnStructure,
    cfg: &MiningConfig,
) -> Result<SurrogateEstimate> {
    if check.n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    if !(check.delta >= 0.0)
        || !(0.0..=1.0).contains(&check.epsilon)
        || !(0.0 < check.confidence && check.confidence < 1.0)
    {
        return Err(Error::invalid("need delta >= 0, epsilon in [0, 1], confidence in (0, 1)"));
    }
    if inputs.lo.len() != inputs.hi.len() {
        return Err(Error::LengthMismatch {
            what: "input box bounds",
            expected: inputs.lo.len(),
            found: inputs.hi.len(),
        });
    }
    registry.check(phi)?;
    let truth = plant.true_coefficients();
    structure.check(&truth)?;

    if check.delta == f64::INFINITY {
        return Ok(SurrogateEstimate {
            samples: check.n_samples,
            within: check.n_samples,
            mining_failures: 0,
            rate: 1.0,
            lower_bound: 1.0,
            verdict: SurrogateVerdict::Pass,
        });
    }

    let rho_true = robustness(phi, std::slice::from_ref(&truth), 0, registry)?.value;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let draws: Vec<(Vec<f64>, u64)> = (0..check.n_samples).map(|_| (inputs.sample(&mut rng), rng.gen())).collect();

    let outcomes: Vec<Result<Option<bool>>> = draws
        .par_iter()
        .map(|(theta, seed)| {
            let segments = plant.run(theta, *seed)?;
            let mut c = cfg.clone();
            c.seed = *seed;
            match mine_segments(&segments, structure, &c, None) {
                Ok(m) => {
                    let rho = robustness(phi, std::slice::from_ref(&m.omega), 0, registry)?.value;
                    Ok(Some((rho - rho_true).abs() <= check.delta))
                }
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut within = 0;
    let mut failures = 0;
    for o in outcomes {
        match o? {
            Some(true) => within += 1,
            Some(false) => {}
            None => failures += 1,
        }
    }
    let n = check.n_samples;
    let lower_bound = clopper_pearson_lower(within, n, check.confidence)?;
    let verdict = if check.epsilon == 0.0 {
        SurrogateVerdict::Inconclusive
    } else if lower_bound >= 1.0 - check.epsilon {
        SurrogateVerdict::Pass
    } else {
        SurrogateVerdict::Fail
    };
    Ok(SurrogateEstimate {
        samples: n,
        within,
        mining_failures: failures,
        rate: within as f64 / n as f64,
        lower_bound,
        verdict,
    })
}
