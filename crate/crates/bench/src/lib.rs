//! Fixtures shared by the benchmarks.

use coefmon_core::cases::experiments::{aid_scenario, aid_setup};
use coefmon_core::cases::run_scenario;
use coefmon_core::dihrnn::{induce_structure, MiningConfig};
use coefmon_core::stl::{Interval, StlFormula};
use coefmon_core::{RnnStructure, Segment};

pub struct BmmFixture {
    pub structure: RnnStructure,
    pub mining: MiningConfig,
    /// One clean 300-minute run.
    pub segment: Segment,
}

pub fn bmm_fixture() -> BmmFixture {
    let setup = aid_setup().expect("built-in setup is valid");
    let structure = induce_structure(&setup.template).expect("built-in template is valid");
    let run = run_scenario(&aid_scenario(10.0, 7.5, 20.0, 300, None, 0)).expect("built-in scenario runs");
    BmmFixture { structure, mining: setup.mining, segment: run.logged }
}

/// A nested glucose-band formula with an until, over `(G, insulin)` samples.
pub fn band_formula() -> StlFormula {
    let band = StlFormula::And(vec![StlFormula::ge("G", -40.0), StlFormula::le("G", 70.0)]);
    StlFormula::globally(
        Interval::from(0),
        StlFormula::Or(vec![
            band.clone(),
            StlFormula::until(Interval::new(0, 30).expect("valid interval"), StlFormula::ge("i", -1.0), band),
        ]),
    )
}
