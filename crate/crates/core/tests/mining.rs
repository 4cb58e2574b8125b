use coefmon_core::cases::experiments::{aid_scenario, aid_setup, run_all};
use coefmon_core::cases::{run_scenario, Bolus, ControllerConfig, FaultSpec, Meal, PlantConfig};
use coefmon_core::dihrnn::{
    continuous_mine, forward_pass, induce_structure, mine_coefficients, mine_segments, step_bound, validate_surrogate,
    CoefficientVector, InitPolicy, InputBox, MiningConfig, ModelTemplate, Plant, SurrogateCheck, SurrogateVerdict,
};
use coefmon_core::ode::{simulate_euler, InputSignal, LinearOdeSystem, Segment, Trace, Trajectory};
use coefmon_core::stl::{coefficient_registry, Interval, StlFormula};
use coefmon_core::{Error, Result};
use proptest::prelude::*;

mod common;
use common::{gradient_case, gradient_error};

fn diag(a: &[f64]) -> LinearOdeSystem {
    let n = a.len();
    let mut s = LinearOdeSystem::zeros(n).unwrap();
    for (i, &v) in a.iter().enumerate() {
        s.set_a(i, i, v).unwrap();
    }
    s
}

#[test]
fn step_bound_examples() {
    assert!((step_bound(&diag(&[-1.0]), 0.005) - 0.1).abs() < 1e-15);
    assert!((step_bound(&diag(&[-1.0, -10.0]), 0.005) - 0.01).abs() < 1e-15);
    assert_eq!(step_bound(&diag(&[0.0, 0.0]), 0.005), f64::INFINITY);
}

#[test]
fn tau_above_the_bound_is_refused_unless_overridden() {
    let st = induce_structure(&ModelTemplate::from_nonzero(diag(&[-10.0]))).unwrap();
    let u = InputSignal::zeros(0.05, 1, 10).unwrap();
    let err = forward_pass(&st, &st.anchor(), &u, &[1.0], 10, 0.005, false).unwrap_err();
    assert!(matches!(err, Error::StepBound { .. }), "{err}");
    let ok = forward_pass(&st, &st.anchor(), &u, &[1.0], 10, 0.005, true).unwrap();
    assert!(ok.step_warning.is_some());
}

#[test]
fn bmm_structure_mirrors_the_template() {
    let st = induce_structure(&aid_setup().unwrap().template).unwrap();
    let names = |i: usize| st.system().state_names()[i].clone();
    let mut edges: Vec<(String, String)> = st.recurrent_edges().map(|e| (names(e.from), names(e.to))).collect();
    edges.sort();
    let mut want = vec![("i", "i"), ("i", "i_s"), ("i_s", "i_s"), ("i_s", "G"), ("G", "G")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect::<Vec<_>>();
    want.sort();
    assert_eq!(edges, want);
    let mut inputs: Vec<(usize, String)> = st.input_edges().map(|e| (e.input, names(e.to))).collect();
    inputs.sort();
    assert_eq!(inputs, vec![(0, "i".to_string()), (2, "G".to_string())]);
    assert_eq!(st.nodes().len(), 3);
}

#[test]
fn forward_pass_equals_the_simulator() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let seg = run_scenario(&aid_scenario(12.0, 7.5, 20.0, 300, None, 4)).unwrap().logged;
    let x0 = st.initial_state(&seg);
    let fp = forward_pass(&st, &st.anchor(), &seg.input, &x0, seg.steps(), 0.02, false).unwrap();
    let sim = simulate_euler(st.system(), &seg.input, &x0, seg.steps()).unwrap();
    assert_eq!(fp.trajectory, sim);
}

#[test]
fn scalar_decay_rate_matches_the_log_ratio() {
    let (a, tau, len) = (-0.5, 0.005, 400);
    let x: Vec<f64> = (0..len).map(|k| (a * tau * k as f64).exp()).collect();
    let oracle = x.windows(2).map(|w| (w[1] / w[0]).ln() / tau).sum::<f64>() / (len - 1) as f64;
    let mut sys = diag(&[-0.1]);
    sys.set_beta(vec![true]).unwrap();
    let st = induce_structure(&ModelTemplate::from_nonzero(sys)).unwrap();
    let seg =
        Segment::new(InputSignal::zeros(tau, 1, len).unwrap(), Trajectory::new(tau, 0.0, vec![x]).unwrap()).unwrap();
    let mut cfg = MiningConfig::new(tau, 1e-3);
    cfg.init = InitPolicy::Anchor { jitter: 0.0 };
    let m = mine_coefficients(&seg, &st, &cfg).unwrap();
    assert!((m.omega.values()[0] - oracle).abs() < 1e-3, "{} vs {oracle}", m.omega.values()[0]);
}

#[test]
fn segment_without_transitions_is_rejected() {
    let mut sys = diag(&[-1.0]);
    sys.set_beta(vec![true]).unwrap();
    let st = induce_structure(&ModelTemplate::from_nonzero(sys)).unwrap();
    let seg = Segment::new(InputSignal::zeros(0.1, 1, 1).unwrap(), Trajectory::new(0.1, 0.0, vec![vec![1.0]]).unwrap())
        .unwrap();
    assert!(matches!(mine_coefficients(&seg, &st, &MiningConfig::new(0.1, 1.0)), Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backprop_gradient_matches_central_differences(seed in any::<u64>()) {
        let err = gradient_error(seed);
        prop_assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn mining_keeps_the_sparsity_pattern(seed in 0u64..8) {
        let (st, segs, _) = gradient_case(seed);
        let mut cfg = MiningConfig::new(0.05, 10.0);
        cfg.init = InitPolicy::Anchor { jitter: 0.1 };
        cfg.max_epochs = 50;
        let m = match mine_segments(&segs, &st, &cfg, None) {
            Ok(m) => m,
            Err(Error::NonConvergence { best, .. }) => *best,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let mined = st.system_with(&m.omega).unwrap();
        let tmpl = &st.template().system;
        for i in 0..tmpl.n() {
            for j in 0..tmpl.n() {
                if tmpl.a(i, j) == 0.0 {
                    prop_assert_eq!(mined.a(i, j), 0.0);
                }
            }
            if tmpl.b_diag()[i] == 0.0 {
                prop_assert_eq!(mined.b_diag()[i], 0.0);
            }
        }
        prop_assert_eq!(m.omega.names(), st.param_names());
    }
}

#[test]
fn mining_is_deterministic() {
    let (st, segs, _) = gradient_case(11);
    let mut cfg = MiningConfig::new(0.05, 10.0);
    cfg.seed = 9;
    let a = mine_segments(&segs, &st, &cfg, None);
    let b = mine_segments(&segs, &st, &cfg, None);
    let val = |r: Result<coefmon_core::dihrnn::MinedCoefficients>| match r {
        Ok(m) => m.omega,
        Err(Error::NonConvergence { best, .. }) => best.omega,
        Err(e) => panic!("{e}"),
    };
    assert_eq!(val(a), val(b));
}

/// Six meals 300 min apart; `fault` applies from `onset` on.
fn six_meal_day(fault: Option<FaultSpec>) -> Segment {
    let mut s = aid_scenario(10.0, 7.5, 20.0, 1800, fault, 21);
    let times: Vec<f64> = (0..6).map(|k| 10.0 + 300.0 * k as f64).collect();
    s.controller = ControllerConfig::Bolus { schedule: times.iter().map(|&t| Bolus { t, units: 7.5 }).collect() };
    s.meals = times.iter().map(|&t| Meal { t, grams: 20.0 }).collect();
    assert!(matches!(s.plant, PlantConfig::Bmm(_)));
    run_scenario(&s).unwrap().logged
}

fn max_rel(a: &CoefficientVector, b: &CoefficientVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

#[test]
fn six_clean_windows_stay_near_the_settings() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let trace = Trace::windowed(&six_meal_day(None), 300, 300).unwrap();
    let seq = continuous_mine(&trace, &st, &setup.mining).unwrap();
    assert_eq!(seq.windows.len(), 6);
    for w in &seq.windows {
        assert!(max_rel(&w.omega, &st.anchor()) < setup.mining.xi, "{:?}", w.omega);
    }
}

#[test]
fn fault_in_the_third_window_moves_only_that_window() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let fault = FaultSpec::InsulinBlockade { percent: 60.0, release_min: 120.0, phantom: false, onset_min: 600.0 };
    let trace = Trace::windowed(&six_meal_day(Some(fault)), 300, 300).unwrap();
    let mut cfg = setup.mining.clone();
    cfg.warm_start = false;
    let omegas: Vec<CoefficientVector> = coefmon_core::dihrnn::mine_windows(&trace, &st, &cfg)
        .into_iter()
        .map(|r| match r {
            Ok(m) => m.omega,
            Err(Error::NonConvergence { best, .. }) => best.omega,
            Err(e) => panic!("{e}"),
        })
        .collect();
    let anchor = st.anchor();
    assert!(max_rel(&omegas[0], &anchor) < setup.mining.xi);
    assert!(max_rel(&omegas[1], &anchor) < setup.mining.xi);
    assert!(max_rel(&omegas[2], &anchor) > 4.0 * setup.mining.xi, "{}", max_rel(&omegas[2], &anchor));
}

#[test]
fn single_window_trace_equals_direct_mining() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let seg = run_all(&[aid_scenario(8.0, 7.5, 20.0, 300, None, 2)]).unwrap().remove(0);
    let seq = continuous_mine(&Trace::single(seg.clone()), &st, &setup.mining).unwrap();
    let direct = mine_coefficients(&seg, &st, &setup.mining).unwrap();
    assert_eq!(seq.windows.len(), 1);
    assert_eq!(seq.windows[0].omega, direct.omega);
}

struct MealPlant;

impl Plant for MealPlant {
    fn true_coefficients(&self) -> CoefficientVector {
        induce_structure(&aid_setup().unwrap().template).unwrap().anchor()
    }

    fn run(&self, theta: &[f64], seed: u64) -> Result<Vec<Segment>> {
        Ok(vec![run_scenario(&aid_scenario(10.0, 7.5, theta[0], 300, None, seed))?.logged])
    }
}

fn insulin_sensitivity_formula() -> StlFormula {
    StlFormula::globally(
        Interval::from(0),
        StlFormula::And(vec![StlFormula::le("A[i_s,i_s]", -0.05), StlFormula::le("A[G,G]", -0.01)]),
    )
}

#[test]
fn surrogate_check_passes_over_meal_sizes() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let reg = coefficient_registry(st.param_names());
    let check = SurrogateCheck { delta: 0.05, epsilon: 0.1, n_samples: 100, confidence: 0.95, seed: 1 };
    let inputs = InputBox { lo: vec![10.0], hi: vec![40.0] };
    let est = validate_surrogate(&MealPlant, &inputs, &insulin_sensitivity_formula(), &reg, &check, &st, &setup.mining)
        .unwrap();
    println!("surrogate rate {} lower bound {}", est.rate, est.lower_bound);
    assert_eq!(est.verdict, SurrogateVerdict::Pass);
    assert_eq!(est.samples, 100);
}

#[test]
fn surrogate_edge_cases() {
    let setup = aid_setup().unwrap();
    let st = induce_structure(&setup.template).unwrap();
    let reg = coefficient_registry(st.param_names());
    let inputs = InputBox { lo: vec![10.0], hi: vec![40.0] };
    let phi = insulin_sensitivity_formula();
    let inf = SurrogateCheck { delta: f64::INFINITY, epsilon: 0.1, n_samples: 5, confidence: 0.95, seed: 1 };
    let est = validate_surrogate(&MealPlant, &inputs, &phi, &reg, &inf, &st, &setup.mining).unwrap();
    assert_eq!((est.verdict, est.rate), (SurrogateVerdict::Pass, 1.0));
    let zero = SurrogateCheck { delta: 0.05, epsilon: 0.0, n_samples: 5, confidence: 0.95, seed: 1 };
    let est = validate_surrogate(&MealPlant, &inputs, &phi, &reg, &zero, &st, &setup.mining).unwrap();
    assert_eq!(est.verdict, SurrogateVerdict::Inconclusive);
}
