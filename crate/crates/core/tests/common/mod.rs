//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use coefmon_core::conformal::{calibrate, detect, mine_window, CalibrationSettings};
use coefmon_core::dihrnn::{
    induce_structure, loss_and_gradient, CoefficientVector, InitPolicy, MiningConfig, ModelTemplate,
};
use coefmon_core::ode::{simulate_euler, InputSignal, LinearOdeSystem, Segment};
use coefmon_core::stl::{AtomRegistry, Comparison, Interval, StlFormula};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// ---- STL ------------------------------------------------------------------

pub type Sample = (f64, f64);

pub fn registry() -> AtomRegistry<Sample> {
    let mut r = AtomRegistry::new();
    r.register("x", |s: &Sample| s.0);
    r.register("y", |s: &Sample| s.1);
    r
}

/// Direct recursive evaluation; `None` where the formula's windows do not fit.
pub fn oracle(phi: &StlFormula, seq: &[Sample], t: usize) -> Option<f64> {
    if t >= seq.len() {
        return None;
    }
    match phi {
        StlFormula::True => Some(f64::INFINITY),
        StlFormula::Atom(a) => {
            let v = if a.func == "x" { seq[t].0 } else { seq[t].1 };
            Some(match a.cmp {
                Comparison::Ge => v - a.c,
                Comparison::Le => a.c - v,
            })
        }
        StlFormula::Not(f) => oracle(f, seq, t).map(|v| -v),
        StlFormula::And(fs) => fs.iter().map(|f| oracle(f, seq, t)).try_fold(f64::INFINITY, |acc, v| Some(acc.min(v?))),
        StlFormula::Or(fs) => {
            fs.iter().map(|f| oracle(f, seq, t)).try_fold(f64::NEG_INFINITY, |acc, v| Some(acc.max(v?)))
        }
        StlFormula::Eventually(i, f) | StlFormula::Globally(i, f) => {
            let times = window(i, t, |tp| oracle(f, seq, tp).is_some())?;
            let vals = times.into_iter().map(|tp| oracle(f, seq, tp).unwrap());
            Some(if matches!(phi, StlFormula::Eventually(..)) {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.fold(f64::INFINITY, f64::min)
            })
        }
        StlFormula::Until(i, a, b) => {
            // t' is usable when psi is defined there and phi on all of [t, t')
            let usable = |tp: usize| oracle(b, seq, tp).is_some() && (t..tp).all(|s| oracle(a, seq, s).is_some());
            let times = window(i, t, usable)?;
            let mut best = f64::NEG_INFINITY;
            for tp in times {
                let prefix = (t..tp).map(|s| oracle(a, seq, s).unwrap()).fold(f64::INFINITY, f64::min);
                best = best.max(oracle(b, seq, tp).unwrap().min(prefix));
            }
            Some(best)
        }
    }
}

/// Times of `[t + lo, t + hi]`; an unbounded window runs while `ok` holds and
/// needs `t + lo` itself to be usable.
pub fn window(i: &Interval, t: usize, ok: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
    match i.hi {
        Some(hi) => {
            let ts: Vec<usize> = (t + i.lo..=t + hi).collect();
            ts.iter().all(|&tp| ok(tp)).then_some(ts)
        }
        None => {
            let ts: Vec<usize> = (t + i.lo..).take_while(|&tp| ok(tp)).collect();
            (!ts.is_empty()).then_some(ts)
        }
    }
}

pub fn arb_interval() -> impl Strategy<Value = Interval> {
    prop_oneof![
        (0usize..3, 0usize..3).prop_map(|(lo, w)| Interval::new(lo, lo + w).unwrap()),
        (0usize..3).prop_map(Interval::from),
    ]
}

pub fn arb_atom() -> impl Strategy<Value = StlFormula> {
    (prop::bool::ANY, prop::bool::ANY, -2.0..2.0f64).prop_map(|(x, ge, c)| {
        let name = if x { "x" } else { "y" };
        if ge {
            StlFormula::ge(name, c)
        } else {
            StlFormula::le(name, c)
        }
    })
}

pub fn arb_formula(with_not: bool) -> impl Strategy<Value = StlFormula> {
    let leaf = prop_oneof![4 => arb_atom(), 1 => Just(StlFormula::True)];
    leaf.prop_recursive(3, 24, 3, move |inner| {
        let mut ops = vec![
            prop::collection::vec(inner.clone(), 1..3).prop_map(StlFormula::And).boxed(),
            prop::collection::vec(inner.clone(), 1..3).prop_map(StlFormula::Or).boxed(),
            (arb_interval(), inner.clone()).prop_map(|(i, f)| StlFormula::eventually(i, f)).boxed(),
            (arb_interval(), inner.clone()).prop_map(|(i, f)| StlFormula::globally(i, f)).boxed(),
            (arb_interval(), inner.clone(), inner.clone()).prop_map(|(i, a, b)| StlFormula::until(i, a, b)).boxed(),
        ];
        if with_not {
            ops.push(inner.prop_map(StlFormula::not).boxed());
        }
        prop::strategy::Union::new(ops)
    })
}

pub fn arb_seq() -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..=6)
}

// ---- gradients ------------------------------------------------------------

/// Random stable system with a random learnable pattern, plus data generated
/// from a nearby system.
pub fn gradient_case(seed: u64) -> (coefmon_core::RnnStructure, Vec<Segment>, CoefficientVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=3);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j {
                rng.gen_range(-2.0..-0.2)
            } else if rng.gen_bool(0.5) {
                rng.gen_range(-0.5..0.5)
            } else {
                0.0
            };
        }
    }
    let b: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.2..1.5) } else { 0.0 }).collect();
    let mut beta: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    beta[rng.gen_range(0..n)] = true;
    let offset: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let names = (0..n).map(|i| format!("x{i}")).collect();
    let inputs = (0..n).map(|i| Some(format!("u{i}"))).collect();
    let sys = LinearOdeSystem::new(names, inputs, a, b, beta, offset).unwrap();
    let learn_offset: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let template = ModelTemplate::from_nonzero(sys.clone()).with_learnable_offsets(learn_offset).unwrap();
    let st = induce_structure(&template).unwrap();

    let (tau, steps) = (0.05, 25);
    let mut segs = Vec::new();
    for _ in 0..2 {
        let u =
            InputSignal::new(tau, (0..n).map(|_| (0..steps + 1).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
                .unwrap();
        let x0: Vec<f64> = (0..n).map(|i| if sys.beta_diag()[i] { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let mut traj = simulate_euler(&sys, &u, &x0, steps).unwrap();
        for i in 0..n {
            for v in traj.channels_mut()[i].iter_mut().skip(1) {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        segs.push(Segment::new(u, traj).unwrap());
    }
    let omega: Vec<f64> = st.anchor().values().iter().map(|v| v * (1.0 + rng.gen_range(-0.2..0.2))).collect();
    let omega = st.coefficients(omega).unwrap();
    (st, segs, omega)
}

/// Largest relative gap between the backprop gradient and central
/// differences; components far below the largest one are compared against it.
pub fn gradient_error(seed: u64) -> f64 {
    let (st, segs, omega) = gradient_case(seed);
    let (_, g) = loss_and_gradient(&st, &segs, &omega).unwrap();
    let loss_at = |w: &[f64]| loss_and_gradient(&st, &segs, &st.coefficients(w.to_vec()).unwrap()).unwrap().0;
    let base = omega.values().to_vec();
    let fd: Vec<f64> = (0..base.len())
        .map(|j| {
            let h = 1e-6 * base[j].abs().max(1.0);
            let mut p = base.clone();
            let mut m = base.clone();
            p[j] += h;
            m[j] -= h;
            (loss_at(&p) - loss_at(&m)) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (0..fd.len()).map(|j| (g[j] - fd[j]).abs() / fd[j].abs().max(1e-3 * scale).max(1e-12)).fold(0.0, f64::max)
}

// ---- conformal coverage ---------------------------------------------------

pub fn plant() -> LinearOdeSystem {
    LinearOdeSystem::new(
        vec!["x".into(), "v".into()],
        vec![None, Some("u".into())],
        vec![0.0, 1.0, -0.8, -0.6],
        vec![0.0, 0.5],
        vec![true, true],
        vec![0.0, 0.0],
    )
    .unwrap()
}

pub fn clean_window(sys: &LinearOdeSystem, rng: &mut ChaCha8Rng) -> Segment {
    let (tau, steps) = (0.05, 80);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut u = vec![0.0; steps + 1];
    let mut level = 0.0;
    for (k, v) in u.iter_mut().enumerate() {
        if k % 20 == 0 {
            level = rng.gen_range(-1.0..1.0);
        }
        *v = level;
    }
    let input = InputSignal::new(tau, vec![vec![0.0; steps + 1], u]).unwrap();
    let x0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let mut traj = simulate_euler(sys, &input, &x0, steps).unwrap();
    for ch in traj.channels_mut() {
        for v in ch.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    Segment::new(input, traj).unwrap()
}

/// Calibrate on 20 + 20 clean windows, then return the fraction of 200 fresh
/// clean windows left undetected.
pub fn mined_coverage(seed: u64) -> f64 {
    let sys = plant();
    let st = induce_structure(&ModelTemplate::from_nonzero(sys.clone())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<Segment> = (0..20).map(|_| clean_window(&sys, &mut rng)).collect();
    let test: Vec<Segment> = (0..20).map(|_| clean_window(&sys, &mut rng)).collect();
    let mut cfg = MiningConfig::new(0.05, 0.1);
    cfg.init = InitPolicy::Anchor { jitter: 0.1 };
    let cal = calibrate(&train, &test, &st, &cfg, &CalibrationSettings::default(), None).unwrap();
    let mut nd = 0;
    for i in 0..200 {
        let w = clean_window(&sys, &mut rng);
        let m = mine_window(&w, &st, &cfg, 500 + i).unwrap();
        if !detect(&m.omega, &cal.profile, i).unwrap().label.is_detected() {
            nd += 1;
        }
    }
    nd as f64 / 200.0
}
