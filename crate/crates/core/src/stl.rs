//! Discrete-time signal temporal logic with quantitative (robustness) semantics,
//! evaluated over sequences of arbitrary samples through named atom functions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dihrnn::CoefficientVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    #[serde(rename = "fn")]
    pub func: String,
    pub cmp: Comparison,
    pub c: f64,
}

/// Closed window-index interval `[lo, hi]`; `hi = None` runs to the end of the
/// sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid(format!("interval [{lo}, {hi}] is not well ordered")));
        }
        Ok(Self { lo, hi: Some(hi) })
    }

    pub fn from(lo: usize) -> Self {
        Self { lo, hi: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StlFormula {
    True,
    Atom(Atom),
    Not(Box<StlFormula>),
    And(Vec<StlFormula>),
    Or(Vec<StlFormula>),
    Eventually(Interval, Box<StlFormula>),
    Globally(Interval, Box<StlFormula>),
    /// `phi U psi`: `psi` holds at some `t'` in the interval and `phi` holds on
    /// `[t, t')`.
    Until(Interval, Box<StlFormula>, Box<StlFormula>),
}

impl StlFormula {
    pub fn atom(func: impl Into<String>, cmp: Comparison, c: f64) -> Self {
        StlFormula::Atom(Atom { func: func.into(), cmp, c })
    }

    pub fn ge(func: impl Into<String>, c: f64) -> Self {
        Self::atom(func, Comparison::Ge, c)
    }

    pub fn le(func: impl Into<String>, c: f64) -> Self {
        Self::atom(func, Comparison::Le, c)
    }

    pub fn not(self) -> Self {
        StlFormula::Not(Box::new(self))
    }

    pub fn eventually(i: Interval, f: Self) -> Self {
        StlFormula::Eventually(i, Box::new(f))
    }

    pub fn globally(i: Interval, f: Self) -> Self {
        StlFormula::Globally(i, Box::new(f))
    }

    pub fn until(i: Interval, phi: Self, psi: Self) -> Self {
        StlFormula::Until(i, Box::new(phi), Box::new(psi))
    }

    pub fn depth(&self) -> usize {
        match self {
            StlFormula::True | StlFormula::Atom(_) => 0,
            StlFormula::Not(f) | StlFormula::Eventually(_, f) | StlFormula::Globally(_, f) => 1 + f.depth(),
            StlFormula::And(fs) | StlFormula::Or(fs) => 1 + fs.iter().map(Self::depth).max().unwrap_or(0),
            StlFormula::Until(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Names of all atom functions referenced.
    pub fn atom_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            StlFormula::True => {}
            StlFormula::Atom(a) => out.push(&a.func),
            StlFormula::Not(f) | StlFormula::Eventually(_, f) | StlFormula::Globally(_, f) => f.collect_atoms(out),
            StlFormula::And(fs) | StlFormula::Or(fs) => fs.iter().for_each(|f| f.collect_atoms(out)),
            StlFormula::Until(_, a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "[{},{}]", self.lo, hi),
            None => write!(f, "[{},end]", self.lo),
        }
    }
}

impl fmt::Display for StlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, fs: &[StlFormula], op: &str| {
            write!(f, "(")?;
            for (i, g) in fs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{g}")?;
            }
            write!(f, ")")
        };
        match self {
            StlFormula::True => write!(f, "true"),
            StlFormula::Atom(a) => {
                let cmp = match a.cmp {
                    Comparison::Ge => ">=",
                    Comparison::Le => "<=",
                };
                write!(f, "{} {cmp} {}", a.func, a.c)
            }
            StlFormula::Not(g) => write!(f, "!({g})"),
            StlFormula::And(fs) => join(f, fs, "&"),
            StlFormula::Or(fs) => join(f, fs, "|"),
            StlFormula::Eventually(i, g) => write!(f, "F{i}({g})"),
            StlFormula::Globally(i, g) => write!(f, "G{i}({g})"),
            StlFormula::Until(i, a, b) => write!(f, "(({a}) U{i} ({b}))"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormulaJson {
    op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    args: Vec<FormulaJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interval: Option<(usize, Option<usize>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atom: Option<Atom>,
}

impl TryFrom<FormulaJson> for StlFormula {
    type Error = Error;

    fn try_from(j: FormulaJson) -> Result<Self> {
        let op = j.op.as_str();
        let n_args = j.args.len();
        let arity = |n: usize| -> Result<()> {
            if n_args == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("`{op}` takes {n} argument(s), got {n_args}")))
            }
        };
        let interval = || -> Result<Interval> {
            let (lo, hi) = j.interval.ok_or_else(|| Error::invalid(format!("`{op}` needs an interval")))?;
            match hi {
                Some(hi) => Interval::new(lo, hi),
                None => Ok(Interval::from(lo)),
            }
        };
        let mut args = j.args.into_iter().map(StlFormula::try_from);
        let mut next = || args.next().expect("arity checked");
        Ok(match op {
            "true" => {
                arity(0)?;
                StlFormula::True
            }
            "atom" => {
                arity(0)?;
                let a = j.atom.ok_or_else(|| Error::invalid("`atom` needs an `atom` object"))?;
                if !a.c.is_finite() {
                    return Err(Error::invalid("atom threshold must be finite"));
                }
                StlFormula::Atom(a)
            }
            "not" => {
                arity(1)?;
                StlFormula::Not(Box::new(next()?))
            }
            "and" | "or" => {
                let fs = args.collect::<Result<Vec<_>>>()?;
                if fs.is_empty() {
                    return Err(Error::invalid(format!("`{op}` needs at least one argument")));
                }
                if op == "and" {
                    StlFormula::And(fs)
                } else {
                    StlFormula::Or(fs)
                }
            }
            "eventually" | "globally" => {
                arity(1)?;
                let i = interval()?;
                let f = Box::new(next()?);
                if op == "eventually" {
                    StlFormula::Eventually(i, f)
                } else {
                    StlFormula::Globally(i, f)
                }
            }
            "until" => {
                arity(2)?;
                let i = interval()?;
                let a = next()?;
                let b = next()?;
                StlFormula::Until(i, Box::new(a), Box::new(b))
            }
            other => return Err(Error::invalid(format!("unknown STL operator `{other}`"))),
        })
    }
}

impl From<&StlFormula> for FormulaJson {
    fn from(f: &StlFormula) -> Self {
        let node = |op: &str, args: Vec<FormulaJson>, i: Option<&Interval>| FormulaJson {
            op: op.into(),
            args,
            interval: i.map(|i| (i.lo, i.hi)),
            atom: None,
        };
        match f {
            StlFormula::True => node("true", vec![], None),
            StlFormula::Atom(a) => FormulaJson { atom: Some(a.clone()), ..node("atom", vec![], None) },
            StlFormula::Not(g) => node("not", vec![g.as_ref().into()], None),
            StlFormula::And(fs) => node("and", fs.iter().map(Into::into).collect(), None),
            StlFormula::Or(fs) => node("or", fs.iter().map(Into::into).collect(), None),
            StlFormula::Eventually(i, g) => node("eventually", vec![g.as_ref().into()], Some(i)),
            StlFormula::Globally(i, g) => node("globally", vec![g.as_ref().into()], Some(i)),
            StlFormula::Until(i, a, b) => node("until", vec![a.as_ref().into(), b.as_ref().into()], Some(i)),
        }
    }
}

impl Serialize for StlFormula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FormulaJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StlFormula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FormulaJson::deserialize(d)?;
        StlFormula::try_from(j).map_err(serde::de::Error::custom)
    }
}

pub type AtomFn<T> = Box<dyn Fn(&T) -> f64 + Send + Sync>;

/// Named real-valued functions over samples of type `T`.
pub struct AtomRegistry<T> {
    fns: BTreeMap<String, AtomFn<T>>,
}

impl<T> Default for AtomRegistry<T> {
    fn default() -> Self {
        Self { fns: BTreeMap::new() }
    }
}

impl<T> AtomRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, f: impl Fn(&T) -> f64 + Send + Sync + 'static) -> &mut Self {
        self.fns.insert(name.into(), Box::new(f));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fns.keys().map(String::as_str)
    }

    /// Fails if the formula references an unregistered atom.
    pub fn check(&self, phi: &StlFormula) -> Result<()> {
        for name in phi.atom_names() {
            if !self.contains(name) {
                return Err(Error::invalid(format!("STL atom `{name}` is not registered")));
            }
        }
        Ok(())
    }

    fn eval(&self, name: &str, sample: &T) -> Result<f64> {
        let f = self.fns.get(name).ok_or_else(|| Error::invalid(format!("STL atom `{name}` is not registered")))?;
        let v = f(sample);
        if v.is_nan() {
            return Err(Error::invalid(format!("STL atom `{name}` returned NaN")));
        }
        Ok(v)
    }
}

/// Atoms named after each coefficient, returning its value.
pub fn coefficient_registry(names: &[String]) -> AtomRegistry<CoefficientVector> {
    let mut reg = AtomRegistry::new();
    for name in names {
        let key = name.clone();
        reg.register(name.clone(), move |w: &CoefficientVector| w.get(&key).unwrap_or(f64::NAN));
    }
    reg
}

/// Atoms named after channels of a `Vec<f64>` sample, each plus a constant offset.
pub fn channel_registry(channels: &[(String, usize, f64)]) -> AtomRegistry<Vec<f64>> {
    let mut reg = AtomRegistry::new();
    for (name, idx, offset) in channels.iter().cloned() {
        reg.register(name, move |x: &Vec<f64>| x.get(idx).map_or(f64::NAN, |v| v + offset));
    }
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessValue {
    pub value: f64,
    pub formula: String,
    pub t: usize,
}

fn window_reduce(input: &[f64], lo: usize, hi: Option<usize>, init: f64, op: fn(f64, f64) -> f64) -> Vec<f64> {
    let len = input.len();
    let out_len = match hi {
        Some(hi) => len.saturating_sub(hi),
        None => len.saturating_sub(lo),
    };
    (0..out_len)
        .map(|t| {
            let end = hi.map_or(len - 1, |h| t + h);
            input[t + lo..=end].iter().fold(init, |acc, &v| op(acc, v))
        })
        .collect()
}

/// Robustness at every index for which the formula is defined on `seq`.
pub fn robustness_signal<T>(phi: &StlFormula, seq: &[T], reg: &AtomRegistry<T>) -> Result<Vec<f64>> {
    Ok(match phi {
        StlFormula::True => vec![f64::INFINITY; seq.len()],
        StlFormula::Atom(a) => seq
            .iter()
            .map(|s| {
                let v = reg.eval(&a.func, s)?;
                Ok(match a.cmp {
                    Comparison::Ge => v - a.c,
                    Comparison::Le => a.c - v,
                })
            })
            .collect::<Result<_>>()?,
        StlFormula::Not(f) => robustness_signal(f, seq, reg)?.into_iter().map(|v| -v).collect(),
        StlFormula::And(fs) | StlFormula::Or(fs) => {
            let is_and = matches!(phi, StlFormula::And(_));
            let mut acc: Option<Vec<f64>> = None;
            for f in fs {
                let s = robustness_signal(f, seq, reg)?;
                acc = Some(match acc {
                    None => s,
                    Some(a) => a.iter().zip(&s).map(|(&x, &y)| if is_and { x.min(y) } else { x.max(y) }).collect(),
                });
            }
            acc.unwrap_or_default()
        }
        StlFormula::Eventually(i, f) => {
            window_reduce(&robustness_signal(f, seq, reg)?, i.lo, i.hi, f64::NEG_INFINITY, f64::max)
        }
        StlFormula::Globally(i, f) => {
            window_reduce(&robustness_signal(f, seq, reg)?, i.lo, i.hi, f64::INFINITY, f64::min)
        }
        StlFormula::Until(i, a, b) => {
            let sa = robustness_signal(a, seq, reg)?;
            let sb = robustness_signal(b, seq, reg)?;
            // t' needs psi at t' and phi on [t, t'); phi is unconstrained when t' = t
            let last = |t: usize| sb.len().checked_sub(1).map(|l| l.min(t.max(sa.len())));
            let defined = |t: usize| match (last(t), i.hi) {
                (Some(l), Some(hi)) => t + hi <= l,
                (Some(l), None) => t + i.lo <= l,
                (None, _) => false,
            };
            (0..sb.len())
                .take_while(|&t| defined(t))
                .map(|t| {
                    let end = i.hi.map_or_else(|| last(t).unwrap_or(t), |h| t + h);
                    let mut prefix = f64::INFINITY;
                    let mut best = f64::NEG_INFINITY;
                    for tp in t..=end {
                        if tp >= t + i.lo {
                            best = best.max(sb[tp].min(prefix));
                        }
                        if tp < end {
                            prefix = prefix.min(sa[tp]);
                        }
                    }
                    best
                })
                .collect()
        }
    })
}

/// Robustness of `phi` on `seq` at index `t`.
pub fn robustness<T>(phi: &StlFormula, seq: &[T], t: usize, reg: &AtomRegistry<T>) -> Result<RobustnessValue> {
    if t >= seq.len() {
        return Err(Error::OutOfRange { index: t, len: seq.len() });
    }
    let sig = robustness_signal(phi, seq, reg)?;
    if t >= sig.len() {
        return Err(Error::invalid(format!(
            "formula intervals at t = {t} reach past the end of a {}-element sequence",
            seq.len()
        )));
    }
    Ok(RobustnessValue { value: sig[t], formula: phi.to_string(), t })
}

/// Largest relative coefficient deviation from `reference`, minus `offset`.
pub fn deviation_residue(omega: &CoefficientVector, reference: &CoefficientVector, offset: f64) -> Result<f64> {
    if !omega.same_structure(reference) {
        return Err(Error::StructureMismatch(format!(
            "coefficients [{}] vs reference [{}]",
            omega.names().join(", "),
            reference.names().join(", ")
        )));
    }
    let mut worst: f64 = 0.0;
    for ((name, &w), &r) in reference.names().iter().zip(omega.values()).zip(reference.values()) {
        if r == 0.0 {
            return Err(Error::ZeroReference { name: name.clone() });
        }
        worst = worst.max(((w - r) / r).abs());
    }
    Ok(worst - offset)
}
