use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ode::{LinearOdeSystem, Segment};

/// A system plus the mask of entries the miner may change.
///
/// Entries that are not learnable keep their value from `system` (structural
/// zeros, or known constants such as kinematic relations).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTemplate {
    pub system: LinearOdeSystem,
    pub learn_a: Vec<bool>,
    pub learn_b: Vec<bool>,
    pub learn_offset: Vec<bool>,
    /// Initial value used for unobserved states at the start of every window.
    pub basal_state: Vec<f64>,
}

#[derive(Deserialize, Serialize)]
struct LearnableJson {
    #[serde(rename = "A")]
    a: Vec<u8>,
    #[serde(rename = "B_diag")]
    b_diag: Vec<u8>,
    #[serde(default)]
    affine_offset: Option<Vec<u8>>,
}

#[derive(Deserialize)]
struct TemplateExt {
    #[serde(default)]
    learnable: Option<LearnableJson>,
    #[serde(default)]
    basal_state: Option<Vec<f64>>,
}

fn mask(what: &'static str, v: &[u8], len: usize) -> Result<Vec<bool>> {
    if v.len() != len {
        return Err(Error::LengthMismatch { what, expected: len, found: v.len() });
    }
    v.iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::invalid(format!("{what} mask entries must be 0 or 1"))),
        })
        .collect()
}

impl ModelTemplate {
    /// Every nonzero entry of `A` and `B` is learnable; offsets are fixed;
    /// hidden states start at zero.
    pub fn from_nonzero(system: LinearOdeSystem) -> Self {
        let n = system.n();
        Self {
            learn_a: system.a_matrix().iter().map(|&v| v != 0.0).collect(),
            learn_b: system.b_diag().iter().map(|&v| v != 0.0).collect(),
            learn_offset: vec![false; n],
            basal_state: vec![0.0; n],
            system,
        }
    }

    pub fn with_learnable_offsets(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.system.n() {
            return Err(Error::LengthMismatch { what: "offset mask", expected: self.system.n(), found: mask.len() });
        }
        self.learn_offset = mask;
        Ok(self)
    }

    pub fn with_basal_state(mut self, basal: Vec<f64>) -> Result<Self> {
        if basal.len() != self.system.n() {
            return Err(Error::LengthMismatch { what: "basal_state", expected: self.system.n(), found: basal.len() });
        }
        self.basal_state = basal;
        Ok(self)
    }

    /// Parse a system JSON that may carry optional `learnable` masks and a
    /// `basal_state`. Without masks, nonzero `A`/`B` entries are learnable.
    pub fn from_json(s: &str) -> Result<Self> {
        let system: LinearOdeSystem = serde_json::from_str(s)?;
        let ext: TemplateExt = serde_json::from_str(s)?;
        Self::from_parts(system, ext)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let system: LinearOdeSystem = serde_json::from_value(v.clone())?;
        let ext: TemplateExt = serde_json::from_value(v)?;
        Self::from_parts(system, ext)
    }

    fn from_parts(system: LinearOdeSystem, ext: TemplateExt) -> Result<Self> {
        let n = system.n();
        let mut t = Self::from_nonzero(system);
        if let Some(l) = ext.learnable {
            t.learn_a = mask("learnable.A", &l.a, n * n)?;
            t.learn_b = mask("learnable.B_diag", &l.b_diag, n)?;
            if let Some(o) = l.affine_offset {
                t.learn_offset = mask("learnable.affine_offset", &o, n)?;
            }
        }
        if let Some(b) = ext.basal_state {
            t = t.with_basal_state(b)?;
        }
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(&self.system)?;
        let bits = |m: &[bool]| m.iter().map(|&b| b as u8).collect::<Vec<_>>();
        v["learnable"] = serde_json::to_value(LearnableJson {
            a: bits(&self.learn_a),
            b_diag: bits(&self.learn_b),
            affine_offset: Some(bits(&self.learn_offset)),
        })?;
        v["basal_state"] = serde_json::to_value(&self.basal_state)?;
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Where a coefficient lives in the reconstructed system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSlot {
    A { row: usize, col: usize },
    B { row: usize },
    Offset { row: usize },
}

/// Recurrent connection from state `from` into node `to`, weighted by `A[to][from]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub learnable: bool,
}

/// External input channel feeding its own node through `B[to][to]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputEdge {
    pub input: usize,
    pub to: usize,
    pub learnable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnNode {
    pub state: usize,
    pub name: String,
    pub observable: bool,
    pub incoming: Vec<Edge>,
    pub input: Option<InputEdge>,
}

/// Recurrent estimator induced from a template: one node per state, edges
/// wherever a coefficient is learnable or fixed to a nonzero value.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnStructure {
    template: ModelTemplate,
    nodes: Vec<RnnNode>,
    slots: Vec<ParamSlot>,
    names: Vec<String>,
    hash: String,
}

/// Build the estimator topology for a template.
pub fn induce_structure(template: &ModelTemplate) -> Result<RnnStructure> {
    let sys = &template.system;
    let n = sys.n();
    if template.learn_a.len() != n * n || template.learn_b.len() != n || template.learn_offset.len() != n {
        return Err(Error::invalid("template masks do not match the system dimension"));
    }
    if template.basal_state.len() != n {
        return Err(Error::LengthMismatch { what: "basal_state", expected: n, found: template.basal_state.len() });
    }
    let names = sys.state_names();

    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let incoming = (0..n)
            .filter_map(|j| {
                let learnable = template.learn_a[i * n + j];
                (learnable || sys.a(i, j) != 0.0).then_some(Edge { from: j, to: i, learnable })
            })
            .collect();
        let learnable = template.learn_b[i];
        let input = (learnable || sys.b_diag()[i] != 0.0).then_some(InputEdge { input: i, to: i, learnable });
        nodes.push(RnnNode { state: i, name: names[i].clone(), observable: sys.beta_diag()[i], incoming, input });
    }

    let mut slots = Vec::new();
    let mut pnames = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if template.learn_a[i * n + j] {
                slots.push(ParamSlot::A { row: i, col: j });
                pnames.push(format!("A[{},{}]", names[i], names[j]));
            }
        }
    }
    for i in 0..n {
        if template.learn_b[i] {
            slots.push(ParamSlot::B { row: i });
            pnames.push(format!("B[{}]", names[i]));
        }
    }
    for i in 0..n {
        if template.learn_offset[i] {
            slots.push(ParamSlot::Offset { row: i });
            pnames.push(format!("c[{}]", names[i]));
        }
    }
    if slots.is_empty() {
        return Err(Error::invalid("template has no learnable coefficients"));
    }

    let hash = structure_hash(template, &pnames);
    Ok(RnnStructure { template: template.clone(), nodes, slots, names: pnames, hash })
}

fn structure_hash(template: &ModelTemplate, pnames: &[String]) -> String {
    let sys = &template.system;
    let mut h = Sha256::new();
    let mut put = |s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    for s in sys.state_names() {
        put(s);
    }
    for s in sys.input_names() {
        put(s.as_deref().unwrap_or(""));
    }
    for p in pnames {
        put(p);
    }
    let bits: String = sys.beta_diag().iter().map(|&b| if b { '1' } else { '0' }).collect();
    put(&bits);
    // Fixed (non-learnable) values are part of the model; learnable ones are not.
    let n = sys.n();
    for (k, &v) in sys.a_matrix().iter().enumerate() {
        if !template.learn_a[k] {
            put(&format!("A{}:{v:e}", k));
        }
    }
    for i in 0..n {
        if !template.learn_b[i] {
            put(&format!("B{i}:{:e}", sys.b_diag()[i]));
        }
        if !template.learn_offset[i] {
            put(&format!("c{i}:{:e}", sys.affine_offset()[i]));
        }
    }
    format!("{:x}", h.finalize())
}

impl RnnStructure {
    pub fn template(&self) -> &ModelTemplate {
        &self.template
    }

    pub fn system(&self) -> &LinearOdeSystem {
        &self.template.system
    }

    pub fn n(&self) -> usize {
        self.template.system.n()
    }

    pub fn nodes(&self) -> &[RnnNode] {
        &self.nodes
    }

    pub fn recurrent_edges(&self) -> impl Iterator<Item = &Edge> {
        self.nodes.iter().flat_map(|n| n.incoming.iter())
    }

    pub fn input_edges(&self) -> impl Iterator<Item = &InputEdge> {
        self.nodes.iter().filter_map(|n| n.input.as_ref())
    }

    pub fn a_mask(&self) -> &[bool] {
        &self.template.learn_a
    }

    pub fn b_mask(&self) -> &[bool] {
        &self.template.learn_b
    }

    pub fn offset_mask(&self) -> &[bool] {
        &self.template.learn_offset
    }

    pub fn n_params(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// The template's own values at the learnable positions.
    pub fn anchor(&self) -> CoefficientVector {
        let sys = self.system();
        let values = self.slots.iter().map(|s| slot_value(sys, *s)).collect();
        CoefficientVector { names: self.names.clone(), values }
    }

    pub fn coefficients(&self, values: Vec<f64>) -> Result<CoefficientVector> {
        if values.len() != self.n_params() {
            return Err(Error::LengthMismatch { what: "coefficients", expected: self.n_params(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("coefficient `{}` is not finite", self.names[i])));
        }
        Ok(CoefficientVector { names: self.names.clone(), values })
    }

    pub fn check(&self, omega: &CoefficientVector) -> Result<()> {
        if omega.names != self.names {
            return Err(Error::StructureMismatch(format!(
                "expected coefficients [{}], got [{}]",
                self.names.join(", "),
                omega.names.join(", ")
            )));
        }
        Ok(())
    }

    /// The template with learnable entries replaced by `omega`.
    pub fn system_with(&self, omega: &CoefficientVector) -> Result<LinearOdeSystem> {
        self.check(omega)?;
        let mut sys = self.system().clone();
        for (slot, &v) in self.slots.iter().zip(&omega.values) {
            match *slot {
                ParamSlot::A { row, col } => sys.set_a(row, col, v)?,
                ParamSlot::B { row } => sys.set_b(row, v)?,
                ParamSlot::Offset { row } => sys.set_offset(row, v)?,
            }
        }
        Ok(sys)
    }

    /// Window start state: observed channels from the first sample, hidden ones
    /// from the template's basal state.
    pub fn initial_state(&self, seg: &Segment) -> Vec<f64> {
        let sys = self.system();
        (0..self.n())
            .map(|i| if sys.beta_diag()[i] { seg.trajectory.channel(i)[0] } else { self.template.basal_state[i] })
            .collect()
    }
}

fn slot_value(sys: &LinearOdeSystem, slot: ParamSlot) -> f64 {
    match slot {
        ParamSlot::A { row, col } => sys.a(row, col),
        ParamSlot::B { row } => sys.b_diag()[row],
        ParamSlot::Offset { row } => sys.affine_offset()[row],
    }
}

/// Learnable coefficients in canonical order: `A` row-major over its mask, then
/// diagonal `B`, then offsets. Serialized as a JSON object in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "coefficient values",
                expected: names.len(),
                found: values.len(),
            });
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Serialize for CoefficientVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.values.len()))?;
        for (k, v) in self.names.iter().zip(&self.values) {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for CoefficientVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = CoefficientVector;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an object of named coefficients")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut names = Vec::new();
                let mut values = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    if names.contains(&k) {
                        return Err(serde::de::Error::custom(format!("duplicate coefficient `{k}`")));
                    }
                    names.push(k);
                    values.push(v);
                }
                Ok(CoefficientVector { names, values })
            }
        }
        d.deserialize_map(V)
    }
}
