//! Mirrored Forney factor graphs.
//!
//! Variables are edges and factors are nodes: every variable may be touched by
//! at most two factors. A variable touched by one factor is a half-edge, which
//! is where exterior functions are read off or where a termination can be
//! attached. Sharing a variable among three or more factors goes through an
//! explicit equality factor ([`FactorGraph::share`]).
//!
//! The bra half of a graph uses primed names: the mirror of `X` is `X'`.
//! User-declared names therefore may not end in `'`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{contract, contract_with_stats, Axis, ContractionStats, NamedTensor, TensorError};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid variable name `{0}`")]
    InvalidName(String),

    #[error("variable `{0}` is already declared")]
    DuplicateVariable(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("factor id `{0}` is already used")]
    DuplicateFactor(String),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("variable `{var}` is declared with cardinality {declared} but used with {used}")]
    CardinalityMismatch {
        var: String,
        declared: usize,
        used: usize,
    },

    #[error("variable `{0}` would be touched by more than two factors; use an equality factor")]
    DegreeExceeded(String),

    #[error("box `{0}` is already declared")]
    DuplicateBox(String),

    #[error("unknown box `{0}`")]
    UnknownBox(String),

    #[error("variable `{var}` crosses the boundary of box `{name}`")]
    BoxLeak { name: String, var: String },

    #[error("`{0}` and `{1}` are not a mirror pair")]
    NotMirrorPair(String, String),

    #[error("variable `{0}` is not an open half-edge")]
    NotOpen(String),

    #[error("graph already has mirror pairs")]
    AlreadyMirrored,

    #[error("boundary variable `{0}` is not bound")]
    DanglingBoundary(String),

    #[error("`{0}` is not a boundary variable of the gadget")]
    UnknownBoundary(String),

    #[error("gadget prefix `{0}` is already in use")]
    DuplicatePrefix(String),

    #[error("unknown gadget instance `{0}`")]
    UnknownInstance(String),

    #[error("factor `{0}` has no stage annotation")]
    MissingStage(String),

    #[error("{0}")]
    Invalid(String),
}

pub type GraphResult<T> = Result<T, GraphError>;

pub fn is_primed(name: &str) -> bool {
    name.ends_with('\'')
}

/// `X -> X'` and `X' -> X`.
pub fn mirror_name(name: &str) -> String {
    match name.strip_suffix('\'') {
        Some(base) => base.to_string(),
        None => format!("{name}'"),
    }
}

fn check_user_name(name: &str) -> GraphResult<()> {
    if name.is_empty() || is_primed(name) || name.chars().any(char::is_whitespace) {
        return Err(GraphError::InvalidName(name.to_string()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub card: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<String>,
}

/// Reference to a builtin gate, kept alongside the tensor so that models can
/// be written back without rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub conj: bool,
}

impl GateRef {
    pub fn new(name: impl Into<String>) -> Self {
        GateRef {
            name: name.into(),
            params: Vec::new(),
            conj: false,
        }
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Self {
        self.params = params;
        self
    }

    pub fn conjugated(&self) -> Self {
        GateRef {
            conj: !self.conj,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ket,
    Bra,
    Bridge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub id: String,
    pub tensor: NamedTensor,
    pub gate: Option<GateRef>,
    pub stage: Option<i64>,
}

impl Factor {
    pub fn new(id: impl Into<String>, tensor: NamedTensor) -> Self {
        Factor {
            id: id.into(),
            tensor,
            gate: None,
            stage: None,
        }
    }

    pub fn with_gate(mut self, gate: GateRef) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn at_stage(mut self, stage: i64) -> Self {
        self.stage = Some(stage);
        self
    }

    /// Ket if no axis is primed, bra if all are, bridge otherwise.
    pub fn side(&self) -> Side {
        let primed = self.tensor.axes().iter().filter(|a| is_primed(&a.name)).count();
        if primed == 0 {
            Side::Ket
        } else if primed == self.tensor.rank() {
            Side::Bra
        } else {
            Side::Bridge
        }
    }

    pub fn touches(&self, var: &str) -> bool {
        self.tensor.has_axis(var)
    }

    /// Complex conjugate over the mirrored axes; id gets a trailing `'`.
    pub fn mirrored(&self) -> GraphResult<Factor> {
        Ok(Factor {
            id: mirror_name(&self.id),
            tensor: self.tensor.conj().rename(mirror_name)?,
            gate: self.gate.as_ref().map(GateRef::conjugated),
            stage: self.stage,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxDecl {
    pub name: String,
    pub factors: Vec<String>,
    pub boundary: Vec<String>,
}

/// Reusable subgraph with declared boundary variables.
///
/// `boundary` lists unprimed names; when a boundary variable has a mirror in
/// `graph`, the mirror is part of the boundary too.
#[derive(Clone, Debug)]
pub struct Gadget {
    pub kind: String,
    pub graph: FactorGraph,
    pub boundary: Vec<String>,
    /// Variables carrying the measured system onward.
    pub system_outputs: Vec<String>,
    /// Variables carrying the probe (or record) onward.
    pub probe_outputs: Vec<String>,
}

impl Gadget {
    /// Boundary in axis order, each variable followed by its mirror.
    pub fn boundary_axes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for b in &self.boundary {
            out.push(b.clone());
            if let Some(m) = self.graph.mirror_of(b) {
                out.push(m.to_string());
            }
        }
        out
    }

    /// Exterior function over [`Gadget::boundary_axes`].
    pub fn exterior(&self) -> GraphResult<NamedTensor> {
        self.graph.exterior(&self.boundary_axes())
    }
}

/// Record of a gadget placed into a host graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadgetInstance {
    pub prefix: String,
    pub kind: String,
    pub stage: i64,
    pub binding: IndexMap<String, String>,
    pub system_outputs: Vec<String>,
    pub probe_outputs: Vec<String>,
    pub factors: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    variables: IndexMap<String, VariableDecl>,
    factors: IndexMap<String, Factor>,
    boxes: IndexMap<String, BoxDecl>,
    instances: IndexMap<String, GadgetInstance>,
    measured: Vec<String>,
}

impl PartialEq for FactorGraph {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.factors == other.factors
            && self.boxes == other.boxes
            && self.instances == other.instances
            && self.measured == other.measured
    }
}

impl FactorGraph {
    pub fn new() -> Self {
        FactorGraph::default()
    }

    fn insert_variable(&mut self, decl: VariableDecl) -> GraphResult<()> {
        if decl.name.is_empty() {
            return Err(GraphError::InvalidName(decl.name));
        }
        if decl.card == 0 {
            return Err(TensorError::ZeroCardinality(decl.name).into());
        }
        if self.variables.contains_key(&decl.name) {
            return Err(GraphError::DuplicateVariable(decl.name));
        }
        self.variables.insert(decl.name.clone(), decl);
        Ok(())
    }

    /// Declares an unpaired variable.
    pub fn add_variable(&mut self, name: &str, card: usize) -> GraphResult<()> {
        check_user_name(name)?;
        self.insert_variable(VariableDecl {
            name: name.to_string(),
            card,
            mirror: None,
        })
    }

    /// Declares `name` together with its mirror `name'`.
    pub fn add_pair(&mut self, name: &str, card: usize) -> GraphResult<()> {
        check_user_name(name)?;
        let primed = mirror_name(name);
        if self.variables.contains_key(&primed) {
            return Err(GraphError::DuplicateVariable(primed));
        }
        self.insert_variable(VariableDecl {
            name: name.to_string(),
            card,
            mirror: Some(primed.clone()),
        })?;
        self.insert_variable(VariableDecl {
            name: primed,
            card,
            mirror: Some(name.to_string()),
        })
    }

    /// Restores a declaration verbatim (used by the model reader). Mirror
    /// links must be consistent once all variables are in; see [`FactorGraph::validate`].
    pub fn declare(&mut self, decl: VariableDecl) -> GraphResult<()> {
        match &decl.mirror {
            Some(m) if *m != mirror_name(&decl.name) => {
                Err(GraphError::NotMirrorPair(decl.name.clone(), m.clone()))
            }
            None if is_primed(&decl.name) => Err(GraphError::InvalidName(decl.name)),
            _ => self.insert_variable(decl),
        }
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDecl> {
        self.variables.get(name)
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableDecl> {
        self.variables.values()
    }

    pub fn card(&self, name: &str) -> GraphResult<usize> {
        self.variables
            .get(name)
            .map(|v| v.card)
            .ok_or_else(|| GraphError::UnknownVariable(name.to_string()))
    }

    pub fn mirror_of(&self, name: &str) -> Option<&str> {
        self.variables.get(name).and_then(|v| v.mirror.as_deref())
    }

    /// Unprimed names of all mirror pairs, in declaration order.
    pub fn pairs(&self) -> Vec<String> {
        self.variables
            .values()
            .filter(|v| v.mirror.is_some() && !is_primed(&v.name))
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn add_factor(&mut self, factor: Factor) -> GraphResult<()> {
        if factor.id.is_empty() {
            return Err(GraphError::InvalidName(factor.id));
        }
        if self.factors.contains_key(&factor.id) {
            return Err(GraphError::DuplicateFactor(factor.id));
        }
        for a in factor.tensor.axes() {
            let decl = self
                .variables
                .get(&a.name)
                .ok_or_else(|| GraphError::UnknownVariable(a.name.clone()))?;
            if decl.card != a.card {
                return Err(GraphError::CardinalityMismatch {
                    var: a.name.clone(),
                    declared: decl.card,
                    used: a.card,
                });
            }
            if self.degree(&a.name) >= 2 {
                return Err(GraphError::DegreeExceeded(a.name.clone()));
            }
        }
        self.factors.insert(factor.id.clone(), factor);
        Ok(())
    }

    pub fn remove_factor(&mut self, id: &str) -> GraphResult<Factor> {
        self.factors
            .shift_remove(id)
            .ok_or_else(|| GraphError::UnknownFactor(id.to_string()))
    }

    pub fn factor(&self, id: &str) -> Option<&Factor> {
        self.factors.get(id)
    }

    pub fn factors(&self) -> impl Iterator<Item = &Factor> {
        self.factors.values()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn degree(&self, var: &str) -> usize {
        self.factors.values().filter(|f| f.touches(var)).count()
    }

    pub fn factors_of(&self, var: &str) -> Vec<&Factor> {
        self.factors.values().filter(|f| f.touches(var)).collect()
    }

    /// Variables touched by exactly one factor.
    pub fn half_edges(&self) -> Vec<String> {
        self.variables
            .keys()
            .filter(|v| self.degree(v) == 1)
            .cloned()
            .collect()
    }

    pub fn declare_measured(&mut self, pair: &str) -> GraphResult<()> {
        if self.mirror_of(pair).is_none() || is_primed(pair) {
            return Err(GraphError::NotMirrorPair(pair.to_string(), mirror_name(pair)));
        }
        if !self.measured.iter().any(|m| m == pair) {
            self.measured.push(pair.to_string());
        }
        Ok(())
    }

    pub fn measured(&self) -> &[String] {
        &self.measured
    }

    /// Exterior function: every variable not in `keep` is summed out.
    pub fn exterior<S: AsRef<str>>(&self, keep: &[S]) -> GraphResult<NamedTensor> {
        let ts: Vec<&NamedTensor> = self.factors.values().map(|f| &f.tensor).collect();
        Ok(contract(&ts, keep)?)
    }

    pub fn exterior_with_stats<S: AsRef<str>>(
        &self,
        keep: &[S],
    ) -> GraphResult<(NamedTensor, ContractionStats)> {
        let ts: Vec<&NamedTensor> = self.factors.values().map(|f| &f.tensor).collect();
        Ok(contract_with_stats(&ts, keep)?)
    }

    /// Exterior function over mirror pairs, kept as `X, X', Y, Y', ...`.
    pub fn pair_exterior<S: AsRef<str>>(&self, pairs: &[S]) -> GraphResult<NamedTensor> {
        let keep = self.pair_axes(pairs)?;
        self.exterior(&keep)
    }

    pub fn pair_axes<S: AsRef<str>>(&self, pairs: &[S]) -> GraphResult<Vec<String>> {
        let mut keep = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            let p = p.as_ref();
            let m = self
                .mirror_of(p)
                .filter(|_| !is_primed(p))
                .ok_or_else(|| GraphError::NotMirrorPair(p.to_string(), mirror_name(p)))?;
            keep.push(p.to_string());
            keep.push(m.to_string());
        }
        Ok(keep)
    }

    pub fn add_box(&mut self, decl: BoxDecl) -> GraphResult<()> {
        if self.boxes.contains_key(&decl.name) {
            return Err(GraphError::DuplicateBox(decl.name));
        }
        for id in &decl.factors {
            if !self.factors.contains_key(id) {
                return Err(GraphError::UnknownFactor(id.clone()));
            }
        }
        for b in &decl.boundary {
            if !self.variables.contains_key(b) {
                return Err(GraphError::UnknownVariable(b.clone()));
            }
        }
        // any variable shared between the inside and the outside must be on the boundary
        for id in &decl.factors {
            for a in self.factors[id].tensor.axes() {
                let outside = self
                    .factors
                    .values()
                    .any(|f| f.touches(&a.name) && !decl.factors.contains(&f.id));
                if outside && !decl.boundary.contains(&a.name) {
                    return Err(GraphError::BoxLeak {
                        name: decl.name.clone(),
                        var: a.name.clone(),
                    });
                }
            }
        }
        self.boxes.insert(decl.name.clone(), decl);
        Ok(())
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BoxDecl> {
        self.boxes.values()
    }

    /// Exterior function of a box over its boundary, in boundary order.
    pub fn close_box(&self, name: &str) -> GraphResult<NamedTensor> {
        let decl = self
            .boxes
            .get(name)
            .ok_or_else(|| GraphError::UnknownBox(name.to_string()))?;
        let ts: Vec<&NamedTensor> = decl.factors.iter().map(|id| &self.factors[id].tensor).collect();
        Ok(contract(&ts, &decl.boundary)?)
    }

    /// Copy of the graph with the box's factors replaced by one factor (id =
    /// box name) holding its exterior function.
    pub fn with_box_closed(&self, name: &str) -> GraphResult<FactorGraph> {
        let closed = self.close_box(name)?;
        let decl = &self.boxes[name];
        let mut g = self.clone();
        g.boxes.shift_remove(name);
        for id in &decl.factors {
            g.factors.shift_remove(id);
        }
        g.instances.retain(|_, inst| !inst.factors.iter().any(|f| decl.factors.contains(f)));
        if g.factors.contains_key(name) {
            return Err(GraphError::DuplicateFactor(name.to_string()));
        }
        let stage = decl.factors.iter().filter_map(|id| self.factors[id].stage).max();
        g.factors.insert(
            name.to_string(),
            Factor {
                id: name.to_string(),
                tensor: closed,
                gate: None,
                stage,
            },
        );
        Ok(g)
    }

    /// Adds the bra half: a primed copy of every variable and, for every
    /// factor, its complex conjugate over the primed axes. Boxes are mirrored
    /// as well.
    pub fn mirror_complete(&self) -> GraphResult<FactorGraph> {
        if self.variables.values().any(|v| v.mirror.is_some()) {
            return Err(GraphError::AlreadyMirrored);
        }
        let mut g = FactorGraph::new();
        for v in self.variables.values() {
            g.add_pair(&v.name, v.card)?;
        }
        for f in self.factors.values() {
            g.add_factor(f.clone())?;
        }
        for f in self.factors.values() {
            g.add_factor(f.mirrored()?)?;
        }
        for b in self.boxes.values() {
            g.add_box(b.clone())?;
        }
        for b in self.boxes.values() {
            g.add_box(BoxDecl {
                name: mirror_name(&b.name),
                factors: b.factors.iter().map(|f| mirror_name(f)).collect(),
                boundary: b.boundary.iter().map(|v| mirror_name(v)).collect(),
            })?;
        }
        Ok(g)
    }

    fn check_open_pair(&self, x: &str, xp: &str) -> GraphResult<()> {
        if is_primed(x) || self.mirror_of(x) != Some(xp) {
            return Err(GraphError::NotMirrorPair(x.to_string(), xp.to_string()));
        }
        for v in [x, xp] {
            if self.degree(v) != 1 {
                return Err(GraphError::NotOpen(v.to_string()));
            }
        }
        Ok(())
    }

    /// Closes each open pair with an identity factor `term.X`.
    pub fn terminate(&mut self, pairs: &[(&str, &str)], stage: Option<i64>) -> GraphResult<Vec<String>> {
        for (x, xp) in pairs {
            self.check_open_pair(x, xp)?;
        }
        let mut ids = Vec::with_capacity(pairs.len());
        for (x, xp) in pairs {
            let card = self.card(x)?;
            let t = NamedTensor::from_fn(vec![Axis::new(*x, card), Axis::new(*xp, card)], |i| {
                C64::new(if i[0] == i[1] { 1.0 } else { 0.0 }, 0.0)
            })?;
            let mut f = Factor::new(format!("term.{x}"), t).with_gate(GateRef::new("f_eq"));
            f.stage = stage;
            ids.push(f.id.clone());
            self.add_factor(f)?;
        }
        Ok(ids)
    }

    /// Splits `var` into `k` copies `var.1 .. var.k` tied together by an
    /// equality factor `eq.var`. Applied to both halves when `var` is paired.
    /// `var` must be an open half-edge; its other end becomes the equality factor.
    pub fn share(&mut self, var: &str, k: usize) -> GraphResult<Vec<String>> {
        if k < 2 {
            return Err(GraphError::Invalid(format!("share needs k >= 2, got {k}")));
        }
        let card = self.card(var)?;
        let mirror = self.mirror_of(var).map(str::to_string);
        let mut sides = vec![var.to_string()];
        sides.extend(mirror);
        for v in &sides {
            if self.degree(v) >= 2 {
                return Err(GraphError::NotOpen(v.clone()));
            }
        }
        let names: Vec<String> = (1..=k).map(|i| format!("{var}.{i}")).collect();
        for n in &names {
            if sides.len() == 2 {
                self.add_pair(n, card)?;
            } else {
                self.add_variable(n, card)?;
            }
        }
        for v in &sides {
            let primed = is_primed(v);
            let mut axes = vec![Axis::new(v.as_str(), card)];
            for n in &names {
                let n = if primed { mirror_name(n) } else { n.clone() };
                axes.push(Axis::new(n, card));
            }
            let arity = axes.len();
            let t = NamedTensor::from_fn(axes, |i| {
                C64::new(if i.iter().all(|&x| x == i[0]) { 1.0 } else { 0.0 }, 0.0)
            })?;
            let id = if primed {
                mirror_name(&format!("eq.{var}"))
            } else {
                format!("eq.{var}")
            };
            let gate = GateRef::new("f_eq");
            debug_assert!(arity >= 3);
            self.add_factor(Factor::new(id, t).with_gate(gate))?;
        }
        Ok(names)
    }

    /// Places a copy of `gadget` into the graph. Internal variables and
    /// factor ids get `prefix.` prepended; boundary variables are renamed via
    /// `binding` (unprimed names only, mirrors follow). Bound variables that do
    /// not exist yet are declared. Gadget stages are offset by `stage`.
    pub fn instantiate(
        &mut self,
        gadget: &Gadget,
        prefix: &str,
        binding: &[(&str, &str)],
        stage: i64,
    ) -> GraphResult<()> {
        check_user_name(prefix)?;
        if self.instances.contains_key(prefix) {
            return Err(GraphError::DuplicatePrefix(prefix.to_string()));
        }
        let mut map: IndexMap<String, String> = IndexMap::new();
        for (b, host) in binding {
            if !gadget.boundary.iter().any(|x| x == b) {
                return Err(GraphError::UnknownBoundary(b.to_string()));
            }
            check_user_name(host)?;
            map.insert(b.to_string(), host.to_string());
        }
        for b in &gadget.boundary {
            if !map.contains_key(b) {
                return Err(GraphError::DanglingBoundary(b.clone()));
            }
        }
        let rename = |n: &str| -> String {
            let base = n.strip_suffix('\'').unwrap_or(n);
            let new = match map.get(base) {
                Some(h) => h.clone(),
                None => format!("{prefix}.{base}"),
            };
            if is_primed(n) {
                mirror_name(&new)
            } else {
                new
            }
        };

        // validate everything before mutating
        for b in &gadget.boundary {
            let inner = gadget
                .graph
                .variable(b)
                .ok_or_else(|| GraphError::UnknownVariable(b.clone()))?;
            let host = &map[b];
            if let Some(decl) = self.variables.get(host) {
                if decl.card != inner.card {
                    return Err(GraphError::CardinalityMismatch {
                        var: host.clone(),
                        declared: decl.card,
                        used: inner.card,
                    });
                }
                if inner.mirror.is_some() != decl.mirror.is_some() {
                    return Err(GraphError::NotMirrorPair(host.clone(), mirror_name(host)));
                }
            }
        }
        for v in gadget.graph.variables() {
            let base = v.name.strip_suffix('\'').unwrap_or(&v.name);
            if !map.contains_key(base) && self.variables.contains_key(&rename(&v.name)) {
                return Err(GraphError::DuplicateVariable(rename(&v.name)));
            }
        }
        for f in gadget.graph.factors() {
            let id = rename_id(prefix, &f.id);
            if self.factors.contains_key(&id) {
                return Err(GraphError::DuplicateFactor(id));
            }
        }

        let snapshot = self.clone();
        let result = (|| -> GraphResult<Vec<String>> {
            for v in gadget.graph.variables() {
                if is_primed(&v.name) {
                    continue;
                }
                let name = rename(&v.name);
                if self.variables.contains_key(&name) {
                    continue;
                }
                if v.mirror.is_some() {
                    self.add_pair(&name, v.card)?;
                } else {
                    self.add_variable(&name, v.card)?;
                }
            }
            let mut ids = Vec::new();
            for f in gadget.graph.factors() {
                let tensor = f.tensor.rename(|n| rename(n))?;
                let mut nf = Factor::new(rename_id(prefix, &f.id), tensor);
                nf.gate = f.gate.clone();
                nf.stage = Some(stage + f.stage.unwrap_or(0));
                ids.push(nf.id.clone());
                self.add_factor(nf)?;
            }
            Ok(ids)
        })();
        let ids = match result {
            Ok(ids) => ids,
            Err(e) => {
                *self = snapshot;
                return Err(e);
            }
        };
        self.instances.insert(
            prefix.to_string(),
            GadgetInstance {
                prefix: prefix.to_string(),
                kind: gadget.kind.clone(),
                stage,
                binding: map.clone(),
                system_outputs: gadget.system_outputs.iter().map(|n| rename(n)).collect(),
                probe_outputs: gadget.probe_outputs.iter().map(|n| rename(n)).collect(),
                factors: ids,
            },
        );
        Ok(())
    }

    /// Restores an instance record (used by the model reader).
    pub fn record_instance(&mut self, inst: GadgetInstance) -> GraphResult<()> {
        if self.instances.contains_key(&inst.prefix) {
            return Err(GraphError::DuplicatePrefix(inst.prefix));
        }
        for id in &inst.factors {
            if !self.factors.contains_key(id) {
                return Err(GraphError::UnknownFactor(id.clone()));
            }
        }
        for v in inst
            .system_outputs
            .iter()
            .chain(&inst.probe_outputs)
            .chain(inst.binding.values())
        {
            if !self.variables.contains_key(v) {
                return Err(GraphError::UnknownVariable(v.clone()));
            }
        }
        self.instances.insert(inst.prefix.clone(), inst);
        Ok(())
    }

    pub fn instances(&self) -> impl Iterator<Item = &GadgetInstance> {
        self.instances.values()
    }

    pub fn instance(&self, prefix: &str) -> GraphResult<&GadgetInstance> {
        self.instances
            .get(prefix)
            .ok_or_else(|| GraphError::UnknownInstance(prefix.to_string()))
    }

    /// Checks the structural invariants: mirror links are symmetric, every
    /// factor axis is declared with its cardinality, every variable has
    /// degree at most two.
    pub fn validate(&self) -> GraphResult<()> {
        for v in self.variables.values() {
            if v.card == 0 {
                return Err(TensorError::ZeroCardinality(v.name.clone()).into());
            }
            if let Some(m) = &v.mirror {
                let other = self
                    .variables
                    .get(m)
                    .ok_or_else(|| GraphError::UnknownVariable(m.clone()))?;
                if other.mirror.as_deref() != Some(v.name.as_str()) || other.card != v.card {
                    return Err(GraphError::NotMirrorPair(v.name.clone(), m.clone()));
                }
            }
            if self.degree(&v.name) > 2 {
                return Err(GraphError::DegreeExceeded(v.name.clone()));
            }
        }
        for f in self.factors.values() {
            for a in f.tensor.axes() {
                let d = self.card(&a.name)?;
                if d != a.card {
                    return Err(GraphError::CardinalityMismatch {
                        var: a.name.clone(),
                        declared: d,
                        used: a.card,
                    });
                }
            }
        }
        Ok(())
    }
}

fn rename_id(prefix: &str, id: &str) -> String {
    format!("{prefix}.{id}")
}
