//! Measurement constructions.
//!
//! * [`projection_gadget`]: projection measurement in the basis given by the
//!   columns of a unitary `B`, exposing the classical result.
//! * [`interaction_gadget`]: a unitary interaction with a probe that is
//!   marginalized afterwards. Its effect on the system is captured by the
//!   kernel [`kappa`]; it acts as a projection measurement iff `kappa` is the
//!   equality function.
//! * [`copy_gadget`]: copies a variable into a fresh probe (the one-shot
//!   interaction with the probe kept open).
//! * [`undo_check`] and [`separation_check`]: when a measurement is undone,
//!   and whether the probe stays clear of the system afterwards.
//!
//! All gadgets use the boundary names `X` (system in) and `Xt` (system out);
//! mirrors are primed.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{is_primed, Factor, FactorGraph, Gadget, GateRef, GraphError};
use crate::models::gates;
use crate::qmf::{Pmf, QmfError};
use crate::tensor::{is_unitary, Axis, NamedTensor, TensorError};
use crate::C64;

/// Tolerance for unitarity of gates and families.
pub const GATE_TOL: f64 = 1e-12;
/// Repeated interactions count as converged once every off-diagonal `|kappa|`
/// is at most this.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Qmf(#[from] QmfError),

    #[error("{0} is not unitary")]
    NotUnitary(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("alphabet size must be at least 2, got {0}")]
    TooSmall(usize),

    #[error("empty family")]
    Empty,
}

pub type MeasureResult<T> = Result<T, MeasureError>;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Probe distribution plus one unitary `U_zeta(xi_out, xi_in)` per system value.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionFamily {
    p_xi: Pmf,
    unitaries: Vec<DMatrix<C64>>,
}

impl InteractionFamily {
    pub fn new(p_xi: Pmf, unitaries: Vec<DMatrix<C64>>) -> MeasureResult<Self> {
        if unitaries.is_empty() {
            return Err(MeasureError::Empty);
        }
        if p_xi.axes().len() != 1 {
            return Err(MeasureError::DimensionMismatch("probe pmf must have one axis".into()));
        }
        let m = p_xi.axes()[0].card;
        for (z, u) in unitaries.iter().enumerate() {
            if u.nrows() != m || u.ncols() != m {
                return Err(MeasureError::DimensionMismatch(format!(
                    "U_{z} is {}x{}, probe alphabet has {m} values",
                    u.nrows(),
                    u.ncols()
                )));
            }
            let t = NamedTensor::from_matrix(Axis::new("o", m), Axis::new("i", m), u)?;
            if !is_unitary(&t, GATE_TOL)? {
                return Err(MeasureError::NotUnitary(format!("U_{z}")));
            }
        }
        Ok(InteractionFamily { p_xi, unitaries })
    }

    pub fn p_xi(&self) -> &Pmf {
        &self.p_xi
    }

    pub fn unitaries(&self) -> &[DMatrix<C64>] {
        &self.unitaries
    }

    /// Number of system values.
    pub fn card_zeta(&self) -> usize {
        self.unitaries.len()
    }

    /// Probe alphabet size.
    pub fn card_xi(&self) -> usize {
        self.p_xi.axes()[0].card
    }

    /// The joint unitary on `(system, probe)`:
    /// `U((zt, xit), (z, xi)) = delta(zt, z) U_z(xit, xi)`, over axes
    /// `[out_sys, out_probe, in_sys, in_probe]`.
    pub fn joint(&self, names: [&str; 4]) -> NamedTensor {
        let (mz, mx) = (self.card_zeta(), self.card_xi());
        let axes = vec![
            Axis::new(names[0], mz),
            Axis::new(names[1], mx),
            Axis::new(names[2], mz),
            Axis::new(names[3], mx),
        ];
        NamedTensor::from_fn(axes, |i| {
            if i[0] == i[2] {
                self.unitaries[i[2]][(i[1], i[3])]
            } else {
                ZERO
            }
        })
        .expect("valid axes")
    }
}

/// `kappa(zeta, zeta')`: unit diagonal, Hermitian, magnitudes at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaMatrix {
    data: DMatrix<C64>,
}

impl KappaMatrix {
    pub fn from_matrix(data: DMatrix<C64>) -> MeasureResult<Self> {
        if data.nrows() != data.ncols() {
            return Err(MeasureError::DimensionMismatch("kappa must be square".into()));
        }
        Ok(KappaMatrix { data })
    }

    pub fn equality(n: usize) -> Self {
        KappaMatrix {
            data: DMatrix::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO }),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, z: usize, zp: usize) -> C64 {
        self.data[(z, zp)]
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.data[(i, j)].norm());
                }
            }
        }
        m
    }

    /// Largest violation of the three invariants.
    pub fn invariant_error(&self) -> f64 {
        let n = self.dim();
        let mut e = 0.0f64;
        for i in 0..n {
            e = e.max((self.data[(i, i)] - ONE).norm());
            for j in 0..n {
                e = e.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
                e = e.max(self.data[(i, j)].norm() - 1.0);
            }
        }
        e
    }

    /// As a tensor over `(z, z')`.
    pub fn to_tensor(&self, z: &str, zp: &str) -> NamedTensor {
        NamedTensor::from_matrix(Axis::new(z, self.dim()), Axis::new(zp, self.dim()), &self.data)
            .expect("square")
    }
}

/// `kappa(z, z') = sum_xi p(xi) sum_xit conj(U_z'(xit, xi)) U_z(xit, xi)`.
pub fn kappa(fam: &InteractionFamily) -> KappaMatrix {
    let n = fam.card_zeta();
    let m = fam.card_xi();
    let p = fam.p_xi.data();
    let data = DMatrix::from_fn(n, n, |z, zp| {
        let mut acc = ZERO;
        for (xi, &pxi) in p.iter().enumerate().take(m) {
            let mut col = ZERO;
            for xt in 0..m {
                col += fam.unitaries[zp][(xt, xi)].conj() * fam.unitaries[z][(xt, xi)];
            }
            acc += col * pxi;
        }
        acc
    });
    KappaMatrix { data }
}

/// `U_z(xit, xi) = 1` iff `xit = z + xi (mod M)`, for `z` in `0..M`.
pub fn one_shot_family(m: usize, p_xi: &[f64]) -> MeasureResult<InteractionFamily> {
    if m < 2 {
        return Err(MeasureError::TooSmall(m));
    }
    if p_xi.len() != m {
        return Err(MeasureError::DimensionMismatch(format!(
            "probe pmf has {} entries, expected {m}",
            p_xi.len()
        )));
    }
    let p = Pmf::over("xi", p_xi)?;
    let unitaries = (0..m)
        .map(|z| DMatrix::from_fn(m, m, |xt, xi| if xt == (z + xi) % m { ONE } else { ZERO }))
        .collect();
    InteractionFamily::new(p, unitaries)
}

/// Entrywise product: `N` interactions in a row act like one with this kernel.
pub fn kappa_product(kappas: &[KappaMatrix]) -> MeasureResult<KappaMatrix> {
    let first = kappas.first().ok_or(MeasureError::Empty)?;
    let mut data = first.data.clone();
    for k in &kappas[1..] {
        if k.dim() != first.dim() {
            return Err(MeasureError::DimensionMismatch(format!(
                "kappa of size {} with size {}",
                first.dim(),
                k.dim()
            )));
        }
        data.component_mul_assign(&k.data);
    }
    Ok(KappaMatrix { data })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    /// Number of repetitions used (the first that met the threshold, or the cap).
    pub n: usize,
    pub max_off_diagonal: f64,
}

/// Repeats the interaction until the off-diagonal of `kappa^N` drops to
/// `threshold`, at most `max_n` times.
pub fn converge(fam: &InteractionFamily, max_n: usize, threshold: f64) -> Convergence {
    let k = kappa(fam);
    let mut acc = k.clone();
    let mut n = 1;
    loop {
        let off = acc.max_off_diagonal();
        if off <= threshold || n >= max_n {
            return Convergence {
                converged: off <= threshold,
                n,
                max_off_diagonal: off,
            };
        }
        acc.data.component_mul_assign(&k.data);
        n += 1;
    }
}

fn check_basis(b: &NamedTensor) -> MeasureResult<usize> {
    if !is_unitary(b, GATE_TOL)? {
        return Err(MeasureError::NotUnitary("measurement basis".into()));
    }
    Ok(b.axes()[0].card)
}

fn on(t: &NamedTensor, names: &[&str]) -> MeasureResult<NamedTensor> {
    let old: Vec<String> = t.axis_names().iter().map(|s| s.to_string()).collect();
    Ok(t.rename(|n| {
        let k = old.iter().position(|o| o == n).expect("own axis");
        names[k].to_string()
    })?)
}

/// Projection measurement in the basis of the columns of `b` (two axes,
/// `(out, in)`). Boundary `X`, `Xt` (paired) and the result `zeta`
/// (unpaired); internally `u = B^H X` and `Xt = B v` with `u = v = u' = v' = zeta`.
pub fn projection_gadget(b: &NamedTensor) -> MeasureResult<Gadget> {
    let m = check_basis(b)?;
    let mut half = FactorGraph::new();
    for v in ["X", "u", "v", "Xt"] {
        half.add_variable(v, m)?;
    }
    // B^H(u, x) = conj(B(x, u)): store conj(B) over (X, u)
    half.add_factor(Factor::new("BH", on(&b.conj(), &["X", "u"])?).at_stage(0))?;
    half.add_factor(Factor::new("B", on(b, &["Xt", "v"])?).at_stage(0))?;
    let mut g = half.mirror_complete()?;
    g.add_variable("zeta", m)?;
    let axes: Vec<Axis> = ["u", "v", "u'", "v'", "zeta"].iter().map(|n| Axis::new(*n, m)).collect();
    g.add_factor(
        Factor::new("eq", gates::f_eq(&axes)?)
            .with_gate(GateRef::new("f_eq"))
            .at_stage(0),
    )?;
    Ok(Gadget {
        kind: "projection".into(),
        graph: g,
        boundary: vec!["X".into(), "Xt".into(), "zeta".into()],
        system_outputs: vec!["Xt".into()],
        probe_outputs: vec!["zeta".into()],
    })
}

fn interaction_half(fam: &InteractionFamily) -> MeasureResult<FactorGraph> {
    let (mz, mx) = (fam.card_zeta(), fam.card_xi());
    let mut half = FactorGraph::new();
    half.add_variable("X", mz)?;
    half.add_variable("Xt", mz)?;
    half.add_variable("xi", mx)?;
    half.add_variable("xit", mx)?;
    half.add_factor(Factor::new("U", fam.joint(["Xt", "xit", "X", "xi"])).at_stage(0))?;
    let mut g = half.mirror_complete()?;
    let p = fam.p_xi.data().to_vec();
    g.add_factor(
        Factor::new("prior", gates::prior("xi", "xi'", &p)?)
            .with_gate(GateRef::new("prior").with_params(p))
            .at_stage(0),
    )?;
    Ok(g)
}

/// Unitary interaction with the probe output `xit` left open (boundary
/// `X`, `Xt`, `xit`, all paired).
pub fn interaction_gadget_open(fam: &InteractionFamily) -> MeasureResult<Gadget> {
    Ok(Gadget {
        kind: "interaction".into(),
        graph: interaction_half(fam)?,
        boundary: vec!["X".into(), "Xt".into(), "xit".into()],
        system_outputs: vec!["Xt".into()],
        probe_outputs: vec!["xit".into()],
    })
}

/// Unitary interaction with the probe marginalized (boundary `X`, `Xt`).
/// Its exterior is `delta(x, xt) delta(x', xt') kappa(x, x')`.
pub fn interaction_gadget(fam: &InteractionFamily) -> MeasureResult<Gadget> {
    let mut g = interaction_half(fam)?;
    g.terminate(&[("xit", "xit'")], Some(0))?;
    Ok(Gadget {
        kind: "interaction".into(),
        graph: g,
        boundary: vec!["X".into(), "Xt".into()],
        system_outputs: vec!["Xt".into()],
        probe_outputs: vec!["xit".into()],
    })
}

/// Copies `X` into `Xb` while passing it on as `Xt`: `f_=(X, Xt, zeta)`, a
/// constant-0 probe `xi`, and `f_oplus(zeta, xi, -Xb)`. Boundary `X`, `Xt`,
/// `Xb`, all paired.
pub fn copy_gadget(m: usize) -> MeasureResult<Gadget> {
    if m < 2 {
        return Err(MeasureError::TooSmall(m));
    }
    let mut half = FactorGraph::new();
    for v in ["X", "Xt", "Xb", "zeta", "xi"] {
        half.add_variable(v, m)?;
    }
    let ax = |names: &[&str]| -> Vec<Axis> { names.iter().map(|n| Axis::new(*n, m)).collect() };
    half.add_factor(
        Factor::new("eq", gates::f_eq(&ax(&["X", "Xt", "zeta"]))?)
            .with_gate(GateRef::new("f_eq"))
            .at_stage(0),
    )?;
    half.add_factor(
        Factor::new("zero", gates::indicator(Axis::new("xi", m), 0)?)
            .with_gate(GateRef::new("indicator").with_params(vec![0.0]))
            .at_stage(0),
    )?;
    half.add_factor(
        Factor::new("add", gates::f_oplus(&ax(&["zeta", "xi", "Xb"]), &[1, 1, -1])?)
            .with_gate(GateRef::new("f_oplus").with_params(vec![1.0, 1.0, -1.0]))
            .at_stage(0),
    )?;
    Ok(Gadget {
        kind: "copy".into(),
        graph: half.mirror_complete()?,
        boundary: vec!["X".into(), "Xt".into(), "Xb".into()],
        system_outputs: vec!["Xt".into()],
        probe_outputs: vec!["Xb".into()],
    })
}

/// Recovers the family of an interaction gadget placed in `g` under
/// `prefix`, from its joint unitary `prefix.U` and prior `prefix.prior`.
/// Also returns the joint unitary, axes `[out_sys, out_probe, in_sys, in_probe]`.
pub fn family_of_instance(g: &FactorGraph, prefix: &str) -> MeasureResult<(InteractionFamily, NamedTensor)> {
    let inst = g.instance(prefix)?;
    if inst.kind != "interaction" {
        return Err(MeasureError::DimensionMismatch(format!(
            "instance `{prefix}` is a {} gadget, not an interaction",
            inst.kind
        )));
    }
    let get = |id: &str| {
        let id = format!("{prefix}.{id}");
        g.factor(&id).ok_or(GraphError::UnknownFactor(id))
    };
    let joint = &get("U")?.tensor;
    let prior = &get("prior")?.tensor;
    let c = joint.cards();
    if c.len() != 4 || prior.rank() != 2 {
        return Err(MeasureError::DimensionMismatch(format!("instance `{prefix}` has malformed factors")));
    }
    let (mz, mx) = (c[0], c[1]);
    let p: Vec<f64> = (0..mx).map(|i| prior.get(&[i, i]).re).collect();
    let unitaries = (0..mz)
        .map(|z| DMatrix::from_fn(mx, mx, |a, b| joint.get(&[z, a, z, b])))
        .collect();
    let fam = InteractionFamily::new(Pmf::over("xi", &p)?, unitaries)?;
    Ok((fam, joint.clone()))
}

/// Exterior over `X, X', Xt, Xt'` with every other boundary variable of the
/// gadget closed off: paired ones by a termination, unpaired ones summed.
pub fn system_exterior(gadget: &Gadget) -> MeasureResult<NamedTensor> {
    let mut g = gadget.graph.clone();
    for b in &gadget.boundary {
        if b == "X" || b == "Xt" {
            continue;
        }
        if let Some(m) = g.mirror_of(b).map(str::to_string) {
            g.terminate(&[(b.as_str(), m.as_str())], None)?;
        }
    }
    Ok(g.exterior(&["X", "X'", "Xt", "Xt'"])?)
}

/// `delta(x, xt) delta(x', xt') k(x, x')` over `X, X', Xt, Xt'`.
pub fn decoherence_tensor(k: &KappaMatrix) -> NamedTensor {
    let n = k.dim();
    let axes = ["X", "X'", "Xt", "Xt'"].iter().map(|a| Axis::new(*a, n)).collect();
    NamedTensor::from_fn(axes, |i| {
        if i[0] == i[2] && i[1] == i[3] {
            k.get(i[0], i[1])
        } else {
            ZERO
        }
    })
    .expect("valid axes")
}

/// Splits a joint unitary over `[out_sys, out_probe, in_sys, in_probe]`.
fn joint_cards(u: &NamedTensor) -> MeasureResult<(usize, usize)> {
    let c = u.cards();
    if c.len() != 4 || c[0] != c[2] || c[1] != c[3] {
        return Err(MeasureError::DimensionMismatch(
            "joint unitary needs axes (out_sys, out_probe, in_sys, in_probe)".into(),
        ));
    }
    let names = u.axis_names();
    let m = u.fuse(&[("out", &names[..2]), ("in", &names[2..])])?;
    if !is_unitary(&m, GATE_TOL)? {
        return Err(MeasureError::NotUnitary("joint interaction".into()));
    }
    Ok((c[0], c[1]))
}

/// The undo layout: `U` acts on system `X` and probe `P` (prior `p_xi`),
/// then `U^H` acts on the result. With `probe_retained` the probe output of
/// `U` feeds `U^H` directly; otherwise it is terminated and `U^H` gets a
/// fresh probe from the same prior. The final probe is terminated.
pub fn undo_graph(u: &NamedTensor, p_xi: &Pmf, probe_retained: bool) -> MeasureResult<FactorGraph> {
    let (ms, mp) = joint_cards(u)?;
    if p_xi.data().len() != mp {
        return Err(MeasureError::DimensionMismatch("probe pmf does not match the probe axis".into()));
    }
    let mut half = FactorGraph::new();
    half.add_variable("X", ms)?;
    half.add_variable("Xm", ms)?;
    half.add_variable("Xu", ms)?;
    half.add_variable("P", mp)?;
    half.add_variable("Pm", mp)?;
    half.add_variable("Pu", mp)?;
    if !probe_retained {
        half.add_variable("Q", mp)?;
    }
    half.add_factor(Factor::new("U", on(u, &["Xm", "Pm", "X", "P"])?).at_stage(0))?;
    // U^H(a, b) = conj(U(b, a)): conj(U) with inputs and outputs exchanged
    let q_in = if probe_retained { "Pm" } else { "Q" };
    half.add_factor(Factor::new("UH", on(&u.conj(), &["Xm", q_in, "Xu", "Pu"])?).at_stage(2))?;
    let mut g = half.mirror_complete()?;
    let p = p_xi.data().to_vec();
    g.add_factor(Factor::new("prior", gates::prior("P", "P'", &p)?).at_stage(0))?;
    if !probe_retained {
        g.terminate(&[("Pm", "Pm'")], Some(1))?;
        g.add_factor(Factor::new("prior2", gates::prior("Q", "Q'", &p)?).at_stage(1))?;
    }
    g.terminate(&[("Pu", "Pu'")], Some(3))?;
    Ok(g)
}

/// Whether `U` followed by `U^H` (probe re-fed) leaves the system untouched:
/// the exterior over `X, X', Xu, Xu'` must be `delta(x, xu) delta(x', xu')`.
pub fn undo_check(u: &NamedTensor, p_xi: &Pmf, tol: f64) -> MeasureResult<bool> {
    undo_matches_identity(&undo_graph(u, p_xi, true)?, tol)
}

pub fn undo_matches_identity(g: &FactorGraph, tol: f64) -> MeasureResult<bool> {
    let ext = g.exterior(&["X", "X'", "Xu", "Xu'"])?;
    let n = ext.axes()[0].card;
    let id = NamedTensor::from_fn(ext.axes().to_vec(), |i| {
        if i[0] == i[2] && i[1] == i[3] {
            ONE
        } else {
            ZERO
        }
    })?;
    debug_assert_eq!(id.axes()[0].card, n);
    Ok(ext.max_abs_diff(&id)? <= tol)
}

/// Forward reachability from a gadget instance: variables carrying the probe
/// and variables carrying the system are followed through factors of strictly
/// increasing stage until a termination in `terminations`. Only the ket half is
/// followed. Returns `false` when some factor is reached from both.
pub fn separation_check<S: AsRef<str>>(
    g: &FactorGraph,
    instance: &str,
    terminations: &[S],
) -> MeasureResult<bool> {
    Ok(separation_violations(g, instance, terminations)?.is_empty())
}

/// Factors reached from both the probe and the system, in graph order.
pub fn separation_violations<S: AsRef<str>>(
    g: &FactorGraph,
    instance: &str,
    terminations: &[S],
) -> MeasureResult<Vec<String>> {
    let inst = g.instance(instance)?;
    let s0 = inst.stage;
    let mut stop: HashSet<&str> = inst.factors.iter().map(String::as_str).collect();
    for t in terminations {
        let t = t.as_ref();
        if g.factor(t).is_none() {
            return Err(GraphError::UnknownFactor(t.to_string()).into());
        }
        stop.insert(t);
    }
    let mut marks: HashMap<String, u8> = HashMap::new();
    for (seeds, bit) in [(&inst.probe_outputs, 1u8), (&inst.system_outputs, 2u8)] {
        // (variable, stage at which it was reached)
        let mut queue: Vec<(String, i64)> =
            seeds.iter().filter(|v| !is_primed(v)).map(|v| (v.clone(), s0)).collect();
        let mut seen: HashSet<String> = HashSet::new();
        while let Some((v, after)) = queue.pop() {
            for f in g.factors_of(&v) {
                if stop.contains(f.id.as_str()) {
                    continue;
                }
                let stage = f.stage.ok_or_else(|| GraphError::MissingStage(f.id.clone()))?;
                if stage <= after {
                    continue;
                }
                *marks.entry(f.id.clone()).or_default() |= bit;
                if !seen.insert(f.id.clone()) {
                    continue;
                }
                for a in f.tensor.axes() {
                    if !is_primed(&a.name) && a.name != v {
                        queue.push((a.name.clone(), stage));
                    }
                }
            }
        }
    }
    Ok(g
        .factors()
        .filter(|f| marks.get(&f.id) == Some(&3))
        .map(|f| f.id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gates::{hadamard, identity, random_unitary};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_family(mz: usize, mx: usize, seed: u64) -> InteractionFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..mx).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / s).collect();
        let us = (0..mz).map(|z| random_unitary(mx, seed * 31 + z as u64)).collect();
        InteractionFamily::new(Pmf::over("xi", &p).unwrap(), us).unwrap()
    }

    /// Reference: the kernel read straight off the closed interaction gadget.
    fn kappa_by_contraction(fam: &InteractionFamily) -> NamedTensor {
        let g = interaction_gadget(fam).unwrap();
        let ext = g.exterior().unwrap();
        // pick the xt = x, xt' = x' slice
        let n = fam.card_zeta();
        NamedTensor::from_fn(vec![Axis::new("z", n), Axis::new("z'", n)], |i| {
            ext.get_named(&[("X", i[0]), ("X'", i[1]), ("Xt", i[0]), ("Xt'", i[1])]).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn one_shot_kappa_is_equality() {
        for m in 2..5 {
            let p: Vec<f64> = (1..=m).map(|k| k as f64).collect();
            let s: f64 = p.iter().sum();
            let p: Vec<f64> = p.iter().map(|x| x / s).collect();
            let fam = one_shot_family(m, &p).unwrap();
            let k = kappa(&fam);
            assert_eq!(k, KappaMatrix::equality(m));
            // permutation matrices
            for u in fam.unitaries() {
                for r in 0..m {
                    assert_eq!((0..m).filter(|&c| u[(r, c)] == ONE).count(), 1);
                    assert_eq!((0..m).filter(|&c| u[(c, r)] == ONE).count(), 1);
                }
            }
        }
        assert!(matches!(one_shot_family(1, &[1.0]), Err(MeasureError::TooSmall(1))));
    }

    #[test]
    fn one_shot_binary_is_cnot() {
        let fam = one_shot_family(2, &[1.0, 0.0]).unwrap();
        let j = fam.joint(["c", "t", "ci", "ti"]);
        assert_eq!(j, gates::controlled_add(["c", "t"], ["ci", "ti"], 2));
    }

    #[test]
    fn identical_unitaries_give_all_ones() {
        let u = random_unitary(3, 5);
        let fam = InteractionFamily::new(Pmf::uniform("xi", 3).unwrap(), vec![u.clone(), u.clone(), u]).unwrap();
        let k = kappa(&fam);
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - ONE).norm() < 1e-12);
            }
        }
        // no measurement at all: the closed gadget is the double identity wire
        let ext = system_exterior(&interaction_gadget(&fam).unwrap()).unwrap();
        let wire = decoherence_tensor(&k);
        assert!(ext.max_abs_diff(&wire).unwrap() < 1e-12);
    }

    #[test]
    fn geometric_decay() {
        let m = DMatrix::from_row_slice(2, 2, &[ONE, C64::new(0.9, 0.0), C64::new(0.9, 0.0), ONE]);
        let k = KappaMatrix::from_matrix(m).unwrap();
        let prod = kappa_product(&vec![k; 50]).unwrap();
        assert!((prod.max_off_diagonal() - 0.9f64.powi(50)).abs() < 1e-15);
        assert!((prod.max_off_diagonal() - 5.15e-3).abs() < 1e-5);
        let eq = kappa_product(&vec![KappaMatrix::equality(3); 7]).unwrap();
        assert_eq!(eq, KappaMatrix::equality(3));
        assert!(matches!(kappa_product(&[]), Err(MeasureError::Empty)));
        assert!(matches!(
            kappa_product(&[KappaMatrix::equality(2), KappaMatrix::equality(3)]),
            Err(MeasureError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn one_shot_interaction_equals_projection() {
        for m in 2..4 {
            let fam = one_shot_family(m, &vec![1.0 / m as f64; m]).unwrap();
            let a = system_exterior(&interaction_gadget(&fam).unwrap()).unwrap();
            let b = system_exterior(&projection_gadget(&identity("o", "i", m)).unwrap()).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn copy_then_marginalize_equals_projection() {
        for m in 2..4 {
            let a = system_exterior(&copy_gadget(m).unwrap()).unwrap();
            let b = system_exterior(&projection_gadget(&identity("o", "i", m)).unwrap()).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn hadamard_basis_on_pure_zero() {
        let gadget = projection_gadget(&hadamard("o", "i")).unwrap();
        let mut g = FactorGraph::new();
        g.add_pair("S", 2).unwrap();
        g.add_factor(Factor::new("s0", gates::prior("S", "S'", &[1.0, 0.0]).unwrap())).unwrap();
        g.instantiate(&gadget, "m", &[("X", "S"), ("Xt", "T"), ("zeta", "Y")], 1).unwrap();
        g.terminate(&[("T", "T'")], Some(2)).unwrap();
        let p = g.exterior(&["Y"]).unwrap();
        assert!((p.get(&[0]) - C64::new(0.5, 0.0)).norm() < 1e-12);
        assert!((p.get(&[1]) - C64::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn repeated_projection_is_idempotent() {
        let b = NamedTensor::from_matrix(Axis::new("o", 3), Axis::new("i", 3), &random_unitary(3, 11)).unwrap();
        let gadget = projection_gadget(&b).unwrap();
        let mut twice = FactorGraph::new();
        twice.add_pair("A", 3).unwrap();
        twice.instantiate(&gadget, "p1", &[("X", "A"), ("Xt", "M"), ("zeta", "Z1")], 0).unwrap();
        twice.instantiate(&gadget, "p2", &[("X", "M"), ("Xt", "C"), ("zeta", "Z2")], 1).unwrap();
        let lhs = twice.exterior(&["A", "A'", "C", "C'", "Z1", "Z2"]).unwrap();

        let mut once = FactorGraph::new();
        once.add_pair("A", 3).unwrap();
        once.instantiate(&gadget, "p", &[("X", "A"), ("Xt", "C"), ("zeta", "Z")], 0).unwrap();
        once.add_variable("Z1", 3).unwrap();
        once.add_variable("Z2", 3).unwrap();
        let dup: Vec<Axis> = ["Z", "Z1", "Z2"].iter().map(|n| Axis::new(*n, 3)).collect();
        once.add_factor(Factor::new("dup", gates::f_eq(&dup).unwrap())).unwrap();
        let rhs = once.exterior(&["A", "A'", "C", "C'", "Z1", "Z2"]).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn partial_decoherence_scales_off_diagonal() {
        let fam = random_family(3, 2, 4);
        let ext = system_exterior(&interaction_gadget(&fam).unwrap()).unwrap();
        let expected = decoherence_tensor(&kappa(&fam));
        assert!(ext.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn undo_cnot_and_identity() {
        let p = Pmf::over("xi", &[1.0, 0.0]).unwrap();
        let cnot = gates::controlled_add(["a", "b"], ["c", "d"], 2);
        assert!(undo_check(&cnot, &p, 1e-12).unwrap());
        let id = NamedTensor::from_fn(
            ["a", "b", "c", "d"].iter().map(|n| Axis::new(*n, 2)).collect(),
            |i| if i[0] == i[2] && i[1] == i[3] { ONE } else { ZERO },
        )
        .unwrap();
        assert!(undo_check(&id, &p, 1e-12).unwrap());
        // probe discarded in between: the measurement sticks
        let g = undo_graph(&cnot, &p, false).unwrap();
        assert!(!undo_matches_identity(&g, 1e-12).unwrap());
        let ext = g.exterior(&["X", "X'", "Xu", "Xu'"]).unwrap();
        let k = kappa(&one_shot_family(2, &[1.0, 0.0]).unwrap());
        let projected = decoherence_tensor(&k).rename(|n| n.replace("Xt", "Xu")).unwrap();
        assert!(ext.max_abs_diff(&projected).unwrap() < 1e-12);
        let bad = NamedTensor::zeros(cnot.axes().to_vec()).unwrap();
        assert!(matches!(undo_check(&bad, &p, 1e-12), Err(MeasureError::NotUnitary(_))));
    }

    /// System `S` is measured by an interaction with probe output `P`; the
    /// system then evolves by `V`, the probe by `W`, and both are terminated.
    /// With `rejoin`, a final joint gate touches both before termination.
    fn separated_layout(rejoin: bool) -> (FactorGraph, Vec<String>) {
        let fam = one_shot_family(2, &[1.0, 0.0]).unwrap();
        let gadget = interaction_gadget_open(&fam).unwrap();
        let mut g = FactorGraph::new();
        g.add_pair("S", 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = [C64::new(s, 0.0), C64::new(0.0, s)];
        let rho = NamedTensor::from_fn(vec![Axis::new("S", 2), Axis::new("S'", 2)], |i| psi[i[0]] * psi[i[1]].conj())
            .unwrap();
        g.add_factor(Factor::new("rho", rho).at_stage(0)).unwrap();
        g.instantiate(&gadget, "m", &[("X", "S"), ("Xt", "S1"), ("xit", "P")], 1).unwrap();
        let v = NamedTensor::from_matrix(Axis::new("S2", 2), Axis::new("S1", 2), &random_unitary(2, 1)).unwrap();
        let w = NamedTensor::from_matrix(Axis::new("P2", 2), Axis::new("P", 2), &random_unitary(2, 2)).unwrap();
        let mut extra = FactorGraph::new();
        extra.add_variable("S1", 2).unwrap();
        extra.add_variable("S2", 2).unwrap();
        extra.add_variable("P", 2).unwrap();
        extra.add_variable("P2", 2).unwrap();
        extra.add_factor(Factor::new("V", v).at_stage(2)).unwrap();
        extra.add_factor(Factor::new("W", w).at_stage(2)).unwrap();
        if rejoin {
            extra.add_variable("S3", 2).unwrap();
            extra.add_variable("P3", 2).unwrap();
            extra
                .add_factor(Factor::new("J", gates::controlled_add(["P3", "S3"], ["P2", "S2"], 2)).at_stage(3))
                .unwrap();
        }
        let extra = extra.mirror_complete().unwrap();
        for v in extra.variables() {
            if g.variable(&v.name).is_none() && !is_primed(&v.name) {
                g.add_pair(&v.name, v.card).unwrap();
            }
        }
        for f in extra.factors() {
            g.add_factor(f.clone()).unwrap();
        }
        let (s_end, p_end) = if rejoin { ("S3", "P3") } else { ("S2", "P2") };
        let mut terms = g.terminate(&[(p_end, &format!("{p_end}'"))], Some(4)).unwrap();
        terms.extend(g.terminate(&[(s_end, &format!("{s_end}'"))], Some(4)).unwrap());
        (g, terms)
    }

    #[test]
    fn separation_holds_when_probe_stays_away() {
        let (g, terms) = separated_layout(false);
        assert!(separation_check(&g, "m", &terms).unwrap());
        // the probe's later evolution does not matter: same system state as
        // terminating the probe right after the interaction
        let with = g.exterior(&["S2", "S2'"]).unwrap();
        let mut h = g.clone();
        for id in ["W", "W'", "term.P2"] {
            h.remove_factor(id).unwrap();
        }
        h.terminate(&[("P", "P'")], Some(2)).unwrap();
        let without = h.exterior(&["S2", "S2'"]).unwrap();
        assert!(with.max_abs_diff(&without).unwrap() < 1e-12);
    }

    #[test]
    fn separation_fails_when_probe_rejoins() {
        let (g, terms) = separated_layout(true);
        assert!(!separation_check(&g, "m", &terms).unwrap());
        assert_eq!(separation_violations(&g, "m", &terms).unwrap(), vec!["J"]);
    }

    #[test]
    fn separation_needs_stages() {
        let (mut g, terms) = separated_layout(false);
        let mut w = g.remove_factor("W").unwrap();
        w.stage = None;
        g.add_factor(w).unwrap();
        assert!(matches!(
            separation_check(&g, "m", &terms),
            Err(MeasureError::Graph(GraphError::MissingStage(_)))
        ));
    }

    #[test]
    fn undo_layout_violates_separation() {
        let fam = one_shot_family(2, &[1.0, 0.0]).unwrap();
        let gadget = interaction_gadget_open(&fam).unwrap();
        let mut g = FactorGraph::new();
        g.add_pair("S", 2).unwrap();
        g.add_factor(Factor::new("rho", gates::prior("S", "S'", &[0.5, 0.5]).unwrap()).at_stage(0))
            .unwrap();
        g.instantiate(&gadget, "m", &[("X", "S"), ("Xt", "S1"), ("xit", "P")], 1).unwrap();
        let mut half = FactorGraph::new();
        for v in ["S1", "P", "S2", "P2"] {
            half.add_variable(v, 2).unwrap();
        }
        let uh = fam.joint(["S1", "P", "S2", "P2"]).conj();
        half.add_factor(Factor::new("UH", uh).at_stage(2)).unwrap();
        let half = half.mirror_complete().unwrap();
        for v in ["S2", "P2"] {
            g.add_pair(v, 2).unwrap();
        }
        for f in half.factors() {
            g.add_factor(f.clone()).unwrap();
        }
        let terms = g.terminate(&[("S2", "S2'"), ("P2", "P2'")], Some(3)).unwrap();
        assert!(!separation_check(&g, "m", &terms).unwrap());
    }

    #[test]
    fn family_survives_instantiation() {
        let fam = random_family(3, 2, 8);
        let mut g = FactorGraph::new();
        g.add_pair("S", 3).unwrap();
        g.instantiate(&interaction_gadget(&fam).unwrap(), "m", &[("X", "S"), ("Xt", "T")], 1)
            .unwrap();
        let (back, joint) = family_of_instance(&g, "m").unwrap();
        assert_eq!(back, fam);
        assert_eq!(joint.cards(), vec![3, 2, 3, 2]);
        let copy = copy_gadget(3).unwrap();
        g.instantiate(&copy, "c", &[("X", "T"), ("Xt", "U"), ("Xb", "B")], 2).unwrap();
        assert!(family_of_instance(&g, "c").is_err());
    }

    proptest! {
        #[test]
        fn kappa_invariants(mz in 2usize..4, mx in 2usize..4, seed in 0u64..10_000) {
            let fam = random_family(mz, mx, seed);
            let k = kappa(&fam);
            prop_assert!(k.invariant_error() < 1e-12);
            // full support and distinct unitaries: strictly inside the unit disk
            prop_assert!(k.max_off_diagonal() < 1.0 - 1e-6);
            let by_graph = kappa_by_contraction(&fam);
            prop_assert!(by_graph.max_abs_diff(&k.to_tensor("z", "z'")).unwrap() < 1e-12);
        }

        #[test]
        fn projection_iff_kappa_is_equality(mz in 2usize..4, seed in 0u64..10_000, one_shot in any::<bool>()) {
            let fam = if one_shot {
                one_shot_family(mz, &vec![1.0 / mz as f64; mz]).unwrap()
            } else {
                random_family(mz, mz, seed)
            };
            let ext = system_exterior(&interaction_gadget(&fam).unwrap()).unwrap();
            let proj = system_exterior(&projection_gadget(&identity("o", "i", mz)).unwrap()).unwrap();
            let equal = ext.max_abs_diff(&proj).unwrap() < 1e-12;
            let is_eq = kappa(&fam).max_off_diagonal() < 1e-12;
            prop_assert_eq!(equal, is_eq);
        }
    }
}
