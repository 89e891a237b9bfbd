//! The nested-agents (Frauchiger-Renner) model.
//!
//! All variables are binary except `Y1` (four values). Preparation: constant
//! zeros on `Ra`, `Xa`, `St`; `Rt = U Ra`, `Xt = H Xa`; a controlled swap
//! produces `R`, `X`, `S`. Names ending in `b` are measurement results.
//!
//! * `direct`: `B` on `(R, X)` gives `Y1`, measured as `Y1b`; `S` goes
//!   through `H` to `Y2`, measured as `Y2b`.
//! * `full`: as `direct`, but agent F's measurements of `R` and `S` are
//!   copied into probes `Rb`, `Sb` and later undone by controlled-NOTs.
//! * `agent_f`, `agent_wbar`, `agent_w`: the three agents' views.

use nalgebra::DMatrix;
use serde::Serialize;

use super::{add_mirrored, gates, ModelResult};
use crate::classical::{enumerate_configurations, joint_classicability_witness, ConfigTable, Witness};
use crate::graph::{Factor, FactorGraph, GateRef};
use crate::measure::copy_gadget;
use crate::qmf::{certify_graph, measurement_pmf, DEFAULT_TOL};
use crate::tensor::{contract, Axis, NamedTensor};
use crate::C64;

/// Completion seed used by [`fr_model`].
pub const DEFAULT_SEED: u64 = 0;
/// Largest intermediate tensor allowed when contracting the full model.
pub const PEAK_LIMIT: usize = 1 << 10;

#[derive(Clone, Debug)]
pub struct FrModel {
    pub seed: u64,
    pub u: DMatrix<C64>,
    pub b: DMatrix<C64>,
    pub full: FactorGraph,
    pub direct: FactorGraph,
    pub agent_f: FactorGraph,
    pub agent_wbar: FactorGraph,
    pub agent_w: FactorGraph,
}

pub fn fr_model() -> FrModel {
    fr_model_with_seed(DEFAULT_SEED)
}

/// Same model with `U` and `B` completed from a different seed.
pub fn fr_model_with_seed(seed: u64) -> FrModel {
    FrModel {
        seed,
        u: gates::fr_u(seed),
        b: gates::fr_b(seed),
        full: full_graph(seed).expect("fixed model"),
        direct: direct_graph(seed).expect("fixed model"),
        agent_f: agent_f_graph(seed).expect("fixed model"),
        agent_wbar: agent_wbar_graph(seed).expect("fixed model"),
        agent_w: agent_w_graph(seed).expect("fixed model"),
    }
}

fn seeded(name: &str, seed: u64) -> GateRef {
    if seed == DEFAULT_SEED {
        GateRef::new(name)
    } else {
        GateRef::new(name).with_params(vec![seed as f64])
    }
}

fn gate_factor(id: &str, gate: GateRef, axes: &[(&str, usize)]) -> ModelResult<Factor> {
    let axes: Vec<Axis> = axes.iter().map(|(n, c)| Axis::new(*n, *c)).collect();
    Ok(Factor::new(id, gates::build(&gate, &axes)?).with_gate(gate))
}

fn zero(g: &mut FactorGraph, id: &str, x: &str) -> ModelResult<()> {
    let xp = format!("{x}'");
    let f = gate_factor(id, GateRef::new("prior").with_params(vec![1.0, 0.0]), &[(x, 2), (&xp, 2)])?;
    g.add_factor(f.at_stage(0))?;
    Ok(())
}

/// Decoheres `x` and exposes the result as the unpaired variable `out`.
fn measure(g: &mut FactorGraph, x: &str, out: &str, stage: i64) -> ModelResult<()> {
    let c = g.card(x)?;
    g.add_variable(out, c)?;
    let xp = format!("{x}'");
    let f = gate_factor(&format!("meas.{x}"), GateRef::new("f_eq"), &[(x, c), (&xp, c), (out, c)])?;
    g.add_factor(f.at_stage(stage))?;
    Ok(())
}

fn mirrored_gate(g: &mut FactorGraph, id: &str, gate: GateRef, axes: &[(&str, usize)], stage: i64) -> ModelResult<()> {
    add_mirrored(g, gate_factor(id, gate, axes)?.at_stage(stage))
}

/// Stages 0 to 2: constants, `U`, `H`, controlled swap.
fn preparation(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = FactorGraph::new();
    for v in ["Ra", "Xa", "St", "Rt", "Xt", "R", "X", "S"] {
        g.add_pair(v, 2)?;
    }
    zero(&mut g, "zero.R", "Ra")?;
    zero(&mut g, "zero.X", "Xa")?;
    zero(&mut g, "zero.S", "St")?;
    mirrored_gate(&mut g, "U", seeded("fr_u", seed), &[("Rt", 2), ("Ra", 2)], 1)?;
    mirrored_gate(&mut g, "H.X", GateRef::new("hadamard"), &[("Xt", 2), ("Xa", 2)], 1)?;
    mirrored_gate(
        &mut g,
        "swap",
        GateRef::new("fredkin"),
        &[("R", 2), ("X", 2), ("S", 2), ("Rt", 2), ("Xt", 2), ("St", 2)],
        2,
    )?;
    Ok(g)
}

fn joint_basis(g: &mut FactorGraph, seed: u64, r: &str, stage: i64) -> ModelResult<()> {
    g.add_pair("Y1", 4)?;
    mirrored_gate(g, "B", seeded("fr_b", seed), &[("Y1", 4), (r, 2), ("X", 2)], stage)?;
    measure(g, "Y1", "Y1b", stage + 1)
}

fn direct_graph(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = preparation(seed)?;
    joint_basis(&mut g, seed, "R", 3)?;
    g.add_pair("Y2", 2)?;
    mirrored_gate(&mut g, "H.S", GateRef::new("hadamard"), &[("Y2", 2), ("S", 2)], 5)?;
    measure(&mut g, "Y2", "Y2b", 6)?;
    for m in ["Y1", "Y2"] {
        g.declare_measured(m)?;
    }
    Ok(g)
}

fn full_graph(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = preparation(seed)?;
    let copy = copy_gadget(2)?;
    g.instantiate(&copy, "mR", &[("X", "R"), ("Xt", "Rm"), ("Xb", "Rb")], 3)?;
    g.instantiate(&copy, "mS", &[("X", "S"), ("Xt", "Sm"), ("Xb", "Sb")], 4)?;
    for v in ["Ru", "Rbu", "Su", "Sbu"] {
        g.add_pair(v, 2)?;
    }
    let cnot = GateRef::new("cnot");
    mirrored_gate(&mut g, "undo.R", cnot.clone(), &[("Ru", 2), ("Rbu", 2), ("Rm", 2), ("Rb", 2)], 5)?;
    joint_basis(&mut g, seed, "Ru", 6)?;
    mirrored_gate(&mut g, "undo.S", cnot, &[("Su", 2), ("Sbu", 2), ("Sm", 2), ("Sb", 2)], 8)?;
    g.add_pair("Y2", 2)?;
    mirrored_gate(&mut g, "H.S", GateRef::new("hadamard"), &[("Y2", 2), ("Su", 2)], 9)?;
    measure(&mut g, "Y2", "Y2b", 10)?;
    g.terminate(&[("Rbu", "Rbu'"), ("Sbu", "Sbu'")], Some(11))?;
    for m in ["Rb", "Sb", "Y1", "Y2"] {
        g.declare_measured(m)?;
    }
    Ok(g)
}

fn agent_f_graph(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = preparation(seed)?;
    measure(&mut g, "R", "Rb", 3)?;
    g.terminate(&[("X", "X'")], Some(3))?;
    measure(&mut g, "S", "Sb", 4)?;
    for m in ["R", "S"] {
        g.declare_measured(m)?;
    }
    Ok(g)
}

fn agent_wbar_graph(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = preparation(seed)?;
    joint_basis(&mut g, seed, "R", 3)?;
    g.terminate(&[("S", "S'")], Some(5))?;
    g.declare_measured("Y1")?;
    Ok(g)
}

fn agent_w_graph(seed: u64) -> ModelResult<FactorGraph> {
    let mut g = preparation(seed)?;
    measure(&mut g, "R", "Rb", 3)?;
    g.terminate(&[("X", "X'")], Some(3))?;
    g.add_pair("Y2", 2)?;
    mirrored_gate(&mut g, "H.S", GateRef::new("hadamard"), &[("Y2", 2), ("S", 2)], 4)?;
    measure(&mut g, "Y2", "Y2b", 5)?;
    for m in ["R", "Y2"] {
        g.declare_measured(m)?;
    }
    Ok(g)
}

/// Ket-side network behind `psi(S, Y1)`, with the constants folded in:
/// `u(Rt)` is column 0 of `U`, `h(Xt)` is `H` applied to 0.
fn psi_factors(b: &DMatrix<C64>) -> ModelResult<Vec<NamedTensor>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let u = gates::fr_u_column();
    Ok(vec![
        NamedTensor::new(vec![Axis::new("Rt", 2)], u.to_vec())?,
        NamedTensor::new(vec![Axis::new("Xt", 2)], vec![C64::new(s, 0.0); 2])?,
        gates::indicator(Axis::new("St", 2), 0)?,
        gates::fredkin(["R", "X", "S"], ["Rt", "Xt", "St"]),
        gates::matrix_on(b, &[Axis::new("Y1", 4)], &[Axis::new("R", 2), Axis::new("X", 2)])?,
    ])
}

/// `psi(S, Y1)`, the ket amplitude of `S` and `Y1` before `S` is touched again.
pub fn psi_s_y1(m: &FrModel) -> ModelResult<NamedTensor> {
    Ok(contract(&psi_factors(&m.b)?, &["S", "Y1"])?)
}

/// Table columns.
pub const TABLE_COLUMNS: [&str; 6] = ["R", "Rt", "X", "Xt", "S", "St"];

fn table_graph(second: bool) -> ModelResult<FactorGraph> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut g = FactorGraph::new();
    for v in TABLE_COLUMNS {
        g.add_variable(v, 2)?;
    }
    let u = gates::fr_u_column();
    g.add_factor(Factor::new("u", NamedTensor::new(vec![Axis::new("Rt", 2)], u.to_vec())?))?;
    g.add_factor(Factor::new("h", NamedTensor::new(vec![Axis::new("Xt", 2)], vec![C64::new(s, 0.0); 2])?))?;
    g.add_factor(
        Factor::new("zero.S", gates::indicator(Axis::new("St", 2), 0)?)
            .with_gate(GateRef::new("indicator").with_params(vec![0.0])),
    )?;
    g.add_factor(
        Factor::new("swap", gates::fredkin(["R", "X", "S"], ["Rt", "Xt", "St"])).with_gate(GateRef::new("fredkin")),
    )?;
    let b = NamedTensor::new(vec![Axis::new("R", 2), Axis::new("X", 2)], gates::fr_b_row().to_vec())?;
    g.add_factor(Factor::new("b", b))?;
    if second {
        let h1 = NamedTensor::new(vec![Axis::new("S", 2)], vec![C64::new(s, 0.0), C64::new(-s, 0.0)])?;
        g.add_factor(Factor::new("h.Y2", h1))?;
    }
    Ok(g)
}

/// The critical ket network with `Y1 = 0` (the row of `B` is folded in).
/// Every variable is a column of the configuration table.
pub fn table1_graph() -> ModelResult<FactorGraph> {
    table_graph(false)
}

/// [`table1_graph`] extended by row 1 of `H` on `S` (the outcome `Y2 = 1`).
pub fn table2_graph() -> ModelResult<FactorGraph> {
    table_graph(true)
}

fn table_of(g: &FactorGraph) -> ModelResult<ConfigTable> {
    let t = g.exterior(&TABLE_COLUMNS)?;
    Ok(enumerate_configurations(&t, &TABLE_COLUMNS, DEFAULT_TOL)?)
}

pub fn table1() -> ModelResult<ConfigTable> {
    table_of(&table1_graph()?)
}

pub fn table2() -> ModelResult<ConfigTable> {
    table_of(&table2_graph()?)
}

/// `Pr(Y1b = y1, Y2b = y2)` by contracting `g`.
pub fn joint_probability(g: &FactorGraph, y1: usize, y2: usize) -> ModelResult<f64> {
    let t = g.exterior(&["Y1b", "Y2b"])?;
    Ok(t.get(&[y1, y2]).re)
}

/// `Pr(R = 1)` in agent F's view.
pub fn pr_r1(m: &FrModel) -> ModelResult<f64> {
    let q = certify_graph(&m.agent_f, &["R"], DEFAULT_TOL)?;
    Ok(measurement_pmf(&q, &["R"])?.get(&[1]))
}

/// `premise = a` implies `conclusion = c`, read inside one view.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Implication {
    pub view: String,
    pub premise: (String, usize),
    pub conclusion: (String, usize),
    /// Valid configurations satisfying the premise.
    pub premise_configs: usize,
    /// Of those, how many violate the conclusion.
    pub violations: usize,
    pub holds: bool,
}

impl Implication {
    pub fn statement(&self) -> String {
        format!(
            "{}={} => {}={}",
            self.premise.0, self.premise.1, self.conclusion.0, self.conclusion.1
        )
    }
}

/// Support check on the marginal of `g` onto the two pairs: every valid
/// configuration with `p = p' = a` has `c = c' = b`.
pub fn check_implication(
    view: &str,
    g: &FactorGraph,
    premise: (&str, usize),
    conclusion: (&str, usize),
) -> ModelResult<Implication> {
    let q = certify_graph(g, &[premise.0, conclusion.0], DEFAULT_TOL)?;
    let t = q.tensor();
    let mut premise_configs = 0;
    let mut violations = 0;
    for (idx, v) in t.indices().zip(t.data()) {
        if v.norm() <= DEFAULT_TOL || idx[0] != premise.1 || idx[1] != premise.1 {
            continue;
        }
        premise_configs += 1;
        if idx[2] != conclusion.1 || idx[3] != conclusion.1 {
            violations += 1;
        }
    }
    Ok(Implication {
        view: view.to_string(),
        premise: (premise.0.to_string(), premise.1),
        conclusion: (conclusion.0.to_string(), conclusion.1),
        premise_configs,
        violations,
        holds: premise_configs > 0 && violations == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewCheck {
    pub view: String,
    pub pairs: Vec<String>,
    pub full_pairs: Vec<String>,
    pub max_diff: f64,
}

/// Distance between the view's marginal onto `pairs` and the full model's
/// marginal onto `full_pairs` (matched position by position).
pub fn view_check(m: &FrModel, view: &str, pairs: &[&str], full_pairs: &[&str]) -> ModelResult<ViewCheck> {
    let g = match view {
        "agent_f" => &m.agent_f,
        "agent_wbar" => &m.agent_wbar,
        "agent_w" => &m.agent_w,
        "direct" => &m.direct,
        _ => &m.full,
    };
    let a = certify_graph(g, pairs, DEFAULT_TOL)?;
    let b = certify_graph(&m.full, full_pairs, DEFAULT_TOL)?;
    let ta = a.tensor();
    let tb = b.tensor();
    let max_diff = if ta.cards() != tb.cards() {
        f64::INFINITY
    } else {
        ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    };
    Ok(ViewCheck {
        view: view.to_string(),
        pairs: pairs.iter().map(|s| s.to_string()).collect(),
        full_pairs: full_pairs.iter().map(|s| s.to_string()).collect(),
        max_diff,
    })
}

pub fn view_checks(m: &FrModel) -> ModelResult<Vec<ViewCheck>> {
    Ok(vec![
        view_check(m, "agent_f", &["R", "S"], &["R", "S"])?,
        view_check(m, "agent_f", &["R", "S"], &["Rb", "Sb"])?,
        view_check(m, "agent_wbar", &["Y1"], &["Y1"])?,
        view_check(m, "agent_w", &["R", "Y2"], &["R", "Y2"])?,
        view_check(m, "direct", &["R", "S", "Y1", "Y2"], &["R", "S", "Y1", "Y2"])?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrImplications {
    pub implications: Vec<Implication>,
    pub pairs: Vec<String>,
    pub witness: Witness,
    pub jointly_classicable: bool,
    /// The same question for the probe records in the full model.
    pub record_pairs: Vec<String>,
    pub record_witness: Witness,
}

/// The three single-view implications and the joint classicability verdict
/// on `R, S, Y1, Y2`.
pub fn fr_implications(m: &FrModel) -> ModelResult<FrImplications> {
    let implications = vec![
        check_implication("agent_f", &m.agent_f, ("S", 1), ("R", 1))?,
        check_implication("agent_wbar", &m.agent_wbar, ("Y1", 0), ("S", 1))?,
        check_implication("agent_w", &m.agent_w, ("R", 1), ("Y2", 0))?,
    ];
    let pairs = ["R", "S", "Y1", "Y2"];
    let q = certify_graph(&m.full, &pairs, DEFAULT_TOL)?;
    let witness = joint_classicability_witness(&q, &pairs)?;
    let records = ["Rb", "Sb", "Y1", "Y2"];
    let qr = certify_graph(&m.full, &records, DEFAULT_TOL)?;
    let record_witness = joint_classicability_witness(&qr, &records)?;
    Ok(FrImplications {
        implications,
        pairs: pairs.iter().map(|s| s.to_string()).collect(),
        jointly_classicable: witness.magnitude <= DEFAULT_TOL,
        witness,
        record_pairs: records.iter().map(|s| s.to_string()).collect(),
        record_witness,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrReport {
    pub seed: u64,
    pub table1: ConfigTable,
    pub table2: ConfigTable,
    #[serde(serialize_with = "ser_complex")]
    pub table2_sum: C64,
    #[serde(serialize_with = "ser_complex")]
    pub psi_00: C64,
    pub pr_r1: f64,
    pub pr_y1_0_y2_1: f64,
    pub pr_direct: f64,
    pub peak_entries: usize,
    pub implications: FrImplications,
    pub views: Vec<ViewCheck>,
}

fn ser_complex<S: serde::Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&crate::numfmt::rounded(z.re))?;
    t.serialize_element(&crate::numfmt::rounded(z.im))?;
    t.end()
}

pub fn fr_report(m: &FrModel) -> ModelResult<FrReport> {
    let table1 = table1()?;
    let table2 = table2()?;
    let (t, stats) = m.full.exterior_with_stats(&["Y1b", "Y2b"])?;
    Ok(FrReport {
        seed: m.seed,
        table2_sum: table2.sum(),
        table1,
        table2,
        psi_00: psi_s_y1(m)?.get_named(&[("S", 0), ("Y1", 0)])?,
        pr_r1: pr_r1(m)?,
        pr_y1_0_y2_1: t.get_named(&[("Y1b", 0), ("Y2b", 1)])?.re,
        pr_direct: joint_probability(&m.direct, 0, 1)?,
        peak_entries: stats.peak_entries,
        implications: fr_implications(m)?,
        views: view_checks(m)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::separation_check;

    #[test]
    fn psi_vanishes_at_origin() {
        let m = fr_model();
        let psi = psi_s_y1(&m).unwrap();
        assert!(psi.get_named(&[("S", 0), ("Y1", 0)]).unwrap().norm() < 1e-12);
    }

    #[test]
    fn stopping_probability() {
        let m = fr_model();
        assert!((joint_probability(&m.full, 0, 1).unwrap() - 1.0 / 12.0).abs() < 1e-12);
        assert!((joint_probability(&m.direct, 0, 1).unwrap() - 1.0 / 12.0).abs() < 1e-12);
        assert!((pr_r1(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tables() {
        let t1 = table1().unwrap();
        let rows: Vec<Vec<usize>> = t1.rows.iter().map(|r| r.values.clone()).collect();
        let expected = vec![
            vec![0, 0, 0, 0, 0, 0],
            vec![0, 0, 1, 1, 0, 0],
            vec![1, 1, 0, 0, 0, 0],
            vec![1, 1, 0, 1, 1, 0],
        ];
        assert_eq!(rows, expected);
        let t2 = table2().unwrap();
        let rows2: Vec<Vec<usize>> = t2.rows.iter().map(|r| r.values.clone()).collect();
        assert_eq!(rows2, expected);
        assert!((t2.sum() - C64::new(1.0 / (2.0 * 3f64.sqrt()), 0.0)).norm() < 1e-12);
        // psi(0, 0) is the sum of the first three rows
        let s: C64 = t1.rows[..3].iter().map(|r| r.value).sum();
        assert!(s.norm() < 1e-12);
    }

    #[test]
    fn views_are_marginals() {
        let m = fr_model();
        for v in view_checks(&m).unwrap() {
            assert!(v.max_diff < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn implications_and_verdict() {
        let m = fr_model();
        let r = fr_implications(&m).unwrap();
        for i in &r.implications {
            assert!(i.holds, "{i:?}");
        }
        assert!(!r.jointly_classicable);
        assert!(r.witness.magnitude > 1e-3);
        assert!(r.record_witness.magnitude > 1e-3);
    }

    #[test]
    fn contraction_stays_small() {
        let m = fr_model();
        let (_, stats) = m.full.exterior_with_stats(&["Y1b", "Y2b"]).unwrap();
        assert!(stats.peak_entries <= PEAK_LIMIT, "{}", stats.peak_entries);
    }

    #[test]
    fn undone_copies_break_separation() {
        let m = fr_model();
        assert!(!separation_check(&m.full, "mR", &["term.Rbu"]).unwrap());
        assert!(!separation_check(&m.full, "mS", &["term.Sbu"]).unwrap());
    }

    #[test]
    fn completion_seed_does_not_matter() {
        let base = joint_probability(&fr_model().full, 0, 1).unwrap();
        for seed in [1, 7, 12345] {
            let m = fr_model_with_seed(seed);
            assert_ne!(m.u, fr_model().u);
            assert!((joint_probability(&m.full, 0, 1).unwrap() - base).abs() < 1e-12);
        }
    }
}
