//! The example models shipped in `models/`. Each file is exactly
//! `serialize_model` of the graph built here; a test keeps them in sync.

use nalgebra::DMatrix;
use qmf_core::graph::{Factor, FactorGraph};
use qmf_core::measure::{interaction_gadget_open, one_shot_family, InteractionFamily};
use qmf_core::models::fr::{fr_model, table1_graph, table2_graph};
use qmf_core::models::gates::{self, random_unitary};
use qmf_core::models::{classicable_example, elementary_system};
use qmf_core::qmf::Pmf;
use qmf_core::tensor::{Axis, NamedTensor};
use qmf_core::C64;

fn density(name: &str, rho: &[[f64; 2]]) -> NamedTensor {
    let n = (rho.len() as f64).sqrt() as usize;
    let prime = format!("{name}'");
    NamedTensor::new(
        vec![Axis::new(name, n), Axis::new(prime, n)],
        rho.iter().map(|[re, im]| C64::new(*re, *im)).collect(),
    )
    .expect("square density")
}

/// Not positive semidefinite: `diag(1.5, -0.5)`.
fn broken() -> FactorGraph {
    let mut g = FactorGraph::new();
    g.add_pair("X", 2).unwrap();
    let rho = density("X", &[[1.5, 0.0], [0.0, 0.0], [0.0, 0.0], [-0.5, 0.0]]);
    g.add_factor(Factor::new("rho", rho).at_stage(0)).unwrap();
    g.declare_measured("X").unwrap();
    g
}

/// `|+><+|` on `S`, measured by interaction `m` with probe output `P`.
fn interaction(fam: &InteractionFamily) -> FactorGraph {
    let mut g = FactorGraph::new();
    g.add_pair("S", 2).unwrap();
    let plus = density("S", &[[0.5, 0.0]; 4]);
    g.add_factor(Factor::new("rho", plus).at_stage(0)).unwrap();
    let gadget = interaction_gadget_open(fam).unwrap();
    g.instantiate(&gadget, "m", &[("X", "S"), ("Xt", "T"), ("xit", "P")], 1)
        .unwrap();
    g
}

fn add_gate(g: &mut FactorGraph, id: &str, t: NamedTensor, stage: i64) {
    let f = Factor::new(id, t).at_stage(stage);
    let m = f.mirrored().unwrap();
    g.add_factor(f).unwrap();
    g.add_factor(m).unwrap();
}

fn one_shot() -> FactorGraph {
    let mut g = interaction(&one_shot_family(2, &[1.0, 0.0]).unwrap());
    g.terminate(&[("T", "T'"), ("P", "P'")], Some(2)).unwrap();
    g.declare_measured("T").unwrap();
    g
}

fn partial() -> FactorGraph {
    let fam = InteractionFamily::new(
        Pmf::uniform("xi", 2).unwrap(),
        vec![random_unitary(2, 3), random_unitary(2, 4)],
    )
    .unwrap();
    let mut g = interaction(&fam);
    g.terminate(&[("T", "T'"), ("P", "P'")], Some(2)).unwrap();
    g.declare_measured("T").unwrap();
    g
}

/// System and probe evolve separately after the interaction.
fn separation() -> FactorGraph {
    let mut g = interaction(&one_shot_family(2, &[1.0, 0.0]).unwrap());
    for v in ["T2", "P2"] {
        g.add_pair(v, 2).unwrap();
    }
    let v = gates::matrix_on(&random_unitary(2, 1), &[Axis::new("T2", 2)], &[Axis::new("T", 2)]).unwrap();
    let w = gates::matrix_on(&random_unitary(2, 2), &[Axis::new("P2", 2)], &[Axis::new("P", 2)]).unwrap();
    add_gate(&mut g, "V", v, 2);
    add_gate(&mut g, "W", w, 2);
    g.terminate(&[("T2", "T2'"), ("P2", "P2'")], Some(3)).unwrap();
    g.declare_measured("T2").unwrap();
    g
}

/// The interaction is undone by its adjoint, which touches system and probe.
fn undo() -> FactorGraph {
    let fam = one_shot_family(2, &[1.0, 0.0]).unwrap();
    let mut g = interaction(&fam);
    for v in ["T2", "P2"] {
        g.add_pair(v, 2).unwrap();
    }
    let uh = fam.joint(["T", "P", "T2", "P2"]).conj();
    add_gate(&mut g, "UH", uh, 2);
    g.terminate(&[("T2", "T2'"), ("P2", "P2'")], Some(3)).unwrap();
    g.declare_measured("T2").unwrap();
    g
}

fn elementary() -> FactorGraph {
    let p = Pmf::over("X0", &[0.5, 0.3, 0.2]).unwrap();
    elementary_system(&p, &random_unitary(3, 1), &random_unitary(3, 2), &random_unitary(3, 3)).unwrap()
}

fn classicable(p: &[f64]) -> FactorGraph {
    let h: DMatrix<C64> = gates::hadamard("o", "i").to_matrix().unwrap();
    let mut g = classicable_example(&Pmf::over("X0", p).unwrap(), &h, &random_unitary(2, 21)).unwrap();
    for v in ["X0", "X1", "X2"] {
        g.declare_measured(v).unwrap();
    }
    g
}

/// `(file stem, graph)` for every shipped model.
pub fn shipped_models() -> Vec<(&'static str, FactorGraph)> {
    let fr = fr_model();
    vec![
        ("fr", fr.full),
        ("direct", fr.direct),
        ("agent_f", fr.agent_f),
        ("agent_wbar", fr.agent_wbar),
        ("agent_w", fr.agent_w),
        ("table1", table1_graph().unwrap()),
        ("table2", table2_graph().unwrap()),
        ("elementary", elementary()),
        ("classicable_uniform", classicable(&[0.5, 0.5])),
        ("classicable_skewed", classicable(&[0.7, 0.3])),
        ("one_shot", one_shot()),
        ("partial", partial()),
        ("separation", separation()),
        ("undo", undo()),
        ("broken", broken()),
    ]
}
