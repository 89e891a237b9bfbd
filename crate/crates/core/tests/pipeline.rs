//! Whole-pipeline checks through the public API only.

use qmf_core::classical::{classicality_report, is_classical, is_jointly_classicable, valid_configurations, SUBSET_CAP};
use qmf_core::graph::{Factor, FactorGraph};
use qmf_core::measure::{kappa, one_shot_family, projection_gadget, system_exterior, KappaMatrix};
use qmf_core::models::fr::{fr_model, fr_model_with_seed, joint_probability};
use qmf_core::models::gates::{self, hadamard, random_unitary};
use qmf_core::models::elementary_system;
use qmf_core::qmf::{certify_graph, marginalize, measurement_pmf, Pmf, DEFAULT_TOL};
use qmf_core::C64;
use proptest::prelude::*;

#[test]
fn fr_full_model_certifies_and_refines_the_records() {
    let m = fr_model();
    let q = certify_graph(&m.full, &["Rb", "Sb", "Y1", "Y2"], DEFAULT_TOL).unwrap();
    let report = classicality_report(&q, SUBSET_CAP).unwrap();
    assert!(report.pairs.iter().all(|p| p.classicable), "{report:?}");
    assert!(report.maximal_sets.iter().all(|s| s.len() < 4));
    let y = marginalize(&q, &["Y1", "Y2"]).unwrap();
    let p = measurement_pmf(&y, &["Y1", "Y2"]).unwrap();
    assert!((p.get(&[0, 1]) - 1.0 / 12.0).abs() < 1e-12);
    let total: f64 = p.data().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn fr_probability_from_the_literal_and_refined_graphs_agree() {
    for seed in [0, 11, 12] {
        let m = fr_model_with_seed(seed);
        let a = joint_probability(&m.full, 0, 1).unwrap();
        let b = joint_probability(&m.direct, 0, 1).unwrap();
        assert!((a - b).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn hadamard_then_projection_in_the_computational_basis() {
    let mut g = FactorGraph::new();
    g.add_pair("A", 2).unwrap();
    g.add_pair("B", 2).unwrap();
    g.add_factor(Factor::new("p", gates::prior("A", "A'", &[1.0, 0.0]).unwrap()).at_stage(0)).unwrap();
    let h = Factor::new("H", hadamard("B", "A")).at_stage(1);
    let hm = h.mirrored().unwrap();
    g.add_factor(h).unwrap();
    g.add_factor(hm).unwrap();
    let gadget = projection_gadget(&gates::identity("o", "i", 2)).unwrap();
    g.instantiate(&gadget, "m", &[("X", "B"), ("Xt", "C"), ("zeta", "Y")], 2).unwrap();
    g.terminate(&[("C", "C'")], Some(3)).unwrap();
    // the later measurement shows up in the marginal of B
    let before = certify_graph(&g, &["A", "B"], DEFAULT_TOL).unwrap();
    assert!(is_classical(&before, "B").unwrap());
    let p = g.exterior(&["Y"]).unwrap();
    for y in 0..2 {
        assert!((p.get(&[y]) - C64::new(0.5, 0.0)).norm() < 1e-12);
    }
    let valid = valid_configurations(&before, DEFAULT_TOL).unwrap();
    assert_eq!(valid.len(), 2);
}

#[test]
fn projection_exterior_is_the_equality_decoherence() {
    for m in 2..=3 {
        let ext = system_exterior(&projection_gadget(&gates::identity("o", "i", m)).unwrap()).unwrap();
        let k = kappa(&one_shot_family(m, &vec![1.0 / m as f64; m]).unwrap());
        assert_eq!(k, KappaMatrix::equality(m));
        let expected = qmf_core::measure::decoherence_tensor(&k);
        assert!(ext.max_abs_diff(&expected).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elementary_pmf_is_a_distribution(m in 2usize..=4, seed in 0u64..1_000, w in proptest::collection::vec(0.01f64..1.0, 4)) {
        let s: f64 = w[..m].iter().sum();
        let p0 = Pmf::over("X0", &w[..m].iter().map(|x| x / s).collect::<Vec<_>>()).unwrap();
        let g = elementary_system(&p0, &random_unitary(m, seed), &random_unitary(m, seed + 1), &random_unitary(m, seed + 2)).unwrap();
        let q = certify_graph(&g, &["X3"], DEFAULT_TOL).unwrap();
        prop_assert!(is_jointly_classicable(&q, &["X3"]).unwrap());
        let p = measurement_pmf(&q, &["X3"]).unwrap();
        prop_assert!(p.data().iter().all(|&x| x >= 0.0));
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
