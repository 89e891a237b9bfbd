//! Small systems: one measurement, two partial measurements, and the
//! three-variable example used for joint classicability.

use nalgebra::DMatrix;

use super::{add_mirrored, check_unitary, gates, ModelError, ModelResult};
use crate::graph::{Factor, FactorGraph, GateRef};
use crate::measure::projection_gadget;
use crate::qmf::Pmf;
use crate::tensor::{Axis, NamedTensor};
use crate::C64;

fn prior_factor(id: &str, x: &str, p: &Pmf) -> ModelResult<Factor> {
    let probs = p.data().to_vec();
    let xp = format!("{x}'");
    Ok(Factor::new(id, gates::prior(x, &xp, &probs)?).with_gate(GateRef::new("prior").with_params(probs)))
}

fn card_of(p: &Pmf) -> ModelResult<usize> {
    match p.axes() {
        [a] => Ok(a.card),
        _ => Err(ModelError::DimensionMismatch("initial pmf must have one axis".into())),
    }
}

/// Mixture `p0`, evolutions `U0` then `U1`, projection measurement in the
/// basis of the columns of `B` with result `Y`, termination.
///
/// Pairs `X0 .. X4` plus `V` (between the equality and `B`); `Y` is unpaired.
/// `X3 = B^H X2` is the measured variable.
pub fn elementary_system(p0: &Pmf, u0: &DMatrix<C64>, u1: &DMatrix<C64>, b: &DMatrix<C64>) -> ModelResult<FactorGraph> {
    let m = card_of(p0)?;
    check_unitary("U0", u0, m)?;
    check_unitary("U1", u1, m)?;
    check_unitary("B", b, m)?;
    let ax = |n: &str| Axis::new(n, m);
    let mut g = FactorGraph::new();
    for v in ["X0", "X1", "X2", "X3", "V", "X4"] {
        g.add_pair(v, m)?;
    }
    g.add_variable("Y", m)?;
    g.add_factor(prior_factor("p0", "X0", p0)?.at_stage(0))?;
    add_mirrored(&mut g, Factor::new("U0", gates::matrix_on(u0, &[ax("X1")], &[ax("X0")])?).at_stage(1))?;
    add_mirrored(&mut g, Factor::new("U1", gates::matrix_on(u1, &[ax("X2")], &[ax("X1")])?).at_stage(2))?;
    // B^H(x3, x2) = conj(B(x2, x3))
    let bh = gates::matrix_on(&b.map(|z| z.conj()), &[ax("X2")], &[ax("X3")])?;
    add_mirrored(&mut g, Factor::new("BH", bh).at_stage(3))?;
    let eq: Vec<Axis> = ["X3", "V", "X3'", "V'", "Y"].iter().map(|n| ax(n)).collect();
    g.add_factor(Factor::new("eq", gates::f_eq(&eq)?).with_gate(GateRef::new("f_eq")).at_stage(4))?;
    add_mirrored(&mut g, Factor::new("B", gates::matrix_on(b, &[ax("X4")], &[ax("V")])?).at_stage(5))?;
    g.terminate(&[("X4", "X4'")], Some(6))?;
    g.declare_measured("X3")?;
    Ok(g)
}

/// Which half of a pair-indexed state a measurement acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    A,
    C,
}

/// A system on pairs `(a, c)`, index `a * mc + c`:
/// `p0 -> U0 -> measure -> U1 -> measure -> U2 -> termination`.
#[derive(Clone, Debug)]
pub struct TwoMeasurementSpec {
    pub ma: usize,
    pub mc: usize,
    pub p0: Pmf,
    pub u0: DMatrix<C64>,
    pub u1: DMatrix<C64>,
    pub u2: DMatrix<C64>,
    pub b1: DMatrix<C64>,
    pub on1: Part,
    pub b2: DMatrix<C64>,
    pub on2: Part,
}

impl TwoMeasurementSpec {
    /// Computational-basis measurements of `A` then `C`, all evolutions trivial.
    pub fn trivial(ma: usize, mc: usize, p0: Pmf) -> Self {
        let n = ma * mc;
        TwoMeasurementSpec {
            ma,
            mc,
            p0,
            u0: DMatrix::identity(n, n),
            u1: DMatrix::identity(n, n),
            u2: DMatrix::identity(n, n),
            b1: DMatrix::identity(ma, ma),
            on1: Part::A,
            b2: DMatrix::identity(mc, mc),
            on2: Part::C,
        }
    }
}

/// Graph for [`TwoMeasurementSpec`]. The state after step `k` lives on
/// pairs `Ak`, `Ck`; results are `Y1`, `Y2` (unpaired); `U2` maps onto `Z`,
/// which is terminated.
pub fn two_measurement_system(spec: &TwoMeasurementSpec) -> ModelResult<FactorGraph> {
    let (ma, mc) = (spec.ma, spec.mc);
    let n = ma * mc;
    if card_of(&spec.p0)? != n {
        return Err(ModelError::DimensionMismatch(format!(
            "initial pmf over {} values, state space has {n}",
            card_of(&spec.p0)?
        )));
    }
    check_unitary("U0", &spec.u0, n)?;
    check_unitary("U1", &spec.u1, n)?;
    check_unitary("U2", &spec.u2, n)?;
    let card = |p: Part| if p == Part::A { ma } else { mc };
    check_unitary("B1", &spec.b1, card(spec.on1))?;
    check_unitary("B2", &spec.b2, card(spec.on2))?;

    let mut g = FactorGraph::new();
    g.add_pair("X0", n)?;
    g.add_factor(prior_factor("p0", "X0", &spec.p0)?.at_stage(0))?;
    g.add_pair("A1", ma)?;
    g.add_pair("C1", mc)?;
    let u0 = gates::matrix_on(&spec.u0, &[Axis::new("A1", ma), Axis::new("C1", mc)], &[Axis::new("X0", n)])?;
    add_mirrored(&mut g, Factor::new("U0", u0).at_stage(1))?;

    let (mut a, mut c) = ("A1".to_string(), "C1".to_string());
    let mut step = 1;
    let mut stage = 2;
    for (k, (b, on)) in [(&spec.b1, spec.on1), (&spec.b2, spec.on2)].into_iter().enumerate() {
        let basis = NamedTensor::from_matrix(Axis::new("o", b.nrows()), Axis::new("i", b.ncols()), b)?;
        let gadget = projection_gadget(&basis)?;
        step += 1;
        let cur = if on == Part::A { &mut a } else { &mut c };
        let next = format!("{}{step}", if on == Part::A { "A" } else { "C" });
        let y = format!("Y{}", k + 1);
        g.instantiate(&gadget, &format!("m{}", k + 1), &[("X", cur.as_str()), ("Xt", &next), ("zeta", &y)], stage)?;
        *cur = next;
        stage += 1;
        if k == 0 {
            step += 1;
            let (na, nc) = (format!("A{step}"), format!("C{step}"));
            g.add_pair(&na, ma)?;
            g.add_pair(&nc, mc)?;
            let u1 = gates::matrix_on(
                &spec.u1,
                &[Axis::new(&na, ma), Axis::new(&nc, mc)],
                &[Axis::new(&a, ma), Axis::new(&c, mc)],
            )?;
            add_mirrored(&mut g, Factor::new("U1", u1).at_stage(stage))?;
            a = na;
            c = nc;
            stage += 1;
        }
    }
    g.add_pair("Z", n)?;
    let u2 = gates::matrix_on(&spec.u2, &[Axis::new("Z", n)], &[Axis::new(&a, ma), Axis::new(&c, mc)])?;
    add_mirrored(&mut g, Factor::new("U2", u2).at_stage(stage))?;
    g.terminate(&[("Z", "Z'")], Some(stage + 1))?;
    Ok(g)
}

/// `p0` on `X0`, then `X1 = U1 X0`, `X2 = U2 X1`, termination. All entries
/// of `U1` and `U2` must have magnitude below 1.
pub fn classicable_example(p0: &Pmf, u1: &DMatrix<C64>, u2: &DMatrix<C64>) -> ModelResult<FactorGraph> {
    let m = card_of(p0)?;
    for (name, u) in [("U1", u1), ("U2", u2)] {
        check_unitary(name, u, m)?;
        let magnitude = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if magnitude >= 1.0 {
            return Err(ModelError::TrivialEntry {
                name: name.to_string(),
                magnitude,
            });
        }
    }
    let ax = |n: &str| Axis::new(n, m);
    let mut g = FactorGraph::new();
    for v in ["X0", "X1", "X2"] {
        g.add_pair(v, m)?;
    }
    g.add_factor(prior_factor("p0", "X0", p0)?.at_stage(0))?;
    add_mirrored(&mut g, Factor::new("U1", gates::matrix_on(u1, &[ax("X1")], &[ax("X0")])?).at_stage(1))?;
    add_mirrored(&mut g, Factor::new("U2", gates::matrix_on(u2, &[ax("X2")], &[ax("X1")])?).at_stage(2))?;
    g.terminate(&[("X2", "X2'")], Some(3))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{is_classical, is_jointly_classicable, joint_classicability_witness};
    use crate::models::gates::random_unitary;
    use crate::qmf::{certify_graph, measurement_pmf, DEFAULT_TOL};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn trivial_elementary_system_returns_prior() {
        let p = Pmf::over("X0", &[0.2, 0.5, 0.3]).unwrap();
        let id = DMatrix::identity(3, 3);
        let g = elementary_system(&p, &id, &id, &id).unwrap();
        let q = certify_graph(&g, &["X3"], DEFAULT_TOL).unwrap();
        let pmf = measurement_pmf(&q, &["X3"]).unwrap();
        for (a, b) in pmf.data().iter().zip(p.data()) {
            assert!(close(*a, *b, 1e-12));
        }
        let y = g.exterior(&["Y"]).unwrap();
        for (k, b) in p.data().iter().enumerate() {
            assert!(close(y.get(&[k]).re, *b, 1e-12));
        }
    }

    #[test]
    fn eigenbasis_measurement_gives_eigenvalues() {
        let p = Pmf::over("X0", &[0.6, 0.3, 0.1]).unwrap();
        let u0 = random_unitary(3, 9);
        let u1 = random_unitary(3, 10);
        // rho after U1 has eigenvectors U1 U0 e_k with eigenvalues p
        let b = &u1 * &u0;
        let g = elementary_system(&p, &u0, &u1, &b).unwrap();
        let q = certify_graph(&g, &["X3"], DEFAULT_TOL).unwrap();
        let pmf = measurement_pmf(&q, &["X3"]).unwrap();
        for (a, b) in pmf.data().iter().zip(p.data()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn elementary_rejects_bad_input() {
        let p = Pmf::over("X0", &[0.5, 0.5]).unwrap();
        let id = DMatrix::<C64>::identity(2, 2);
        let bad = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        assert!(matches!(elementary_system(&p, &bad, &id, &id), Err(ModelError::NotUnitary(_))));
        let id3 = DMatrix::<C64>::identity(3, 3);
        assert!(matches!(
            elementary_system(&p, &id, &id3, &id),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn computational_measurements_give_prior() {
        let probs = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
        let spec = TwoMeasurementSpec::trivial(2, 3, Pmf::over("X0", &probs).unwrap());
        let g = two_measurement_system(&spec).unwrap();
        let joint = g.exterior(&["Y1", "Y2"]).unwrap();
        for a in 0..2 {
            for c in 0..3 {
                let v = joint.get(&[a, c]);
                assert!(close(v.re, probs[a * 3 + c], 1e-12) && v.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_second_result_reduces_to_identity() {
        let spec = TwoMeasurementSpec {
            u0: random_unitary(4, 1),
            u1: random_unitary(4, 2),
            u2: random_unitary(4, 3),
            b1: random_unitary(2, 4),
            b2: random_unitary(2, 5),
            on2: Part::A,
            ..TwoMeasurementSpec::trivial(2, 2, Pmf::over("X0", &[0.4, 0.3, 0.2, 0.1]).unwrap())
        };
        let g = two_measurement_system(&spec).unwrap();
        let full = g.exterior(&["Y1"]).unwrap();
        // cut right after the first measurement and terminate
        let mut h = FactorGraph::new();
        for v in g.variables() {
            if ["A1", "C1", "A2", "X0"].contains(&v.name.as_str()) || v.name.starts_with("m1.") || v.name == "Y1" {
                if crate::graph::is_primed(&v.name) {
                    continue;
                } else if v.mirror.is_some() {
                    h.add_pair(&v.name, v.card).unwrap();
                } else {
                    h.add_variable(&v.name, v.card).unwrap();
                }
            }
        }
        for f in g.factors() {
            if f.stage.unwrap() <= 2 {
                h.add_factor(f.clone()).unwrap();
            }
        }
        h.terminate(&[("A2", "A2'"), ("C1", "C1'")], Some(3)).unwrap();
        let cut = h.exterior(&["Y1"]).unwrap();
        assert!(full.max_abs_diff(&cut).unwrap() < 1e-12);
        let total: C64 = full.sum();
        assert!((total - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn commuting_measurements_can_swap() {
        let p = Pmf::over("X0", &[0.4, 0.3, 0.2, 0.1]).unwrap();
        let base = TwoMeasurementSpec {
            u0: random_unitary(4, 7),
            b1: random_unitary(2, 8),
            b2: random_unitary(2, 9),
            ..TwoMeasurementSpec::trivial(2, 2, p)
        };
        let swapped = TwoMeasurementSpec {
            b1: base.b2.clone(),
            on1: Part::C,
            b2: base.b1.clone(),
            on2: Part::A,
            ..base.clone()
        };
        let a = two_measurement_system(&base).unwrap().exterior(&["Y1", "Y2"]).unwrap();
        // results swap roles: relabel before the by-name comparison
        let b = two_measurement_system(&swapped)
            .unwrap()
            .exterior(&["Y1", "Y2"])
            .unwrap()
            .rename(|n| if n == "Y1" { "Y2".into() } else { "Y1".into() })
            .unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    fn small_entry_unitaries() -> (DMatrix<C64>, DMatrix<C64>) {
        let h = gates::hadamard("o", "i").to_matrix().unwrap();
        let r = random_unitary(2, 21);
        (h, r)
    }

    #[test]
    fn classicable_example_cases() {
        let (u1, u2) = small_entry_unitaries();
        let uniform = Pmf::over("X0", &[0.5, 0.5]).unwrap();
        let g = classicable_example(&uniform, &u1, &u2).unwrap();
        let q = certify_graph(&g, &["X0", "X1", "X2"], DEFAULT_TOL).unwrap();
        assert!(is_jointly_classicable(&q, &["X1", "X2"]).unwrap());
        assert!(is_jointly_classicable(&q, &["X0", "X1"]).unwrap());
        assert!(!is_jointly_classicable(&q, &["X0", "X1", "X2"]).unwrap());

        let skewed = Pmf::over("X0", &[0.7, 0.3]).unwrap();
        let g = classicable_example(&skewed, &u1, &u2).unwrap();
        let q = certify_graph(&g, &["X0", "X1", "X2"], DEFAULT_TOL).unwrap();
        let w = joint_classicability_witness(&q, &["X1", "X2"]).unwrap();
        assert!(w.magnitude > 1e-3);
        assert!(is_classical(&q, "X0").unwrap());
        assert!(is_classical(&q, "X2").unwrap());
    }

    #[test]
    fn classicable_example_rejects_trivial_entries() {
        let p = Pmf::over("X0", &[0.5, 0.5]).unwrap();
        let id = DMatrix::<C64>::identity(2, 2);
        let (h, _) = small_entry_unitaries();
        assert!(matches!(
            classicable_example(&p, &id, &h),
            Err(ModelError::TrivialEntry { .. })
        ));
    }
}
