//! Builtin gates and constraint functions.
//!
//! Every builder takes the axes it should live on, so the same gate can be
//! placed on any variables. [`build`] resolves a [`GateRef`] by name; this is
//! how model files refer to exact matrices instead of rounded literals.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{GateRef, GraphError, GraphResult};
use crate::tensor::{Axis, NamedTensor, TensorError};

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

fn bit(b: bool) -> C64 {
    if b {
        ONE
    } else {
        ZERO
    }
}

fn same_card(axes: &[Axis]) -> GraphResult<usize> {
    let m = axes
        .first()
        .map(|a| a.card)
        .ok_or_else(|| GraphError::Invalid("gate needs at least one axis".into()))?;
    if let Some(a) = axes.iter().find(|a| a.card != m) {
        return Err(GraphError::CardinalityMismatch {
            var: a.name.clone(),
            declared: m,
            used: a.card,
        });
    }
    Ok(m)
}

fn arity(axes: &[Axis], n: usize, gate: &str) -> GraphResult<()> {
    if axes.len() != n {
        return Err(GraphError::Invalid(format!(
            "gate `{gate}` takes {n} axes, got {}",
            axes.len()
        )));
    }
    Ok(())
}

/// Names understood by [`build`].
pub struct GateSet;

impl GateSet {
    pub const NAMES: &'static [&'static str] = &[
        "identity",
        "f_eq",
        "f_oplus",
        "indicator",
        "prior",
        "hadamard",
        "fredkin",
        "cnot",
        "fr_u",
        "fr_b",
    ];

    pub fn contains(name: &str) -> bool {
        Self::NAMES.contains(&name)
    }
}

/// `1/sqrt(2) [[1, 1], [1, -1]]` over `(out, in)`.
pub fn hadamard(out: &str, inp: &str) -> NamedTensor {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    NamedTensor::from_real_matrix(Axis::new(out, 2), Axis::new(inp, 2), &[s, s, s, -s])
        .expect("fixed shape")
}

/// Identity matrix over `(out, in)`.
pub fn identity(out: &str, inp: &str, card: usize) -> NamedTensor {
    NamedTensor::from_fn(vec![Axis::new(out, card), Axis::new(inp, card)], |i| bit(i[0] == i[1]))
        .expect("valid axes")
}

/// Equality constraint: 1 iff all arguments agree.
pub fn f_eq(axes: &[Axis]) -> GraphResult<NamedTensor> {
    same_card(axes)?;
    Ok(NamedTensor::from_fn(axes.to_vec(), |i| bit(i.iter().all(|&x| x == i[0])))?)
}

/// 1 iff `sum_k signs[k] * x_k = 0 (mod M)`. With all signs `+1` this is the
/// plain sum constraint; a `-1` negates that argument.
pub fn f_oplus(axes: &[Axis], signs: &[i64]) -> GraphResult<NamedTensor> {
    let m = same_card(axes)? as i64;
    if signs.len() != axes.len() {
        return Err(GraphError::Invalid(format!(
            "f_oplus: {} signs for {} axes",
            signs.len(),
            axes.len()
        )));
    }
    Ok(NamedTensor::from_fn(axes.to_vec(), |i| {
        let s: i64 = i.iter().zip(signs).map(|(&x, &s)| s * x as i64).sum();
        bit(s.rem_euclid(m) == 0)
    })?)
}

/// Constant input: 1 at `value`, 0 elsewhere.
pub fn indicator(axis: Axis, value: usize) -> GraphResult<NamedTensor> {
    if value >= axis.card {
        return Err(GraphError::Invalid(format!(
            "indicator value {value} out of range for {axis}"
        )));
    }
    Ok(NamedTensor::from_fn(vec![axis], |i| bit(i[0] == value))?)
}

/// `p(x) delta(x, x')` over `(x, x')`.
pub fn prior(x: &str, xp: &str, p: &[f64]) -> GraphResult<NamedTensor> {
    let n = p.len();
    Ok(NamedTensor::from_fn(vec![Axis::new(x, n), Axis::new(xp, n)], |i| {
        if i[0] == i[1] {
            C64::new(p[i[0]], 0.0)
        } else {
            ZERO
        }
    })?)
}

/// Controlled swap over `(R, X, S, Rt, Xt, St)`: outputs first, inputs second.
/// Equals 1 iff `R = Rt = 0, X = Xt, S = St` or `R = Rt = 1, X = St, S = Xt`.
pub fn fredkin(out: [&str; 3], inp: [&str; 3]) -> NamedTensor {
    let axes = out
        .iter()
        .chain(inp.iter())
        .map(|n| Axis::new(*n, 2))
        .collect();
    NamedTensor::from_fn(axes, |i| {
        let (r, x, s, rt, xt, st) = (i[0], i[1], i[2], i[3], i[4], i[5]);
        bit((r == 0 && rt == 0 && x == xt && s == st) || (r == 1 && rt == 1 && x == st && s == xt))
    })
    .expect("fixed shape")
}

/// Controlled add over `(C, T, Ct, Tt)`: `C = Ct`, `T = Tt + Ct (mod M)`.
/// For `M = 2` this is the controlled-NOT gate.
pub fn controlled_add(out: [&str; 2], inp: [&str; 2], card: usize) -> NamedTensor {
    let axes = vec![
        Axis::new(out[0], card),
        Axis::new(out[1], card),
        Axis::new(inp[0], card),
        Axis::new(inp[1], card),
    ];
    NamedTensor::from_fn(axes, |i| bit(i[0] == i[2] && i[1] == (i[3] + i[2]) % card)).expect("valid axes")
}

/// Unitary matrix with the given first column; the remaining columns come
/// from Gram-Schmidt against seeded random complex vectors.
pub fn complete_unitary(first_column: &[C64], seed: u64) -> DMatrix<C64> {
    let n = first_column.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    let norm = first_column.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    cols.push(first_column.iter().map(|z| z / norm).collect());
    while cols.len() < n {
        let mut v: Vec<C64> = (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re, im)
            })
            .collect();
        // two passes of modified Gram-Schmidt keep the result orthonormal to rounding
        for _ in 0..2 {
            for u in &cols {
                let d: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= d * y;
                }
            }
        }
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nv > 1e-8 {
            cols.push(v.into_iter().map(|z| z / nv).collect());
        }
    }
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Seeded random unitary.
pub fn random_unitary(n: usize, seed: u64) -> DMatrix<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let col: Vec<C64> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
        .collect();
    complete_unitary(&col, seed)
}

/// First column of the preparation unitary `U`: `(sqrt(1/3), sqrt(2/3))`.
pub fn fr_u_column() -> [C64; 2] {
    [C64::new((1.0f64 / 3.0).sqrt(), 0.0), C64::new((2.0f64 / 3.0).sqrt(), 0.0)]
}

/// First row of the joint measurement basis `B`, indexed by `2r + x`:
/// `(1/2, 1/2, -sqrt(1/2), 0)`.
pub fn fr_b_row() -> [C64; 4] {
    [
        C64::new(0.5, 0.0),
        C64::new(0.5, 0.0),
        C64::new(-(0.5f64).sqrt(), 0.0),
        C64::new(0.0, 0.0),
    ]
}

/// `U` completed from its fixed first column.
pub fn fr_u(seed: u64) -> DMatrix<C64> {
    complete_unitary(&fr_u_column(), seed)
}

/// `B` completed from its fixed first row.
pub fn fr_b(seed: u64) -> DMatrix<C64> {
    let col: Vec<C64> = fr_b_row().iter().map(|z| z.conj()).collect();
    complete_unitary(&col, seed).adjoint()
}

/// Reshapes a square matrix onto `out` axes (rows) and `inp` axes (columns),
/// each group in row-major order.
pub fn matrix_on(m: &DMatrix<C64>, out: &[Axis], inp: &[Axis]) -> GraphResult<NamedTensor> {
    let rows: usize = out.iter().map(|a| a.card).product();
    let cols: usize = inp.iter().map(|a| a.card).product();
    if rows != m.nrows() || cols != m.ncols() {
        return Err(TensorError::ShapeMismatch {
            expected: m.nrows() * m.ncols(),
            got: rows * cols,
        }
        .into());
    }
    let axes: Vec<Axis> = out.iter().chain(inp).cloned().collect();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(m[(i, j)]);
        }
    }
    Ok(NamedTensor::new(axes, data)?)
}

fn seed_param(gate: &GateRef) -> GraphResult<u64> {
    match gate.params.as_slice() {
        [] => Ok(0),
        [s] if *s >= 0.0 && s.fract() == 0.0 => Ok(*s as u64),
        _ => Err(GraphError::Invalid(format!(
            "gate `{}` takes one optional non-negative integer seed",
            gate.name
        ))),
    }
}

/// Resolves a gate reference on the given axes.
///
/// Conventions: square gates list output axes before input axes; `f_oplus`
/// params are per-axis signs (default all `+1`); `indicator` takes the value;
/// `prior` takes the probabilities over `(x, x')`; `fr_u` and `fr_b` take an
/// optional completion seed.
pub fn build(gate: &GateRef, axes: &[Axis]) -> GraphResult<NamedTensor> {
    let names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
    let t = match gate.name.as_str() {
        "identity" => {
            arity(axes, 2, "identity")?;
            let m = same_card(axes)?;
            identity(names[0], names[1], m)
        }
        "f_eq" => f_eq(axes)?,
        "f_oplus" => {
            let signs: Vec<i64> = if gate.params.is_empty() {
                vec![1; axes.len()]
            } else {
                gate.params.iter().map(|&s| s as i64).collect()
            };
            if gate.params.iter().any(|s| s.fract() != 0.0) {
                return Err(GraphError::Invalid("f_oplus signs must be integers".into()));
            }
            f_oplus(axes, &signs)?
        }
        "indicator" => {
            arity(axes, 1, "indicator")?;
            let v = gate.params.first().copied().unwrap_or(0.0);
            if v < 0.0 || v.fract() != 0.0 {
                return Err(GraphError::Invalid("indicator value must be a non-negative integer".into()));
            }
            indicator(axes[0].clone(), v as usize)?
        }
        "prior" => {
            arity(axes, 2, "prior")?;
            same_card(axes)?;
            if gate.params.len() != axes[0].card {
                return Err(GraphError::Invalid(format!(
                    "prior needs {} probabilities, got {}",
                    axes[0].card,
                    gate.params.len()
                )));
            }
            prior(names[0], names[1], &gate.params)?
        }
        "hadamard" => {
            arity(axes, 2, "hadamard")?;
            if same_card(axes)? != 2 {
                return Err(GraphError::Invalid("hadamard acts on binary variables".into()));
            }
            hadamard(names[0], names[1])
        }
        "fredkin" => {
            arity(axes, 6, "fredkin")?;
            if same_card(axes)? != 2 {
                return Err(GraphError::Invalid("fredkin acts on binary variables".into()));
            }
            fredkin([names[0], names[1], names[2]], [names[3], names[4], names[5]])
        }
        "cnot" => {
            arity(axes, 4, "cnot")?;
            let m = same_card(axes)?;
            controlled_add([names[0], names[1]], [names[2], names[3]], m)
        }
        "fr_u" => {
            arity(axes, 2, "fr_u")?;
            matrix_on(&fr_u(seed_param(gate)?), &axes[..1], &axes[1..])?
        }
        "fr_b" => {
            arity(axes, 3, "fr_b")?;
            matrix_on(&fr_b(seed_param(gate)?), &axes[..1], &axes[1..])?
        }
        other => return Err(GraphError::Invalid(format!("unknown gate `{other}`"))),
    };
    Ok(if gate.conj { t.conj() } else { t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{contract, is_unitary};

    #[test]
    fn hadamard_is_self_inverse() {
        let h1 = hadamard("a", "b");
        let h2 = hadamard("b", "c");
        let p = contract(&[h1, h2], &["a", "c"]).unwrap();
        assert!(p.max_abs_diff(&identity("a", "c", 2)).unwrap() < 1e-12);
    }

    #[test]
    fn library_gates_are_unitary() {
        assert!(is_unitary(&hadamard("o", "i"), 1e-12).unwrap());
        let f = fredkin(["R", "X", "S"], ["Rt", "Xt", "St"])
            .fuse(&[("out", &["R", "X", "S"]), ("in", &["Rt", "Xt", "St"])])
            .unwrap();
        assert!(is_unitary(&f, 1e-12).unwrap());
        for m in 2..5 {
            let c = controlled_add(["c", "t"], ["ci", "ti"], m)
                .fuse(&[("out", &["c", "t"]), ("in", &["ci", "ti"])])
                .unwrap();
            assert!(is_unitary(&c, 1e-12).unwrap());
        }
        for seed in 0..4 {
            let u = NamedTensor::from_matrix(Axis::new("o", 2), Axis::new("i", 2), &fr_u(seed)).unwrap();
            assert!(is_unitary(&u, 1e-12).unwrap());
            let b = NamedTensor::from_matrix(Axis::new("o", 4), Axis::new("i", 4), &fr_b(seed)).unwrap();
            assert!(is_unitary(&b, 1e-12).unwrap());
            let r = NamedTensor::from_matrix(Axis::new("o", 3), Axis::new("i", 3), &random_unitary(3, seed)).unwrap();
            assert!(is_unitary(&r, 1e-12).unwrap());
        }
    }

    #[test]
    fn fixed_column_and_row_survive_completion() {
        for seed in [0, 7, 99] {
            let u = fr_u(seed);
            assert!((u[(0, 0)] - fr_u_column()[0]).norm() < 1e-15);
            assert!((u[(1, 0)] - fr_u_column()[1]).norm() < 1e-15);
            let b = fr_b(seed);
            for (j, v) in fr_b_row().iter().enumerate() {
                assert!((b[(0, j)] - v).norm() < 1e-15);
            }
        }
        assert!((fr_u(1) - fr_u(2)).norm() > 1e-3);
    }

    #[test]
    fn fredkin_support() {
        let f = fredkin(["R", "X", "S"], ["Rt", "Xt", "St"]);
        let nonzero = f.data().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 8);
        // R = 1 swaps X and S
        assert_eq!(f.get(&[1, 0, 1, 1, 1, 0]), ONE);
        assert_eq!(f.get(&[1, 1, 0, 1, 1, 0]), ZERO);
        assert_eq!(f.get(&[0, 1, 0, 0, 1, 0]), ONE);
    }

    #[test]
    fn oplus_and_eq_support() {
        let axes = [Axis::new("a", 3), Axis::new("b", 3), Axis::new("c", 3)];
        let s = f_oplus(&axes, &[1, 1, 1]).unwrap();
        assert_eq!(s.data().iter().filter(|z| z.re == 1.0).count(), 9);
        assert_eq!(s.get(&[1, 1, 1]), ONE);
        let d = f_oplus(&axes, &[1, 1, -1]).unwrap();
        assert_eq!(d.get(&[1, 2, 0]), ONE);
        let e = f_eq(&axes).unwrap();
        assert_eq!(e.data().iter().filter(|z| z.re == 1.0).count(), 3);
        assert!(f_eq(&[Axis::new("a", 2), Axis::new("b", 3)]).is_err());
    }

    #[test]
    fn build_resolves_by_name() {
        let axes = [Axis::new("o", 2), Axis::new("i", 2)];
        let h = build(&GateRef::new("hadamard"), &axes).unwrap();
        assert_eq!(h, hadamard("o", "i"));
        let u = build(&GateRef::new("fr_u").with_params(vec![3.0]).conjugated(), &axes).unwrap();
        assert_eq!(u.get(&[1, 0]), fr_u(3)[(1, 0)].conj());
        let b3 = [Axis::new("y", 4), Axis::new("r", 2), Axis::new("x", 2)];
        let b = build(&GateRef::new("fr_b"), &b3).unwrap();
        assert_eq!(b.get(&[0, 1, 0]), fr_b_row()[2]);
        assert!(build(&GateRef::new("nope"), &axes).is_err());
        assert!(build(&GateRef::new("fredkin"), &axes).is_err());
        for n in GateSet::NAMES {
            assert!(GateSet::contains(n));
        }
    }
}
