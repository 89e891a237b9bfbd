//! Valid configurations and the classicality hierarchy.
//!
//! A configuration `(x, x')` is valid when `|q(x, x')| > tol`. A pair is
//! classical when `x_k = x_k'` in every valid configuration; a set of pairs
//! is jointly classicable when the marginal onto the set vanishes off the
//! diagonal.

use serde::Serialize;
use thiserror::Error;

use crate::numfmt;
use crate::qmf::{self, QmfError, Sqmf};
use crate::tensor::{NamedTensor, TensorError};
use crate::C64;

pub const ENUMERATION_CAP: usize = 1 << 24;
/// Largest subset size searched by [`classicality_report`].
pub const SUBSET_CAP: usize = 4;
const SUBSET_COUNT_CAP: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Qmf(Box<QmfError>),

    #[error("{count} configurations exceed the enumeration cap {cap}")]
    EnumerationCap { count: usize, cap: usize },

    #[error("{count} candidate subsets exceed the search cap {cap}")]
    SubsetCap { count: usize, cap: usize },

    #[error("no pairs given")]
    EmptyPairs,
}

impl From<QmfError> for ClassicalError {
    fn from(e: QmfError) -> Self {
        ClassicalError::Qmf(Box::new(e))
    }
}

pub type ClassicalResult<T> = Result<T, ClassicalError>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigRow {
    pub values: Vec<usize>,
    #[serde(serialize_with = "ser_complex")]
    pub value: C64,
}

fn ser_complex<S: serde::Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&numfmt::rounded(z.re))?;
    t.serialize_element(&numfmt::rounded(z.im))?;
    t.end()
}

/// Valid configurations, one row per assignment, rows in lexicographic order
/// of the value tuple read in column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigTable {
    pub columns: Vec<String>,
    pub rows: Vec<ConfigRow>,
}

impl ConfigTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> Vec<C64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    pub fn sum(&self) -> C64 {
        self.rows.iter().map(|r| r.value).sum()
    }

    /// Aligned text: a header of column names and `value`, then one line per row.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.values
                    .iter()
                    .map(|v| v.to_string())
                    .chain(std::iter::once(numfmt::complex(r.value)))
                    .collect()
            })
            .collect();
        let header: Vec<String> = self
            .columns
            .iter()
            .cloned()
            .chain(std::iter::once("value".to_string()))
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| -> String {
            row.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&header);
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// All assignments of `t` (axes in the given column order) with `|t| > tol`.
pub fn enumerate_configurations<S: AsRef<str>>(
    t: &NamedTensor,
    columns: &[S],
    tol: f64,
) -> ClassicalResult<ConfigTable> {
    if t.len() > ENUMERATION_CAP {
        return Err(ClassicalError::EnumerationCap {
            count: t.len(),
            cap: ENUMERATION_CAP,
        });
    }
    let t = t.permuted(columns)?;
    let rows = t
        .indices()
        .zip(t.data())
        .filter(|(_, v)| v.norm() > tol)
        .map(|(values, &value)| ConfigRow { values, value })
        .collect();
    Ok(ConfigTable {
        columns: t.axis_names().iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

/// Valid configurations of `q`, columns `X1, X1', X2, X2', ...`.
pub fn valid_configurations(q: &Sqmf, tol: f64) -> ClassicalResult<ConfigTable> {
    let cols: Vec<String> = q.tensor().axis_names().iter().map(|s| s.to_string()).collect();
    enumerate_configurations(q.tensor(), &cols, tol)
}

pub fn is_classical(q: &Sqmf, pair: &str) -> ClassicalResult<bool> {
    let k = q.position(pair)?;
    if q.tensor().len() > ENUMERATION_CAP {
        return Err(ClassicalError::EnumerationCap {
            count: q.tensor().len(),
            cap: ENUMERATION_CAP,
        });
    }
    let tol = q.tol();
    Ok(q
        .tensor()
        .indices()
        .zip(q.tensor().data())
        .all(|(idx, v)| v.norm() <= tol || idx[2 * k] == idx[2 * k + 1]))
}

/// Largest off-diagonal magnitude of a marginal, with its location.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub magnitude: f64,
    pub at: String,
}

/// The off-diagonal entry of largest magnitude in the marginal of `q` onto
/// `pairs`. Zero when the set is jointly classicable exactly.
pub fn joint_classicability_witness<S: AsRef<str>>(q: &Sqmf, pairs: &[S]) -> ClassicalResult<Witness> {
    if pairs.is_empty() {
        return Err(ClassicalError::EmptyPairs);
    }
    let m = qmf::marginalize(q, pairs)?;
    let t = m.tensor();
    let mut best = Witness {
        magnitude: 0.0,
        at: String::new(),
    };
    for (idx, v) in t.indices().zip(t.data()) {
        let off = idx.chunks(2).any(|c| c[0] != c[1]);
        if off && v.norm() > best.magnitude {
            best.magnitude = v.norm();
            best.at = t
                .axes()
                .iter()
                .zip(&idx)
                .map(|(a, i)| format!("{}={}", a.name, i))
                .collect::<Vec<_>>()
                .join(",");
        }
    }
    Ok(best)
}

pub fn is_jointly_classicable<S: AsRef<str>>(q: &Sqmf, pairs: &[S]) -> ClassicalResult<bool> {
    Ok(joint_classicability_witness(q, pairs)?.magnitude <= q.tol())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairStatus {
    pub name: String,
    pub classical: bool,
    pub classicable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalityReport {
    pub pairs: Vec<PairStatus>,
    /// Jointly classicable sets (size at most the cap) not contained in a
    /// larger such set of size at most the cap.
    pub maximal_sets: Vec<Vec<String>>,
    pub subset_cap: usize,
    /// Whether the set of all classical pairs is jointly classicable.
    pub classical_set_classicable: bool,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

pub fn classicality_report(q: &Sqmf, subset_cap: usize) -> ClassicalResult<ClassicalityReport> {
    let names: Vec<String> = q.pair_names().iter().map(|s| s.to_string()).collect();
    let n = names.len();
    let cap = subset_cap.min(n);
    let count: usize = (1..=cap).map(|k| binomial(n, k)).sum();
    if count > SUBSET_COUNT_CAP {
        return Err(ClassicalError::SubsetCap {
            count,
            cap: SUBSET_COUNT_CAP,
        });
    }
    let mut pairs = Vec::with_capacity(n);
    for name in &names {
        pairs.push(PairStatus {
            name: name.clone(),
            classical: is_classical(q, name)?,
            classicable: is_jointly_classicable(q, &[name])?,
        });
    }
    let mut found: Vec<Vec<usize>> = Vec::new();
    for k in 1..=cap {
        for subset in combinations(n, k) {
            // marginals of a diagonal kernel are diagonal, so any set containing a
            // non-classicable pair is not jointly classicable
            if subset.iter().any(|&i| !pairs[i].classicable) {
                continue;
            }
            let sel: Vec<&str> = subset.iter().map(|&i| names[i].as_str()).collect();
            if is_jointly_classicable(q, &sel)? {
                found.push(subset);
            }
        }
    }
    let maximal_sets = found
        .iter()
        .filter(|s| {
            !found
                .iter()
                .any(|t| t.len() > s.len() && s.iter().all(|i| t.contains(i)))
        })
        .map(|s| s.iter().map(|&i| names[i].clone()).collect())
        .collect();
    let classical: Vec<&str> = pairs
        .iter()
        .filter(|p| p.classical)
        .map(|p| p.name.as_str())
        .collect();
    let classical_set_classicable = classical.is_empty() || is_jointly_classicable(q, &classical)?;
    Ok(ClassicalityReport {
        pairs,
        maximal_sets,
        subset_cap: cap,
        classical_set_classicable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmf::{certify_sqmf, marginalize, pairs_of, random_mixture};
    use crate::tensor::Axis;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diagonal(cards: &[usize], seed: u64) -> Sqmf {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..cards.len()).map(|k| format!("X{k}")).collect();
        let axes: Vec<Axis> = names
            .iter()
            .zip(cards)
            .flat_map(|(n, &c)| [Axis::new(n.clone(), c), Axis::new(format!("{n}'"), c)])
            .collect();
        let dim: usize = cards.iter().product();
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = p.iter().sum();
        let t = NamedTensor::from_fn(axes, |i| {
            let diag = i.chunks(2).all(|c| c[0] == c[1]);
            let flat = i.chunks(2).zip(cards).fold(0, |acc, (c, &n)| acc * n + c[0]);
            C64::new(if diag { p[flat] / total } else { 0.0 }, 0.0)
        })
        .unwrap();
        certify_sqmf(&t, &pairs_of(&names), 1e-9).unwrap()
    }

    #[test]
    fn uniform_bit_has_two_rows() {
        let t = NamedTensor::from_fn(vec![Axis::new("x", 2), Axis::new("x'", 2)], |i| {
            C64::new(if i[0] == i[1] { 0.5 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let q = certify_sqmf(&t, &pairs_of(&["x"]), 1e-9).unwrap();
        let table = valid_configurations(&q, 1e-9).unwrap();
        assert_eq!(table.columns, vec!["x", "x'"]);
        assert_eq!(table.len(), 2);
        assert_eq!(table.rows[0].values, vec![0, 0]);
        assert_eq!(table.rows[1].value, C64::new(0.5, 0.0));
        assert_eq!(table.to_text(), "x  x'  value\n0   0    0.5\n1   1    0.5\n");
    }

    #[test]
    fn diagonal_sqmf_is_fully_classical() {
        let q = diagonal(&[2, 3, 2], 5);
        let r = classicality_report(&q, SUBSET_CAP).unwrap();
        assert!(r.pairs.iter().all(|p| p.classical && p.classicable));
        assert_eq!(r.maximal_sets, vec![vec!["X0", "X1", "X2"]]);
        assert!(r.classical_set_classicable);
    }

    #[test]
    fn coherent_pair_is_not_classical() {
        let f = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let t = NamedTensor::from_fn(vec![Axis::new("x", 2), Axis::new("x'", 2)], |i| f[i[0]] * f[i[1]].conj())
            .unwrap();
        let q = certify_sqmf(&t, &pairs_of(&["x"]), 1e-9).unwrap();
        assert!(!is_classical(&q, "x").unwrap());
        let w = joint_classicability_witness(&q, &["x"]).unwrap();
        assert!((w.magnitude - 0.48).abs() < 1e-12);
        assert_eq!(w.at, "x=0,x'=1");
        assert!(matches!(
            joint_classicability_witness(&q, &[] as &[&str]),
            Err(ClassicalError::EmptyPairs)
        ));
    }

    fn arb_sqmf() -> impl Strategy<Value = Sqmf> {
        (prop::collection::vec(2usize..=3, 2..=3), 1usize..=3, any::<u64>(), any::<bool>()).prop_map(
            |(cards, terms, seed, diag)| {
                if diag {
                    diagonal(&cards, seed)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    random_mixture(&cards, terms, &mut rng)
                }
            },
        )
    }

    proptest! {
        #[test]
        fn classical_survives_marginals(q in arb_sqmf()) {
            let names: Vec<String> = q.pair_names().iter().map(|s| s.to_string()).collect();
            for k in &names {
                if !is_classical(&q, k).unwrap() {
                    continue;
                }
                for other in &names {
                    let keep: Vec<&str> = if other == k { vec![k] } else { vec![k, other] };
                    let m = marginalize(&q, &keep).unwrap();
                    prop_assert!(is_classical(&m, k).unwrap());
                }
            }
        }

        #[test]
        fn classical_pairs_are_jointly_classicable(q in arb_sqmf()) {
            let r = classicality_report(&q, SUBSET_CAP).unwrap();
            prop_assert!(r.classical_set_classicable);
        }

        #[test]
        fn classicable_sets_are_classical_in_their_marginal(q in arb_sqmf()) {
            let r = classicality_report(&q, SUBSET_CAP).unwrap();
            for set in &r.maximal_sets {
                let m = marginalize(&q, set).unwrap();
                for p in set {
                    prop_assert!(is_classical(&m, p).unwrap());
                }
            }
        }

        #[test]
        fn all_classical_means_pmf(q in arb_sqmf()) {
            let names = q.pair_names();
            if names.iter().all(|n| is_classical(&q, n).unwrap()) {
                for (idx, v) in q.tensor().indices().zip(q.tensor().data()) {
                    let diag = idx.chunks(2).all(|c| c[0] == c[1]);
                    if diag {
                        prop_assert!(v.re >= -1e-12 && v.im.abs() < 1e-12);
                    } else {
                        prop_assert!(v.norm() <= q.tol());
                    }
                }
                let pmf = qmf::measurement_pmf(&q, &names).unwrap();
                prop_assert!((pmf.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn table_rows_follow_column_order() {
        let t = NamedTensor::from_fn(vec![Axis::new("a", 2), Axis::new("b", 2)], |i| {
            C64::new((i[0] * 2 + i[1] + 1) as f64, 0.0)
        })
        .unwrap();
        let table = enumerate_configurations(&t, &["b", "a"], 1e-9).unwrap();
        let vals: Vec<f64> = table.values().iter().map(|z| z.re).collect();
        assert_eq!(vals, vec![1.0, 3.0, 2.0, 4.0]);
    }
}
