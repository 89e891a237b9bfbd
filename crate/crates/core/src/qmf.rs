//! Quantum mass functions: certification, marginals and measurement pmfs.
//!
//! An [`Sqmf`] is a tensor over mirror pairs `(x_k, x_k')` that is Hermitian,
//! positive semidefinite as a matrix indexed by `(x; x')`, and sums to one.
//! Certified tensors are stored with axes interleaved as
//! `x_1, x_1', x_2, x_2', ...` in pair order.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::classical::{self, ClassicalError};
use crate::graph::{mirror_name, FactorGraph, GraphError};
use crate::tensor::{contract, Axis, MultiIndex, NamedTensor, TensorError};
use crate::C64;

/// Absolute tolerance for predicates (validity, Hermitian symmetry, classicality).
pub const DEFAULT_TOL: f64 = 1e-9;
/// Normalization drift beyond this is an error; below it (and above the
/// predicate tolerance) certification succeeds with a warning.
pub const NORMALIZATION_LIMIT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmfError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("axis `{0}` is not part of a declared pair")]
    UnpairedAxis(String),

    #[error("pair `{0}` is not present")]
    UnknownPair(String),

    #[error("no pairs to keep")]
    EmptyKeep,

    #[error("not Hermitian: |q(x,x') - conj(q(x',x))| = {deviation:e} at {at}")]
    NotHermitian { deviation: f64, at: String },

    #[error("not positive semidefinite: eigenvalue {min_eigenvalue:e} with spectral radius {spectral_radius:e}")]
    NotPsd {
        min_eigenvalue: f64,
        spectral_radius: f64,
    },

    #[error("not normalized: total sum is {re}{im:+}i")]
    NotNormalized { re: f64, im: f64 },

    #[error("pairs {pairs:?} are not jointly classicable (off-diagonal magnitude {witness:e})")]
    NotClassicable { pairs: Vec<String>, witness: f64 },

    #[error("diagonal entry {value:e} is negative")]
    NegativeProbability { value: f64 },

    #[error(transparent)]
    Classical(Box<ClassicalError>),
}

impl From<ClassicalError> for QmfError {
    fn from(e: ClassicalError) -> Self {
        QmfError::Classical(Box::new(e))
    }
}

pub type QmfResult<T> = Result<T, QmfError>;

/// `(X, X')` for each name.
pub fn pairs_of<S: AsRef<str>>(names: &[S]) -> Vec<(String, String)> {
    names
        .iter()
        .map(|n| (n.as_ref().to_string(), mirror_name(n.as_ref())))
        .collect()
}

/// Outcome of [`is_psd_kernel`].
#[derive(Clone, Debug, PartialEq)]
pub struct PsdReport {
    pub hermitian: bool,
    pub psd: bool,
    /// Largest `|q(x,x') - conj(q(x',x))|`.
    pub hermitian_deviation: f64,
    /// Where that deviation occurs, as `X=0,X'=1,...`.
    pub worst_entry: String,
    pub min_eigenvalue: f64,
    pub spectral_radius: f64,
}

impl PsdReport {
    pub fn ok(&self) -> bool {
        self.hermitian && self.psd
    }
}

fn check_pairs<S: AsRef<str>>(t: &NamedTensor, pairs: &[(S, S)]) -> QmfResult<Vec<String>> {
    let mut order = Vec::with_capacity(2 * pairs.len());
    for (x, xp) in pairs {
        for n in [x.as_ref(), xp.as_ref()] {
            if !t.has_axis(n) {
                return Err(QmfError::UnknownPair(n.to_string()));
            }
            if order.iter().any(|o| o == n) {
                return Err(TensorError::DuplicateAxis(n.to_string()).into());
            }
            order.push(n.to_string());
        }
        if t.axis(x.as_ref()).map(|a| a.card) != t.axis(xp.as_ref()).map(|a| a.card) {
            return Err(QmfError::UnpairedAxis(xp.as_ref().to_string()));
        }
    }
    if let Some(a) = t.axes().iter().find(|a| !order.contains(&a.name)) {
        return Err(QmfError::UnpairedAxis(a.name.clone()));
    }
    Ok(order)
}

/// The kernel as a matrix: rows indexed by the unprimed members in pair
/// order, columns by the primed members.
fn kernel_matrix<S: AsRef<str>>(t: &NamedTensor, pairs: &[(S, S)]) -> QmfResult<DMatrix<C64>> {
    let rows: Vec<&str> = pairs.iter().map(|(x, _)| x.as_ref()).collect();
    let cols: Vec<&str> = pairs.iter().map(|(_, xp)| xp.as_ref()).collect();
    let m = t.fuse(&[("row", &rows), ("col", &cols)])?;
    Ok(m.to_matrix()?)
}

fn describe(t: &NamedTensor, flat: usize) -> String {
    let mut idx = vec![0; t.rank()];
    let mut rest = flat;
    for (k, a) in t.axes().iter().enumerate().rev() {
        idx[k] = rest % a.card;
        rest /= a.card;
    }
    t.axes()
        .iter()
        .zip(&idx)
        .map(|(a, i)| format!("{}={}", a.name, i))
        .collect::<Vec<_>>()
        .join(",")
}

/// Hermitian and PSD check of `t` viewed as a kernel over `pairs`.
///
/// PSD means the smallest eigenvalue of the Hermitian part is at least
/// `-tol * spectral_radius`.
pub fn is_psd_kernel<S: AsRef<str>>(t: &NamedTensor, pairs: &[(S, S)], tol: f64) -> QmfResult<PsdReport> {
    check_pairs(t, pairs)?;
    let m = kernel_matrix(t, pairs)?;
    let n = m.nrows();
    let mut dev = 0.0f64;
    let mut at = (0, 0);
    for i in 0..n {
        for j in 0..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > dev {
                dev = d;
                at = (i, j);
            }
        }
    }
    // locate the offending entry in the original tensor
    let rows: Vec<&str> = pairs.iter().map(|(x, _)| x.as_ref()).collect();
    let cols: Vec<&str> = pairs.iter().map(|(_, xp)| xp.as_ref()).collect();
    let order: Vec<&str> = rows.iter().chain(&cols).copied().collect();
    let view = t.permuted(&order)?;
    let worst_entry = describe(&view, at.0 * n + at.1);

    let herm = (&m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(herm);
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let spectral_radius = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min_eigenvalue = if min_eigenvalue.is_finite() { min_eigenvalue } else { 0.0 };
    Ok(PsdReport {
        hermitian: dev <= tol,
        psd: min_eigenvalue >= -tol * spectral_radius,
        hermitian_deviation: dev,
        worst_entry,
        min_eigenvalue,
        spectral_radius,
    })
}

/// A certified simple quantum mass function.
#[derive(Clone, Debug, PartialEq)]
pub struct Sqmf {
    tensor: NamedTensor,
    pairs: Vec<(String, String)>,
    tol: f64,
    warnings: Vec<String>,
}

impl Sqmf {
    pub fn tensor(&self) -> &NamedTensor {
        &self.tensor
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn pair_names(&self) -> Vec<&str> {
        self.pairs.iter().map(|(x, _)| x.as_str()).collect()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn cards(&self) -> Vec<usize> {
        self.tensor.cards().into_iter().step_by(2).collect()
    }

    /// `q(x, x')` with `x`, `x'` in pair order.
    pub fn value(&self, x: &[usize], xp: &[usize]) -> C64 {
        let idx: Vec<usize> = x.iter().zip(xp).flat_map(|(&a, &b)| [a, b]).collect();
        self.tensor.get(&idx)
    }

    pub fn position(&self, pair: &str) -> QmfResult<usize> {
        self.pairs
            .iter()
            .position(|(x, _)| x == pair)
            .ok_or_else(|| QmfError::UnknownPair(pair.to_string()))
    }
}

/// Checks Hermitian symmetry, positive semidefiniteness and normalization.
pub fn certify_sqmf<S: AsRef<str>>(t: &NamedTensor, pairs: &[(S, S)], tol: f64) -> QmfResult<Sqmf> {
    let order = check_pairs(t, pairs)?;
    let report = is_psd_kernel(t, pairs, tol)?;
    if !report.hermitian {
        return Err(QmfError::NotHermitian {
            deviation: report.hermitian_deviation,
            at: report.worst_entry,
        });
    }
    if !report.psd {
        return Err(QmfError::NotPsd {
            min_eigenvalue: report.min_eigenvalue,
            spectral_radius: report.spectral_radius,
        });
    }
    let sum = t.sum();
    let drift = (sum - C64::new(1.0, 0.0)).norm();
    if drift > NORMALIZATION_LIMIT {
        return Err(QmfError::NotNormalized { re: sum.re, im: sum.im });
    }
    let mut warnings = Vec::new();
    if drift > tol {
        let w = format!("normalization drift {drift:e}");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(Sqmf {
        tensor: t.permuted(&order)?,
        pairs: pairs
            .iter()
            .map(|(x, xp)| (x.as_ref().to_string(), xp.as_ref().to_string()))
            .collect(),
        tol,
        warnings,
    })
}

/// Contracts `g` onto the given pairs (unprimed names) and certifies the result.
pub fn certify_graph<S: AsRef<str>>(g: &FactorGraph, pairs: &[S], tol: f64) -> QmfResult<Sqmf> {
    let keep = g.pair_axes(pairs)?;
    let t = g.exterior(&keep)?;
    let pairs: Vec<(String, String)> = keep.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    certify_sqmf(&t, &pairs, tol)
}

/// Sums out both members of every pair not in `keep` and re-certifies.
pub fn marginalize<S: AsRef<str>>(q: &Sqmf, keep: &[S]) -> QmfResult<Sqmf> {
    if keep.is_empty() {
        return Err(QmfError::EmptyKeep);
    }
    let mut axes = Vec::with_capacity(2 * keep.len());
    let mut pairs = Vec::with_capacity(keep.len());
    for k in keep {
        let p = &q.pairs[q.position(k.as_ref())?];
        axes.push(p.0.clone());
        axes.push(p.1.clone());
        pairs.push(p.clone());
    }
    let t = contract(&[&q.tensor], &axes)?;
    certify_sqmf(&t, &pairs, q.tol)
}

/// Probability mass function over unprimed axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    axes: Vec<Axis>,
    data: Vec<f64>,
}

impl Pmf {
    /// Entries below `-1e-12` are rejected, small negatives are clipped to 0,
    /// and the total must be within `1e-9` of one.
    pub fn new(axes: Vec<Axis>, data: Vec<f64>) -> QmfResult<Self> {
        let t = NamedTensor::zeros(axes.clone())?;
        if t.len() != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: t.len(),
                got: data.len(),
            }
            .into());
        }
        let mut data = data;
        for v in data.iter_mut() {
            if *v < -1e-12 || !v.is_finite() {
                return Err(QmfError::NegativeProbability { value: *v });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = data.iter().sum();
        if (total - 1.0).abs() > DEFAULT_TOL {
            return Err(QmfError::NotNormalized { re: total, im: 0.0 });
        }
        Ok(Pmf { axes, data })
    }

    /// Single-variable pmf.
    pub fn over(name: &str, probs: &[f64]) -> QmfResult<Self> {
        Pmf::new(vec![Axis::new(name, probs.len())], probs.to_vec())
    }

    pub fn uniform(name: &str, card: usize) -> QmfResult<Self> {
        Pmf::over(name, &vec![1.0 / card as f64; card])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut off = 0;
        for (a, &i) in self.axes.iter().zip(idx) {
            off = off * a.card + i;
        }
        self.data[off]
    }

    /// `(assignment, probability)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        MultiIndex::new(self.axes.iter().map(|a| a.card).collect()).zip(self.data.iter().copied())
    }

    pub fn is_full_support(&self) -> bool {
        self.data.iter().all(|&p| p > 0.0)
    }
}

/// Joint pmf of the measured pairs: marginalize onto them and read the
/// diagonal. The pairs must be jointly classicable in `q`.
pub fn measurement_pmf<S: AsRef<str>>(q: &Sqmf, measured: &[S]) -> QmfResult<Pmf> {
    let witness = classical::joint_classicability_witness(q, measured)?;
    if witness.magnitude > q.tol {
        return Err(QmfError::NotClassicable {
            pairs: measured.iter().map(|s| s.as_ref().to_string()).collect(),
            witness: witness.magnitude,
        });
    }
    let m = marginalize(q, measured)?;
    let cards = m.cards();
    let axes: Vec<Axis> = m
        .pairs
        .iter()
        .zip(&cards)
        .map(|((x, _), &c)| Axis::new(x.clone(), c))
        .collect();
    let data = MultiIndex::new(cards).map(|x| m.value(&x, &x).re).collect();
    Pmf::new(axes, data)
}

/// Random SQMF: a convex mixture of `terms` rank-one kernels
/// `f(x) conj(f(x'))` with complex Gaussian `f`, over pairs named
/// `X0, X1, ...` with the given cardinalities.
pub fn random_mixture(cards: &[usize], terms: usize, rng: &mut impl Rng) -> Sqmf {
    let names: Vec<String> = (0..cards.len()).map(|k| format!("X{k}")).collect();
    let mut axes = Vec::new();
    for (n, &c) in names.iter().zip(cards) {
        axes.push(Axis::new(n.clone(), c));
        axes.push(Axis::new(mirror_name(n), c));
    }
    let dim: usize = cards.iter().product();
    let (acc, total) = loop {
        let mut acc = vec![C64::new(0.0, 0.0); dim * dim];
        for _ in 0..terms.max(1) {
            let w: f64 = rng.random_range(0.05..1.0);
            let f: Vec<C64> = (0..dim)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    C64::new(re, im)
                })
                .collect();
            for i in 0..dim {
                for j in 0..dim {
                    acc[i * dim + j] += f[i] * f[j].conj() * w;
                }
            }
        }
        // normalization is over the whole (x, x') domain, not the trace;
        // resample when the total nearly cancels
        let total: C64 = acc.iter().sum();
        let trace: f64 = (0..dim).map(|i| acc[i * dim + i].re).sum();
        if total.re > 0.05 * trace {
            break (acc, total);
        }
    };
    // acc is indexed (x; x'), i.e. rows then columns; reorder to interleaved
    let block: Vec<Axis> = names
        .iter()
        .zip(cards)
        .map(|(n, &c)| Axis::new(n.clone(), c))
        .chain(names.iter().zip(cards).map(|(n, &c)| Axis::new(mirror_name(n), c)))
        .collect();
    let t = NamedTensor::new(block, acc.into_iter().map(|z| z / total.re).collect()).expect("shape");
    let order: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
    let t = t.permuted(&order).expect("same axes");
    certify_sqmf(&t, &pairs_of(&names), DEFAULT_TOL).expect("mixtures of rank-one kernels are SQMFs")
}
