//! Dense complex tensors with named axes.
//!
//! A [`NamedTensor`] is a function of finitely many named variables, stored
//! densely in row-major order over its axis list. Every factor of a factor
//! graph, every exterior function and every quantum mass function in this
//! crate is one of these.
//!
//! Contraction ([`contract`]) multiplies a list of tensors and sums over every
//! axis that is not kept. It is carried out by bucket elimination: axes are
//! summed out one at a time, and each step only multiplies the tensors that
//! mention the axis being eliminated. The elimination order comes from a
//! greedy minimum-intermediate-size heuristic ([`elimination_order`]) unless
//! the caller supplies one.

use std::borrow::{Borrow, Cow};
use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("axis `{0}` has cardinality 0")]
    ZeroCardinality(String),

    #[error("duplicate axis `{0}`")]
    DuplicateAxis(String),

    #[error("data length {got} does not match the shape (expected {expected})")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("axis `{name}` has cardinality {first} in one factor and {second} in another")]
    CardinalityMismatch {
        name: String,
        first: usize,
        second: usize,
    },

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("expected a square matrix, got axes {0:?}")]
    NotSquare(Vec<(String, usize)>),

    #[error("invalid elimination order: {0}")]
    InvalidOrder(String),

    #[error("axes {0:?} do not match axes {1:?}")]
    AxesMismatch(Vec<String>, Vec<String>),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// A named variable with a finite alphabet `{0, .., card - 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub card: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, card: usize) -> Self {
        Axis {
            name: name.into(),
            card,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.card)
    }
}

/// Dense complex tensor over an ordered list of named axes.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    axes: Vec<Axis>,
    data: Vec<C64>,
}

fn check_axes(axes: &[Axis]) -> TensorResult<usize> {
    let mut size = 1usize;
    for (i, a) in axes.iter().enumerate() {
        if a.card == 0 {
            return Err(TensorError::ZeroCardinality(a.name.clone()));
        }
        if axes[..i].iter().any(|b| b.name == a.name) {
            return Err(TensorError::DuplicateAxis(a.name.clone()));
        }
        size *= a.card;
    }
    Ok(size)
}

fn row_major_strides(axes: &[Axis]) -> Vec<usize> {
    let mut strides = vec![0; axes.len()];
    let mut s = 1;
    for (k, a) in axes.iter().enumerate().rev() {
        strides[k] = s;
        s *= a.card;
    }
    strides
}

/// Odometer over the Cartesian product of a list of cardinalities.
#[derive(Clone, Debug)]
pub struct MultiIndex {
    cards: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl MultiIndex {
    pub fn new(cards: Vec<usize>) -> Self {
        let done = cards.contains(&0);
        let current = vec![0; cards.len()];
        MultiIndex {
            cards,
            current,
            done,
        }
    }
}

impl Iterator for MultiIndex {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let mut k = self.cards.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.current[k] += 1;
            if self.current[k] < self.cards[k] {
                break;
            }
            self.current[k] = 0;
        }
        Some(out)
    }
}

impl NamedTensor {
    pub fn new(axes: Vec<Axis>, data: Vec<C64>) -> TensorResult<Self> {
        let size = check_axes(&axes)?;
        if data.len() != size {
            return Err(TensorError::ShapeMismatch {
                expected: size,
                got: data.len(),
            });
        }
        Ok(NamedTensor { axes, data })
    }

    pub fn from_fn(axes: Vec<Axis>, mut f: impl FnMut(&[usize]) -> C64) -> TensorResult<Self> {
        check_axes(&axes)?;
        let cards = axes.iter().map(|a| a.card).collect();
        let data = MultiIndex::new(cards).map(|idx| f(&idx)).collect();
        Ok(NamedTensor { axes, data })
    }

    pub fn zeros(axes: Vec<Axis>) -> TensorResult<Self> {
        let size = check_axes(&axes)?;
        Ok(NamedTensor {
            axes,
            data: vec![C64::new(0.0, 0.0); size],
        })
    }

    pub fn scalar(value: C64) -> Self {
        NamedTensor {
            axes: Vec::new(),
            data: vec![value],
        }
    }

    /// Real matrix over `(row, col)` from row-major entries.
    pub fn from_real_matrix(row: Axis, col: Axis, entries: &[f64]) -> TensorResult<Self> {
        let data = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        NamedTensor::new(vec![row, col], data)
    }

    pub fn from_matrix(row: Axis, col: Axis, m: &DMatrix<C64>) -> TensorResult<Self> {
        if m.nrows() != row.card || m.ncols() != col.card {
            return Err(TensorError::ShapeMismatch {
                expected: row.card * col.card,
                got: m.nrows() * m.ncols(),
            });
        }
        NamedTensor::from_fn(vec![row, col], |i| m[(i[0], i[1])])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.card).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn has_axis(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn axis(&self, name: &str) -> Option<&Axis> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.axes)
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.axes.len());
        let mut off = 0;
        for (a, &i) in self.axes.iter().zip(index) {
            assert!(i < a.card, "index {} out of range for axis {}", i, a);
            off = off * a.card + i;
        }
        off
    }

    /// Value at a full index given in axis order.
    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: C64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Value at an assignment given by axis name; every axis must be assigned.
    pub fn get_named(&self, assignment: &[(&str, usize)]) -> TensorResult<C64> {
        let mut index = vec![usize::MAX; self.axes.len()];
        for (name, v) in assignment {
            let p = self
                .position(name)
                .ok_or_else(|| TensorError::UnknownAxis(name.to_string()))?;
            index[p] = *v;
        }
        if let Some(p) = index.iter().position(|&i| i == usize::MAX) {
            return Err(TensorError::UnknownAxis(format!(
                "axis `{}` left unassigned",
                self.axes[p].name
            )));
        }
        Ok(self.get(&index))
    }

    pub fn indices(&self) -> MultiIndex {
        MultiIndex::new(self.cards())
    }

    pub fn sum(&self) -> C64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn conj(&self) -> NamedTensor {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, alpha: C64) -> NamedTensor {
        self.map(|z| z * alpha)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> NamedTensor {
        NamedTensor {
            axes: self.axes.clone(),
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// Renames every axis through `f`; fails if two axes collide.
    pub fn rename(&self, f: impl Fn(&str) -> String) -> TensorResult<NamedTensor> {
        let axes: Vec<Axis> = self
            .axes
            .iter()
            .map(|a| Axis::new(f(&a.name), a.card))
            .collect();
        check_axes(&axes)?;
        Ok(NamedTensor {
            axes,
            data: self.data.clone(),
        })
    }

    pub fn rename_axis(&self, from: &str, to: &str) -> TensorResult<NamedTensor> {
        if !self.has_axis(from) {
            return Err(TensorError::UnknownAxis(from.to_string()));
        }
        self.rename(|n| if n == from { to.to_string() } else { n.to_string() })
    }

    /// Reorders the axes; `order` must be a permutation of the axis names.
    pub fn permuted<S: AsRef<str>>(&self, order: &[S]) -> TensorResult<NamedTensor> {
        if order.len() != self.axes.len() {
            return Err(TensorError::AxesMismatch(
                order.iter().map(|s| s.as_ref().to_string()).collect(),
                self.axis_names().iter().map(|s| s.to_string()).collect(),
            ));
        }
        let mut perm = Vec::with_capacity(order.len());
        for name in order {
            let p = self
                .position(name.as_ref())
                .ok_or_else(|| TensorError::UnknownAxis(name.as_ref().to_string()))?;
            if perm.contains(&p) {
                return Err(TensorError::DuplicateAxis(name.as_ref().to_string()));
            }
            perm.push(p);
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let axes: Vec<Axis> = perm.iter().map(|&p| self.axes[p].clone()).collect();
        let src_strides = self.strides();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let cards = axes.iter().map(|a| a.card).collect();
        let data = MultiIndex::new(cards)
            .map(|idx| {
                let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                self.data[off]
            })
            .collect();
        Ok(NamedTensor { axes, data })
    }

    /// Merges groups of axes into single axes. Each group becomes one axis
    /// whose value is the row-major index over the group's members; every
    /// axis must belong to exactly one group.
    pub fn fuse(&self, groups: &[(&str, &[&str])]) -> TensorResult<NamedTensor> {
        let order: Vec<&str> = groups.iter().flat_map(|(_, g)| g.iter().copied()).collect();
        let p = self.permuted(&order)?;
        let mut axes = Vec::with_capacity(groups.len());
        for (name, members) in groups {
            let card = members
                .iter()
                .map(|m| self.axis(m).map(|a| a.card).unwrap_or(1))
                .product();
            axes.push(Axis::new(*name, card));
        }
        NamedTensor::new(axes, p.data)
    }

    /// Largest entrywise difference after aligning axes by name.
    pub fn max_abs_diff(&self, other: &NamedTensor) -> TensorResult<f64> {
        let mut mine: Vec<&Axis> = self.axes.iter().collect();
        let mut theirs: Vec<&Axis> = other.axes.iter().collect();
        mine.sort_by(|a, b| a.name.cmp(&b.name));
        theirs.sort_by(|a, b| a.name.cmp(&b.name));
        if mine != theirs {
            return Err(TensorError::AxesMismatch(
                self.axis_names().iter().map(|s| s.to_string()).collect(),
                other.axis_names().iter().map(|s| s.to_string()).collect(),
            ));
        }
        let aligned = other.permuted(&self.axis_names())?;
        Ok(self
            .data
            .iter()
            .zip(&aligned.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Two-axis tensor as a matrix (rows = first axis).
    pub fn to_matrix(&self) -> TensorResult<DMatrix<C64>> {
        if self.axes.len() != 2 {
            return Err(TensorError::NotSquare(
                self.axes.iter().map(|a| (a.name.clone(), a.card)).collect(),
            ));
        }
        let (r, c) = (self.axes[0].card, self.axes[1].card);
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

/// `true` iff `m` (two axes, equal cardinality) satisfies
/// `max |(m^H m - I)_{ij}| <= tol`.
pub fn is_unitary(m: &NamedTensor, tol: f64) -> TensorResult<bool> {
    if m.rank() != 2 || m.axes[0].card != m.axes[1].card {
        return Err(TensorError::NotSquare(
            m.axes.iter().map(|a| (a.name.clone(), a.card)).collect(),
        ));
    }
    let a = m.to_matrix()?;
    let g = a.adjoint() * &a;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    Ok(worst <= tol)
}

/// Bookkeeping from one contraction run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContractionStats {
    /// Axes in the order they were summed out.
    pub order: Vec<String>,
    /// Largest tensor materialized during the run (number of entries).
    pub peak_entries: usize,
}

fn axis_table<T: Borrow<NamedTensor>>(factors: &[T]) -> TensorResult<Vec<Axis>> {
    let mut table: Vec<Axis> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for f in factors {
        for a in &f.borrow().axes {
            match index.get(a.name.as_str()) {
                Some(&k) => {
                    if table[k].card != a.card {
                        return Err(TensorError::CardinalityMismatch {
                            name: a.name.clone(),
                            first: table[k].card,
                            second: a.card,
                        });
                    }
                }
                None => {
                    index.insert(a.name.as_str(), table.len());
                    table.push(a.clone());
                }
            }
        }
    }
    Ok(table)
}

fn keep_axes<S: AsRef<str>>(table: &[Axis], keep: &[S]) -> TensorResult<Vec<Axis>> {
    let mut out: Vec<Axis> = Vec::with_capacity(keep.len());
    for k in keep {
        let k = k.as_ref();
        let a = table
            .iter()
            .find(|a| a.name == k)
            .ok_or_else(|| TensorError::UnknownAxis(k.to_string()))?;
        if out.iter().any(|b| b.name == k) {
            return Err(TensorError::DuplicateAxis(k.to_string()));
        }
        out.push(a.clone());
    }
    Ok(out)
}

/// Multiplies `inputs` and sums over every axis not in `out_axes`.
fn product_sum(inputs: &[&NamedTensor], out_axes: &[Axis]) -> NamedTensor {
    let mut union: Vec<Axis> = out_axes.to_vec();
    for t in inputs {
        for a in &t.axes {
            if !union.iter().any(|b| b.name == a.name) {
                union.push(a.clone());
            }
        }
    }
    let n = union.len();
    let out_strides = row_major_strides(out_axes);
    let mut ustride_out = vec![0usize; n];
    ustride_out[..out_axes.len()].copy_from_slice(&out_strides);
    let ustride_in: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let s = t.strides();
            union
                .iter()
                .map(|a| t.position(&a.name).map(|p| s[p]).unwrap_or(0))
                .collect()
        })
        .collect();
    let out_size: usize = out_axes.iter().map(|a| a.card).product();
    let mut out = vec![C64::new(0.0, 0.0); out_size];
    let cards: Vec<usize> = union.iter().map(|a| a.card).collect();

    let mut idx = vec![0usize; n];
    let mut off_in = vec![0usize; inputs.len()];
    let mut off_out = 0usize;
    loop {
        let mut prod = C64::new(1.0, 0.0);
        for (t, &o) in inputs.iter().zip(&off_in) {
            prod *= t.data[o];
        }
        out[off_out] += prod;

        // advance the odometer, updating offsets incrementally
        let mut k = n;
        loop {
            if k == 0 {
                return NamedTensor {
                    axes: out_axes.to_vec(),
                    data: out,
                };
            }
            k -= 1;
            idx[k] += 1;
            off_out += ustride_out[k];
            for (o, s) in off_in.iter_mut().zip(&ustride_in) {
                *o += s[k];
            }
            if idx[k] < cards[k] {
                break;
            }
            off_out -= ustride_out[k] * cards[k];
            for (o, s) in off_in.iter_mut().zip(&ustride_in) {
                *o -= s[k] * cards[k];
            }
            idx[k] = 0;
        }
    }
}

/// Greedy sum-elimination order: repeatedly eliminate the axis whose
/// elimination produces the smallest intermediate tensor. Ties go to the axis
/// that appears first among the factors.
pub fn elimination_order<T, S>(factors: &[T], keep: &[S]) -> TensorResult<Vec<String>>
where
    T: Borrow<NamedTensor>,
    S: AsRef<str>,
{
    let table = axis_table(factors)?;
    keep_axes(&table, keep)?;
    let id: HashMap<&str, usize> = table
        .iter()
        .enumerate()
        .map(|(i, a)| (a.name.as_str(), i))
        .collect();
    let cards: Vec<usize> = table.iter().map(|a| a.card).collect();
    let mut sets: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| f.borrow().axes.iter().map(|a| id[a.name.as_str()]).collect())
        .collect();
    let kept: Vec<bool> = table
        .iter()
        .map(|a| keep.iter().any(|k| k.as_ref() == a.name))
        .collect();
    let mut remaining: Vec<usize> = (0..table.len()).filter(|&i| !kept[i]).collect();
    let mut order = Vec::with_capacity(remaining.len());

    while !remaining.is_empty() {
        let mut best: Option<(usize, usize)> = None; // (size, position in remaining)
        for (pos, &v) in remaining.iter().enumerate() {
            let size = merged_set(&sets, v)
                .iter()
                .filter(|&&a| a != v)
                .map(|&a| cards[a])
                .fold(1usize, |acc, c| acc.saturating_mul(c));
            if best.is_none_or(|(s, _)| size < s) {
                best = Some((size, pos));
            }
        }
        let (_, pos) = best.expect("remaining is non-empty");
        let v = remaining.remove(pos);
        let merged: Vec<usize> = merged_set(&sets, v).into_iter().filter(|&a| a != v).collect();
        sets.retain(|s| !s.contains(&v));
        sets.push(merged);
        order.push(table[v].name.clone());
    }
    Ok(order)
}

fn merged_set(sets: &[Vec<usize>], v: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for s in sets.iter().filter(|s| s.contains(&v)) {
        for &a in s {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    out
}

/// Exterior function of `factors`: the sum over all axes not in `keep` of the
/// product of all factors. Result axes are exactly `keep`, in that order; an
/// empty `keep` yields a scalar.
pub fn contract<T, S>(factors: &[T], keep: &[S]) -> TensorResult<NamedTensor>
where
    T: Borrow<NamedTensor>,
    S: AsRef<str>,
{
    contract_with_stats(factors, keep).map(|(t, _)| t)
}

pub fn contract_with_stats<T, S>(
    factors: &[T],
    keep: &[S],
) -> TensorResult<(NamedTensor, ContractionStats)>
where
    T: Borrow<NamedTensor>,
    S: AsRef<str>,
{
    let order = elimination_order(factors, keep)?;
    contract_with_order(factors, keep, &order)
}

/// Contraction along a caller-chosen elimination order, which must list every
/// non-kept axis exactly once.
pub fn contract_with_order<T, S, O>(
    factors: &[T],
    keep: &[S],
    order: &[O],
) -> TensorResult<(NamedTensor, ContractionStats)>
where
    T: Borrow<NamedTensor>,
    S: AsRef<str>,
    O: AsRef<str>,
{
    let table = axis_table(factors)?;
    let out_axes = keep_axes(&table, keep)?;
    let summed: Vec<&Axis> = table
        .iter()
        .filter(|a| !out_axes.iter().any(|b| b.name == a.name))
        .collect();
    if order.len() != summed.len() {
        return Err(TensorError::InvalidOrder(format!(
            "expected {} axes, got {}",
            summed.len(),
            order.len()
        )));
    }
    for (i, o) in order.iter().enumerate() {
        let o = o.as_ref();
        if !summed.iter().any(|a| a.name == o) {
            return Err(TensorError::InvalidOrder(format!("`{o}` is kept or unknown")));
        }
        if order[..i].iter().any(|p| p.as_ref() == o) {
            return Err(TensorError::InvalidOrder(format!("`{o}` listed twice")));
        }
    }

    let mut stats = ContractionStats {
        order: order.iter().map(|o| o.as_ref().to_string()).collect(),
        peak_entries: 0,
    };
    let mut pool: Vec<Cow<'_, NamedTensor>> =
        factors.iter().map(|f| Cow::Borrowed(f.borrow())).collect();
    for v in order {
        let v = v.as_ref();
        let (with, without): (Vec<_>, Vec<_>) = pool.into_iter().partition(|t| t.has_axis(v));
        let inputs: Vec<&NamedTensor> = with.iter().map(|t| t.as_ref()).collect();
        let mut axes: Vec<Axis> = Vec::new();
        for t in &inputs {
            for a in &t.axes {
                if a.name != v && !axes.iter().any(|b| b.name == a.name) {
                    axes.push(a.clone());
                }
            }
        }
        let t = product_sum(&inputs, &axes);
        stats.peak_entries = stats.peak_entries.max(t.len());
        pool = without;
        pool.push(Cow::Owned(t));
    }
    let inputs: Vec<&NamedTensor> = pool.iter().map(|t| t.as_ref()).collect();
    let result = product_sum(&inputs, &out_axes);
    stats.peak_entries = stats.peak_entries.max(result.len());
    Ok((result, stats))
}
