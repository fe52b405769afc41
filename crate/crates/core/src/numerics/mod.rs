//! Transient analysis of finalized graphs by uniformization.

mod poisson;

use rayon::prelude::*;
use thiserror::Error;

use crate::explorer::TruncatedGraph;

pub use poisson::{poisson_window, PoissonWindow};
pub(crate) use poisson::kahan_sum;

/// Vectors shorter than this are multiplied on one thread.
const PARALLEL_MIN: usize = 8192;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("Poisson parameter must be non-negative and finite, found {0}")]
    NegativeLambda(f64),
    #[error("tolerance must be in (0, 1e-3], found {0}")]
    Tolerance(f64),
    #[error("time horizon must be positive and finite, found {0}")]
    Time(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("graph is not finalized")]
    NotFinalized,
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
}

/// A dense probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates and clamps entries in `[-1e-14, 0)` to zero.
    pub fn new(mut values: Vec<f64>) -> Result<Self, NumericsError> {
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -1e-14 {
                return Err(NumericsError::Distribution(format!("entry {i} is {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum = kahan_sum(&values);
        if (sum - 1.0).abs() > 1e-10 {
            return Err(NumericsError::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Distribution(values))
    }

    pub fn point(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Distribution(v)
    }

    fn clamped(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Distribution(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        kahan_sum(&self.0)
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_rows(n: usize, rows: impl Fn(usize) -> Vec<(usize, f64)>) -> Self {
        let mut csr = Csr {
            ptr: Vec::with_capacity(n + 1),
            idx: Vec::new(),
            val: Vec::new(),
        };
        csr.ptr.push(0);
        for i in 0..n {
            for (j, v) in rows(i) {
                csr.idx.push(j);
                csr.val.push(v);
            }
            csr.ptr.push(csr.idx.len());
        }
        csr
    }

    fn transpose(&self, n: usize) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &j in &self.idx {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let ptr = counts.clone();
        let mut fill = counts;
        let mut idx = vec![0; self.idx.len()];
        let mut val = vec![0.0; self.val.len()];
        for i in 0..n {
            for e in self.ptr[i]..self.ptr[i + 1] {
                let j = self.idx[e];
                idx[fill[j]] = i;
                val[fill[j]] = self.val[e];
                fill[j] += 1;
            }
        }
        Csr { ptr, idx, val }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.ptr[i]..self.ptr[i + 1];
        self.idx[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }
}

/// The uniformized jump matrix `P = I + Q/q`, split into its diagonal and
/// off-diagonal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    n: usize,
    q: f64,
    diag: Vec<f64>,
    /// Off-diagonal entries by source row.
    out: Csr,
    /// The same entries by target row.
    inc: Csr,
}

/// Uniformizes a finalized graph. The absorbing state's row is the identity row.
pub fn uniformize(graph: &TruncatedGraph) -> Result<SparseKernel, NumericsError> {
    SparseKernel::from_graph(graph, None)
}

impl SparseKernel {
    /// Uniformizes `graph`, treating states flagged in `absorbing` as having
    /// no outgoing transitions.
    pub fn from_graph(graph: &TruncatedGraph, absorbing: Option<&[bool]>) -> Result<Self, NumericsError> {
        if !graph.is_finalized() {
            return Err(NumericsError::NotFinalized);
        }
        let n = graph.dimension();
        if let Some(mask) = absorbing {
            if mask.len() != n {
                return Err(NumericsError::Dimension {
                    expected: n,
                    found: mask.len(),
                });
            }
        }
        let live = |i: usize| absorbing.is_none_or(|m| !m[i]);
        let exit: Vec<f64> = (0..n)
            .map(|i| if live(i) { kahan_sum(&rates(graph, i)) } else { 0.0 })
            .collect();
        let max_exit = exit.iter().copied().fold(0.0, f64::max);
        let q = if max_exit > 0.0 { 1.02 * max_exit } else { 1.0 };
        let out = Csr::from_rows(n, |i| {
            if live(i) {
                graph.transitions(i).iter().map(|&(j, r)| (j, r / q)).collect()
            } else {
                Vec::new()
            }
        });
        let diag = exit.iter().map(|e| 1.0 - e / q).collect();
        let inc = out.transpose(n);
        Ok(SparseKernel { n, q, diag, out, inc })
    }

    /// A kernel from an explicit row-stochastic matrix, with `q = 1`.
    pub fn from_dense(matrix: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n = matrix.len();
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(NumericsError::Dimension {
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(NumericsError::Kernel(format!("row {i} has an entry outside [0,1]")));
            }
            let s = kahan_sum(row);
            if (s - 1.0).abs() > 1e-12 {
                return Err(NumericsError::Kernel(format!("row {i} sums to {s}")));
            }
        }
        let out = Csr::from_rows(n, |i| {
            matrix[i]
                .iter()
                .enumerate()
                .filter(|&(j, &p)| j != i && p != 0.0)
                .map(|(j, &p)| (j, p))
                .collect()
        });
        let diag = (0..n).map(|i| matrix[i][i]).collect();
        let inc = out.transpose(n);
        Ok(SparseKernel { n, q: 1.0, diag, out, inc })
    }

    /// The same generator uniformized at a larger rate `q`.
    pub fn with_uniformization_rate(&self, q: f64) -> Result<Self, NumericsError> {
        if !(q >= self.q && q.is_finite()) {
            return Err(NumericsError::Kernel(format!("rate {q} is below {}", self.q)));
        }
        let scale = self.q / q;
        let mut k = self.clone();
        k.q = q;
        k.out.val.iter_mut().for_each(|v| *v *= scale);
        k.inc.val.iter_mut().for_each(|v| *v *= scale);
        k.diag.iter_mut().for_each(|d| *d = 1.0 - (1.0 - *d) * scale);
        Ok(k)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.q
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.out.row(i).filter(|&(k, _)| k == j).map(|(_, p)| p).sum()
        }
    }

    /// Sum of row `i` including the diagonal.
    pub fn row_sum(&self, i: usize) -> f64 {
        let mut row: Vec<f64> = self.out.row(i).map(|(_, p)| p).collect();
        row.push(self.diag[i]);
        kahan_sum(&row)
    }

    /// `out = v P`.
    pub fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        let cell = |j: usize| self.inc.row(j).fold(self.diag[j] * v[j], |acc, (i, p)| acc + v[i] * p);
        fill(out, cell);
    }

    /// `out = P v`.
    pub fn backward_into(&self, v: &[f64], out: &mut [f64]) {
        let cell = |i: usize| self.out.row(i).fold(self.diag[i] * v[i], |acc, (j, p)| acc + p * v[j]);
        fill(out, cell);
    }

    /// The distribution at time `t` from `init`.
    pub fn transient(&self, init: &Distribution, t: f64, tol: f64) -> Result<Distribution, NumericsError> {
        self.check_dimension(init.len())?;
        let v = self.power_series(init.as_slice(), t, tol, Direction::Forward)?;
        Ok(Distribution::clamped(v))
    }

    /// `exp(Q t) f` for a terminal value vector `f`: entry `i` is the
    /// expectation of `f` at time `t` when starting in state `i`.
    pub fn backward_transient(&self, values: &[f64], t: f64, tol: f64) -> Result<Vec<f64>, NumericsError> {
        self.check_dimension(values.len())?;
        self.power_series(values, t, tol, Direction::Backward)
    }

    fn check_dimension(&self, found: usize) -> Result<(), NumericsError> {
        if found != self.n {
            return Err(NumericsError::Dimension {
                expected: self.n,
                found,
            });
        }
        Ok(())
    }

    /// `sum_k w_k v P^k` (forward) or `sum_k w_k P^k v` (backward).
    ///
    /// Iteration stops early once the remaining steps cannot move the
    /// iterate by more than a small fraction of `tol`: successive
    /// differences shrink in the 1-norm (forward) or max-norm (backward),
    /// so `steps_left * |v_{k+1} - v_k|` bounds the remaining drift.
    fn power_series(&self, start: &[f64], t: f64, tol: f64, dir: Direction) -> Result<Vec<f64>, NumericsError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(NumericsError::Time(t));
        }
        let window = poisson_window(self.q * t, tol)?;
        let n = self.n;
        let mut v = start.to_vec();
        let mut next = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut comp = vec![0.0; n];
        for k in 0..=window.right {
            let w = window.weight(k);
            if w > 0.0 {
                add_scaled(&mut acc, &mut comp, &v, w);
            }
            if k == window.right {
                break;
            }
            match dir {
                Direction::Forward => self.forward_into(&v, &mut next),
                Direction::Backward => self.backward_into(&v, &mut next),
            }
            let diff = match dir {
                Direction::Forward => v.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>(),
                Direction::Backward => v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            };
            std::mem::swap(&mut v, &mut next);
            let steps_left = (window.right - k) as f64;
            if diff * steps_left < tol * 1e-3 {
                let rest = kahan_sum(&window.weights[(k + 1).max(window.left) - window.left..]);
                add_scaled(&mut acc, &mut comp, &v, rest);
                break;
            }
        }
        Ok(acc)
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

fn fill(out: &mut [f64], cell: impl Fn(usize) -> f64 + Sync) {
    if out.len() >= PARALLEL_MIN {
        out.par_iter_mut().enumerate().for_each(|(j, o)| *o = cell(j));
    } else {
        out.iter_mut().enumerate().for_each(|(j, o)| *o = cell(j));
    }
}

/// `acc += w v` with per-entry Kahan compensation.
fn add_scaled(acc: &mut [f64], comp: &mut [f64], v: &[f64], w: f64) {
    for ((a, c), &x) in acc.iter_mut().zip(comp.iter_mut()).zip(v) {
        let y = w * x - *c;
        let t = *a + y;
        *c = (t - *a) - y;
        *a = t;
    }
}

fn rates(graph: &TruncatedGraph, i: usize) -> Vec<f64> {
    graph.transitions(i).iter().map(|&(_, r)| r).collect()
}

/// One step `v P`.
pub fn spmv(kernel: &SparseKernel, v: &Distribution) -> Result<Distribution, NumericsError> {
    kernel.check_dimension(v.len())?;
    let mut out = vec![0.0; kernel.n];
    kernel.forward_into(v.as_slice(), &mut out);
    Ok(Distribution::clamped(out))
}

/// The distribution of a finalized graph at time `t`.
pub fn transient(graph: &TruncatedGraph, t: f64, init: &Distribution, tol: f64) -> Result<Distribution, NumericsError> {
    uniformize(graph)?.transient(init, t, tol)
}
