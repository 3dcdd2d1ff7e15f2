//! Exact arithmetic over finite probability distributions.
//!
//! Probabilities live in linear space; every entropic sum is accumulated in
//! nats with the convention `0 · ln 0 = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance a distribution must meet after construction.
pub const SUM_TOL: f64 = 1e-12;
/// Inputs whose total is within this distance of 1 are renormalized.
pub const RENORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("distribution is empty")]
    Empty,
    #[error("entry {index} is {value}, expected a finite non-negative probability")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    BadNormalization { sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("absolute continuity violated at symbol {index}: p = {p} where q = 0")]
    AbsoluteContinuityViolation { index: usize, p: f64 },
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn check_and_normalize(mut probs: Vec<f64>) -> Result<Vec<f64>, ProbError> {
    if probs.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ProbError::InvalidEntry { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > RENORM_TOL {
        return Err(ProbError::BadNormalization { sum });
    }
    if sum != 1.0 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(probs)
}

/// An exact probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteDist {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FiniteDist {
    type Error = ProbError;
    fn try_from(v: Vec<f64>) -> Result<Self, ProbError> {
        FiniteDist::new(v)
    }
}

impl From<FiniteDist> for Vec<f64> {
    fn from(d: FiniteDist) -> Self {
        d.probs
    }
}

impl FiniteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        Ok(Self {
            probs: check_and_normalize(probs)?,
        })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "uniform distribution needs at least one symbol");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        assert!(at < n);
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self { probs }
    }

    /// Two-symbol distribution `(1 − p1, p1)`.
    pub fn bernoulli(p1: f64) -> Result<Self, ProbError> {
        Self::new(vec![1.0 - p1, p1])
    }

    /// Softmax of arbitrary finite logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self {
            probs: softmax(logits),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Reorders symbols so that the new symbol `i` is the old symbol `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len());
        Self {
            probs: perm.iter().map(|&i| self.probs[i]).collect(),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// A row-stochastic matrix; row `i` is the output distribution given input `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CondDist {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for CondDist {
    type Error = ProbError;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self, ProbError> {
        CondDist::from_rows(v)
    }
}

impl From<CondDist> for Vec<Vec<f64>> {
    fn from(c: CondDist) -> Self {
        (0..c.rows).map(|i| c.row(i).to_vec()).collect()
    }
}

impl CondDist {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ProbError> {
        let n = rows.len();
        if n == 0 {
            return Err(ProbError::Empty);
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            if row.len() != cols {
                return Err(ProbError::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend(check_and_normalize(row)?);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    /// Every row equal to `dist`.
    pub fn repeat(rows: usize, dist: &FiniteDist) -> Self {
        let mut data = Vec::with_capacity(rows * dist.len());
        for _ in 0..rows {
            data.extend_from_slice(dist.probs());
        }
        Self {
            rows,
            cols: dist.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    /// Row-wise softmax of a `rows × cols` logit matrix stored row-major.
    pub fn from_logit_rows(rows: usize, cols: usize, logits: &[f64]) -> Self {
        assert_eq!(logits.len(), rows * cols);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(softmax(&logits[r * cols..(r + 1) * cols]));
        }
        Self { rows, cols, data }
    }

    pub fn n_inputs(&self) -> usize {
        self.rows
    }

    pub fn n_outputs(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn row_dist(&self, i: usize) -> FiniteDist {
        FiniteDist {
            probs: self.row(i).to_vec(),
        }
    }

    /// Relabels inputs and outputs: new entry `(i, k)` is old `(in_perm[i], out_perm[k])`.
    pub fn permuted(&self, in_perm: &[usize], out_perm: &[usize]) -> Self {
        assert_eq!(in_perm.len(), self.rows);
        assert_eq!(out_perm.len(), self.cols);
        let mut data = Vec::with_capacity(self.data.len());
        for &i in in_perm {
            for &k in out_perm {
                data.push(self.get(i, k));
            }
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Channel composition `Σ_k self(k|i) other(j|k)`.
    pub fn compose(&self, other: &CondDist) -> Result<CondDist, ProbError> {
        if self.cols != other.rows {
            return Err(ProbError::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut data = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(CondDist {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    /// Output marginal `Σ_i p(i) self(k|i)`.
    pub fn push_forward(&self, p: &FiniteDist) -> Result<FiniteDist, ProbError> {
        if p.len() != self.rows {
            return Err(ProbError::DimensionMismatch {
                expected: self.rows,
                got: p.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &pi) in p.probs().iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.row(i)) {
                *o += pi * c;
            }
        }
        FiniteDist::new(out)
    }
}

/// Which variable of a joint table is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Row,
    Col,
}

/// A joint distribution over (row symbol, column symbol) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct JointDist {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for JointDist {
    type Error = ProbError;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self, ProbError> {
        JointDist::from_rows(v)
    }
}

impl From<JointDist> for Vec<Vec<f64>> {
    fn from(j: JointDist) -> Self {
        (0..j.rows).map(|i| j.row(i).to_vec()).collect()
    }
}

impl JointDist {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ProbError> {
        let n = rows.len();
        if n == 0 {
            return Err(ProbError::Empty);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ProbError::DimensionMismatch {
                expected: cols,
                got: rows.iter().map(|r| r.len()).find(|&l| l != cols).unwrap(),
            });
        }
        let data = check_and_normalize(rows.into_iter().flatten().collect())?;
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    /// Row-major table; validated like a flat distribution.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ProbError> {
        if data.len() != rows * cols {
            return Err(ProbError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data: check_and_normalize(data)?,
        })
    }

    pub fn product(a: &FiniteDist, b: &FiniteDist) -> Self {
        let mut data = Vec::with_capacity(a.len() * b.len());
        for &x in a.probs() {
            for &y in b.probs() {
                data.push(x * y);
            }
        }
        Self {
            rows: a.len(),
            cols: b.len(),
            data,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, k));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in row_perm {
            for &k in col_perm {
                data.push(self.get(i, k));
            }
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &FiniteDist) -> f64 {
    (-p.probs().iter().map(|&x| xlnx(x)).sum::<f64>()).max(0.0)
}

/// `KL(p ‖ q)` in nats.
pub fn kl(p: &FiniteDist, q: &FiniteDist) -> Result<f64, ProbError> {
    if p.len() != q.len() {
        return Err(ProbError::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut acc = 0.0;
    for (index, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(ProbError::AbsoluteContinuityViolation { index, p: pi });
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

/// `KL(p ‖ q)`, with support failures mapped to `+∞`.
pub fn kl_or_inf(p: &FiniteDist, q: &FiniteDist) -> f64 {
    match kl(p, q) {
        Ok(v) => v,
        Err(ProbError::AbsoluteContinuityViolation { .. }) => f64::INFINITY,
        Err(e) => panic!("kl_or_inf: {e}"),
    }
}

/// Exact mutual information of a joint table.
pub fn mutual_information(j: &JointDist) -> f64 {
    let pr = marginalize(j, Side::Row);
    let pc = marginalize(j, Side::Col);
    let mut acc = 0.0;
    for i in 0..j.rows {
        for k in 0..j.cols {
            let v = j.get(i, k);
            if v > 0.0 {
                acc += v * (v / (pr.get(i) * pc.get(k))).ln();
            }
        }
    }
    acc.max(0.0)
}

/// `table[i][k] = px_i · cond[i][k]`.
pub fn compose_joint(px: &FiniteDist, cond: &CondDist) -> Result<JointDist, ProbError> {
    if cond.n_inputs() != px.len() {
        return Err(ProbError::DimensionMismatch {
            expected: px.len(),
            got: cond.n_inputs(),
        });
    }
    let mut data = Vec::with_capacity(px.len() * cond.n_outputs());
    for (i, &p) in px.probs().iter().enumerate() {
        data.extend(cond.row(i).iter().map(|&c| p * c));
    }
    Ok(JointDist {
        rows: px.len(),
        cols: cond.n_outputs(),
        data,
    })
}

/// Marginal distribution of the variable on `side`.
pub fn marginalize(j: &JointDist, side: Side) -> FiniteDist {
    let probs = match side {
        Side::Row => (0..j.rows).map(|i| j.row(i).iter().sum()).collect(),
        Side::Col => {
            let mut out = vec![0.0; j.cols];
            for i in 0..j.rows {
                for (o, &v) in out.iter_mut().zip(j.row(i)) {
                    *o += v;
                }
            }
            out
        }
    };
    FiniteDist { probs }
}

/// Conditional of the other variable given the variable on `given`.
///
/// Returns the conditional and the indices of zero-mass slices, which receive
/// uniform rows.
pub fn posterior_with_flags(j: &JointDist, given: Side) -> (CondDist, Vec<usize>) {
    let table = match given {
        Side::Row => j.clone(),
        Side::Col => j.transposed(),
    };
    let mut flagged = Vec::new();
    let mut data = Vec::with_capacity(table.data.len());
    for i in 0..table.rows {
        let row = table.row(i);
        let mass: f64 = row.iter().sum();
        if mass > 0.0 {
            data.extend(row.iter().map(|&v| v / mass));
        } else {
            flagged.push(i);
            data.extend(std::iter::repeat_n(1.0 / table.cols as f64, table.cols));
        }
    }
    (
        CondDist {
            rows: table.rows,
            cols: table.cols,
            data,
        },
        flagged,
    )
}

pub fn posterior(j: &JointDist, given: Side) -> CondDist {
    posterior_with_flags(j, given).0
}
