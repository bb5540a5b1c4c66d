//! Markov reward processes: storage, validation, sampling and the Cesàro
//! reference gain.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Row-sum and sign tolerance applied by every loader and constructor.
pub const DEFAULT_TOL: f64 = 1e-9;

/// State identifier, 0-based.
pub type StateIndex = usize;

/// One invariant violation found by [`validate_parts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { detail: String },
    NonFinite { row: usize, col: usize },
    Negative { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    RewardNonFinite { state: usize },
    RewardBound { state: usize, value: f64, bound: f64 },
    BadBound { bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { detail } => write!(f, "shape: {detail}"),
            Violation::NonFinite { row, col } => write!(f, "non-finite entry at ({row},{col})"),
            Violation::Negative { row, col, value } => {
                write!(f, "negative entry at ({row},{col}): {value}")
            }
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            Violation::RewardNonFinite { state } => write!(f, "reward {state} is not finite"),
            Violation::RewardBound {
                state,
                value,
                bound,
            } => write!(f, "|r({state})| = {} exceeds bound {bound}", value.abs()),
            Violation::BadBound { bound } => write!(f, "reward bound {bound} is not a finite non-negative number"),
        }
    }
}

/// Result of validation: empty means the chain is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check transition rows and rewards against every chain invariant at `tol`.
pub fn validate_parts(rows: &[Vec<f64>], rewards: &[f64], bound: f64, tol: f64) -> ValidationReport {
    let n = rows.len();
    let mut violations = Vec::new();
    if n == 0 {
        violations.push(Violation::Shape {
            detail: "chain has no states".into(),
        });
    }
    if rewards.len() != n {
        violations.push(Violation::Shape {
            detail: format!("{} rewards for {n} states", rewards.len()),
        });
    }
    for (s, row) in rows.iter().enumerate() {
        if row.len() != n {
            violations.push(Violation::Shape {
                detail: format!("row {s} has {} entries, expected {n}", row.len()),
            });
            continue;
        }
        let mut finite = true;
        for (j, &p) in row.iter().enumerate() {
            if !p.is_finite() {
                finite = false;
                violations.push(Violation::NonFinite { row: s, col: j });
            } else if p < 0.0 {
                violations.push(Violation::Negative {
                    row: s,
                    col: j,
                    value: p,
                });
            }
        }
        if finite {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                violations.push(Violation::RowSum { row: s, sum });
            }
        }
    }
    if !(bound.is_finite() && bound >= 0.0) {
        violations.push(Violation::BadBound { bound });
    }
    for (s, &x) in rewards.iter().enumerate() {
        if !x.is_finite() {
            violations.push(Violation::RewardNonFinite { state: s });
        } else if bound.is_finite() && x.abs() > bound {
            violations.push(Violation::RewardBound {
                state: s,
                value: x,
                bound,
            });
        }
    }
    ValidationReport { violations }
}

/// Dense row-stochastic transition matrix with cached cumulative rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StochasticMatrix {
    /// Build from rows; rows must pass validation at [`DEFAULT_TOL`].
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let report = validate_parts(&rows, &vec![0.0; n], 0.0, DEFAULT_TOL);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let mut cumulative = Vec::with_capacity(n * n);
        for row in data.chunks(n) {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Ok(Self {
            n,
            data,
            cumulative,
        })
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_rows(rows).expect("identity is stochastic")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.data[s * self.n + t]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n..(s + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Smallest positive entry.
    pub fn min_positive(&self) -> f64 {
        self.data
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// `P v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(p, x)| p * x).sum())
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Draw a successor of `s` by inverse CDF over the cumulative row.
    ///
    /// Zero-probability columns are never returned. A uniform that lands past
    /// the final cumulative sum (rounding slack) maps to the last column with
    /// positive mass.
    #[inline]
    pub fn sample_next(&self, s: StateIndex, stream: &mut Stream) -> StateIndex {
        let cum = &self.cumulative[s * self.n..(s + 1) * self.n];
        let u = stream.uniform();
        let j = cum.partition_point(|&c| c <= u);
        if j < self.n {
            return j;
        }
        let row = self.row(s);
        row.iter()
            .rposition(|&p| p > 0.0)
            .expect("stochastic row has positive mass")
    }
}

/// Bounded deterministic rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: Vec<f64>,
    pub bound: f64,
}

/// A Markov reward process `(P, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mrp {
    transition: StochasticMatrix,
    reward: RewardVector,
}

impl Mrp {
    pub fn new(rows: Vec<Vec<f64>>, rewards: Vec<f64>, bound: f64) -> Result<Self> {
        let report = validate_parts(&rows, &rewards, bound, DEFAULT_TOL);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        Ok(Self {
            transition: StochasticMatrix::from_rows(rows)?,
            reward: RewardVector {
                values: rewards,
                bound,
            },
        })
    }

    /// Build with the reward bound set to `max |r(s)|`.
    pub fn with_tight_bound(rows: Vec<Vec<f64>>, rewards: Vec<f64>) -> Result<Self> {
        let bound = rewards.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Self::new(rows, rewards, bound)
    }

    pub fn n(&self) -> usize {
        self.transition.n()
    }

    pub fn transition(&self) -> &StochasticMatrix {
        &self.transition
    }

    pub fn reward(&self) -> &RewardVector {
        &self.reward
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward.values
    }

    /// Re-check every invariant at `tol`.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        validate_parts(
            &self.transition.rows(),
            &self.reward.values,
            self.reward.bound,
            tol,
        )
    }

    #[inline]
    pub fn sample_next(&self, s: StateIndex, stream: &mut Stream) -> StateIndex {
        self.transition.sample_next(s, stream)
    }

    /// Truncated Cesàro average `(1/T) Σ_{t<T} P^t r`.
    ///
    /// Evaluated by binary doubling of the partial sums, so the cost is
    /// `O(n^3 log T)` rather than `O(n^2 T)`.
    pub fn cesaro_gain(&self, horizon: u64) -> Result<Vec<f64>> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let n = self.n();
        let r = DVector::from_column_slice(&self.reward.values);
        // power = P^(2^j), block = Σ_{t<2^j} P^t r
        let mut power = self.transition.to_dmatrix();
        let mut block = r.clone();
        let mut acc = DVector::zeros(n);
        let mut bits = horizon;
        let mut blocks = Vec::new();
        loop {
            blocks.push((power.clone(), block.clone()));
            bits >>= 1;
            if bits == 0 {
                break;
            }
            block = &block + &power * &block;
            power = &power * &power;
        }
        // Σ_{t<m+2^j} P^t r = Σ_{t<2^j} P^t r + P^(2^j) Σ_{t<m} P^t r
        for (j, (pw, bl)) in blocks.iter().enumerate().rev() {
            if (horizon >> j) & 1 == 1 {
                acc = bl + pw * &acc;
            }
        }
        let scale = 1.0 / horizon as f64;
        Ok(acc.iter().map(|x| x * scale).collect())
    }

    pub fn to_file(&self) -> ChainFile {
        ChainFile {
            n: self.n(),
            transition: self.transition.rows(),
            r: self.reward.values.clone(),
            bound: self.reward.bound,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        ChainFile::load(path)?.into_mrp()
    }
}

/// On-disk chain format: `{"n": .., "P": [[..]], "r": [..], "R": ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub n: usize,
    #[serde(rename = "P")]
    pub transition: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    #[serde(rename = "R")]
    pub bound: f64,
}

impl ChainFile {
    pub fn validate(&self, tol: f64) -> ValidationReport {
        let mut report = validate_parts(&self.transition, &self.r, self.bound, tol);
        if self.transition.len() != self.n {
            report.violations.insert(
                0,
                Violation::Shape {
                    detail: format!("n = {} but P has {} rows", self.n, self.transition.len()),
                },
            );
        }
        report
    }

    pub fn into_mrp(self) -> Result<Mrp> {
        let report = self.validate(DEFAULT_TOL);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        Mrp::new(self.transition, self.r, self.bound)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
