//! Phase-offset absorption weights and the anchor gauge map built on them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Mrp, StochasticMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{Purpose, Sampler};
use crate::structure::{robust_ceil, ChainStructure};

/// Hard cap on the length of a single absorption episode.
pub const EPISODE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Exact,
    Estimated { episodes: usize, seed: u64 },
    /// Hand-built weights, e.g. the single all-ones column of a one-anchor gauge.
    Custom,
}

/// `n x N` matrix whose column `(i, k)` is the weight vector `b_{i,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseWeights {
    pub n: usize,
    pub index_set: Vec<(usize, usize)>,
    /// Row-major, `n` rows of `index_set.len()` entries.
    pub w: Vec<f64>,
    pub kind: WeightKind,
}

impl PhaseWeights {
    pub fn cols(&self) -> usize {
        self.index_set.len()
    }

    #[inline]
    pub fn get(&self, s: usize, col: usize) -> f64 {
        self.w[s * self.cols() + col]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        let c = self.cols();
        &self.w[s * c..(s + 1) * c]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|s| self.get(s, col)).collect()
    }

    /// Recurrent rows are the indicator of the state's own (class, phase).
    fn with_recurrent_rows(st: &ChainStructure, kind: WeightKind) -> Self {
        let cols = st.num_phases();
        let mut w = vec![0.0; st.n * cols];
        for s in 0..st.n {
            if let Some(c) = st.column_of_state(s) {
                w[s * cols + c] = 1.0;
            }
        }
        Self {
            n: st.n,
            index_set: st.index_set.clone(),
            w,
            kind,
        }
    }

    /// Max deviation of a row sum from one.
    pub fn simplex_defect(&self) -> f64 {
        (0..self.n)
            .map(|s| (self.row(s).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `sup_s |Σ_j w(s,j) x_j|` helper: `W x`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.cols());
        (0..self.n)
            .map(|s| self.row(s).iter().zip(coeffs).map(|(b, t)| b * t).sum())
            .collect()
    }
}

/// Monte-Carlo phase-offset absorption weights: `M` episodes per transient
/// state, each run until it first enters a recurrent class.
pub fn estimate_weights(
    mrp: &Mrp,
    st: &ChainStructure,
    episodes: usize,
    sampler: &Sampler,
) -> Result<PhaseWeights> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episode budget M must be positive".into()));
    }
    if mrp.n() != st.n {
        return Err(Error::Dimension(format!("chain has {} states, structure {}", mrp.n(), st.n)));
    }
    let mut weights = PhaseWeights::with_recurrent_rows(
        st,
        WeightKind::Estimated {
            episodes,
            seed: sampler.seed,
        },
    );
    let cols = st.num_phases();
    let rows: Vec<(usize, Vec<usize>)> = st
        .transient
        .par_iter()
        .map(|&s| {
            let mut counts = vec![0usize; cols];
            for j in 0..episodes {
                let mut stream = sampler.stream_for(Purpose::Weights, s, j as u64);
                let mut x = s;
                let mut tau = 0usize;
                while !st.is_recurrent(x) {
                    if tau == EPISODE_CAP {
                        return Err(Error::EpisodeCap {
                            start: s,
                            cap: EPISODE_CAP,
                        });
                    }
                    x = mrp.sample_next(x, &mut stream);
                    tau += 1;
                }
                let class = st.class_of[x].expect("recurrent");
                let d = st.periods[class];
                let phase = st.phase_of[x].expect("recurrent");
                let k = (phase + d - tau % d) % d;
                counts[st.column(class, k)] += 1;
            }
            Ok((s, counts))
        })
        .collect::<Result<_>>()?;
    let m = episodes as f64;
    for (s, counts) in rows {
        for (c, count) in counts.into_iter().enumerate() {
            weights.w[s * cols + c] = count as f64 / m;
        }
    }
    Ok(weights)
}

/// Exact weights from the shift identity `b_{i,k} = P b_{i,k+1}` on the
/// transient states, one dense solve per class over `|T| d_i` unknowns.
pub fn exact_weights(p: &StochasticMatrix, st: &ChainStructure) -> Result<PhaseWeights> {
    if p.n() != st.n {
        return Err(Error::Dimension(format!("matrix has {} states, structure {}", p.n(), st.n)));
    }
    let mut weights = PhaseWeights::with_recurrent_rows(st, WeightKind::Exact);
    let cols = st.num_phases();
    let tcount = st.transient.len();
    if tcount == 0 {
        return Ok(weights);
    }
    let mut tpos = vec![usize::MAX; st.n];
    for (j, &s) in st.transient.iter().enumerate() {
        tpos[s] = j;
    }
    for (i, &d) in st.periods.iter().enumerate() {
        // unknown (j, k) -> j * d + k
        let dim = tcount * d;
        let mut a = DMatrix::<f64>::identity(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for (j, &s) in st.transient.iter().enumerate() {
            for k in 0..d {
                let next = (k + 1) % d;
                let row = j * d + k;
                for (t, &pst) in p.row(s).iter().enumerate() {
                    if pst == 0.0 {
                        continue;
                    }
                    if tpos[t] != usize::MAX {
                        a[(row, tpos[t] * d + next)] -= pst;
                    } else if st.class_of[t] == Some(i) && st.phase_of[t] == Some(next) {
                        b[row] += pst;
                    }
                }
            }
        }
        let x = linalg::solve(a, &b, "transient absorption system")?;
        for (j, &s) in st.transient.iter().enumerate() {
            for k in 0..d {
                weights.w[s * cols + st.column(i, k)] = x[j * d + k];
            }
        }
    }
    Ok(weights)
}

/// `v ↦ v − Σ_{(i,k)} v(a_{i,k}) b_{i,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeMap {
    /// Anchor of each weight column.
    pub anchors: Vec<usize>,
    pub weights: PhaseWeights,
}

impl GaugeMap {
    pub fn new(st: &ChainStructure, weights: PhaseWeights) -> Result<Self> {
        if weights.n != st.n || weights.index_set != st.index_set {
            return Err(Error::Dimension("weights do not match the structure's index set".into()));
        }
        Ok(Self {
            anchors: st.anchor_list(),
            weights,
        })
    }

    /// One anchor, one all-ones column: `v ↦ v − v(a) 1`.
    pub fn single_anchor(n: usize, anchor: usize) -> Self {
        assert!(anchor < n);
        Self {
            anchors: vec![anchor],
            weights: PhaseWeights {
                n,
                index_set: vec![(0, 0)],
                w: vec![1.0; n],
                kind: WeightKind::Custom,
            },
        }
    }

    pub fn n(&self) -> usize {
        self.weights.n
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        assert_eq!(v.len(), self.n(), "vector length differs from gauge dimension");
        let anchor_vals: Vec<f64> = self.anchors.iter().map(|&a| v[a]).collect();
        for (s, x) in v.iter_mut().enumerate() {
            let row = self.weights.row(s);
            let mut corr = 0.0;
            for (b, av) in row.iter().zip(&anchor_vals) {
                corr += b * av;
            }
            *x -= corr;
        }
    }
}

/// `∞`-operator norm of `Π̂ − Π`: `max_s Σ_{(i,k)} |b̂_{i,k}(s) − b_{i,k}(s)|`.
pub fn gauge_deviation(estimated: &GaugeMap, exact: &GaugeMap) -> Result<f64> {
    if estimated.anchors != exact.anchors {
        return Err(Error::GaugeMismatch(format!(
            "anchors {:?} vs {:?}",
            estimated.anchors, exact.anchors
        )));
    }
    if estimated.n() != exact.n() {
        return Err(Error::GaugeMismatch("state counts differ".into()));
    }
    Ok((0..exact.n())
        .map(|s| {
            estimated
                .weights
                .row(s)
                .iter()
                .zip(exact.weights.row(s))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Episodes per transient state `⌈log(2|T|N/δ) / (2 ε_b²)⌉` for a uniform
/// weight error of at most `ε_b` with probability `1 − δ`.
pub fn required_m(eps_b: f64, t_count: usize, num_phases: usize, delta: f64) -> Result<u64> {
    if !(eps_b > 0.0 && eps_b < 1.0) {
        return Err(Error::InvalidArgument(format!("eps_b = {eps_b} not in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} not in (0, 1)")));
    }
    if t_count == 0 || num_phases == 0 {
        return Err(Error::InvalidArgument(
            "transient count and phase count must be positive".into(),
        ));
    }
    let arg = 2.0 * t_count as f64 * num_phases as f64 / delta;
    let m = robust_ceil(arg.ln() / (2.0 * eps_b * eps_b));
    Ok((m as u64).max(1))
}
