//! Projected quotient stochastic approximation, residual estimation and the
//! two scalar-gain baselines.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{Mrp, StateIndex};
use crate::error::{Error, Result};
use crate::gauge::{GaugeMap, PhaseWeights};
use crate::rng::{Purpose, Sampler};
use crate::structure::ChainStructure;

/// Step-size schedule `α_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `α / (t + t0)`.
    InverseLinear { alpha: f64, t0: f64 },
    /// `α (t + offset)^(-exponent)`.
    Polynomial { alpha: f64, exponent: f64, offset: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Polynomial {
            alpha: 1.0,
            exponent: 0.65,
            offset: 500.0,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::InverseLinear { alpha, t0 } => {
                if !(alpha > 0.0 && t0 >= alpha && t0.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "inverse-linear schedule needs t0 >= alpha > 0 (alpha={alpha}, t0={t0})"
                    )));
                }
            }
            StepSchedule::Polynomial {
                alpha,
                exponent,
                offset,
            } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
                }
                if !(exponent > 0.5 && exponent <= 1.0) {
                    return Err(Error::InvalidArgument(format!("exponent = {exponent} not in (0.5, 1]")));
                }
                if !(offset >= 1.0 && offset.is_finite()) {
                    return Err(Error::InvalidArgument(format!("offset = {offset} must be >= 1")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            StepSchedule::InverseLinear { alpha, t0 } => alpha / (t + t0),
            StepSchedule::Polynomial {
                alpha,
                exponent,
                offset,
            } => alpha * (t + offset).powf(-exponent),
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::InverseLinear { alpha, t0 } => write!(f, "inv:{alpha},{t0}"),
            StepSchedule::Polynomial {
                alpha,
                exponent,
                offset,
            } => write!(f, "poly:{alpha},{exponent},{offset}"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    /// `inv:ALPHA,T0` or `poly:ALPHA,EXPONENT,OFFSET`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse schedule '{s}' (expected inv:a,t0 or poly:a,g,offset)"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let sched = match (kind, nums.as_slice()) {
            ("inv", &[alpha, t0]) => StepSchedule::InverseLinear { alpha, t0 },
            ("poly", &[alpha, exponent, offset]) => StepSchedule::Polynomial {
                alpha,
                exponent,
                offset,
            },
            _ => return Err(bad()),
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub log_every: u64,
    pub seed: u64,
}

impl SaConfig {
    pub fn new(schedule: StepSchedule, iterations: u64, log_every: u64, seed: u64) -> Self {
        Self {
            schedule,
            iterations,
            log_every,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be positive".into()));
        }
        if self.iterations > 0 && self.log_every > self.iterations {
            return Err(Error::InvalidArgument(format!(
                "log_every = {} exceeds iterations = {}",
                self.log_every, self.iterations
            )));
        }
        Ok(())
    }

    fn logs_at(&self, t: u64) -> bool {
        t % self.log_every == 0 || t == self.iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub sup_norm: f64,
    pub err: Option<f64>,
}

/// Logged iterations of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub points: Vec<TracePoint>,
}

impl SolveTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,sup_norm,err")?;
        for p in &self.points {
            match p.err {
                Some(e) => writeln!(out, "{},{:.16e},{:.16e}", p.iteration, p.sup_norm, e)?,
                None => writeln!(out, "{},{:.16e},", p.iteration, p.sup_norm)?,
            }
        }
        Ok(())
    }
}

/// Linear map applied after every blended update.
pub trait Projection {
    fn project(&self, v: &mut [f64]);
}

impl Projection for GaugeMap {
    fn project(&self, v: &mut [f64]) {
        self.apply_in_place(v);
    }
}

/// No projection at all (plain TD-style updates).
#[derive(Debug, Clone, Copy, Default)]
pub struct Unprojected;

impl Projection for Unprojected {
    fn project(&self, _v: &mut [f64]) {}
}

/// Hook called at every logged iteration with the current iterate; its
/// return value is stored as the trace's error column.
pub type Observer<'a> = dyn FnMut(u64, &[f64]) -> Result<Option<f64>> + 'a;

/// Synchronous sampled sweep `v ← proj((1−α_t) v + α_t (r + v(s̃)))`, one
/// successor per state per iteration.
pub fn run_sa<P: Projection + ?Sized>(
    mrp: &Mrp,
    projection: &P,
    cfg: &SaConfig,
    v0: &[f64],
    observer: &mut Observer<'_>,
) -> Result<(Vec<f64>, SolveTrace)> {
    cfg.validate()?;
    let n = mrp.n();
    if v0.len() != n {
        return Err(Error::Dimension(format!("v0 has {} entries, chain {n}", v0.len())));
    }
    if v0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { iteration: 0 });
    }
    let sampler = Sampler::new(cfg.seed);
    let r = mrp.rewards();
    let mut v = v0.to_vec();
    projection.project(&mut v);
    let mut next = vec![0.0; n];
    let mut trace = SolveTrace::default();
    let mut log = |t: u64, v: &[f64], trace: &mut SolveTrace| -> Result<()> {
        let err = observer(t, v)?;
        trace.points.push(TracePoint {
            iteration: t,
            sup_norm: crate::linalg::sup_norm(v),
            err,
        });
        Ok(())
    };
    log(0, &v, &mut trace)?;
    for t in 0..cfg.iterations {
        let alpha = cfg.schedule.step(t);
        for s in 0..n {
            let mut stream = sampler.stream_for(Purpose::Sweep, s, t);
            let succ = mrp.sample_next(s, &mut stream);
            next[s] = (1.0 - alpha) * v[s] + alpha * (r[s] + v[succ]);
        }
        projection.project(&mut next);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: t + 1 });
        }
        std::mem::swap(&mut v, &mut next);
        if cfg.logs_at(t + 1) {
            log(t + 1, &v, &mut trace)?;
        }
    }
    Ok((v, trace))
}

/// Projected SA in the given gauge, started from `v0` (gauged first).
pub fn projected_sa(
    mrp: &Mrp,
    gauge: &GaugeMap,
    cfg: &SaConfig,
    v0: &[f64],
) -> Result<(Vec<f64>, SolveTrace)> {
    if gauge.n() != mrp.n() {
        return Err(Error::Dimension("gauge and chain sizes differ".into()));
    }
    run_sa(mrp, gauge, cfg, v0, &mut |_, _| Ok(None))
}

/// Noise-free counterpart of [`projected_sa`] with unit steps:
/// `v ← Π(r + P v)`. Returns every iterate.
pub fn projected_value_iteration(mrp: &Mrp, gauge: &GaugeMap, iterations: usize, v0: &[f64]) -> Vec<Vec<f64>> {
    let mut v = gauge.apply(v0);
    let mut out = vec![v.clone()];
    for _ in 0..iterations {
        let pv = mrp.transition().apply(&v);
        v = mrp.rewards().iter().zip(&pv).map(|(r, x)| r + x).collect();
        gauge.apply_in_place(&mut v);
        out.push(v.clone());
    }
    out
}

/// Largest per-state variance of the sampled update `r(s) + v(s̃)`.
pub fn update_noise_variance(mrp: &Mrp, v: &[f64]) -> f64 {
    let p = mrp.transition();
    (0..mrp.n())
        .map(|s| {
            let row = p.row(s);
            let mean: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
            row.iter()
                .zip(v)
                .map(|(p, x)| p * (x - mean) * (x - mean))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Anchor coordinates of the residual and its reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub theta: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub samples_per_anchor: usize,
}

/// Estimate `θ_{i,k} = r(a) + (P v)(a) − v(a)` at every anchor from `J`
/// successor samples and reconstruct `ĝ = Σ θ_{i,k} b̂_{i,k}`.
///
/// `round` separates the streams of repeated calls (e.g. one per logged
/// iteration).
pub fn estimate_residual(
    mrp: &Mrp,
    v: &[f64],
    gauge: &GaugeMap,
    samples: usize,
    sampler: &Sampler,
    round: u64,
) -> Result<ResidualEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("J must be positive".into()));
    }
    if v.len() != mrp.n() || gauge.n() != mrp.n() {
        return Err(Error::Dimension("iterate, gauge and chain sizes differ".into()));
    }
    let r = mrp.rewards();
    let theta: Vec<f64> = gauge
        .anchors
        .iter()
        .map(|&a| {
            let mut stream = sampler.stream_for(Purpose::Residual, a, round);
            let total: f64 = (0..samples).map(|_| v[mrp.sample_next(a, &mut stream)]).sum();
            r[a] + total / samples as f64 - v[a]
        })
        .collect();
    let g_hat = gauge.weights.combine(&theta);
    Ok(ResidualEstimate {
        theta,
        g_hat,
        samples_per_anchor: samples,
    })
}

/// Gain profile `ĝ(s) = Σ_i p̂_i(s) r̄_i` with `r̄_i` the phase average of the
/// anchor residuals of class `i` and `p̂_i(s) = Σ_k b̂_{i,k}(s)`.
pub fn gain_profile(theta: &[f64], weights: &PhaseWeights, st: &ChainStructure) -> Result<Vec<f64>> {
    if theta.len() != st.num_phases() || weights.index_set != st.index_set {
        return Err(Error::Dimension("residual, weights and structure disagree".into()));
    }
    let class_gain: Vec<f64> = st
        .periods
        .iter()
        .enumerate()
        .map(|(i, &d)| (0..d).map(|k| theta[st.column(i, k)]).sum::<f64>() / d as f64)
        .collect();
    Ok((0..weights.n)
        .map(|s| {
            weights
                .row(s)
                .iter()
                .zip(&st.index_set)
                .map(|(b, &(i, _))| b * class_gain[i])
                .sum()
        })
        .collect())
}

/// Scalar gain estimate at `anchor`, broadcast to every state.
pub fn scalar_gain(
    mrp: &Mrp,
    v: &[f64],
    anchor: StateIndex,
    samples: usize,
    sampler: &Sampler,
    round: u64,
) -> Result<f64> {
    let single = GaugeMap::single_anchor(mrp.n(), anchor);
    Ok(estimate_residual(mrp, v, &single, samples, sampler, round)?.theta[0])
}

/// Baseline: TD-style updates with no projection; scalar gain at `anchor`.
pub fn unprojected_td(
    mrp: &Mrp,
    cfg: &SaConfig,
    anchor: StateIndex,
    samples: usize,
) -> Result<(f64, SolveTrace)> {
    let (v, trace) = run_sa(mrp, &Unprojected, cfg, &vec![0.0; mrp.n()], &mut |_, _| Ok(None))?;
    let gain = scalar_gain(mrp, &v, anchor, samples, &Sampler::new(cfg.seed), cfg.iterations)?;
    Ok((gain, trace))
}

/// Baseline: single-anchor gauge `v ↦ v − v(a) 1`; constant gain profile.
pub fn anchor_only_td(
    mrp: &Mrp,
    cfg: &SaConfig,
    anchor: StateIndex,
    samples: usize,
) -> Result<(Vec<f64>, SolveTrace)> {
    let gauge = GaugeMap::single_anchor(mrp.n(), anchor);
    let (v, trace) = run_sa(mrp, &gauge, cfg, &vec![0.0; mrp.n()], &mut |_, _| Ok(None))?;
    let gain = scalar_gain(mrp, &v, anchor, samples, &Sampler::new(cfg.seed), cfg.iterations)?;
    Ok((vec![gain; mrp.n()], trace))
}
