//! Block-structured benchmark chains, the three-method experiment protocol
//! and its CSV artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::Mrp;
use crate::error::{Error, Result, StageExt};
use crate::gauge::{estimate_weights, GaugeMap};
use crate::linalg::sup_dist;
use crate::oracle::ExactModel;
use crate::rng::Sampler;
use crate::solver::{estimate_residual, gain_profile, run_sa, scalar_gain, SaConfig, StepSchedule, Unprojected};
use crate::structure::{analyze_structure, learn_support_graph, ChainStructure};

/// One recurrent class: `period` phases of `phase_size` states each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub phase_size: usize,
    pub period: usize,
    pub phase_rewards: Vec<f64>,
}

impl ClassSpec {
    pub fn new(phase_size: usize, period: usize, phase_rewards: &[f64]) -> Self {
        Self {
            phase_size,
            period,
            phase_rewards: phase_rewards.to_vec(),
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.phase_rewards.iter().sum::<f64>() / self.period as f64
    }
}

/// How exit mass `η` from transient state `t_j` is split across classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitSchedule {
    /// Two classes, `q_j` linear in `j` from `q_min` to `q_max`; class 1
    /// receives `η q_j`, class 2 `η (1 − q_j)`.
    TwoClassLinear { q_min: f64, q_max: f64 },
    /// Three classes: `η a (1 − ξ_j)`, `η a ξ_j`, `η (1 − a)`, `ξ_j = j/(L−1)`.
    ThreeClass { a: f64 },
}

impl ExitSchedule {
    fn arity(&self) -> usize {
        match self {
            ExitSchedule::TwoClassLinear { .. } => 2,
            ExitSchedule::ThreeClass { .. } => 3,
        }
    }

    /// Class shares of the exit mass from transient `j` out of `len`.
    fn shares(&self, j: usize, len: usize) -> Vec<f64> {
        let xi = if len > 1 {
            j as f64 / (len - 1) as f64
        } else {
            0.0
        };
        match *self {
            ExitSchedule::TwoClassLinear { q_min, q_max } => {
                let q = q_min + (q_max - q_min) * xi;
                vec![q, 1.0 - q]
            }
            ExitSchedule::ThreeClass { a } => vec![a * (1.0 - xi), a * xi, 1.0 - a],
        }
    }
}

/// Declarative description of a benchmark chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrpSpec {
    pub name: String,
    pub classes: Vec<ClassSpec>,
    pub transient_len: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub exits: ExitSchedule,
}

impl MrpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("{}: {m}", self.name)));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} not in (0, 1)", self.eta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon = {} not in [0, 1)", self.epsilon));
        }
        if self.exits.arity() != self.classes.len() {
            return bad(format!(
                "exit schedule routes to {} classes, spec has {}",
                self.exits.arity(),
                self.classes.len()
            ));
        }
        if self.transient_len == 0 {
            return bad("transient length must be positive".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.phase_size == 0 || c.period == 0 {
                return bad(format!("class {i} has empty phases or zero period"));
            }
            if c.phase_rewards.len() != c.period {
                return bad(format!("class {i}: {} rewards for period {}", c.phase_rewards.len(), c.period));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.classes.iter().map(|c| c.phase_size * c.period).sum::<usize>() + self.transient_len
    }

    /// Divide every phase size by `scale` (at least one state per phase).
    pub fn scaled(&self, scale: usize) -> Self {
        let scale = scale.max(1);
        let mut out = self.clone();
        for c in &mut out.classes {
            c.phase_size = (c.phase_size / scale).max(1);
        }
        out
    }

    pub fn class_gains(&self) -> Vec<f64> {
        self.classes.iter().map(ClassSpec::mean_reward).collect()
    }
}

/// Build the transition matrix and its analytically known structure.
///
/// Layout: classes in order with contiguous phases, then the transient
/// states `t_0, …, t_{L−1}`. Each recurrent state moves uniformly to the
/// next phase; transient `t_j` stays with `(1−η)ε`, advances with
/// `(1−η)(1−ε)` (the last one keeps all of `1−η`), and exits to the first
/// state of each class's phase 0 according to the schedule.
pub fn build_mrp(spec: &MrpSpec) -> Result<(Mrp, ChainStructure)> {
    spec.validate()?;
    let n = spec.num_states();
    let mut rows = vec![vec![0.0; n]; n];
    let mut rewards = vec![0.0; n];
    let mut class_of = vec![None; n];
    let mut phase_of = vec![None; n];
    let mut classes = Vec::new();
    let mut cyclic = Vec::new();
    let mut anchors = Vec::new();
    let mut entries = Vec::new();
    let mut start = 0;
    for (i, c) in spec.classes.iter().enumerate() {
        let m = c.phase_size;
        let phase_start = |k: usize| start + k * m;
        let mut sets = Vec::with_capacity(c.period);
        for k in 0..c.period {
            let next = phase_start((k + 1) % c.period);
            for s in phase_start(k)..phase_start(k) + m {
                for t in next..next + m {
                    rows[s][t] = 1.0 / m as f64;
                }
                rewards[s] = c.phase_rewards[k];
                class_of[s] = Some(i);
                phase_of[s] = Some(k);
            }
            sets.push((phase_start(k)..phase_start(k) + m).collect::<Vec<_>>());
        }
        entries.push(start);
        anchors.push((0..c.period).map(phase_start).collect());
        classes.push((start..start + m * c.period).collect());
        cyclic.push(sets);
        start += m * c.period;
    }
    let len = spec.transient_len;
    let stay = 1.0 - spec.eta;
    for j in 0..len {
        let s = start + j;
        if j + 1 < len {
            rows[s][s] += stay * spec.epsilon;
            rows[s][s + 1] += stay * (1.0 - spec.epsilon);
        } else {
            rows[s][s] += stay;
        }
        for (i, q) in spec.exits.shares(j, len).into_iter().enumerate() {
            rows[s][entries[i]] += spec.eta * q;
        }
    }
    for (s, row) in rows.iter().enumerate().skip(start) {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: exit schedule gives transient row {s} total mass {sum}",
                spec.name
            )));
        }
    }
    let mrp = Mrp::new(rows, rewards, 1.0)?;
    let periods: Vec<usize> = spec.classes.iter().map(|c| c.period).collect();
    let index_set = periods
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| (0..d).map(move |k| (i, k)))
        .collect();
    let structure = ChainStructure {
        n,
        classes,
        transient: (start..n).collect(),
        periods,
        cyclic,
        class_of,
        phase_of,
        anchors,
        index_set,
    };
    Ok((mrp, structure))
}

fn two_class(name: &str, classes: Vec<ClassSpec>, epsilon: f64, eta: f64, q: (f64, f64)) -> MrpSpec {
    MrpSpec {
        name: name.into(),
        classes,
        transient_len: 60,
        epsilon,
        eta,
        exits: ExitSchedule::TwoClassLinear {
            q_min: q.0,
            q_max: q.1,
        },
    }
}

/// The six fixed benchmark chains.
pub fn suite() -> Vec<MrpSpec> {
    vec![
        two_class(
            "aperiodic_multichain",
            vec![ClassSpec::new(50, 1, &[0.15]), ClassSpec::new(50, 1, &[0.85])],
            0.25,
            0.08,
            (0.15, 0.85),
        ),
        two_class(
            "hard_gain_gap",
            vec![
                ClassSpec::new(20, 3, &[0.0, 0.10, 0.20]),
                ClassSpec::new(16, 5, &[0.90, 0.95, 1.00, 0.85, 0.90]),
            ],
            0.22,
            0.07,
            (0.10, 0.90),
        ),
        two_class(
            "safety",
            vec![ClassSpec::new(35, 2, &[0.80, 1.00]), ClassSpec::new(1, 1, &[0.0])],
            0.18,
            0.10,
            (0.10, 0.95),
        ),
        MrpSpec {
            name: "three_class_var_branch".into(),
            classes: vec![
                ClassSpec::new(20, 2, &[0.0, 0.20]),
                ClassSpec::new(18, 3, &[0.30, 0.50, 0.70]),
                ClassSpec::new(40, 1, &[0.95]),
            ],
            transient_len: 60,
            epsilon: 0.22,
            eta: 0.08,
            exits: ExitSchedule::ThreeClass { a: 0.90 },
        },
        two_class(
            "var_branch_2v3",
            vec![
                ClassSpec::new(30, 2, &[0.20, 0.80]),
                ClassSpec::new(24, 3, &[0.05, 0.05, 0.80]),
            ],
            0.20,
            0.07,
            (0.15, 0.85),
        ),
        two_class(
            "var_branch_2v4",
            vec![
                ClassSpec::new(28, 2, &[0.20, 0.80]),
                ClassSpec::new(20, 4, &[0.0, 0.0, 0.80, 0.80]),
            ],
            0.20,
            0.07,
            (0.15, 0.85),
        ),
    ]
}

pub fn instance(name: &str) -> Option<MrpSpec> {
    suite().into_iter().find(|s| s.name == name)
}

/// Sample budgets and schedule of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub td_iterations: u64,
    pub log_every: u64,
    pub structure_samples: usize,
    pub weight_episodes: usize,
    pub residual_samples: usize,
    pub seeds: Vec<u64>,
    pub schedule: StepSchedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            td_iterations: 12_000,
            log_every: 120,
            structure_samples: 150,
            weight_episodes: 4000,
            residual_samples: 220,
            seeds: vec![1, 2, 3, 4, 5],
            schedule: StepSchedule::default(),
        }
    }
}

impl ExperimentConfig {
    /// Shorter runs for quick checks: 4000 iterations logged every 40.
    pub fn desk() -> Self {
        Self {
            td_iterations: 4000,
            log_every: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_every == 0
            || self.structure_samples == 0
            || self.weight_episodes == 0
            || self.residual_samples == 0
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidArgument(
                "log interval, K, M, J and the seed list must all be positive".into(),
            ));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Projected,
    AnchorOnly,
    Unprojected,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Projected, Method::AnchorOnly, Method::Unprojected];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Projected => "projected",
            Method::AnchorOnly => "anchor_only",
            Method::Unprojected => "unprojected",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// `Err(t) = ‖ĝ_t − g‖_∞` at the logged iterations of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub instance: String,
    pub method: Method,
    pub seed: u64,
    pub points: Vec<(u64, f64)>,
}

impl ErrorCurve {
    pub fn final_err(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn err_at(&self, iteration: u64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == iteration).map(|p| p.1)
    }
}

/// The three methods on one chain for one seed, sharing every sample stream.
pub fn run_seed(
    name: &str,
    mrp: &Mrp,
    true_gain: &[f64],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<ErrorCurve>> {
    let sampler = Sampler::new(seed);
    let graph = learn_support_graph(mrp, cfg.structure_samples, &sampler);
    let st = analyze_structure(&graph).stage("structure")?;
    let weights = estimate_weights(mrp, &st, cfg.weight_episodes, &sampler).stage("weights")?;
    let gauge = GaugeMap::new(&st, weights).stage("gauge")?;
    let sa = SaConfig::new(cfg.schedule, cfg.td_iterations, cfg.log_every, seed);
    let zeros = vec![0.0; mrp.n()];
    let j = cfg.residual_samples;

    let mut projected = Vec::new();
    run_sa(mrp, &gauge, &sa, &zeros, &mut |t, v| {
        let res = estimate_residual(mrp, v, &gauge, j, &sampler, t)?;
        let g_hat = gain_profile(&res.theta, &gauge.weights, &st)?;
        let err = sup_dist(&g_hat, true_gain);
        projected.push((t, err));
        Ok(Some(err))
    })
    .stage("projected")?;

    let anchor = st.classes[0][0];
    let constant_err = |c: f64| true_gain.iter().fold(0.0, |m, g| f64::max(m, (c - g).abs()));
    let mut anchor_only = Vec::new();
    run_sa(mrp, &GaugeMap::single_anchor(mrp.n(), anchor), &sa, &zeros, &mut |t, v| {
        let err = constant_err(scalar_gain(mrp, v, anchor, j, &sampler, t)?);
        anchor_only.push((t, err));
        Ok(Some(err))
    })
    .stage("anchor_only")?;

    let mut unprojected = Vec::new();
    run_sa(mrp, &Unprojected, &sa, &zeros, &mut |t, v| {
        let err = constant_err(scalar_gain(mrp, v, anchor, j, &sampler, t)?);
        unprojected.push((t, err));
        Ok(Some(err))
    })
    .stage("unprojected")?;

    Ok([
        (Method::Projected, projected),
        (Method::AnchorOnly, anchor_only),
        (Method::Unprojected, unprojected),
    ]
    .into_iter()
    .map(|(method, points)| ErrorCurve {
        instance: name.to_string(),
        method,
        seed,
        points,
    })
    .collect())
}

/// Run every seed of `cfg` on `spec`. Ground truth comes from the exact
/// oracle on the constructed structure. Curves are ordered by method, then
/// seed, independent of scheduling.
pub fn run_experiment(spec: &MrpSpec, cfg: &ExperimentConfig) -> Result<Vec<ErrorCurve>> {
    cfg.validate()?;
    let (mrp, structure) = build_mrp(spec).stage("build")?;
    let truth = ExactModel::with_structure(&mrp, structure)?;
    let per_seed: Vec<Vec<ErrorCurve>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&spec.name, &mrp, &truth.solution.gain, cfg, seed))
        .collect::<Result<_>>()?;
    let mut curves: Vec<ErrorCurve> = per_seed.into_iter().flatten().collect();
    curves.sort_by(|a, b| (a.method, a.seed).cmp(&(b.method, b.seed)));
    Ok(curves)
}

const CURVE_HEADER: [&str; 5] = ["instance", "method", "seed", "iteration", "err_linf"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write curves as CSV rows sorted by (instance, method, seed, iteration).
pub fn write_curves_to<W: Write>(curves: &[ErrorCurve], out: W) -> csv::Result<()> {
    let mut rows: Vec<(&str, &str, u64, u64, f64)> = curves
        .iter()
        .flat_map(|c| {
            c.points
                .iter()
                .map(move |&(t, e)| (c.instance.as_str(), c.method.as_str(), c.seed, t, e))
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for (inst, method, seed, t, e) in rows {
        w.write_record([inst, method, &seed.to_string(), &t.to_string(), &format_real(e)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves(curves: &[ErrorCurve], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_curves_to(curves, std::io::BufWriter::new(file)).map_err(|e| csv_err(path, e))
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    instance: String,
    method: String,
    seed: u64,
    iteration: u64,
    err_linf: f64,
}

pub fn read_curves_from<R: Read>(input: R) -> Result<Vec<ErrorCurve>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut curves: Vec<ErrorCurve> = Vec::new();
    for row in reader.deserialize::<CurveRow>() {
        let row = row.map_err(|e| csv_err(Path::new("<curves>"), e))?;
        let method: Method = row.method.parse()?;
        match curves.last_mut() {
            Some(c) if c.instance == row.instance && c.method == method && c.seed == row.seed => {
                c.points.push((row.iteration, row.err_linf));
            }
            _ => curves.push(ErrorCurve {
                instance: row.instance,
                method,
                seed: row.seed,
                points: vec![(row.iteration, row.err_linf)],
            }),
        }
    }
    Ok(curves)
}

pub fn read_curves(path: &Path) -> Result<Vec<ErrorCurve>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_curves_from(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Mean and sample standard deviation over seeds at one logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub instance: String,
    pub method: Method,
    pub iteration: u64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn summarize(curves: &[ErrorCurve]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &'static str, u64), (Method, Vec<f64>)> = BTreeMap::new();
    for c in curves {
        for &(t, e) in &c.points {
            groups
                .entry((c.instance.clone(), c.method.as_str(), t))
                .or_insert_with(|| (c.method, Vec::new()))
                .1
                .push(e);
        }
    }
    groups
        .into_iter()
        .map(|((instance, _, iteration), (method, errs))| {
            let count = errs.len();
            let mean = errs.iter().sum::<f64>() / count as f64;
            let std = if count > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                instance,
                method,
                iteration,
                mean,
                std,
                count,
            }
        })
        .collect()
}

pub fn write_summary_to<W: Write>(rows: &[SummaryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "method", "iteration", "mean", "std", "count"])?;
    for r in rows {
        w.write_record([
            r.instance.as_str(),
            r.method.as_str(),
            &r.iteration.to_string(),
            &format_real(r.mean),
            &format_real(r.std),
            &r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-averaged final error of each method.
pub fn final_means(curves: &[ErrorCurve]) -> BTreeMap<Method, f64> {
    let mut acc: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for c in curves {
        if let Some(e) = c.final_err() {
            let slot = acc.entry(c.method).or_default();
            slot.0 += e;
            slot.1 += 1;
        }
    }
    acc.into_iter().map(|(m, (s, k))| (m, s / k as f64)).collect()
}

/// Seed-averaged error of one method at one logged iteration.
pub fn mean_err_at(curves: &[ErrorCurve], method: Method, iteration: u64) -> Option<f64> {
    let errs: Vec<f64> = curves
        .iter()
        .filter(|c| c.method == method)
        .filter_map(|c| c.err_at(iteration))
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}
