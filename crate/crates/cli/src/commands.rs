use std::path::Path;

use qpoisson_core::experiment::{
    self, final_means, read_curves, summarize, write_curves, write_summary_to, ExperimentConfig,
};
use qpoisson_core::gauge::{estimate_weights, exact_weights, gauge_deviation, required_m};
use qpoisson_core::oracle::{quotient_diagnostics, return_identity_check, transient_cost_check, CostCheck};
use qpoisson_core::solver::{estimate_residual, gain_profile, run_sa, update_noise_variance};
use qpoisson_core::structure::{analyze_structure, exact_support_graph, learn_support_graph, required_k, robust_ceil};
use qpoisson_core::{
    sup_dist, ChainFile, ChainStructure, Error, ExactModel, ExactSolution, GaugeMap, Mrp, PhaseWeights,
    QuotientDiagnostics, SaConfig, Sampler, StageExt, StepSchedule,
};
use serde::{Deserialize, Serialize};

use crate::files::{emit, emit_json, out_path, read_json, write_file};
use crate::{
    BenchAction, BenchArgs, Failure, GaugeArgs, GaugeSourceArgs, OracleArgs, PlanArgs, ResidualArgs, SolveArgs,
    StructureArgs, ValidateArgs, WeightsArgs,
};

type CmdResult = Result<(), Failure>;

fn load_chain(path: &Path) -> Result<Mrp, Error> {
    Mrp::load(path).stage("load")
}

/// Structure and gauge bundled so `solve` and `residual` need one file.
#[derive(Debug, Serialize, Deserialize)]
struct GaugeFile {
    structure: ChainStructure,
    gauge: GaugeMap,
}

struct ResolvedGauge {
    label: String,
    structure: ChainStructure,
    gauge: GaugeMap,
    exact: Option<ExactSolution>,
}

fn resolve_gauge(mrp: &Mrp, src: &GaugeSourceArgs, seed: u64) -> Result<ResolvedGauge, Error> {
    match src.gauge.as_str() {
        "exact" => {
            let m = ExactModel::build(mrp)?;
            Ok(ResolvedGauge {
                label: "exact".into(),
                structure: m.structure,
                gauge: m.gauge,
                exact: Some(m.solution),
            })
        }
        "estimated" => {
            let sampler = Sampler::new(seed);
            let graph = learn_support_graph(mrp, src.k, &sampler);
            let structure = analyze_structure(&graph).stage("structure")?;
            let weights = estimate_weights(mrp, &structure, src.m, &sampler).stage("weights")?;
            let gauge = GaugeMap::new(&structure, weights).stage("gauge")?;
            Ok(ResolvedGauge {
                label: "estimated".into(),
                structure,
                gauge,
                exact: None,
            })
        }
        path => {
            let file: GaugeFile = read_json(Path::new(path)).stage("gauge")?;
            if file.gauge.n() != mrp.n() || file.structure.n != mrp.n() {
                return Err(Error::Dimension(format!(
                    "gauge file {path} has {} states, chain has {}",
                    file.gauge.n(),
                    mrp.n()
                )));
            }
            Ok(ResolvedGauge {
                label: path.to_string(),
                structure: file.structure,
                gauge: file.gauge,
                exact: None,
            })
        }
    }
}

pub fn validate(a: ValidateArgs) -> CmdResult {
    let file: ChainFile = ChainFile::load(&a.chain)?;
    let report = file.validate(a.tol);
    emit_json(a.out.as_deref(), &report)?;
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("{}: {report}", a.chain.display()),
        })
    }
}

pub fn structure(a: StructureArgs, seed: u64) -> CmdResult {
    let mrp = load_chain(&a.chain)?;
    let graph = match a.k {
        Some(k) if !a.exact => {
            if k == 0 {
                return Err(Failure::usage("--K must be positive"));
            }
            learn_support_graph(&mrp, k, &Sampler::new(seed))
        }
        _ => exact_support_graph(mrp.transition()),
    };
    let st = analyze_structure(&graph).stage("structure")?;
    emit_json(a.out.as_deref(), &st)?;
    Ok(())
}

pub fn weights(a: WeightsArgs, seed: u64) -> CmdResult {
    let mrp = load_chain(&a.chain)?;
    let st: ChainStructure = read_json(&a.structure)?;
    if st.n != mrp.n() {
        return Err(Error::Dimension(format!("structure has {} states, chain has {}", st.n, mrp.n())).into());
    }
    let w: PhaseWeights = match a.m {
        Some(m) if !a.exact => estimate_weights(&mrp, &st, m, &Sampler::new(seed)).stage("weights")?,
        _ => exact_weights(mrp.transition(), &st).stage("weights")?,
    };
    emit_json(a.out.as_deref(), &w)?;
    Ok(())
}

#[derive(Serialize)]
struct Deviation {
    against: String,
    deviation: f64,
}

pub fn gauge(a: GaugeArgs) -> CmdResult {
    let structure: ChainStructure = read_json(&a.structure)?;
    let weights: PhaseWeights = read_json(&a.weights)?;
    let gauge = GaugeMap::new(&structure, weights).stage("gauge")?;
    if let Some(other) = &a.compare {
        let theirs: GaugeFile = read_json(other)?;
        let deviation = gauge_deviation(&gauge, &theirs.gauge)?;
        let text = crate::files::to_json(&Deviation {
            against: other.display().to_string(),
            deviation,
        });
        eprint!("{text}");
    }
    emit_json(a.out.as_deref(), &GaugeFile { structure, gauge })?;
    Ok(())
}

/// Output of `solve`; `residual` reads `v_final` back.
#[derive(Debug, Serialize, Deserialize)]
struct SolveReport {
    gauge: String,
    schedule: String,
    iterations: u64,
    seed: u64,
    samples_per_anchor: usize,
    v_final: Vec<f64>,
    theta: Vec<f64>,
    g_hat: Vec<f64>,
    gain: Vec<f64>,
    /// Largest per-state variance of the sampled update at `v_final`.
    noise_variance: f64,
    /// `‖v_final − v⋆‖_∞`, available for the exact gauge.
    bias_error: Option<f64>,
}

fn parse_schedule(s: &str) -> Result<StepSchedule, Failure> {
    s.parse().map_err(|e: Error| Failure::usage(e.to_string()))
}

pub fn solve(a: SolveArgs, seed: u64) -> CmdResult {
    let schedule = parse_schedule(&a.schedule)?;
    let cfg = SaConfig::new(schedule, a.iterations, a.log_every, seed);
    cfg.validate()?;
    if a.j == 0 {
        return Err(Failure::usage("--J must be positive"));
    }
    let mrp = load_chain(&a.chain)?;
    let g = resolve_gauge(&mrp, &a.source, seed)?;
    let v_star = g.exact.as_ref().map(|s| s.v_star.clone());
    let (v, trace) = run_sa(&mrp, &g.gauge, &cfg, &vec![0.0; mrp.n()], &mut |_, v| {
        Ok(v_star.as_ref().map(|vs| sup_dist(v, vs)))
    })
    .stage("solve")?;
    let res = estimate_residual(&mrp, &v, &g.gauge, a.j, &Sampler::new(seed), a.iterations).stage("residual")?;
    let gain = gain_profile(&res.theta, &g.gauge.weights, &g.structure).stage("residual")?;
    if let Some(path) = &a.trace {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).expect("in-memory write");
        write_file(path, &buf)?;
    }
    let report = SolveReport {
        gauge: g.label,
        schedule: schedule.to_string(),
        iterations: a.iterations,
        seed,
        samples_per_anchor: a.j,
        noise_variance: update_noise_variance(&mrp, &v),
        bias_error: v_star.as_ref().map(|vs| sup_dist(&v, vs)),
        v_final: v,
        theta: res.theta,
        g_hat: res.g_hat,
        gain,
    };
    emit_json(a.out.as_deref(), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct ResidualReport {
    gauge: String,
    samples_per_anchor: usize,
    round: u64,
    theta: Vec<f64>,
    g_hat: Vec<f64>,
    gain: Vec<f64>,
}

pub fn residual(a: ResidualArgs, seed: u64) -> CmdResult {
    if a.j == 0 {
        return Err(Failure::usage("--J must be positive"));
    }
    let mrp = load_chain(&a.chain)?;
    let g = resolve_gauge(&mrp, &a.source, seed)?;
    let solved: SolveReport = read_json(&a.iterate)?;
    let res = estimate_residual(&mrp, &solved.v_final, &g.gauge, a.j, &Sampler::new(seed), a.round)
        .stage("residual")?;
    let gain = gain_profile(&res.theta, &g.gauge.weights, &g.structure).stage("residual")?;
    emit_json(
        a.out.as_deref(),
        &ResidualReport {
            gauge: g.label,
            samples_per_anchor: a.j,
            round: a.round,
            theta: res.theta,
            g_hat: res.g_hat,
            gain,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    structure: ChainStructure,
    solution: ExactSolution,
    diagnostics: QuotientDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    transient_cost: Option<Vec<CostCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    return_identity_residual: Option<f64>,
}

pub fn oracle(a: OracleArgs, seed: u64) -> CmdResult {
    let mrp = load_chain(&a.chain)?;
    let m = ExactModel::build(&mrp)?;
    let diagnostics = quotient_diagnostics(&mrp, &m.gauge, &m.structure).stage("diagnostics")?;
    let transient_cost = a
        .cost_episodes
        .map(|eps| transient_cost_check(&mrp, &m.solution, &m.gauge.anchors, eps, &Sampler::new(seed)))
        .transpose()
        .map_err(|e| Error::from(e).at("transient cost"))?;
    let return_identity_residual = a.identity_horizon.map(|h| {
        (0..mrp.n())
            .map(|s| return_identity_check(&mrp, &m.solution.v_star, h, s))
            .fold(0.0, f64::max)
    });
    emit_json(
        a.out.as_deref(),
        &OracleReport {
            structure: m.structure,
            solution: m.solution,
            diagnostics,
            transient_cost,
            return_identity_residual,
        },
    )?;
    Ok(())
}

trait At {
    fn at(self, stage: &'static str) -> Error;
}

impl At for Error {
    fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn experiment_config(a: &crate::BenchRunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = if a.scale > 1 {
        ExperimentConfig::desk()
    } else {
        ExperimentConfig::default()
    };
    if let Some(t) = a.iterations {
        cfg.td_iterations = t;
    }
    if let Some(l) = a.log_every {
        cfg.log_every = l;
    }
    if cfg.td_iterations > 0 && cfg.log_every > cfg.td_iterations {
        cfg.log_every = cfg.td_iterations;
    }
    if let Some(k) = a.k {
        cfg.structure_samples = k;
    }
    if let Some(m) = a.m {
        cfg.weight_episodes = m;
    }
    if let Some(j) = a.j {
        cfg.residual_samples = j;
    }
    if let Some(s) = &a.schedule {
        cfg.schedule = parse_schedule(s)?;
    }
    cfg.seeds = a.seeds.clone();
    cfg.validate()?;
    Ok(cfg)
}

pub fn bench(a: BenchArgs) -> CmdResult {
    if let Some(BenchAction::Summarize { curves, out }) = a.action {
        let rows = summarize(&read_curves(&curves)?);
        let mut buf = Vec::new();
        write_summary_to(&rows, &mut buf).expect("in-memory write");
        emit(out.as_deref(), std::str::from_utf8(&buf).expect("utf-8 csv"))?;
        return Ok(());
    }
    let a = a.run;
    if a.scale == 0 {
        return Err(Failure::usage("--scale must be positive"));
    }
    let specs = if a.instance == "all" {
        experiment::suite()
    } else {
        match experiment::instance(&a.instance) {
            Some(s) => vec![s],
            None => {
                let names: Vec<String> = experiment::suite().into_iter().map(|s| s.name).collect();
                return Err(Failure::usage(format!(
                    "unknown instance '{}' (expected all or one of: {})",
                    a.instance,
                    names.join(", ")
                )));
            }
        }
    };
    let cfg = experiment_config(&a)?;
    let mut curves = Vec::new();
    for spec in &specs {
        let mut run = experiment::run_experiment(&spec.scaled(a.scale), &cfg).map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", spec.name, f.message);
            f
        })?;
        for (method, err) in final_means(&run) {
            println!("{:<24} {:<12} final mean err {:.6}", spec.name, method.as_str(), err);
        }
        curves.append(&mut run);
    }
    write_curves(&curves, &out_path(&a.out))?;
    if let Some(path) = &a.summary {
        let mut buf = Vec::new();
        write_summary_to(&summarize(&curves), &mut buf).expect("in-memory write");
        write_file(path, &buf)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlanReport {
    n: usize,
    p_min: f64,
    t_count: usize,
    num_phases: usize,
    eps: f64,
    delta: f64,
    /// Weight accuracy tied to the target: `eps / (3 N)`.
    eps_b: f64,
    k: u64,
    m: u64,
    t: u64,
    h_abs: Option<f64>,
    /// `n K + |T| M H_abs + n T`; the middle term needs a chain file.
    total_queries: f64,
}

pub fn plan(a: PlanArgs) -> CmdResult {
    let chain = match &a.chain {
        Some(path) => {
            let mrp = load_chain(path)?;
            let st = analyze_structure(&exact_support_graph(mrp.transition())).stage("structure")?;
            Some((mrp, st))
        }
        None => None,
    };
    let need = |v: Option<f64>, flag: &str, from_chain: Option<f64>| {
        v.or(from_chain)
            .ok_or_else(|| Failure::usage(format!("missing required flag --{flag} (or pass --chain)")))
    };
    let n = need(a.n.map(|x| x as f64), "n", chain.as_ref().map(|c| c.0.n() as f64))? as usize;
    let p_min = need(a.p_min, "p-min", chain.as_ref().map(|c| c.0.transition().min_positive()))?;
    let t_count = need(
        a.t_count.map(|x| x as f64),
        "t-count",
        chain.as_ref().map(|c| c.1.transient.len() as f64),
    )? as usize;
    let num_phases = need(
        a.num_phases.map(|x| x as f64),
        "N",
        chain.as_ref().map(|c| c.1.num_phases() as f64),
    )? as usize;
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::usage(format!("--eps = {} must be positive", a.eps)));
    }
    if num_phases == 0 {
        return Err(Failure::usage("--N must be positive"));
    }
    let eps_b = a.eps / (3.0 * num_phases as f64);
    let k = required_k(p_min, n, a.delta)?;
    let m = if t_count == 0 {
        0
    } else {
        required_m(eps_b, t_count, num_phases, a.delta)?
    };
    let t = robust_ceil(1.0 / (a.eps * a.eps)) as u64;
    let h_abs = match &chain {
        Some((mrp, st)) => {
            let m = ExactModel::with_structure(mrp, st.clone())?;
            Some(quotient_diagnostics(mrp, &m.gauge, st).stage("diagnostics")?.h_abs)
        }
        None => None,
    };
    let nf = n as f64;
    let total_queries = nf * k as f64 + h_abs.map_or(0.0, |h| t_count as f64 * m as f64 * h) + nf * t as f64;
    emit_json(
        a.out.as_deref(),
        &PlanReport {
            n,
            p_min,
            t_count,
            num_phases,
            eps: a.eps,
            delta: a.delta,
            eps_b,
            k,
            m,
            t,
            h_abs,
            total_queries,
        },
    )?;
    Ok(())
}
