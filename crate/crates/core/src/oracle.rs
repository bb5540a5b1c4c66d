//! Exact reference solutions and spectral diagnostics of the quotient
//! operator, plus the return and transient-cost identities used as
//! Monte-Carlo validators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Mrp, StateIndex};
use crate::error::{Error, Result, StageExt};
use crate::gauge::{exact_weights, GaugeMap, PhaseWeights, EPISODE_CAP};
use crate::linalg::{self, sup_dist};
use crate::rng::{Purpose, Sampler};
use crate::solver::gain_profile;
use crate::structure::{analyze_structure, exact_support_graph, ChainStructure};

/// Gauge-fixed bias, residual and true gain of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub v_star: Vec<f64>,
    pub g_star: Vec<f64>,
    /// `g_star` at the anchors, in column order.
    pub theta_star: Vec<f64>,
    /// Long-run average reward of every start state.
    pub gain: Vec<f64>,
    /// Stationary mean reward of each recurrent class.
    pub class_gains: Vec<f64>,
    /// `‖v − Π(r + P v)‖_∞` at the returned `v_star`.
    pub fixed_point_residual: f64,
}

/// Non-anchor states; coordinates of the anchored subspace `W`.
pub fn free_states(gauge: &GaugeMap) -> Vec<usize> {
    let mut is_anchor = vec![false; gauge.n()];
    for &a in &gauge.anchors {
        is_anchor[a] = true;
    }
    (0..gauge.n()).filter(|&s| !is_anchor[s]).collect()
}

/// Matrix of `Π P` restricted to the anchored subspace, in the coordinates
/// of [`free_states`].
pub fn quotient_operator(mrp: &Mrp, gauge: &GaugeMap) -> (Vec<usize>, DMatrix<f64>) {
    let free = free_states(gauge);
    let p = mrp.transition();
    let w = &gauge.weights;
    let b = DMatrix::from_fn(free.len(), free.len(), |i, j| {
        let (s, t) = (free[i], free[j]);
        let corr: f64 = gauge
            .anchors
            .iter()
            .enumerate()
            .map(|(c, &a)| p.get(a, t) * w.get(s, c))
            .sum();
        p.get(s, t) - corr
    });
    (free, b)
}

/// Stationary distribution of an irreducible class (periodic classes
/// included), by a dense solve of `πᵀ P_F = πᵀ`, `Σ π = 1`.
pub fn class_stationary(mrp: &Mrp, class: &[usize]) -> Result<Vec<f64>> {
    let m = class.len();
    let p = mrp.transition();
    let mut a = DMatrix::from_fn(m, m, |i, j| {
        let v = p.get(class[j], class[i]);
        if i == j {
            v - 1.0
        } else {
            v
        }
    });
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    Ok(linalg::solve(a, &rhs, "stationary distribution")?.iter().copied().collect())
}

/// Solve `(I − Π P) v = Π r` on the anchored subspace.
pub fn exact_solve(mrp: &Mrp, gauge: &GaugeMap, st: &ChainStructure) -> Result<ExactSolution> {
    let n = mrp.n();
    if gauge.n() != n || st.n != n {
        return Err(Error::Dimension("chain, gauge and structure sizes differ".into()));
    }
    let r = mrp.rewards();
    let (free, b) = quotient_operator(mrp, gauge);
    let pr = gauge.apply(r);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&s| pr[s]));
    let a = DMatrix::identity(free.len(), free.len()) - b;
    let x = linalg::solve(a, &rhs, "gauge-restricted Poisson system")?;
    let mut v_star = vec![0.0; n];
    for (j, &s) in free.iter().enumerate() {
        v_star[s] = x[j];
    }
    let pv = mrp.transition().apply(&v_star);
    let g_star: Vec<f64> = (0..n).map(|s| r[s] + pv[s] - v_star[s]).collect();
    let theta_star: Vec<f64> = gauge.anchors.iter().map(|&a| g_star[a]).collect();

    let mut t_star: Vec<f64> = (0..n).map(|s| r[s] + pv[s]).collect();
    gauge.apply_in_place(&mut t_star);
    let fixed_point_residual = sup_dist(&t_star, &v_star);

    let class_gains = st
        .classes
        .iter()
        .map(|class| {
            let pi = class_stationary(mrp, class)?;
            Ok(class.iter().zip(&pi).map(|(&s, p)| p * r[s]).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    let gain = (0..n)
        .map(|s| {
            gauge
                .weights
                .row(s)
                .iter()
                .zip(&st.index_set)
                .map(|(b, &(i, _))| b * class_gains[i])
                .sum()
        })
        .collect();
    Ok(ExactSolution {
        v_star,
        g_star,
        theta_star,
        gain,
        class_gains,
        fixed_point_residual,
    })
}

/// Everything the exact path produces for a known chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactModel {
    pub structure: ChainStructure,
    pub weights: PhaseWeights,
    pub gauge: GaugeMap,
    pub solution: ExactSolution,
}

impl ExactModel {
    pub fn build(mrp: &Mrp) -> Result<Self> {
        let structure = analyze_structure(&exact_support_graph(mrp.transition())).stage("structure")?;
        Self::with_structure(mrp, structure)
    }

    pub fn with_structure(mrp: &Mrp, structure: ChainStructure) -> Result<Self> {
        let weights = exact_weights(mrp.transition(), &structure).stage("weights")?;
        let gauge = GaugeMap::new(&structure, weights.clone()).stage("gauge")?;
        let solution = exact_solve(mrp, &gauge, &structure).stage("oracle")?;
        Ok(Self {
            structure,
            weights,
            gauge,
            solution,
        })
    }

    /// Gain reconstructed from the anchor residuals; equals `solution.gain`.
    pub fn gain_from_theta(&self) -> Result<Vec<f64>> {
        gain_profile(&self.solution.theta_star, &self.weights, &self.structure)
    }
}

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_CAP: usize = 100_000;
const LYAPUNOV_TERM_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_TERMS: u64 = 100_000;

/// Spectral radius by block power iteration with Rayleigh-Ritz extraction.
///
/// A block of up to eight vectors is iterated and re-orthonormalised; the
/// estimate is the largest modulus among the eigenvalues of the projected
/// block. The block handles dominant eigenvalues that come in complex pairs
/// or in groups of equal modulus, where single-vector iteration oscillates.
/// Converged once the estimate moves by less than `tol` for five
/// consecutive steps. Operators of dimension at most eight are solved
/// directly.
pub fn spectral_radius(b: &DMatrix<f64>, tol: f64, cap: usize) -> Result<(f64, usize)> {
    let dim = b.nrows();
    if dim == 0 {
        return Ok((0.0, 0));
    }
    let p = dim.min(8);
    if p == dim {
        // The block spans the whole space, so the Ritz values are exact.
        let rho = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        return Ok((rho, 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = DMatrix::from_fn(dim, p, |_, _| rng.random_range(-1.0..1.0));
    let mut q = start.qr().q();
    let mut prev = f64::INFINITY;
    let mut stable = 0;
    let mut last_change = f64::INFINITY;
    for it in 1..=cap {
        let y = b * &q;
        if y.amax() < 1e-300 {
            return Ok((0.0, it));
        }
        let ritz = q.transpose() * &y;
        let rho = ritz
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        q = y.qr().q();
        last_change = (rho - prev).abs();
        if last_change <= tol {
            stable += 1;
            if stable >= 5 {
                return Ok((rho, it));
            }
        } else {
            stable = 0;
        }
        prev = rho;
    }
    Err(Error::NoConvergence {
        iterations: cap,
        last_change,
    })
}

/// `H = Σ_t (Bᵀ)^t B^t` by squaring: after `k` rounds `H` holds the first
/// `2^k` terms. Stops once the next block's leading factor `‖B^(2^k)‖²`
/// drops below the term tolerance.
pub fn lyapunov_series(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, u64)> {
    let d = b.nrows();
    let mut h = DMatrix::identity(d, d);
    let mut power = b.clone();
    let mut terms = 1u64;
    loop {
        let lead = power.norm_squared();
        if lead < LYAPUNOV_TERM_TOL {
            return Ok((h, terms));
        }
        if terms >= LYAPUNOV_MAX_TERMS {
            return Err(Error::NoConvergence {
                iterations: terms as usize,
                last_change: lead,
            });
        }
        h = &h + power.transpose() * &h * &power;
        power = &power * &power;
        terms *= 2;
    }
}

/// Spectral and absorption diagnostics of a gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientDiagnostics {
    /// Spectral radius of `Π P` on the anchored subspace.
    pub rho_q: f64,
    /// Contraction target `(1 + rho_q) / 2`.
    pub gamma: f64,
    pub power_iterations: usize,
    /// Coordinates (non-anchor states) in which `seminorm_matrix` is written.
    pub free_states: Vec<usize>,
    /// Positive-definite `H` with `H − BᵀHB = I`, `B = (Π P)|_W / gamma`.
    pub seminorm_matrix: Vec<Vec<f64>>,
    pub lyapunov_terms: u64,
    /// `‖H − BᵀHB − I‖_max`.
    pub lyapunov_residual: f64,
    /// Largest expected time to reach the recurrent set.
    pub h_abs: f64,
    pub expected_absorption: Vec<(usize, f64)>,
}

impl QuotientDiagnostics {
    /// `‖v‖_q = sqrt(xᵀ H x)` with `x` the free coordinates of `Π v`.
    pub fn seminorm(&self, gauge: &GaugeMap, v: &[f64]) -> f64 {
        let pv = gauge.apply(v);
        let x: Vec<f64> = self.free_states.iter().map(|&s| pv[s]).collect();
        let mut acc = 0.0;
        for (i, row) in self.seminorm_matrix.iter().enumerate() {
            let hx: f64 = row.iter().zip(&x).map(|(h, y)| h * y).sum();
            acc += x[i] * hx;
        }
        acc.max(0.0).sqrt()
    }
}

/// Expected steps to absorption in the recurrent set, per transient state.
pub fn expected_absorption_times(mrp: &Mrp, st: &ChainStructure) -> Result<Vec<(usize, f64)>> {
    let t = &st.transient;
    if t.is_empty() {
        return Ok(Vec::new());
    }
    let p = mrp.transition();
    let a = DMatrix::from_fn(t.len(), t.len(), |i, j| {
        let q = p.get(t[i], t[j]);
        if i == j {
            1.0 - q
        } else {
            -q
        }
    });
    let x = linalg::solve(a, &DVector::from_element(t.len(), 1.0), "absorption time system")?;
    Ok(t.iter().copied().zip(x.iter().copied()).collect())
}

pub fn quotient_diagnostics(mrp: &Mrp, gauge: &GaugeMap, st: &ChainStructure) -> Result<QuotientDiagnostics> {
    let (free, b) = quotient_operator(mrp, gauge);
    let (rho_q, power_iterations) = spectral_radius(&b, POWER_TOL, POWER_CAP)?;
    let gamma = (1.0 + rho_q) / 2.0;
    let scaled = &b / gamma;
    let (h, lyapunov_terms) = lyapunov_series(&scaled)?;
    let d = free.len();
    let lyap = &h - scaled.transpose() * &h * &scaled - DMatrix::<f64>::identity(d, d);
    let lyapunov_residual = if d == 0 { 0.0 } else { lyap.amax() };
    let expected_absorption = expected_absorption_times(mrp, st)?;
    let h_abs = expected_absorption.iter().map(|&(_, x)| x).fold(0.0, f64::max);
    Ok(QuotientDiagnostics {
        rho_q,
        gamma,
        power_iterations,
        free_states: free,
        seminorm_matrix: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
        lyapunov_terms,
        lyapunov_residual,
        h_abs,
        expected_absorption,
    })
}

/// Monte-Carlo check of `v⋆(s) = E_s[Σ_{t<τ_A} (r − g⋆)(X_t)]` at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCheck {
    pub state: usize,
    pub estimate: f64,
    pub std_err: f64,
    pub exact: f64,
    pub flagged: bool,
}

/// Run `episodes` trajectories from every non-anchor state until the anchor
/// set is hit; flag states whose estimate is more than three standard
/// errors from `v⋆`.
pub fn transient_cost_check(
    mrp: &Mrp,
    sol: &ExactSolution,
    anchors: &[StateIndex],
    episodes: usize,
    sampler: &Sampler,
) -> Result<Vec<CostCheck>> {
    if episodes < 2 {
        return Err(Error::InvalidArgument("need at least two episodes per state".into()));
    }
    let n = mrp.n();
    let mut is_anchor = vec![false; n];
    for &a in anchors {
        is_anchor[a] = true;
    }
    let r = mrp.rewards();
    let excess: Vec<f64> = (0..n).map(|s| r[s] - sol.g_star[s]).collect();
    let starts: Vec<usize> = (0..n).filter(|&s| !is_anchor[s]).collect();
    starts
        .par_iter()
        .map(|&s| {
            let (mut mean, mut m2) = (0.0, 0.0);
            for j in 0..episodes {
                let mut stream = sampler.stream_for(Purpose::TransientCost, s, j as u64);
                let mut x = s;
                let mut total = 0.0;
                let mut steps = 0;
                while !is_anchor[x] {
                    if steps == EPISODE_CAP {
                        return Err(Error::EpisodeCap {
                            start: s,
                            cap: EPISODE_CAP,
                        });
                    }
                    total += excess[x];
                    x = mrp.sample_next(x, &mut stream);
                    steps += 1;
                }
                let delta = total - mean;
                mean += delta / (j + 1) as f64;
                m2 += delta * (total - mean);
            }
            let var = m2 / (episodes - 1) as f64;
            let std_err = (var / episodes as f64).sqrt();
            let exact = sol.v_star[s];
            let flagged = (mean - exact).abs() > 3.0 * std_err + 1e-12;
            Ok(CostCheck {
                state: s,
                estimate: mean,
                std_err,
                exact,
                flagged,
            })
        })
        .collect()
}

/// `|Σ_{t<T} (P^t r)(s) − [Σ_{t<T} (P^t g_v)(s) + v(s) − (P^T v)(s)]|`
/// with `g_v = r + P v − v`, evaluated by exact matrix-vector powers.
pub fn return_identity_check(mrp: &Mrp, v: &[f64], horizon: usize, start: StateIndex) -> f64 {
    let p = mrp.transition();
    let r = mrp.rewards();
    let pv = p.apply(v);
    let gv: Vec<f64> = (0..mrp.n()).map(|s| r[s] + pv[s] - v[s]).collect();
    let mut xr = r.to_vec();
    let mut xg = gv;
    let mut xv = v.to_vec();
    let (mut lhs, mut rhs_sum) = (0.0, 0.0);
    for _ in 0..horizon {
        lhs += xr[start];
        rhs_sum += xg[start];
        xr = p.apply(&xr);
        xg = p.apply(&xg);
        xv = p.apply(&xv);
    }
    (lhs - (rhs_sum + v[start] - xv[start])).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::sup_norm;

    fn model(mrp: &Mrp) -> ExactModel {
        ExactModel::build(mrp).unwrap()
    }

    #[test]
    fn swap2_solution() {
        let mrp = fixtures::swap2();
        let m = model(&mrp);
        let s = &m.solution;
        assert_eq!(s.v_star, vec![0.0, 0.0]);
        assert_eq!(s.g_star, vec![1.0, 0.0]);
        assert_eq!(s.theta_star, vec![1.0, 0.0]);
        assert!(sup_dist(&s.gain, &[0.5, 0.5]) < 1e-12);
        let d = quotient_diagnostics(&mrp, &m.gauge, &m.structure).unwrap();
        assert_eq!((d.rho_q, d.h_abs), (0.0, 0.0));
        assert!(d.free_states.is_empty());
    }

    #[test]
    fn abs4_solution() {
        let mrp = fixtures::abs4();
        let m = model(&mrp);
        let s = &m.solution;
        let v = [0.0, 0.0, -270.0 / 169.0, -280.0 / 169.0];
        let g = [1.0, 0.0, 10.0 / 13.0, 7.0 / 13.0];
        assert!(sup_dist(&s.v_star, &v) < 1e-12);
        assert!(sup_dist(&s.g_star, &g) < 1e-12);
        assert!(sup_dist(&s.gain, &g) < 1e-12);
        assert_eq!(s.theta_star.len(), 2);
        assert!(s.fixed_point_residual < 1e-12);
    }

    #[test]
    fn constant_reward_gives_constant_gain() {
        for seed in 0..30 {
            let base = fixtures::random_chain(seed, 12);
            let mrp = Mrp::new(base.transition().rows(), vec![0.37; base.n()], 1.0).unwrap();
            let s = model(&mrp).solution;
            assert!(s.gain.iter().all(|g| (g - 0.37).abs() < 1e-10), "seed {seed}");
            assert!(sup_norm(&s.v_star) < 1e-10);
        }
    }

    #[test]
    fn solution_invariants_on_random_chains() {
        for seed in 0..200 {
            let mrp = fixtures::random_chain(seed, 12);
            let m = model(&mrp);
            let s = &m.solution;
            let pv = mrp.transition().apply(&s.v_star);
            let direct: Vec<f64> = (0..mrp.n()).map(|i| mrp.rewards()[i] + pv[i] - s.v_star[i]).collect();
            assert!(sup_dist(&direct, &s.g_star) < 1e-10);
            assert!(s.fixed_point_residual < 1e-10, "seed {seed}");
            assert!(m.gauge.anchors.iter().all(|&a| s.v_star[a] == 0.0));
            // g⋆ is peripheral: the gauge removes it entirely
            assert!(sup_norm(&m.gauge.apply(&s.g_star)) < 1e-10, "seed {seed}");
            let rebuilt = m.gain_from_theta().unwrap();
            assert!(sup_dist(&rebuilt, &s.gain) < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn solution_is_independent_of_equation_order() {
        for seed in 0..50 {
            let mrp = fixtures::random_chain(seed, 12);
            let m = model(&mrp);
            let (free, b) = quotient_operator(&mrp, &m.gauge);
            let d = free.len();
            if d == 0 {
                continue;
            }
            let pr = m.gauge.apply(mrp.rewards());
            // reverse the rows and rotate the unknowns
            let perm: Vec<usize> = (0..d).map(|i| (i + seed as usize) % d).collect();
            let a = DMatrix::from_fn(d, d, |i, j| {
                let (ri, cj) = (d - 1 - i, perm[j]);
                let id = if ri == cj { 1.0 } else { 0.0 };
                id - b[(ri, cj)]
            });
            let rhs = DVector::from_fn(d, |i, _| pr[free[d - 1 - i]]);
            let y = a.lu().solve(&rhs).unwrap();
            for j in 0..d {
                assert!((y[j] - m.solution.v_star[free[perm[j]]]).abs() < 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn gain_does_not_depend_on_anchor_choice() {
        for seed in 0..100 {
            let mrp = fixtures::random_chain(seed, 12);
            let m = model(&mrp);
            let mut other = m.structure.clone();
            for (i, sets) in other.cyclic.iter().enumerate() {
                for (k, set) in sets.iter().enumerate() {
                    other.anchors[i][k] = *set.last().unwrap();
                }
            }
            let gauge = GaugeMap::new(&other, m.weights.clone()).unwrap();
            let sol = exact_solve(&mrp, &gauge, &other).unwrap();
            assert!(sup_dist(&sol.gain, &m.solution.gain) < 1e-9, "seed {seed}");
            assert!(gauge.anchors.iter().all(|&a| sol.v_star[a] == 0.0));
        }
    }

    #[test]
    fn gain_matches_cesaro_averages() {
        let mut chains = vec![fixtures::swap2(), fixtures::abs4(), fixtures::ergodic3()];
        chains.push(fixtures::cycle(3, vec![0.0, 0.5, 1.0]));
        chains.extend((0..10).map(|s| fixtures::random_chain(s, 12)));
        for mrp in &chains {
            let exact = model(mrp).solution.gain;
            let ces = mrp.cesaro_gain(100_000).unwrap();
            assert!(sup_dist(&exact, &ces) < 1e-3);
        }
    }

    #[test]
    fn block_iteration_handles_symmetric_and_complex_spectra() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.7, 0.0]);
        let (rho, _) = spectral_radius(&b, POWER_TOL, POWER_CAP).unwrap();
        assert!((rho - 0.35f64.sqrt()).abs() < 1e-8);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        let (rho, _) = spectral_radius(&rot, POWER_TOL, POWER_CAP).unwrap();
        assert!((rho - 0.9).abs() < 1e-8);
        let (rho, _) = spectral_radius(&DMatrix::zeros(3, 3), POWER_TOL, POWER_CAP).unwrap();
        assert_eq!(rho, 0.0);
        assert_eq!(spectral_radius(&DMatrix::zeros(0, 0), POWER_TOL, POWER_CAP).unwrap().0, 0.0);
    }

    #[test]
    fn block_iteration_on_larger_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = DMatrix::from_fn(20, 20, |_, _| rng.random_range(-0.02..0.02));
        // a ±ρ pair and a complex pair with the same modulus
        b[(0, 1)] = 0.5;
        b[(1, 0)] = 0.7;
        b[(2, 3)] = -0.59;
        b[(3, 2)] = 0.59;
        let schur = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let (rho, iters) = spectral_radius(&b, POWER_TOL, POWER_CAP).unwrap();
        assert!(iters > 1);
        assert!((rho - schur).abs() < 1e-7, "{rho} vs {schur}");
    }

    #[test]
    fn spectral_radius_agrees_with_schur_and_is_below_one() {
        for seed in 0..100 {
            let mrp = fixtures::random_chain(seed, 12);
            let m = model(&mrp);
            let (_, b) = quotient_operator(&mrp, &m.gauge);
            if b.nrows() == 0 {
                continue;
            }
            let schur = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let (rho, _) = spectral_radius(&b, POWER_TOL, POWER_CAP).unwrap();
            assert!((rho - schur).abs() < 1e-6, "seed {seed}: {rho} vs {schur}");
            assert!(rho < 1.0);
        }
    }

    #[test]
    fn lyapunov_form_contracts() {
        let mut probe = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..50 {
            let mrp = fixtures::random_chain(seed, 12);
            let m = model(&mrp);
            let d = quotient_diagnostics(&mrp, &m.gauge, &m.structure).unwrap();
            assert!(d.rho_q < 1.0 && d.gamma > d.rho_q && d.gamma < 1.0);
            assert!(d.lyapunov_residual <= 1e-8, "seed {seed}: {}", d.lyapunov_residual);
            for _ in 0..100 {
                let w: Vec<f64> = (0..mrp.n()).map(|_| probe.random_range(-1.0..1.0)).collect();
                let w = m.gauge.apply(&w);
                let mut pw = mrp.transition().apply(&w);
                m.gauge.apply_in_place(&mut pw);
                assert!(d.seminorm(&m.gauge, &pw) <= d.gamma * d.seminorm(&m.gauge, &w) + 1e-9);
            }
        }
    }

    #[test]
    fn abs4_diagnostics() {
        let mrp = fixtures::abs4();
        let m = model(&mrp);
        let d = quotient_diagnostics(&mrp, &m.gauge, &m.structure).unwrap();
        assert_eq!(d.free_states, vec![2, 3]);
        assert!(d.rho_q < 1.0);
        let (_, b) = quotient_operator(&mrp, &m.gauge);
        let schur = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((d.rho_q - schur).abs() < 1e-8);
        assert!((d.h_abs - 34.0 / 13.0).abs() < 1e-12);
        assert_eq!(d.expected_absorption.len(), 2);
        assert!((d.expected_absorption[0].1 - 30.0 / 13.0).abs() < 1e-12);

        // Monte-Carlo cross-check of the absorption time from state 3
        let sampler = Sampler::new(8);
        let runs = 20_000;
        let times: Vec<f64> = (0..runs)
            .map(|j| {
                let mut stream = sampler.stream_for(Purpose::Misc, 3, j);
                let (mut x, mut steps) = (3, 0.0);
                while x >= 2 {
                    x = mrp.sample_next(x, &mut stream);
                    steps += 1.0;
                }
                steps
            })
            .collect();
        let mean = times.iter().sum::<f64>() / runs as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        assert!((mean - d.h_abs).abs() <= 3.0 * (var / runs as f64).sqrt());
    }

    #[test]
    fn transient_costs_match_bias() {
        let mrp = fixtures::abs4();
        let m = model(&mrp);
        let report = transient_cost_check(&mrp, &m.solution, &m.gauge.anchors, 100_000, &Sampler::new(21)).unwrap();
        assert_eq!(report.iter().map(|c| c.state).collect::<Vec<_>>(), vec![2, 3]);
        assert!(report.iter().all(|c| !c.flagged), "{report:?}");
        assert!((report[0].exact + 270.0 / 169.0).abs() < 1e-12);

        let swap = fixtures::swap2();
        let ms = model(&swap);
        let empty = transient_cost_check(&swap, &ms.solution, &ms.gauge.anchors, 10, &Sampler::new(1)).unwrap();
        assert!(empty.is_empty());
        assert!(transient_cost_check(&swap, &ms.solution, &ms.gauge.anchors, 1, &Sampler::new(1)).is_err());
    }

    #[test]
    fn return_identity_holds() {
        let abs = fixtures::abs4();
        assert_eq!(return_identity_check(&abs, &[0.0; 4], 30, 2), 0.0);
        let m = model(&abs);
        assert!(return_identity_check(&abs, &m.solution.v_star, 50, 2) <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..100 {
            let mrp = fixtures::random_chain(1000 + seed, 5);
            let v: Vec<f64> = (0..mrp.n()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let start = rng.random_range(0..mrp.n());
            assert!(return_identity_check(&mrp, &v, 20, start) <= 1e-8);
        }
    }

    #[test]
    fn stationary_distribution_of_a_periodic_class() {
        let mrp = fixtures::cycle(3, vec![0.0, 0.5, 1.0]);
        let pi = class_stationary(&mrp, &[0, 1, 2]).unwrap();
        assert!(pi.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
    }
}
