//! Small reference chains and a random generator of reducible, periodic chains.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::Mrp;

/// Two-state period-two chain, `P = [[0,1],[1,0]]`, `r = [1,0]`.
pub fn swap2() -> Mrp {
    Mrp::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0], 1.0).expect("valid fixture")
}

/// Two absorbing states (rewards 1 and 0) fed by two transient states:
/// `2 -> {0: 0.5, 3: 0.5}`, `3 -> {1: 0.3, 2: 0.7}`.
pub fn abs4() -> Mrp {
    Mrp::new(
        vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.5],
            vec![0.0, 0.3, 0.7, 0.0],
        ],
        vec![1.0, 0.0, 0.0, 0.0],
        1.0,
    )
    .expect("valid fixture")
}

/// Deterministic cycle `0 -> 1 -> ... -> len-1 -> 0`.
pub fn cycle(len: usize, rewards: Vec<f64>) -> Mrp {
    let rows = (0..len)
        .map(|s| {
            let mut row = vec![0.0; len];
            row[(s + 1) % len] = 1.0;
            row
        })
        .collect();
    Mrp::with_tight_bound(rows, rewards).expect("valid fixture")
}

/// Irreducible aperiodic three-state chain.
pub fn ergodic3() -> Mrp {
    Mrp::new(
        vec![
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.1, 0.5],
            vec![0.6, 0.3, 0.1],
        ],
        vec![0.9, 0.1, 0.4],
        1.0,
    )
    .expect("valid fixture")
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random chain with up to `max_n` states: one to three recurrent classes of
/// random period and phase sizes, a handful of transient states, rewards in
/// `[0, 1]`, and a random relabeling of the states.
pub fn random_chain(seed: u64, max_n: usize) -> Mrp {
    assert!(max_n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Each class: list of phase sizes.
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut used = 0;
    let class_target = rng.random_range(1..=3);
    for _ in 0..class_target {
        let period = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..period).map(|_| rng.random_range(1..=2)).collect();
        let size: usize = sizes.iter().sum();
        if used + size > max_n.saturating_sub(1) && !classes.is_empty() {
            break;
        }
        if used + size > max_n {
            classes.push(vec![1]);
            used += 1;
            break;
        }
        used += size;
        classes.push(sizes);
    }
    let transient = rng.random_range(0..=(max_n - used).min(4));
    let n = used + transient;

    let mut rows = vec![vec![0.0; n]; n];
    let mut recurrent = Vec::new();
    let mut start = 0;
    for sizes in &classes {
        let mut phases = Vec::new();
        for &sz in sizes {
            phases.push((start..start + sz).collect::<Vec<_>>());
            start += sz;
        }
        let d = phases.len();
        if d == 1 {
            for &s in &phases[0] {
                let w = random_weights(&mut rng, phases[0].len());
                for (&t, p) in phases[0].iter().zip(w) {
                    rows[s][t] = p;
                }
            }
        } else {
            for k in 0..d {
                let next = &phases[(k + 1) % d];
                for &s in &phases[k] {
                    let w = random_weights(&mut rng, next.len());
                    for (&t, p) in next.iter().zip(w) {
                        rows[s][t] = p;
                    }
                }
            }
        }
        recurrent.extend(phases.into_iter().flatten());
    }
    for s in used..n {
        let mut targets = vec![recurrent[rng.random_range(0..recurrent.len())]];
        for t in 0..n {
            if !targets.contains(&t) && rng.random_bool(0.3) {
                targets.push(t);
            }
        }
        let w = random_weights(&mut rng, targets.len());
        for (&t, p) in targets.iter().zip(w) {
            rows[s][t] = p;
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut permuted = vec![vec![0.0; n]; n];
    for s in 0..n {
        for t in 0..n {
            permuted[perm[s]][perm[t]] = rows[s][t];
        }
    }
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    Mrp::new(permuted, rewards, 1.0).expect("generator emits stochastic rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_chains_are_valid_and_small() {
        for seed in 0..200 {
            let m = random_chain(seed, 12);
            assert!(m.n() <= 12 && m.n() >= 1);
            assert!(m.validate(1e-9).is_ok());
        }
    }

    #[test]
    fn random_chains_are_deterministic() {
        assert_eq!(random_chain(5, 12), random_chain(5, 12));
    }
}
