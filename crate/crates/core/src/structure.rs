//! Communication structure of a chain: support graph, closed classes,
//! periods, cyclic partitions and anchors.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chain::{Mrp, StochasticMatrix};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Sampler};

/// Directed graph with an edge `s -> t` whenever a transition was observed
/// (learned) or has positive probability (exact).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportGraph {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl SupportGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, s: usize, t: usize) -> bool {
        assert!(s < self.n && t < self.n, "edge ({s},{t}) out of range");
        self.edges.insert((s, t))
    }

    pub fn is_subgraph_of(&self, other: &SupportGraph) -> bool {
        self.n == other.n && self.edges.is_subset(&other.edges)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(s, t) in &self.edges {
            adj[s].push(t);
        }
        adj
    }
}

/// Sample `k` successors of every state and record the observed edges.
pub fn learn_support_graph(mrp: &Mrp, k: usize, sampler: &Sampler) -> SupportGraph {
    let mut g = SupportGraph::new(mrp.n());
    for s in 0..mrp.n() {
        let mut stream = sampler.stream_for(Purpose::Structure, s, 0);
        for _ in 0..k {
            let t = mrp.sample_next(s, &mut stream);
            g.insert(s, t);
        }
    }
    g
}

pub fn exact_support_graph(p: &StochasticMatrix) -> SupportGraph {
    let mut g = SupportGraph::new(p.n());
    for s in 0..p.n() {
        for (t, &x) in p.row(s).iter().enumerate() {
            if x > 0.0 {
                g.insert(s, t);
            }
        }
    }
    g
}

/// Recurrent classes, cyclic partitions and anchors in canonical labeling:
/// classes ordered by smallest state, phase 0 holds the class's smallest
/// state, and each anchor is the smallest state of its phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStructure {
    pub n: usize,
    pub classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
    pub periods: Vec<usize>,
    /// `cyclic[i][k]` is the sorted phase set `C_{i,k}`.
    pub cyclic: Vec<Vec<Vec<usize>>>,
    pub class_of: Vec<Option<usize>>,
    pub phase_of: Vec<Option<usize>>,
    /// `anchors[i][k]` is the anchor of `C_{i,k}`.
    pub anchors: Vec<Vec<usize>>,
    /// Flattened index set `(i, k)` in column order.
    pub index_set: Vec<(usize, usize)>,
}

impl ChainStructure {
    /// Number of (class, phase) pairs.
    pub fn num_phases(&self) -> usize {
        self.index_set.len()
    }

    /// Column of `(i, k)` in the flattened index set.
    pub fn column(&self, class: usize, phase: usize) -> usize {
        self.periods[..class].iter().sum::<usize>() + phase
    }

    /// Anchors in column order.
    pub fn anchor_list(&self) -> Vec<usize> {
        self.index_set
            .iter()
            .map(|&(i, k)| self.anchors[i][k])
            .collect()
    }

    pub fn is_recurrent(&self, s: usize) -> bool {
        self.class_of[s].is_some()
    }

    /// Column of a recurrent state's own (class, phase).
    pub fn column_of_state(&self, s: usize) -> Option<usize> {
        Some(self.column(self.class_of[s]?, self.phase_of[s]?))
    }

    /// Check every structural invariant against a support graph; returns the
    /// first problem found.
    pub fn check(&self, g: &SupportGraph) -> std::result::Result<(), String> {
        let mut seen = vec![0u8; self.n];
        for s in self.classes.iter().flatten().chain(&self.transient) {
            seen[*s] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err("classes and transient set do not partition the states".into());
        }
        for (i, class) in self.classes.iter().enumerate() {
            let mut union: Vec<usize> = self.cyclic[i].iter().flatten().copied().collect();
            union.sort_unstable();
            if &union != class {
                return Err(format!("phases of class {i} do not partition it"));
            }
            if self.cyclic[i].len() != self.periods[i] {
                return Err(format!("class {i} has {} phases but period {}", self.cyclic[i].len(), self.periods[i]));
            }
            for (k, set) in self.cyclic[i].iter().enumerate() {
                if !set.contains(&self.anchors[i][k]) {
                    return Err(format!("anchor ({i},{k}) outside its phase"));
                }
            }
        }
        for &(u, v) in &g.edges {
            if let (Some(cu), Some(pu)) = (self.class_of[u], self.phase_of[u]) {
                if self.class_of[v] != Some(cu) {
                    return Err(format!("edge ({u},{v}) leaves closed class {cu}"));
                }
                let d = self.periods[cu];
                if self.phase_of[v] != Some((pu + 1) % d) {
                    return Err(format!("edge ({u},{v}) breaks cyclic order"));
                }
            }
        }
        if self.num_phases() != self.periods.iter().sum::<usize>() {
            return Err("index set size differs from sum of periods".into());
        }
        Ok(())
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Strongly connected components, iterative Tarjan. Returns the component id
/// of every vertex.
fn tarjan_scc(adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    const UNSET: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSET; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSET; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut ncomp = 0;
    // (vertex, next child position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNSET {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp[w] = ncomp;
                        if w == v {
                            break;
                        }
                    }
                    ncomp += 1;
                }
            }
        }
    }
    (comp, ncomp)
}

/// Classify states and recover each closed class's period and cyclic
/// partition from the support graph.
pub fn analyze_structure(g: &SupportGraph) -> Result<ChainStructure> {
    let n = g.n;
    let adj = g.adjacency();
    if let Some(s) = adj.iter().position(Vec::is_empty) {
        return Err(Error::DeadEnd { state: s });
    }
    let (comp, ncomp) = tarjan_scc(&adj);
    let mut closed = vec![true; ncomp];
    for &(u, v) in &g.edges {
        if comp[u] != comp[v] {
            closed[comp[u]] = false;
        }
    }
    let mut members = vec![Vec::new(); ncomp];
    for s in 0..n {
        members[comp[s]].push(s);
    }
    // Members are ascending, so ordering by first element orders classes
    // by their smallest state.
    let mut classes: Vec<Vec<usize>> = members
        .into_iter()
        .enumerate()
        .filter(|(c, _)| closed[*c])
        .map(|(_, m)| m)
        .collect();
    classes.sort_by_key(|c| c[0]);
    assert!(!classes.is_empty(), "a finite graph without dead ends has a closed component");

    let mut class_of = vec![None; n];
    for (i, class) in classes.iter().enumerate() {
        for &s in class {
            class_of[s] = Some(i);
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&s| class_of[s].is_none()).collect();

    let mut phase_of = vec![None; n];
    let mut periods = Vec::with_capacity(classes.len());
    let mut cyclic = Vec::with_capacity(classes.len());
    let mut anchors = Vec::with_capacity(classes.len());
    let mut level = vec![usize::MAX; n];
    for (i, class) in classes.iter().enumerate() {
        let root = class[0];
        level[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut d = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                // Closed class: every successor is in the class.
                debug_assert_eq!(class_of[v], Some(i));
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    d = gcd(d, (level[u] + 1).abs_diff(level[v]));
                }
            }
        }
        // A strongly connected class always has a cycle, so d > 0.
        let d = d.max(1);
        let mut sets = vec![Vec::new(); d];
        for &s in class {
            let k = level[s] % d;
            phase_of[s] = Some(k);
            sets[k].push(s);
        }
        anchors.push(sets.iter().map(|set| set[0]).collect());
        periods.push(d);
        cyclic.push(sets);
    }
    let index_set = periods
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| (0..d).map(move |k| (i, k)))
        .collect();

    Ok(ChainStructure {
        n,
        classes,
        transient,
        periods,
        cyclic,
        class_of,
        phase_of,
        anchors,
        index_set,
    })
}

/// Ceiling that ignores floating-point overshoot of an exact integer.
pub fn robust_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Per-state sample count `⌈log(n²/δ) / p_min⌉` that recovers the exact
/// support graph with probability at least `1 - δ`.
pub fn required_k(p_min: f64, n: usize, delta: f64) -> Result<u64> {
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::InvalidArgument(format!("p_min = {p_min} not in (0, 1]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} not in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let nf = n as f64;
    let k = robust_ceil((nf * nf / delta).ln() / p_min);
    Ok((k as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn edges(list: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        list.iter().copied().collect()
    }

    #[test]
    fn exact_graphs() {
        assert_eq!(
            exact_support_graph(fixtures::swap2().transition()).edges,
            edges(&[(0, 1), (1, 0)])
        );
        assert_eq!(
            exact_support_graph(&StochasticMatrix::identity(3)).edges,
            edges(&[(0, 0), (1, 1), (2, 2)])
        );
        assert_eq!(
            exact_support_graph(fixtures::abs4().transition()).edges,
            edges(&[(0, 0), (1, 1), (2, 0), (2, 3), (3, 1), (3, 2)])
        );
    }

    #[test]
    fn learned_graph_examples() {
        let s = Sampler::new(1);
        let g = learn_support_graph(&fixtures::swap2(), 1, &s);
        assert_eq!(g.edges, edges(&[(0, 1), (1, 0)]));
        let g = learn_support_graph(&fixtures::abs4(), 0, &s);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn swap2_structure() {
        let st = analyze_structure(&exact_support_graph(fixtures::swap2().transition())).unwrap();
        assert_eq!(st.classes, vec![vec![0, 1]]);
        assert_eq!(st.periods, vec![2]);
        assert_eq!(st.cyclic, vec![vec![vec![0], vec![1]]]);
        assert_eq!(st.anchors, vec![vec![0, 1]]);
        assert!(st.transient.is_empty());
    }

    #[test]
    fn abs4_structure() {
        let st = analyze_structure(&exact_support_graph(fixtures::abs4().transition())).unwrap();
        assert_eq!(st.classes, vec![vec![0], vec![1]]);
        assert_eq!(st.periods, vec![1, 1]);
        assert_eq!(st.transient, vec![2, 3]);
        assert_eq!(st.anchor_list(), vec![0, 1]);
        assert_eq!(st.num_phases(), 2);
    }

    #[test]
    fn three_cycle_structure() {
        let m = fixtures::cycle(3, vec![0.0; 3]);
        let st = analyze_structure(&exact_support_graph(m.transition())).unwrap();
        assert_eq!(st.periods, vec![3]);
        assert_eq!(st.cyclic[0], vec![vec![0], vec![1], vec![2]]);
        assert_eq!(st.num_phases(), 3);
    }

    #[test]
    fn dead_end_is_a_fault() {
        let mut g = SupportGraph::new(2);
        g.insert(0, 1);
        assert!(matches!(analyze_structure(&g), Err(Error::DeadEnd { state: 1 })));
    }

    #[test]
    fn random_chain_structures_are_consistent() {
        for seed in 0..300 {
            let m = fixtures::random_chain(seed, 12);
            let g = exact_support_graph(m.transition());
            let st = analyze_structure(&g).unwrap();
            st.check(&g).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            // cyclic consistency, exhaustively
            for &(u, v) in &g.edges {
                if let Some(c) = st.class_of[u] {
                    assert_eq!(st.phase_of[v].unwrap(), (st.phase_of[u].unwrap() + 1) % st.periods[c]);
                }
            }
        }
    }

    #[test]
    fn period_matches_cycle_gcd_by_brute_force() {
        // For each class, the gcd of lengths of closed walks through the root
        // up to length 3n equals the period.
        for seed in 0..100 {
            let m = fixtures::random_chain(seed, 10);
            let g = exact_support_graph(m.transition());
            let st = analyze_structure(&g).unwrap();
            let adj = g.adjacency();
            for (i, class) in st.classes.iter().enumerate() {
                let root = class[0];
                let mut reach = vec![false; g.n];
                reach[root] = true;
                let mut walk_gcd = 0;
                for len in 1..=3 * g.n {
                    let mut next = vec![false; g.n];
                    for u in 0..g.n {
                        if reach[u] {
                            for &v in &adj[u] {
                                next[v] = true;
                            }
                        }
                    }
                    reach = next;
                    if reach[root] {
                        walk_gcd = gcd(walk_gcd, len);
                    }
                }
                assert_eq!(walk_gcd, st.periods[i], "seed {seed} class {i}");
            }
        }
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        // Long path into a single absorbing state.
        let n = 20_000;
        let mut g = SupportGraph::new(n);
        for s in 0..n - 1 {
            g.insert(s, s + 1);
        }
        g.insert(n - 1, n - 1);
        let st = analyze_structure(&g).unwrap();
        assert_eq!(st.classes, vec![vec![n - 1]]);
        assert_eq!(st.transient.len(), n - 1);
    }

    #[test]
    fn required_k_examples() {
        assert_eq!(required_k(1.0, 1, 0.5).unwrap(), 1);
        assert_eq!(required_k(0.3, 4, 0.05).unwrap(), 20);
        let k = required_k(0.07, 131, 0.05).unwrap();
        assert_eq!(k, ((131.0f64 * 131.0 / 0.05).ln() / 0.07).ceil() as u64);
        assert!(required_k(0.0, 4, 0.05).is_err());
        assert!(required_k(0.5, 4, 1.0).is_err());
    }

    #[test]
    fn naive_iteration_oscillates_on_swap2() {
        // Zero-mean rewards so that r + Pv has fixed points; the error still
        // carries the -1 eigenmode forever.
        let p = fixtures::swap2().transition().clone();
        let r = [0.5, -0.5];
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let mut hist = vec![vec![0.0, 0.0]];
        for t in 0..50 {
            let pv = p.apply(&hist[t]);
            hist.push(r.iter().zip(&pv).map(|(a, b)| a + b).collect());
        }
        for t in 0..48 {
            assert!(sup(&hist[t + 2], &hist[t]) < 1e-15);
            assert!(sup(&hist[t + 1], &hist[t]) >= 0.5 - 1e-15);
        }
    }
}
