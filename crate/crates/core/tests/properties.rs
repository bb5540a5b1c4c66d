use proptest::prelude::*;

use qpoisson_core::experiment::{read_curves, write_curves, ErrorCurve, Method};
use qpoisson_core::oracle::return_identity_check;
use qpoisson_core::solver::{estimate_residual, run_sa};
use qpoisson_core::structure::{analyze_structure, exact_support_graph, learn_support_graph};
use qpoisson_core::{fixtures, sup_dist, sup_norm, ExactModel, Mrp, SaConfig, Sampler, StepSchedule};

fn chain(seed: u64) -> Mrp {
    fixtures::random_chain(seed, 12)
}

fn vector(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|s| ((s as f64 + 1.0) * (seed as f64 * 0.37 + 1.3)).sin() * 4.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learned_support_is_a_subgraph(seed in 0u64..10_000, k in 1usize..40) {
        let mrp = chain(seed);
        let exact = exact_support_graph(mrp.transition());
        let learned = learn_support_graph(&mrp, k, &Sampler::new(seed));
        prop_assert!(learned.is_subgraph_of(&exact));
        let st = analyze_structure(&exact).unwrap();
        prop_assert!(st.check(&exact).is_ok());
    }

    #[test]
    fn gauge_is_a_bounded_projection(seed in 0u64..10_000, vs in 0u64..1000) {
        let mrp = chain(seed);
        let m = ExactModel::build(&mrp).unwrap();
        let v = vector(mrp.n(), vs);
        let once = m.gauge.apply(&v);
        prop_assert!(sup_dist(&m.gauge.apply(&once), &once) <= 1e-12);
        prop_assert!(sup_norm(&once) <= 2.0 * sup_norm(&v) + 1e-12);
        for &a in &m.gauge.anchors {
            prop_assert!(once[a] == 0.0);
        }
        for c in 0..m.weights.cols() {
            prop_assert!(sup_norm(&m.gauge.apply(&m.weights.column(c))) <= 1e-12);
        }
    }

    #[test]
    fn exact_solution_invariants(seed in 0u64..10_000) {
        let mrp = chain(seed);
        let m = ExactModel::build(&mrp).unwrap();
        let s = &m.solution;
        prop_assert!(s.fixed_point_residual <= 1e-10);
        prop_assert!(sup_norm(&m.gauge.apply(&s.g_star)) <= 1e-10);
        prop_assert!(sup_dist(&m.gain_from_theta().unwrap(), &s.gain) <= 1e-10);
        prop_assert!(s.gain.iter().all(|&g| (-1e-12..=1.0 + 1e-12).contains(&g)));
    }

    #[test]
    fn return_identity(seed in 0u64..10_000, vs in 0u64..1000, horizon in 1usize..50) {
        let mrp = chain(seed);
        let v = vector(mrp.n(), vs);
        for start in 0..mrp.n() {
            prop_assert!(return_identity_check(&mrp, &v, horizon, start) <= 1e-8);
        }
    }

    #[test]
    fn sa_stays_in_the_gauge(seed in 0u64..10_000) {
        let mrp = chain(seed);
        let m = ExactModel::build(&mrp).unwrap();
        let anchors = m.gauge.anchors.clone();
        let cfg = SaConfig::new(StepSchedule::default(), 100, 1, seed);
        let mut worst = 0.0f64;
        run_sa(&mrp, &m.gauge, &cfg, &vector(mrp.n(), seed), &mut |_, v| {
            worst = anchors.iter().map(|&a| v[a].abs()).fold(worst, f64::max);
            Ok(None)
        }).unwrap();
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn reconstruction_identity(seed in 0u64..10_000, j in 1usize..50, round in 0u64..100) {
        let mrp = chain(seed);
        let m = ExactModel::build(&mrp).unwrap();
        let res = estimate_residual(&mrp, &vector(mrp.n(), seed), &m.gauge, j, &Sampler::new(seed), round).unwrap();
        prop_assert_eq!(res.g_hat, m.weights.combine(&res.theta));
    }

    #[test]
    fn curves_round_trip(
        seeds in proptest::collection::btree_set(0u64..50, 1..4),
        errs in proptest::collection::vec(0.0f64..10.0, 1..8),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let curves: Vec<ErrorCurve> = Method::ALL
            .iter()
            .flat_map(|&method| seeds.iter().map(move |&seed| (method, seed)))
            .map(|(method, seed)| ErrorCurve {
                instance: "inst".into(),
                method,
                seed,
                points: errs.iter().enumerate().map(|(t, &e)| (t as u64 * 10, e * (seed + 1) as f64)).collect(),
            })
            .collect();
        write_curves(&curves, &path).unwrap();
        let mut expect = curves.clone();
        expect.sort_by(|a, b| (a.method.as_str(), a.seed).cmp(&(b.method.as_str(), b.seed)));
        prop_assert_eq!(read_curves(&path).unwrap(), expect);
    }
}

#[test]
fn chain_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        let mrp = chain(seed);
        let path = dir.path().join(format!("c{seed}.json"));
        std::fs::write(&path, serde_json::to_string(&mrp.to_file()).unwrap()).unwrap();
        assert_eq!(Mrp::load(&path).unwrap(), mrp);
    }
}
