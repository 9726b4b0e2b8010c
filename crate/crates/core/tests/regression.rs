mod common;

use common::{active_set_oracle, random_matrix, random_sequence, rng};
use grgcn_core::regression::{
    aggregate_common, build_problem, solution_to_laplacian, solve, RegressionProblem, RegressionSolution, Template,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use grgcn_core::stgraph::{concat_frames, BlockLayout};
use proptest::prelude::*;
use rand::Rng;

fn random_problem(n: usize, edges: usize, beta: f64, seed: u64) -> RegressionProblem {
    let mut r = rng(seed);
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    while all.len() > edges {
        let k = r.random_range(0..all.len());
        all.remove(k);
    }
    let d = (0..all.len()).map(|_| r.random_range(0.0..4.0)).collect();
    RegressionProblem::new(n, all, d, beta, 2.0 * n as f64).unwrap()
}

fn solve_default(p: &RegressionProblem) -> RegressionSolution {
    solve(p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()
}

#[test]
fn distances_match_pairwise_norms() {
    let seq = random_sequence(4, 5, 0, &mut rng(41));
    let frames = concat_frames(&seq).unwrap();
    let p = build_problem(&frames[1], 0, Template::Complete, 1.0).unwrap();
    let x = frames[1].coordinates(0);
    assert_eq!(p.num_edges(), 12 * 11 / 2);
    assert_eq!(p.trace_target, 12.0);
    for (&(i, j), &d) in p.candidate_edges.iter().zip(&p.distances) {
        let want: f64 = (0..3).map(|c| (x.get(i, c) - x.get(j, c)).powi(2)).sum();
        assert!((d - want).abs() < 1e-12);
    }
}

#[test]
fn four_vertices_six_edges_match_active_set() {
    for seed in 0..8 {
        let p = random_problem(4, 6, 0.5, 300 + seed);
        let sol = solve_default(&p);
        let oracle = active_set_oracle(&p);
        assert!((sol.objective - oracle).abs() < 1e-6, "seed {seed}: {} vs {oracle}", sol.objective);
    }
}

#[test]
fn solved_laplacian_rows_sum_to_zero() {
    let mut r = rng(42);
    let x = random_matrix(9, 3, &mut r);
    let p = RegressionProblem::from_coordinates(&x, Template::Complete, 1.0).unwrap();
    let sol = solve_default(&p);
    let l = solution_to_laplacian(&p, &sol).unwrap();
    for i in 0..9 {
        let s: f64 = l.combinatorial().row(i).iter().sum();
        assert!(s.abs() < 1e-10);
    }
}

#[test]
fn aggregate_mean_matches_explicit_average() {
    let layout = BlockLayout::new(2);
    let edges: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 5)];
    let mut r = rng(43);
    let sols: Vec<RegressionSolution> = (0..3)
        .map(|_| RegressionSolution {
            weights: (0..edges.len()).map(|_| r.random_range(0.0..2.0)).collect(),
            objective: 0.0,
            iterations: 1,
            converged: true,
        })
        .collect();
    let (stats, _) = aggregate_common(&edges, &sols, &layout, 0.8, 0.4).unwrap();
    assert_eq!(stats.observation_count, 3);
    for k in 0..edges.len() {
        let want = (sols[0].weights[k] + sols[1].weights[k] + sols[2].weights[k]) / 3.0;
        assert!((stats.mean_weights[k] - want).abs() < 1e-12);
    }
}

#[test]
fn degenerate_problems_rejected() {
    assert!(RegressionProblem::new(3, vec![], vec![], 1.0, 6.0).is_err());
    assert!(RegressionProblem::new(3, vec![(0, 1)], vec![-1.0], 1.0, 6.0).is_err());
    assert!(RegressionProblem::new(3, vec![(1, 1)], vec![1.0], 1.0, 6.0).is_err());
    assert!(RegressionProblem::new(3, vec![(0, 1)], vec![1.0], f64::NAN, 6.0).is_err());
}

fn support(w: &[f64]) -> Vec<usize> {
    w.iter().enumerate().filter(|(_, &x)| x > 1e-9).map(|(i, _)| i).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solutions_are_feasible_and_match_oracle(seed in 0u64..100_000, n in 3usize..6, extra in 0usize..4, beta in 0.0f64..2.0) {
        let e = (n + extra).min(7).min(n * (n - 1) / 2);
        let p = random_problem(n, e, beta, seed);
        let sol = solve_default(&p);
        prop_assert!(sol.weights.iter().all(|&w| w >= -1e-12));
        let total: f64 = sol.weights.iter().map(|w| 2.0 * w).sum();
        prop_assert!((total - p.trace_target).abs() <= 1e-8);
        let oracle = active_set_oracle(&p);
        prop_assert!((sol.objective - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()), "{} vs {}", sol.objective, oracle);
    }

    #[test]
    fn zero_beta_support_is_scale_free(seed in 0u64..100_000, s in 0.01f64..100.0) {
        let p = random_problem(5, 7, 0.0, seed);
        let scaled = RegressionProblem { distances: p.distances.iter().map(|d| d * s).collect(), ..p.clone() };
        prop_assert_eq!(support(&solve_default(&p).weights), support(&solve_default(&scaled).weights));
    }

    #[test]
    fn relabelling_vertices_permutes_weights(seed in 0u64..100_000, beta in 0.0f64..2.0, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = random_problem(5, 7, beta, seed);
        let edges = p.candidate_edges.iter().map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j]))).collect();
        let q = RegressionProblem { candidate_edges: edges, ..p.clone() };
        let a = solve_default(&p);
        let b = solve_default(&q);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!(x == y, "{:?} vs {:?}", a.weights, b.weights);
        }
    }
}
