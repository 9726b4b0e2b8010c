mod common;

use common::{jacobi_eigen, random_graph, random_matrix, rng};
use grgcn_core::graph::{
    laplacian_from_adjacency, normalize_laplacian, total_variation, variation_operator, Graph, GraphFile,
};
use grgcn_core::numerics::matmul;
use grgcn_core::Matrix;
use proptest::prelude::*;

#[test]
fn laplacian_matches_degree_minus_adjacency() {
    let g = random_graph(6, 0.5, &mut rng(21));
    let l = laplacian_from_adjacency(&g);
    let a = g.adjacency();
    for i in 0..6 {
        let deg: f64 = (0..6).map(|j| a.get(i, j)).sum();
        for j in 0..6 {
            let want = if i == j { deg } else { -a.get(i, j) };
            assert!((l.combinatorial().get(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn normalized_spectrum_in_zero_two() {
    for seed in 0..6 {
        let g = random_graph(8, 0.4, &mut rng(30 + seed));
        let n = normalize_laplacian(&laplacian_from_adjacency(&g));
        let (eig, _) = jacobi_eigen(&n);
        for &e in &eig {
            assert!((-1e-9..=2.0 + 1e-9).contains(&e), "eigenvalue {e}");
        }
    }
}

#[test]
fn total_variation_matches_pairwise_sum() {
    let mut r = rng(22);
    let g = random_graph(7, 0.4, &mut r);
    let x = random_matrix(7, 3, &mut r);
    let l = laplacian_from_adjacency(&g);
    let mut want = 0.0;
    for i in 0..7 {
        for j in i + 1..7 {
            let a = g.weight(i, j);
            for c in 0..3 {
                let d = x.get(i, c) - x.get(j, c);
                want += a * d * d;
            }
        }
    }
    assert!((total_variation(&l, &x).unwrap() - want).abs() < 1e-12);
}

#[test]
fn variation_operator_matches_neighbor_sums() {
    let mut r = rng(23);
    let g = random_graph(10, 0.3, &mut r);
    let x = random_matrix(10, 2, &mut r);
    let y = variation_operator(&laplacian_from_adjacency(&g), &x).unwrap();
    for i in 0..10 {
        for c in 0..2 {
            let mut want = 0.0;
            for j in 0..10 {
                let a = g.weight(i, j);
                if j != i && a != 0.0 {
                    want += a * (x.get(i, c) - x.get(j, c));
                }
            }
            assert!((y.get(i, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_signal_has_zero_variation() {
    let g = random_graph(9, 0.3, &mut rng(24));
    let l = laplacian_from_adjacency(&g);
    let x = Matrix::from_fn(9, 3, |_, c| c as f64 + 0.5);
    assert!(total_variation(&l, &x).unwrap().abs() < 1e-10);
    assert!(variation_operator(&l, &x).unwrap().max_abs() < 1e-10);
}

#[test]
fn graph_file_round_trip() {
    let g = random_graph(6, 0.5, &mut rng(25));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    g.to_file(serde_json::json!({"note": "x"})).save(&path).unwrap();
    let back = Graph::from_file(&GraphFile::load(&path).unwrap()).unwrap();
    assert_eq!(back.adjacency(), g.adjacency());
}

#[test]
fn asymmetric_adjacency_rejected() {
    let mut a = Matrix::zeros(3, 3);
    a.set(0, 1, 1.0);
    assert!(Graph::new(a).is_err());
}

proptest! {
    #[test]
    fn laplacian_invariants(seed in 0u64..10_000, n in 2usize..9) {
        let mut r = rng(seed);
        let g = random_graph(n, 0.4, &mut r);
        let l = laplacian_from_adjacency(&g);
        let m = l.combinatorial();
        for i in 0..n {
            let row: f64 = m.row(i).iter().sum();
            prop_assert!(row.abs() < 1e-10);
            for j in 0..n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                if i != j {
                    prop_assert!(m.get(i, j) <= 0.0);
                }
            }
        }
        let x = random_matrix(n, 3, &mut r);
        let tv = total_variation(&l, &x).unwrap();
        prop_assert!(tv >= 0.0);
        let lx = matmul(m, &x).unwrap();
        let quad: f64 = (0..n).flat_map(|i| (0..3).map(move |c| (i, c))).map(|(i, c)| x.get(i, c) * lx.get(i, c)).sum();
        prop_assert!((tv - quad).abs() < 1e-10 * (1.0 + quad.abs()));
    }

    #[test]
    fn indicator_picks_laplacian_row(seed in 0u64..10_000, n in 2usize..9, pick in 0usize..8) {
        let i = pick % n;
        let g = random_graph(n, 0.4, &mut rng(seed));
        let l = laplacian_from_adjacency(&g);
        let e = Matrix::from_fn(n, 1, |r, _| f64::from(u8::from(r == i)));
        let y = variation_operator(&l, &e).unwrap();
        for j in 0..n {
            prop_assert!((y.get(j, 0) - l.combinatorial().get(i, j)).abs() < 1e-12);
        }
    }
}
