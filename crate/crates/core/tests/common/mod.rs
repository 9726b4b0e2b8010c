//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use grgcn_core::chebynet::{ChebyMode, ChebyOperator, GrGcn, GrGcnParams, Mode, NetworkConfig, Sample};
use grgcn_core::data::SkeletonSequence;
use grgcn_core::graph::Graph;
use grgcn_core::regression::RegressionProblem;
use grgcn_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Path backbone plus random extra edges, positive weights.
pub fn random_graph(n: usize, extra_p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random::<f64>() < extra_p {
                edges.push((i, j, rng.random_range(0.1..3.0)));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix:
/// `(eigenvalues, eigenvectors as columns)`.
pub fn jacobi_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.rows();
    let mut a = m.to_rows();
    let mut v = Matrix::identity(n).to_rows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    (vals, Matrix::from_rows(&v).unwrap())
}

/// `T_k(λ)` from its trigonometric / hyperbolic closed form.
pub fn chebyshev_scalar(k: usize, x: f64) -> f64 {
    let k = k as f64;
    if x.abs() <= 1.0 {
        (k * x.acos()).cos()
    } else {
        let sign = if x < 0.0 && (k as u64) % 2 == 1 { -1.0 } else { 1.0 };
        sign * (k * x.abs().acosh()).cosh()
    }
}

/// `T_k(S) x` through the eigendecomposition of `S`.
pub fn chebyshev_oracle(normalized: &Matrix, x: &Matrix, k: usize, mode: ChebyMode) -> Matrix {
    let n = normalized.rows();
    let shift = if mode == ChebyMode::Rescaled { 1.0 } else { 0.0 };
    let (vals, vecs) = jacobi_eigen(normalized);
    let mut out = Matrix::zeros(n, x.cols());
    for (idx, lam) in vals.iter().enumerate() {
        let t = chebyshev_scalar(k, lam - shift);
        for c in 0..x.cols() {
            let proj: f64 = (0..n).map(|r| vecs.get(r, idx) * x.get(r, c)).sum();
            for r in 0..n {
                out.add_at(r, c, t * proj * vecs.get(r, idx));
            }
        }
    }
    out
}

/// Number of eigenvalues of symmetric `m` below `x`, by the inertia of
/// `m - x I` from an unpivoted LDLᵀ sweep.
pub fn count_below(m: &Matrix, x: f64) -> usize {
    let n = m.rows();
    let mut a = m.to_rows();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= x;
    }
    let mut count = 0;
    for k in 0..n {
        let mut d = a[k][k];
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
        for i in k + 1..n {
            let l = a[i][k] / d;
            for j in k + 1..n {
                a[i][j] -= l * a[k][j];
            }
        }
    }
    count
}

/// Spectral radius of a symmetric matrix by bisection on eigenvalue counts.
pub fn spectral_radius_oracle(m: &Matrix) -> f64 {
    let n = m.rows();
    let bound: f64 = (0..n)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let bisect = |k: usize| {
        // k-th smallest eigenvalue
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(m, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    bisect(0).abs().max(bisect(n - 1).abs())
}

/// Dense Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Minimum of the regression objective over the weight simplex by
/// enumerating supports and solving each equality-constrained KKT system.
pub fn active_set_oracle(problem: &RegressionProblem) -> f64 {
    let e = problem.num_edges();
    assert!(e <= 12, "oracle enumerates 2^E supports");
    let total = problem.trace_target / 2.0;
    let q = problem.curvature();
    let beta = problem.beta;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << e) {
        let support: Vec<usize> = (0..e).filter(|&i| mask & (1 << i) != 0).collect();
        let s = support.len();
        let candidate = if beta == 0.0 {
            // linear objective: only vertices of the simplex matter
            if s != 1 {
                continue;
            }
            let mut w = vec![0.0; e];
            w[support[0]] = total;
            Some(w)
        } else {
            // [2β Q_SS  -1; 1ᵀ 0] [w; λ] = [-d_S; total]
            let mut a = vec![vec![0.0; s + 1]; s + 1];
            let mut b = vec![0.0; s + 1];
            for (r, &i) in support.iter().enumerate() {
                for (c, &j) in support.iter().enumerate() {
                    a[r][c] = 2.0 * beta * q.get(i, j);
                }
                a[r][s] = -1.0;
                a[s][r] = 1.0;
                b[r] = -problem.distances[i];
            }
            b[s] = total;
            solve_dense(a, b).and_then(|sol| {
                if sol[..s].iter().any(|&w| w < -1e-12) {
                    return None;
                }
                let mut w = vec![0.0; e];
                for (k, &i) in support.iter().enumerate() {
                    w[i] = sol[k].max(0.0);
                }
                Some(w)
            })
        };
        if let Some(w) = candidate {
            best = best.min(problem.objective(&w));
        }
    }
    best
}

/// Random skeleton sequence with one actor.
pub fn random_sequence(joints: usize, frames: usize, label: usize, rng: &mut ChaCha8Rng) -> SkeletonSequence {
    let frames = (0..frames).map(|_| random_matrix(joints, 3, rng)).collect();
    SkeletonSequence::new(frames, 1, joints, Some(label), "random", format!("r{}", rng.random::<u32>())).unwrap()
}

/// Small network, operator and labelled batch for gradient checks.
pub struct TinySetup {
    pub model: GrGcn,
    pub op: ChebyOperator,
    pub batch: Vec<Sample>,
    pub labels: Vec<usize>,
}

pub fn tiny_setup(seed: u64, mode: ChebyMode, mixing: grgcn_core::chebynet::MixingSide) -> TinySetup {
    let mut r = rng(seed);
    let joints = 4;
    let classes = 3;
    let graph = random_graph(3 * joints, 0.2, &mut r);
    let normalized = grgcn_core::graph::laplacian_from_adjacency(&graph).normalized();
    let mut config = NetworkConfig::desk(3 * joints, classes);
    config.feature_dims = vec![4, 5];
    config.cheb_mode = mode;
    config.mixing = mixing;
    let mut model = GrGcn::new(config, seed).unwrap();
    // move off the unit-scale / zero-shift initialization
    for t in model.params.tensors_mut() {
        for v in t.as_mut_slice() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let op = ChebyOperator::new(&normalized, mode).unwrap();
    let batch: Vec<Sample> = (0..3)
        .map(|i| Sample::from_sequence(&random_sequence(joints, 7, i % classes, &mut r)).unwrap())
        .collect();
    let labels = batch.iter().map(|s| s.label.unwrap()).collect();
    TinySetup { model, op, batch, labels }
}

/// Train-mode loss with a fixed dropout stream.
pub fn train_loss(model: &GrGcn, op: &ChebyOperator, batch: &[Sample], labels: &[usize], dropout_seed: u64) -> f64 {
    let refs: Vec<&Sample> = batch.iter().collect();
    let trace = model.forward(op, &refs, Mode::Train, &mut rng(dropout_seed)).unwrap();
    GrGcn::loss(&trace, labels).unwrap()
}

pub fn analytic_grads(setup: &TinySetup, dropout_seed: u64) -> GrGcnParams {
    let refs: Vec<&Sample> = setup.batch.iter().collect();
    let trace = setup.model.forward(&setup.op, &refs, Mode::Train, &mut rng(dropout_seed)).unwrap();
    setup.model.backward(&setup.op, &trace, &setup.labels).unwrap()
}

/// Largest relative deviation between analytic gradients and central
/// differences over every scalar, per tensor name.
pub fn finite_difference_report(setup: &TinySetup, h: f64, dropout_seed: u64) -> Vec<(String, f64)> {
    let grads = analytic_grads(setup, dropout_seed);
    let names: Vec<String> = setup.model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut model = setup.model.clone();
    let mut report = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        let mut worst = 0.0f64;
        for k in 0..len {
            let orig = model.params.tensors()[ti].as_slice()[k];
            model.params.tensors_mut()[ti].as_mut_slice()[k] = orig + h;
            let up = train_loss(&model, &setup.op, &setup.batch, &setup.labels, dropout_seed);
            model.params.tensors_mut()[ti].as_mut_slice()[k] = orig - h;
            let down = train_loss(&model, &setup.op, &setup.batch, &setup.labels, dropout_seed);
            model.params.tensors_mut()[ti].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        report.push((name.clone(), worst));
    }
    report
}
