//! Laplacian learning by constrained regression on one spatio-temporal
//! observation, and aggregation of many observations into a common graph.
//!
//! The Laplacian is parameterized by edge weights over a candidate support:
//! `L(w) = Σ_e w_e (δ_i - δ_j)(δ_i - δ_j)ᵀ`. Symmetry, zero row sums and
//! non-positive off-diagonals then hold by construction, and the problem
//!
//! ```text
//! min_L tr(xᵀ L x) + β ‖L‖_F²   s.t. tr(L) = V, L symmetric, L_ij ≤ 0, L 1 = 0
//! ```
//!
//! becomes `min_w dᵀw + β (Σ_v deg_v(w)² + 2 Σ_e w_e²)` over the scaled
//! simplex `{w ≥ 0, Σ_e w_e = V / 2}`, where `d_e = ‖x_i - x_j‖²`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeClass, Laplacian};
use crate::numerics::{spectral_radius_symmetric, Matrix};
use crate::stgraph::{BlockLayout, EdgeOrbit, SpatioTemporalFrame};

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 20_000;
pub const DEFAULT_STRONG_QUANTILE: f64 = 0.8;
pub const DEFAULT_WEAK_QUANTILE: f64 = 0.4;

/// Candidate support for the learned edges.
#[derive(Debug, Clone, Copy)]
pub enum Template<'a> {
    Edges(&'a [(usize, usize)]),
    /// Every vertex pair.
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionProblem {
    pub num_vertices: usize,
    pub candidate_edges: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    pub beta: f64,
    pub trace_target: f64,
}

impl RegressionProblem {
    pub fn new(
        num_vertices: usize,
        candidate_edges: Vec<(usize, usize)>,
        distances: Vec<f64>,
        beta: f64,
        trace_target: f64,
    ) -> Result<Self> {
        let p = Self {
            num_vertices,
            candidate_edges,
            distances,
            beta,
            trace_target,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds the problem for a `V x channels` coordinate matrix.
    pub fn from_coordinates(coords: &Matrix, template: Template<'_>, beta: f64) -> Result<Self> {
        if !coords.is_finite() {
            return Err(Error::NonFinite {
                context: "observation coordinates".into(),
            });
        }
        let v = coords.rows();
        let edges: Vec<(usize, usize)> = match template {
            Template::Edges(e) => e.to_vec(),
            Template::Complete => (0..v).flat_map(|i| ((i + 1)..v).map(move |j| (i, j))).collect(),
        };
        if edges.is_empty() {
            return Err(Error::InvalidProblem("candidate template is empty".into()));
        }
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= v || j >= v) {
            return Err(Error::InvalidProblem(format!(
                "candidate edge ({i},{j}) out of range for {v} vertices"
            )));
        }
        let distances = edges
            .iter()
            .map(|&(i, j)| {
                coords
                    .row(i)
                    .iter()
                    .zip(coords.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        Self::new(v, edges, distances, beta, v as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.candidate_edges.is_empty() {
            return bad("candidate template is empty".into());
        }
        if self.distances.len() != self.candidate_edges.len() {
            return bad(format!(
                "{} distances for {} edges",
                self.distances.len(),
                self.candidate_edges.len()
            ));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.trace_target.is_finite() && self.trace_target > 0.0) {
            return bad(format!("trace target must be > 0, got {}", self.trace_target));
        }
        if let Some(d) = self.distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return bad(format!("distance {d} is not a finite non-negative number"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &self.candidate_edges {
            if i >= j || j >= self.num_vertices {
                return bad(format!(
                    "candidate edge ({i},{j}) must satisfy i < j < {}",
                    self.num_vertices
                ));
            }
            if !seen.insert((i, j)) {
                return bad(format!("candidate edge ({i},{j}) repeated"));
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.candidate_edges.len()
    }

    /// Weighted degree of every vertex, accumulated in edge order.
    pub fn degrees(&self, w: &[f64]) -> Vec<f64> {
        let mut deg = vec![0.0; self.num_vertices];
        for (&(i, j), &we) in self.candidate_edges.iter().zip(w) {
            deg[i] += we;
            deg[j] += we;
        }
        deg
    }

    /// `dᵀw + β ‖L(w)‖_F²`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let data: f64 = self.distances.iter().zip(w).map(|(d, x)| d * x).sum();
        if self.beta == 0.0 {
            return data;
        }
        let deg = self.degrees(w);
        let diag: f64 = deg.iter().map(|d| d * d).sum();
        let off: f64 = w.iter().map(|x| x * x).sum();
        data + self.beta * (diag + 2.0 * off)
    }

    /// `d + 2β Q w` with `(Q w)_e = deg_i + deg_j + 2 w_e`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        if self.beta == 0.0 {
            return self.distances.clone();
        }
        let deg = self.degrees(w);
        self.candidate_edges
            .iter()
            .zip(&self.distances)
            .zip(w)
            .map(|((&(i, j), d), x)| d + 2.0 * self.beta * (deg[i] + deg[j] + 2.0 * x))
            .collect()
    }

    /// Curvature matrix `Q` of the Frobenius term; `Q_ee'` counts shared endpoints.
    pub fn curvature(&self) -> Matrix {
        let e = self.num_edges();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.num_vertices];
        for (k, &(i, j)) in self.candidate_edges.iter().enumerate() {
            incident[i].push(k);
            incident[j].push(k);
        }
        let mut q = Matrix::zeros(e, e);
        for list in &incident {
            for &a in list {
                for &b in list {
                    q.add_at(a, b, 1.0);
                }
            }
        }
        for k in 0..e {
            q.add_at(k, k, 2.0);
        }
        q
    }

    /// Dense `L(w)`.
    pub fn laplacian_matrix(&self, w: &[f64]) -> Matrix {
        let mut l = Matrix::zeros(self.num_vertices, self.num_vertices);
        for (&(i, j), &we) in self.candidate_edges.iter().zip(w) {
            l.add_at(i, i, we);
            l.add_at(j, j, we);
            l.set(i, j, -we);
            l.set(j, i, -we);
        }
        l
    }
}

/// Candidate problem for one observation, with `tr(L) = 3n`.
pub fn build_problem(
    frame: &SpatioTemporalFrame,
    actor: usize,
    template: Template<'_>,
    beta: f64,
) -> Result<RegressionProblem> {
    let coords = frame
        .actors()
        .get(actor)
        .ok_or_else(|| Error::InvalidArgument(format!("frame has no actor {actor}")))?;
    if coords.cols() != 3 {
        return Err(Error::InvalidData(format!(
            "expected 3 coordinate channels, got {}",
            coords.cols()
        )));
    }
    RegressionProblem::from_coordinates(coords, template, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub beta: f64,
    pub trace_target: f64,
}

impl SolverReport {
    pub fn new(problem: &RegressionProblem, sol: &RegressionSolution) -> Self {
        Self {
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
            beta: problem.beta,
            trace_target: problem.trace_target,
        }
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = total}` by sort and threshold.
/// Ties in the sort are broken by index so the result is deterministic.
pub fn project_onto_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        cumulative += v[idx];
        let candidate = (cumulative - total) / (k + 1) as f64;
        if v[idx] - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

const MAX_HALVINGS: usize = 60;

/// Projected gradient on the scaled simplex.
///
/// With `β > 0` the initial step is `1 / (2β ρ(Q) + ε)`; with `β = 0` the
/// objective is linear and the step starts at `V / spread(d)`, which moves
/// the whole mass in one step once distances separate. Either way the step
/// is halved until the sufficient-decrease condition holds. Iteration stops
/// when the relative objective decrease falls below `tol`.
pub fn solve(problem: &RegressionProblem, tol: f64, max_iter: usize) -> Result<RegressionSolution> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let e = problem.num_edges();
    let total = problem.trace_target / 2.0;
    let mut w = vec![total / e as f64; e];
    let mut f = problem.objective(&w);

    let initial_step = if problem.beta > 0.0 {
        let q = problem.curvature();
        let rho = match spectral_radius_symmetric(&q, 1e-10, 10_000) {
            Ok(r) => r,
            // Gershgorin bound; Q is entrywise non-negative.
            Err(Error::NoConvergence { .. }) => (0..e).map(|k| q.row(k).iter().sum::<f64>()).fold(0.0, f64::max),
            Err(other) => return Err(other),
        };
        1.0 / (2.0 * problem.beta * rho + 1e-12)
    } else {
        let (lo, hi) = problem
            .distances
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if hi - lo == 0.0 {
            // Linear objective constant on the feasible set.
            return Ok(RegressionSolution {
                weights: w,
                objective: f,
                iterations: 0,
                converged: true,
            });
        }
        2.0 * total / (hi - lo)
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let g = problem.gradient(&w);
        let mut step = initial_step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> =
                project_onto_simplex(&w.iter().zip(&g).map(|(x, gx)| x - step * gx).collect::<Vec<_>>(), total);
            let f_trial = problem.objective(&trial);
            let mut linear = 0.0;
            let mut sq = 0.0;
            for ((t, x), gx) in trial.iter().zip(&w).zip(&g) {
                linear += gx * (t - x);
                sq += (t - x) * (t - x);
            }
            let bound = f + linear + sq / (2.0 * step);
            if f_trial <= bound + 1e-14 * f.abs().max(1.0) {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, f_trial)) = accepted else {
            converged = true;
            break;
        };
        if f_trial > f {
            // Rounding-level increase: the iterate is stationary.
            converged = true;
            break;
        }
        debug_assert!(f_trial <= f, "objective increased: {f} -> {f_trial}");
        let decrease = f - f_trial;
        w = trial;
        f = f_trial;
        if decrease <= tol * f.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(RegressionSolution {
        weights: w,
        objective: f,
        iterations,
        converged,
    })
}

/// Reconstructs `L` from solved weights and validates it.
pub fn solution_to_laplacian(problem: &RegressionProblem, sol: &RegressionSolution) -> Result<Laplacian> {
    if sol.weights.len() != problem.num_edges() {
        return Err(Error::InvalidProblem(format!(
            "{} weights for {} candidate edges",
            sol.weights.len(),
            problem.num_edges()
        )));
    }
    let mut w = sol.weights.clone();
    for (k, x) in w.iter_mut().enumerate() {
        if !x.is_finite() || *x < -1e-12 {
            return Err(Error::InvalidProblem(format!("edge {k} has negative weight {x}")));
        }
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let l = problem.laplacian_matrix(&w);
    let tr: f64 = (0..l.rows()).map(|i| l.get(i, i)).sum();
    if (tr - problem.trace_target).abs() > 1e-8 {
        return Err(Error::InvalidProblem(format!(
            "trace {tr} violates the target {}",
            problem.trace_target
        )));
    }
    Laplacian::from_combinatorial(l, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonGraphStats {
    pub mean_weights: Vec<f64>,
    pub observation_count: usize,
    pub strong_quantile: f64,
    pub weak_quantile: f64,
    pub strong_threshold: f64,
    pub weak_threshold: f64,
}

/// A kept edge of the common graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedEdge {
    pub i: usize,
    pub j: usize,
    pub class: EdgeClass,
    pub mean_weight: f64,
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Averages per-edge weights over observations and classifies edges.
///
/// Classification works on edge orbits: every copy of a joint pair across
/// the three frames (or across both frame pairs, for temporal edges) shares
/// one score, the mean of its members' mean weights, so the result keeps
/// identical intra-frame and inter-frame blocks. Orbits scoring at or above
/// the `strong_q` quantile are strong, those at or above the `weak_q`
/// quantile weak, the rest pruned. If all scores are equal every edge is
/// strong.
pub fn aggregate_common(
    edges: &[(usize, usize)],
    solutions: &[RegressionSolution],
    layout: &BlockLayout,
    strong_q: f64,
    weak_q: f64,
) -> Result<(CommonGraphStats, Vec<ClassifiedEdge>)> {
    if solutions.is_empty() {
        return Err(Error::InvalidArgument("no solutions to aggregate".into()));
    }
    if !(0.0 < weak_q && weak_q < strong_q && strong_q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantiles need 0 < weak ({weak_q}) < strong ({strong_q}) <= 1"
        )));
    }
    if edges.is_empty() {
        return Err(Error::InvalidArgument("empty candidate template".into()));
    }
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| j >= layout.vertices() || i >= j) {
        return Err(Error::InvalidArgument(format!(
            "edge ({i},{j}) does not fit a {}-vertex layout",
            layout.vertices()
        )));
    }
    if let Some(s) = solutions.iter().find(|s| s.weights.len() != edges.len()) {
        return Err(Error::InvalidArgument(format!(
            "solution has {} weights, template has {} edges",
            s.weights.len(),
            edges.len()
        )));
    }
    let m = solutions.len();
    let mut sums = vec![0.0; edges.len()];
    for sol in solutions {
        for (s, w) in sums.iter_mut().zip(&sol.weights) {
            *s += w;
        }
    }
    let mean_weights: Vec<f64> = sums.iter().map(|s| s / m as f64).collect();

    let mut orbits: BTreeMap<EdgeOrbit, (f64, usize)> = BTreeMap::new();
    for (&(i, j), &mean) in edges.iter().zip(&mean_weights) {
        let entry = orbits.entry(layout.orbit(i, j)).or_insert((0.0, 0));
        entry.0 += mean;
        entry.1 += 1;
    }
    let scores: BTreeMap<EdgeOrbit, f64> = orbits.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let strong_threshold = quantile_sorted(&sorted, strong_q);
    let weak_threshold = quantile_sorted(&sorted, weak_q);
    let all_equal = sorted.first() == sorted.last();

    let classified = edges
        .iter()
        .zip(&mean_weights)
        .filter_map(|(&(i, j), &mean)| {
            let score = scores[&layout.orbit(i, j)];
            let strong = all_equal || score >= strong_threshold;
            if strong || score >= weak_threshold {
                Some(ClassifiedEdge {
                    i,
                    j,
                    class: layout.class_for(i, j, strong),
                    mean_weight: mean,
                })
            } else {
                None
            }
        })
        .collect();
    Ok((
        CommonGraphStats {
            mean_weights,
            observation_count: m,
            strong_quantile: strong_q,
            weak_quantile: weak_q,
            strong_threshold,
            weak_threshold,
        },
        classified,
    ))
}
