//! Weighted undirected graphs and their Laplacians.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix};

/// Symmetry tolerance for graphs built in memory.
pub const CONSTRUCTED_SYMMETRY_TOL: f64 = 1e-12;
/// Symmetry tolerance for graphs read back from text files.
pub const LOADED_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    /// Bones and salient non-physical pairs inside a frame.
    #[serde(rename = "Es")]
    StrongSpatial,
    #[serde(rename = "Ew")]
    WeakSpatial,
    /// Same joint in adjacent frames.
    #[serde(rename = "Ec")]
    CorrespondingTemporal,
    /// Joint to a neighbor of its correspondence in an adjacent frame.
    #[serde(rename = "En")]
    NeighborTemporal,
}

impl EdgeClass {
    pub fn code(self) -> &'static str {
        match self {
            EdgeClass::StrongSpatial => "Es",
            EdgeClass::WeakSpatial => "Ew",
            EdgeClass::CorrespondingTemporal => "Ec",
            EdgeClass::NeighborTemporal => "En",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "Es" => Some(EdgeClass::StrongSpatial),
            "Ew" => Some(EdgeClass::WeakSpatial),
            "Ec" => Some(EdgeClass::CorrespondingTemporal),
            "En" => Some(EdgeClass::NeighborTemporal),
            _ => None,
        }
    }

    pub fn is_strong(self) -> bool {
        matches!(self, EdgeClass::StrongSpatial | EdgeClass::CorrespondingTemporal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Matrix,
    edge_classes: BTreeMap<(usize, usize), EdgeClass>,
}

impl Graph {
    pub fn new(adjacency: Matrix) -> Result<Self> {
        Self::with_tolerance(adjacency, CONSTRUCTED_SYMMETRY_TOL)
    }

    /// Validates symmetry within `tol`, then symmetrizes exactly.
    pub fn with_tolerance(mut adjacency: Matrix, tol: f64) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        let n = adjacency.rows();
        let mut problems = Vec::new();
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                problems.push(format!("a[{i},{i}]={} (self loop)", adjacency.get(i, i)));
            }
            for j in 0..n {
                let a = adjacency.get(i, j);
                if a < 0.0 {
                    problems.push(format!("a[{i},{j}]={a} (negative)"));
                }
                if j > i && (a - adjacency.get(j, i)).abs() > tol {
                    problems.push(format!(
                        "a[{i},{j}]={a} != a[{j},{i}]={} (asymmetric)",
                        adjacency.get(j, i)
                    ));
                }
            }
        }
        if !problems.is_empty() {
            let shown: Vec<_> = problems.iter().take(8).cloned().collect();
            let more = problems.len().saturating_sub(shown.len());
            let mut msg = shown.join("; ");
            if more > 0 {
                msg.push_str(&format!("; and {more} more"));
            }
            return Err(Error::InvalidGraph(msg));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = adjacency.get(i, j);
                adjacency.set(j, i, v);
            }
        }
        Ok(Self {
            adjacency,
            edge_classes: BTreeMap::new(),
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = Matrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidGraph(format!("bad edge ({i},{j}) for n={n}")));
            }
            a.set(i, j, w);
            a.set(j, i, w);
        }
        Self::new(a)
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency.get(i, j)
    }

    /// Edges with positive weight as `(i, j, w)`, `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency.get(i, j);
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn edge_class(&self, i: usize, j: usize) -> Option<EdgeClass> {
        self.edge_classes.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn edge_classes(&self) -> &BTreeMap<(usize, usize), EdgeClass> {
        &self.edge_classes
    }

    pub fn set_edge_class(&mut self, i: usize, j: usize, class: EdgeClass) -> Result<()> {
        let key = (i.min(j), i.max(j));
        if key.1 >= self.n() || self.adjacency.get(key.0, key.1) <= 0.0 {
            return Err(Error::InvalidGraph(format!(
                "cannot classify non-edge ({}, {})",
                key.0, key.1
            )));
        }
        self.edge_classes.insert(key, class);
        Ok(())
    }

    pub fn to_file(&self, meta: serde_json::Value) -> GraphFile {
        let edges = self
            .edges()
            .into_iter()
            .map(|(i, j, w)| EdgeRecord {
                i,
                j,
                weight: w,
                class: self.edge_class(i, j),
            })
            .collect();
        GraphFile {
            n: self.n(),
            edges,
            meta,
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let n = file.n;
        let mut a = Matrix::zeros(n, n);
        for e in &file.edges {
            if e.i >= e.j || e.j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) must satisfy i < j < n={n}",
                    e.i, e.j
                )));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.i, e.j, e.weight
                )));
            }
            if a.get(e.i, e.j) != 0.0 {
                return Err(Error::InvalidGraph(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
            a.set(e.i, e.j, e.weight);
            a.set(e.j, e.i, e.weight);
        }
        let mut g = Self::with_tolerance(a, LOADED_SYMMETRY_TOL)?;
        for e in &file.edges {
            if let Some(c) = e.class {
                if e.weight > 0.0 {
                    g.edge_classes.insert((e.i, e.j), c);
                }
            }
        }
        Ok(g)
    }
}

/// One `[i, j, weight, class?]` entry of a graph file.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub class: Option<EdgeClass>,
}

impl Serialize for EdgeRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(if self.class.is_some() { 4 } else { 3 }))?;
        seq.serialize_element(&self.i)?;
        seq.serialize_element(&self.j)?;
        seq.serialize_element(&self.weight)?;
        if let Some(c) = self.class {
            seq.serialize_element(&c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for EdgeRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Classified(usize, usize, f64, Option<EdgeClass>),
            Plain(usize, usize, f64),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Classified(i, j, weight, class) => EdgeRecord { i, j, weight, class },
            Raw::Plain(i, j, weight) => EdgeRecord {
                i,
                j,
                weight,
                class: None,
            },
        })
    }
}

/// On-disk graph: `{"n": int, "edges": [[i, j, w, class?], ...], "meta": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl GraphFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    combinatorial: Matrix,
    degrees: Vec<f64>,
}

impl Laplacian {
    /// Wraps an existing `L`, checking symmetry, sign pattern and zero row sums.
    pub fn from_combinatorial(l: Matrix, sym_tol: f64) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::InvalidGraph("laplacian must be square".into()));
        }
        let asym = l.max_asymmetry()?;
        if asym > sym_tol {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        let n = l.rows();
        for i in 0..n {
            let row = l.row(i);
            let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-10 * scale {
                return Err(Error::InvalidGraph(format!("row {i} of L sums to {sum:e}")));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j && v > 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "off-diagonal L[{i},{j}]={v} is positive"
                    )));
                }
            }
        }
        let degrees = (0..n).map(|i| l.get(i, i)).collect();
        Ok(Self {
            combinatorial: l,
            degrees,
        })
    }

    pub fn n(&self) -> usize {
        self.combinatorial.rows()
    }

    pub fn combinatorial(&self) -> &Matrix {
        &self.combinatorial
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn normalized(&self) -> Matrix {
        normalize_laplacian(self)
    }

    /// `a_ij = -L_ij` for `i != j`.
    pub fn adjacency(&self) -> Matrix {
        let n = self.n();
        Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -self.combinatorial.get(i, j) })
    }
}

/// `L = D - A` with `d_ii = Σ_j a_ij`.
pub fn laplacian_from_adjacency(g: &Graph) -> Laplacian {
    let a = g.adjacency();
    let n = g.n();
    let degrees: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let mut l = a.scale(-1.0);
    for (i, d) in degrees.iter().enumerate() {
        l.set(i, i, *d);
    }
    Laplacian {
        combinatorial: l,
        degrees,
    }
}

/// `D^{-1/2} L D^{-1/2}`; rows and columns of isolated vertices are zero.
pub fn normalize_laplacian(l: &Laplacian) -> Matrix {
    let n = l.n();
    let inv_sqrt: Vec<f64> = l
        .degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * l.combinatorial.get(i, j) * inv_sqrt[j]);
    for i in 0..n {
        if l.degrees[i] > 0.0 {
            out.set(i, i, 1.0);
        }
        for j in (i + 1)..n {
            let v = out.get(i, j);
            out.set(j, i, v);
        }
    }
    out
}

fn check_signal_rows(l: &Laplacian, x: &Matrix, op: &'static str) -> Result<()> {
    if x.rows() != l.n() {
        return Err(Error::DimensionMismatch {
            op,
            left: l.combinatorial.shape(),
            right: x.shape(),
        });
    }
    Ok(())
}

/// `tr(xᵀ L x)`, the summed edge-weighted squared differences of `x`.
pub fn total_variation(l: &Laplacian, x: &Matrix) -> Result<f64> {
    check_signal_rows(l, x, "total_variation")?;
    let lx = matmul(&l.combinatorial, x)?;
    Ok(x.as_slice().iter().zip(lx.as_slice()).map(|(a, b)| a * b).sum())
}

/// `L x`; row `i` is `Σ_{j ∈ N(i)} a_ij (x_i - x_j)`.
pub fn variation_operator(l: &Laplacian, x: &Matrix) -> Result<Matrix> {
    check_signal_rows(l, x, "variation_operator")?;
    matmul(&l.combinatorial, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_vertex(w: f64) -> Graph {
        Graph::from_edges(2, &[(0, 1, w)]).unwrap()
    }

    #[test]
    fn empty_graph_has_zero_laplacian() {
        let g = Graph::new(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(*laplacian_from_adjacency(&g).combinatorial(), Matrix::zeros(3, 3));
    }

    #[test]
    fn single_edge_laplacian() {
        let l = laplacian_from_adjacency(&two_vertex(2.5));
        let expected = Matrix::from_rows(&[vec![2.5, -2.5], vec![-2.5, 2.5]]).unwrap();
        assert_eq!(*l.combinatorial(), expected);
        let norm = normalize_laplacian(&l);
        let expected = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert!(norm.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn isolated_vertex_normalizes_to_zero_row() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let norm = normalize_laplacian(&laplacian_from_adjacency(&g));
        for k in 0..3 {
            assert_eq!(norm.get(2, k), 0.0);
            assert_eq!(norm.get(k, 2), 0.0);
        }
        assert_eq!(norm.get(0, 0), 1.0);
    }

    #[test]
    fn validation_lists_offending_entries() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0, -1.0], vec![2.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]])
            .unwrap();
        let msg = Graph::new(a).unwrap_err().to_string();
        assert!(msg.contains("a[0,1]"), "{msg}");
        assert!(msg.contains("negative"), "{msg}");
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(Graph::new(a).unwrap_err().to_string().contains("self loop"));
    }

    #[test]
    fn total_variation_examples() {
        let l = laplacian_from_adjacency(&two_vertex(1.0));
        let x = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(total_variation(&l, &x).unwrap(), 1.0);
        let constant = Matrix::from_fn(2, 3, |_, j| j as f64 + 0.5);
        assert_eq!(total_variation(&l, &constant).unwrap(), 0.0);
        assert!(total_variation(&l, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn variation_operator_two_vertices() {
        let w = 3.0;
        let l = laplacian_from_adjacency(&two_vertex(w));
        let (a, b) = (1.5, -0.25);
        let x = Matrix::new(2, 1, vec![a, b]).unwrap();
        let y = variation_operator(&l, &x).unwrap();
        assert_eq!(y.as_slice(), &[w * (a - b), w * (b - a)]);
        assert!(variation_operator(&l, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn graph_file_round_trip_and_optional_class() {
        let mut g = Graph::from_edges(4, &[(0, 1, 5.0), (1, 2, 1.0), (2, 3, 0.125)]).unwrap();
        g.set_edge_class(1, 0, EdgeClass::StrongSpatial).unwrap();
        let file = g.to_file(serde_json::json!({"note": "x"}));
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("[0,1,5.0,\"Es\"]"), "{text}");
        assert!(text.contains("[1,2,1.0]"), "{text}");
        let back: GraphFile = serde_json::from_str(&text).unwrap();
        assert_eq!(Graph::from_file(&back).unwrap(), g);
        assert!(g.set_edge_class(0, 3, EdgeClass::WeakSpatial).is_err());
    }

    #[test]
    fn graph_file_rejects_bad_edges() {
        let bad: GraphFile = serde_json::from_str(r#"{"n":3,"edges":[[1,0,1.0]]}"#).unwrap();
        assert!(Graph::from_file(&bad).is_err());
        let bad: GraphFile = serde_json::from_str(r#"{"n":3,"edges":[[0,1,-1.0]]}"#).unwrap();
        assert!(Graph::from_file(&bad).is_err());
        let bad: GraphFile = serde_json::from_str(r#"{"n":2,"edges":[[0,2,1.0]]}"#).unwrap();
        assert!(Graph::from_file(&bad).is_err());
    }

    #[test]
    fn laplacian_from_combinatorial_checks_rows() {
        let bad = Matrix::from_rows(&[vec![1.0, -0.5], vec![-0.5, 1.0]]).unwrap();
        assert!(Laplacian::from_combinatorial(bad, 1e-12).is_err());
        let good = laplacian_from_adjacency(&two_vertex(2.0)).combinatorial().clone();
        let l = Laplacian::from_combinatorial(good, 1e-12).unwrap();
        assert_eq!(l.degrees(), &[2.0, 2.0]);
    }
}
