//! Python module `grgcn`: matrices, graphs, graph regression, synthetic
//! data and the Chebyshev network.

use std::path::PathBuf;

use grgcn_core::chebynet::{self, ChebyMode, ChebyOperator, GrGcn, LrSchedule, NetworkConfig, Sample, TrainConfig};
use grgcn_core::data::{self, SkeletonSequence, SyntheticSpec};
use grgcn_core::graph::{self, Graph, GraphFile};
use grgcn_core::numerics::{self, Matrix};
use grgcn_core::regression::{self, RegressionProblem, Template};
use grgcn_core::stgraph::{self, EdgeWeightScheme, GraphVariant, SkeletonTopology};
use grgcn_core::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match (&e, e.kind()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorKind::Numerical) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for grgcn_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Dense row-major matrix of floats.
#[pyclass(name = "Matrix", module = "grgcn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMatrix(Matrix);

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Matrix::from_rows(&rows).py().map(Self)
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> Self {
        Self(Matrix::zeros(rows, cols))
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.0.to_rows()
    }

    fn __getitem__(&self, idx: (usize, usize)) -> PyResult<f64> {
        let (r, c) = self.0.shape();
        if idx.0 >= r || idx.1 >= c {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("{idx:?} outside {r}x{c}")));
        }
        Ok(self.0.get(idx.0, idx.1))
    }

    fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    fn __add__(&self, other: PyRef<'_, Self>) -> PyResult<Self> {
        self.0.add(&other.0).py().map(Self)
    }

    fn __matmul__(&self, other: PyRef<'_, Self>) -> PyResult<Self> {
        numerics::matmul(&self.0, &other.0).py().map(Self)
    }

    fn trace(&self) -> PyResult<f64> {
        numerics::trace(&self.0).py()
    }

    fn frobenius_norm_sq(&self) -> f64 {
        numerics::frobenius_norm_sq(&self.0)
    }

    #[pyo3(signature = (tol = 1e-10, max_iter = 10_000))]
    fn spectral_radius(&self, tol: f64, max_iter: usize) -> PyResult<f64> {
        numerics::spectral_radius_symmetric(&self.0, tol, max_iter).py()
    }

    fn __repr__(&self) -> String {
        format!("Matrix({:?})", self.0.to_rows())
    }
}

/// Undirected weighted graph.
#[pyclass(name = "Graph", module = "grgcn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGraph(Graph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Graph::from_edges(n, &edges).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Graph::from_file(&GraphFile::load(&path).py()?).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.to_file(serde_json::json!({})).save(path).py()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    /// `(i, j, weight)` with `i < j`.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.0.edges()
    }

    fn adjacency(&self) -> PyMatrix {
        PyMatrix(self.0.adjacency().clone())
    }

    fn laplacian(&self) -> PyMatrix {
        PyMatrix(graph::laplacian_from_adjacency(&self.0).combinatorial().clone())
    }

    fn normalized_laplacian(&self) -> PyMatrix {
        PyMatrix(graph::laplacian_from_adjacency(&self.0).normalized())
    }

    fn total_variation(&self, x: PyRef<'_, PyMatrix>) -> PyResult<f64> {
        graph::total_variation(&graph::laplacian_from_adjacency(&self.0), &x.0).py()
    }

    fn variation_operator(&self, x: PyRef<'_, PyMatrix>) -> PyResult<PyMatrix> {
        graph::variation_operator(&graph::laplacian_from_adjacency(&self.0), &x.0).py().map(PyMatrix)
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.0.n(), self.0.edges().len())
    }
}

/// Skeleton template graph over three consecutive frames.
#[pyfunction]
#[pyo3(signature = (variant = "complete", w1 = 5.0, w2 = 1.0, hops = 1, topology = None))]
fn build_template(variant: &str, w1: f64, w2: f64, hops: usize, topology: Option<PathBuf>) -> PyResult<PyGraph> {
    let topo = match topology {
        Some(p) => SkeletonTopology::load(p).py()?,
        None => SkeletonTopology::toy15(),
    };
    let scheme = EdgeWeightScheme::new(w1, w2).py()?;
    let st = stgraph::build_template(&topo, &scheme, parse::<GraphVariant>(variant)?, hops).py()?;
    Ok(PyGraph(st.into_graph()))
}

/// Learns edge weights for one `V x channels` observation. Returns a dict
/// with `edges`, `weights`, `objective`, `iterations` and `converged`.
#[pyfunction]
#[pyo3(signature = (coords, edges = None, beta = regression::DEFAULT_BETA, tol = regression::DEFAULT_TOL, max_iter = regression::DEFAULT_MAX_ITER))]
fn learn_weights<'py>(
    py: Python<'py>,
    coords: PyRef<'_, PyMatrix>,
    edges: Option<Vec<(usize, usize)>>,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let template = match &edges {
        Some(e) => Template::Edges(e),
        None => Template::Complete,
    };
    let problem = RegressionProblem::from_coordinates(&coords.0, template, beta).py()?;
    let sol = regression::solve(&problem, tol, max_iter).py()?;
    let out = PyDict::new(py);
    out.set_item("edges", problem.candidate_edges.clone())?;
    out.set_item("weights", sol.weights)?;
    out.set_item("objective", sol.objective)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("converged", sol.converged)?;
    Ok(out)
}

/// `[T_0(S) x, .., T_{order-1}(S) x]` for a normalized Laplacian.
#[pyfunction]
#[pyo3(signature = (normalized, x, order, mode = "rescaled"))]
fn chebyshev_basis(
    normalized: PyRef<'_, PyMatrix>,
    x: PyRef<'_, PyMatrix>,
    order: usize,
    mode: &str,
) -> PyResult<Vec<PyMatrix>> {
    let basis = chebynet::chebyshev_basis(&normalized.0, &x.0, order, parse::<ChebyMode>(mode)?).py()?;
    Ok(basis.into_iter().map(PyMatrix).collect())
}

/// Skeleton sequence: `frames[t]` is `(actors * joints) x 3`.
#[pyclass(name = "Sequence", module = "grgcn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySequence(SkeletonSequence);

#[pymethods]
impl PySequence {
    #[new]
    #[pyo3(signature = (frames, joints, actors = 1, label = None, source_id = "python"))]
    fn new(frames: Vec<PyRef<'_, PyMatrix>>, joints: usize, actors: usize, label: Option<usize>, source_id: &str) -> PyResult<Self> {
        let frames = frames.iter().map(|f| f.0.clone()).collect();
        SkeletonSequence::new(frames, actors, joints, label, "python", source_id).py().map(Self)
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.0.label
    }

    #[getter]
    fn source_id(&self) -> String {
        self.0.source_id.clone()
    }

    #[getter]
    fn joints(&self) -> usize {
        self.0.joints()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn frames(&self) -> Vec<PyMatrix> {
        self.0.frames().iter().cloned().map(PyMatrix).collect()
    }
}

fn split_dict<'py>(py: Python<'py>, split: data::DatasetSplit) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("classes", split.classes)?;
    out.set_item("train", split.train.into_iter().map(PySequence).collect::<Vec<_>>())?;
    out.set_item("test", split.test.into_iter().map(PySequence).collect::<Vec<_>>())?;
    Ok(out)
}

/// Synthetic 15-joint action dataset as `{"classes", "train", "test"}`.
#[pyfunction]
#[pyo3(signature = (classes = 4, per_class = 75, frames = 32, noise = 0.02, test_every = 3, seed = 7))]
fn generate_synthetic(
    py: Python<'_>,
    classes: usize,
    per_class: usize,
    frames: usize,
    noise: f64,
    test_every: usize,
    seed: u64,
) -> PyResult<Bound<'_, PyDict>> {
    let spec = SyntheticSpec { classes, per_class, joints: 15, frames, noise, seed, test_every };
    split_dict(py, data::generate_synthetic(&spec).py()?)
}

/// Reads a dataset directory written by `grgcn generate`.
#[pyfunction]
fn load_dataset(py: Python<'_>, dir: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    split_dict(py, data::load_dataset(dir).py()?)
}

/// Chebyshev graph network.
#[pyclass(name = "Model", module = "grgcn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel(GrGcn);

fn samples(seqs: &[PyRef<'_, PySequence>]) -> PyResult<Vec<Sample>> {
    seqs.iter().map(|s| Sample::from_sequence(&s.0).py()).collect()
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (vertices, classes, seed = 0, features = vec![16, 32], order = 4, mode = "rescaled", dropout = 0.5))]
    fn new(vertices: usize, classes: usize, seed: u64, features: Vec<usize>, order: usize, mode: &str, dropout: f64) -> PyResult<Self> {
        let config = NetworkConfig {
            feature_dims: features,
            cheb_order: order,
            cheb_mode: parse(mode)?,
            dropout,
            ..NetworkConfig::desk(vertices, classes)
        };
        GrGcn::new(config, seed).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        chebynet::load_checkpoint(path).py()?.to_model().py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        chebynet::save_checkpoint(&self.0, serde_json::json!({}), path).py()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.0.params.num_scalars()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.config().classes
    }

    /// Class probabilities for one sequence.
    fn predict(&self, normalized: PyRef<'_, PyMatrix>, sequence: PyRef<'_, PySequence>) -> PyResult<Vec<f64>> {
        let op = ChebyOperator::new(&normalized.0, self.0.config().cheb_mode).py()?;
        self.0.predict(&op, &Sample::from_sequence(&sequence.0).py()?).py()
    }

    /// Trains in place; returns the per-epoch mean losses.
    #[pyo3(signature = (normalized, sequences, epochs = 12, batch_size = 16, lr = 0.01, lr_drop_epoch = 10, seed = 0))]
    fn fit(
        &mut self,
        normalized: PyRef<'_, PyMatrix>,
        sequences: Vec<PyRef<'_, PySequence>>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        lr_drop_epoch: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let op = ChebyOperator::new(&normalized.0, self.0.config().cheb_mode).py()?;
        let config = TrainConfig {
            epochs,
            batch_size,
            schedule: LrSchedule { initial: lr, drop_epoch: lr_drop_epoch, factor: 0.1 },
            adam: Default::default(),
            seed,
        };
        let (model, history) = chebynet::train(self.0.clone(), &op, &samples(&sequences)?, &config, |_| {}).py()?;
        self.0 = model;
        Ok(history.into_iter().map(|e| e.mean_loss).collect())
    }

    /// Fraction of correctly classified labelled sequences.
    fn accuracy(&self, normalized: PyRef<'_, PyMatrix>, sequences: Vec<PyRef<'_, PySequence>>) -> PyResult<f64> {
        let op = ChebyOperator::new(&normalized.0, self.0.config().cheb_mode).py()?;
        let samples = samples(&sequences)?;
        let predicted = chebynet::predict_all(&self.0, &op, &samples).py()?;
        let hits = predicted.iter().zip(&samples).filter(|(p, s)| s.label == Some(**p)).count();
        Ok(hits as f64 / samples.len().max(1) as f64)
    }
}

#[pymodule]
fn grgcn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(build_template, m)?)?;
    m.add_function(wrap_pyfunction!(learn_weights, m)?)?;
    m.add_function(wrap_pyfunction!(chebyshev_basis, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    Ok(())
}
