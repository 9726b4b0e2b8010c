//! Chebyshev graph convolution `y = ReLU(Σ_k T_k(S) x W_k + b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};

/// Argument of the Chebyshev polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChebyMode {
    /// `S = ℒ`, spectrum in `[0, 2]`.
    Literal,
    /// `S = ℒ - I`, spectrum in `[-1, 1]`.
    #[default]
    Rescaled,
}

impl std::str::FromStr for ChebyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ChebyMode::Literal),
            "rescaled" => Ok(ChebyMode::Rescaled),
            other => Err(Error::InvalidArgument(format!(
                "unknown chebyshev mode {other:?} (expected literal|rescaled)"
            ))),
        }
    }
}

/// Which side the learned matrices `W_k` multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MixingSide {
    /// `T_k(S) x W_k` with `W_k ∈ R^{F1 x F2}`.
    #[default]
    Feature,
    /// `W_k T_k(S) x` with `W_k ∈ R^{V x V}`; features pass through.
    Vertex,
}

impl std::str::FromStr for MixingSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(MixingSide::Feature),
            "vertex" => Ok(MixingSide::Vertex),
            other => Err(Error::InvalidArgument(format!(
                "unknown mixing side {other:?} (expected feature|vertex)"
            ))),
        }
    }
}

/// The recurrence operator `S` derived from a normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyOperator {
    s: Matrix,
    mode: ChebyMode,
}

impl ChebyOperator {
    pub fn new(normalized_laplacian: &Matrix, mode: ChebyMode) -> Result<Self> {
        normalized_laplacian.require_square("ChebyOperator::new")?;
        let mut s = normalized_laplacian.clone();
        if mode == ChebyMode::Rescaled {
            for i in 0..s.rows() {
                s.add_at(i, i, -1.0);
            }
        }
        Ok(Self { s, mode })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }

    pub fn mode(&self) -> ChebyMode {
        self.mode
    }

    pub fn vertices(&self) -> usize {
        self.s.rows()
    }

    /// `[T_0(S) x, ..., T_{K-1}(S) x]` by the three-term recurrence.
    pub fn basis(&self, x: &Matrix, order: usize) -> Result<Vec<Matrix>> {
        if order == 0 {
            return Err(Error::InvalidArgument("chebyshev order K must be >= 1".into()));
        }
        if x.rows() != self.s.rows() {
            return Err(Error::DimensionMismatch {
                op: "chebyshev_basis",
                left: self.s.shape(),
                right: x.shape(),
            });
        }
        let mut out = Vec::with_capacity(order);
        out.push(x.clone());
        if order > 1 {
            out.push(matmul(&self.s, x)?);
        }
        for k in 2..order {
            let mut next = matmul(&self.s, &out[k - 1])?.scale(2.0);
            next.axpy(-1.0, &out[k - 2])?;
            out.push(next);
        }
        if let Some(k) = out.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("chebyshev term T_{k}(S) x"),
            });
        }
        Ok(out)
    }

    /// `Σ_k T_k(S) g_k` by Clenshaw's recurrence. Since `S` is symmetric
    /// this is also the adjoint of [`ChebyOperator::basis`].
    pub fn combine(&self, terms: &[Matrix]) -> Result<Matrix> {
        let k = terms.len();
        match k {
            0 => Err(Error::InvalidArgument("no terms to combine".into())),
            1 => Ok(terms[0].clone()),
            _ => {
                let (rows, cols) = terms[0].shape();
                let mut b1 = Matrix::zeros(rows, cols);
                let mut b2 = Matrix::zeros(rows, cols);
                for term in terms[1..].iter().rev() {
                    let mut b0 = matmul(&self.s, &b1)?.scale(2.0);
                    b0.axpy(-1.0, &b2)?;
                    b0.axpy(1.0, term)?;
                    b2 = b1;
                    b1 = b0;
                }
                let mut out = matmul(&self.s, &b1)?;
                out.axpy(-1.0, &b2)?;
                out.axpy(1.0, &terms[0])?;
                Ok(out)
            }
        }
    }
}

/// Chebyshev basis for a normalized Laplacian in the given mode.
pub fn chebyshev_basis(normalized_laplacian: &Matrix, x: &Matrix, order: usize, mode: ChebyMode) -> Result<Vec<Matrix>> {
    ChebyOperator::new(normalized_laplacian, mode)?.basis(x, order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyLayerParams {
    pub weights: Vec<Matrix>,
    pub bias: Matrix,
    pub mode: ChebyMode,
    pub mixing: MixingSide,
}

impl ChebyLayerParams {
    pub fn zeros(order: usize, f_in: usize, f_out: usize, mode: ChebyMode, mixing: MixingSide) -> Self {
        Self {
            weights: vec![Matrix::zeros(f_in, f_out); order],
            bias: Matrix::zeros(1, f_out),
            mode,
            mixing,
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .weights
            .first()
            .ok_or_else(|| Error::InvalidModel("chebyshev layer needs K >= 1".into()))?;
        if self.weights.iter().any(|w| w.shape() != first.shape()) {
            return Err(Error::InvalidModel("chebyshev weights differ in shape".into()));
        }
        if self.mixing == MixingSide::Vertex && !first.is_square() {
            return Err(Error::InvalidModel("vertex mixing needs square V x V weights".into()));
        }
        let f_out = match self.mixing {
            MixingSide::Feature => first.cols(),
            MixingSide::Vertex => self.bias.cols(),
        };
        if self.bias.shape() != (1, f_out) {
            return Err(Error::InvalidModel(format!(
                "bias shape {:?} does not match output width {f_out}",
                self.bias.shape()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let w = &self.weights[0];
        let ok = match self.mixing {
            MixingSide::Feature => x.cols() == w.rows(),
            MixingSide::Vertex => x.rows() == w.cols() && x.cols() == self.bias.cols(),
        };
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "graph_conv",
                left: w.shape(),
                right: x.shape(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GraphConvCache {
    basis: Vec<Matrix>,
    active: Vec<bool>,
}

pub fn graph_conv_forward_cached(
    params: &ChebyLayerParams,
    op: &ChebyOperator,
    x: &Matrix,
) -> Result<(Matrix, GraphConvCache)> {
    params.validate()?;
    if op.mode() != params.mode {
        return Err(Error::InvalidModel(format!(
            "layer expects {:?} chebyshev operator, got {:?}",
            params.mode,
            op.mode()
        )));
    }
    params.check_input(x)?;
    let basis = op.basis(x, params.order())?;
    let mut z = match params.mixing {
        MixingSide::Feature => {
            let mut acc = matmul(&basis[0], &params.weights[0])?;
            for (b, w) in basis.iter().zip(&params.weights).skip(1) {
                acc.axpy(1.0, &matmul(b, w)?)?;
            }
            acc
        }
        MixingSide::Vertex => {
            let mut acc = matmul(&params.weights[0], &basis[0])?;
            for (b, w) in basis.iter().zip(&params.weights).skip(1) {
                acc.axpy(1.0, &matmul(w, b)?)?;
            }
            acc
        }
    };
    let bias = params.bias.row(0);
    let mut active = Vec::with_capacity(z.rows() * z.cols());
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
            *v += b;
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            active.push(on);
        }
    }
    Ok((z, GraphConvCache { basis, active }))
}

pub fn graph_conv_backward_cached(
    params: &ChebyLayerParams,
    op: &ChebyOperator,
    cache: &GraphConvCache,
    upstream: &Matrix,
) -> Result<(Matrix, Vec<Matrix>, Matrix)> {
    let mut gz = upstream.clone();
    if gz.as_slice().len() != cache.active.len() {
        return Err(Error::DimensionMismatch {
            op: "graph_conv_backward",
            left: (cache.basis[0].rows(), cache.active.len() / cache.basis[0].rows().max(1)),
            right: upstream.shape(),
        });
    }
    for (g, on) in gz.as_mut_slice().iter_mut().zip(&cache.active) {
        if !on {
            *g = 0.0;
        }
    }
    let mut grad_b = Matrix::zeros(1, gz.cols());
    for r in 0..gz.rows() {
        for (acc, g) in grad_b.row_mut(0).iter_mut().zip(gz.row(r)) {
            *acc += g;
        }
    }
    let mut grad_w = Vec::with_capacity(params.order());
    let mut grad_terms = Vec::with_capacity(params.order());
    for (b, w) in cache.basis.iter().zip(&params.weights) {
        match params.mixing {
            MixingSide::Feature => {
                grad_w.push(matmul_tn(b, &gz)?);
                grad_terms.push(matmul_nt(&gz, w)?);
            }
            MixingSide::Vertex => {
                grad_w.push(matmul_nt(&gz, b)?);
                grad_terms.push(matmul_tn(w, &gz)?);
            }
        }
    }
    let grad_x = op.combine(&grad_terms)?;
    Ok((grad_x, grad_w, grad_b))
}

/// Forward pass of one Chebyshev graph-convolution layer.
pub fn graph_conv_forward(
    params: &ChebyLayerParams,
    normalized_laplacian: &Matrix,
    x: &Matrix,
) -> Result<Matrix> {
    let op = ChebyOperator::new(normalized_laplacian, params.mode)?;
    Ok(graph_conv_forward_cached(params, &op, x)?.0)
}

/// Returns `(grad_x, grad_W_k, grad_b)` for `upstream = ∂loss/∂y`.
pub fn graph_conv_backward(
    params: &ChebyLayerParams,
    normalized_laplacian: &Matrix,
    x: &Matrix,
    upstream: &Matrix,
) -> Result<(Matrix, Vec<Matrix>, Matrix)> {
    let op = ChebyOperator::new(normalized_laplacian, params.mode)?;
    let (y, cache) = graph_conv_forward_cached(params, &op, x)?;
    if y.shape() != upstream.shape() {
        return Err(Error::DimensionMismatch {
            op: "graph_conv_backward",
            left: y.shape(),
            right: upstream.shape(),
        });
    }
    graph_conv_backward_cached(params, &op, &cache, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian_from_adjacency, Graph};

    fn path_graph_normalized(n: usize) -> Matrix {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0 + i as f64)).collect();
        laplacian_from_adjacency(&Graph::from_edges(n, &edges).unwrap()).normalized()
    }

    #[test]
    fn low_orders() {
        let l = path_graph_normalized(4);
        let x = Matrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64);
        let b = chebyshev_basis(&l, &x, 1, ChebyMode::Literal).unwrap();
        assert_eq!(b, vec![x.clone()]);
        let b = chebyshev_basis(&l, &x, 2, ChebyMode::Literal).unwrap();
        assert_eq!(b[1], matmul(&l, &x).unwrap());
        assert!(chebyshev_basis(&l, &x, 0, ChebyMode::Literal).is_err());
        assert!(chebyshev_basis(&l, &Matrix::zeros(3, 2), 2, ChebyMode::Literal).is_err());
    }

    #[test]
    fn overflow_is_reported_with_term() {
        let big = Matrix::diag(&[1e200, 1e200]);
        let x = Matrix::new(2, 1, vec![1e200, 1.0]).unwrap();
        let err = ChebyOperator::new(&big, ChebyMode::Literal).unwrap().basis(&x, 3).unwrap_err();
        assert!(err.to_string().contains("T_1"), "{err}");
    }

    #[test]
    fn clenshaw_matches_explicit_sum() {
        let l = path_graph_normalized(5);
        let op = ChebyOperator::new(&l, ChebyMode::Rescaled).unwrap();
        let terms: Vec<Matrix> = (0..4).map(|k| Matrix::from_fn(5, 3, |i, j| ((k * 7 + i * 3 + j) as f64).cos())).collect();
        let fast = op.combine(&terms).unwrap();
        let mut slow = Matrix::zeros(5, 3);
        for (k, t) in terms.iter().enumerate() {
            let basis = op.basis(t, k + 1).unwrap();
            slow.axpy(1.0, &basis[k]).unwrap();
        }
        assert!(fast.sub(&slow).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let l = path_graph_normalized(4);
        let params = ChebyLayerParams::zeros(3, 2, 5, ChebyMode::Rescaled, MixingSide::Feature);
        let x = Matrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64));
        let y = graph_conv_forward(&params, &l, &x).unwrap();
        assert_eq!(y, Matrix::zeros(4, 5));
    }

    #[test]
    fn identity_weight_passes_nonnegative_input() {
        let l = path_graph_normalized(4);
        let params = ChebyLayerParams {
            weights: vec![Matrix::identity(3)],
            bias: Matrix::zeros(1, 3),
            mode: ChebyMode::Literal,
            mixing: MixingSide::Feature,
        };
        let x = Matrix::from_fn(4, 3, |i, j| (i * j) as f64 * 0.5);
        assert_eq!(graph_conv_forward(&params, &l, &x).unwrap(), x);
        let wrong = Matrix::zeros(4, 2);
        assert!(graph_conv_forward(&params, &l, &wrong).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let l = path_graph_normalized(4);
        let params = ChebyLayerParams {
            weights: (0..3).map(|k| Matrix::from_fn(2, 3, |i, j| (k + i + j) as f64 * 0.1 - 0.2)).collect(),
            bias: Matrix::from_fn(1, 3, |_, j| j as f64 * 0.1),
            mode: ChebyMode::Rescaled,
            mixing: MixingSide::Feature,
        };
        let x = Matrix::from_fn(4, 2, |i, j| (i + j) as f64 * 0.3 - 0.4);
        let (gx, gw, gb) = graph_conv_backward(&params, &l, &x, &Matrix::zeros(4, 3)).unwrap();
        assert_eq!(gx, Matrix::zeros(4, 2));
        assert!(gw.iter().all(|g| *g == Matrix::zeros(2, 3)));
        assert_eq!(gb, Matrix::zeros(1, 3));
    }

    #[test]
    fn single_vertex_reduces_to_dense_layer() {
        // isolated vertex: ℒ = [0]
        let l = Matrix::zeros(1, 1);
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let params = ChebyLayerParams {
            weights: vec![w.clone()],
            bias: Matrix::from_rows(&[vec![0.1, 0.3]]).unwrap(),
            mode: ChebyMode::Literal,
            mixing: MixingSide::Feature,
        };
        let x = Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        // z = [0.5 + 1.0 + 0.1, -1.0 + 0.125 + 0.3] = [1.6, -0.575]
        let up = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let (gx, gw, gb) = graph_conv_backward(&params, &l, &x, &up).unwrap();
        assert_eq!(gb.as_slice(), &[2.0, 0.0]);
        assert_eq!(gw[0].to_rows(), vec![vec![2.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(gx.as_slice(), &[1.0, 4.0]);
    }
}
