//! Non-graph layers: temporal convolution, batch norm, dropout, pooling and
//! the classifier head. Activations are lists of `V x F` frame matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn check_frames(op: &'static str, frames: &[Matrix]) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{op}: empty input")))?;
    for f in frames {
        if f.shape() != first.shape() {
            return Err(Error::DimensionMismatch { op, left: first.shape(), right: f.shape() });
        }
    }
    Ok(first.shape())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvParams {
    /// One `F_in x F_out` matrix per temporal tap, oldest first.
    pub weights: Vec<Matrix>,
    pub bias: Matrix,
}

impl TemporalConvParams {
    pub fn zeros(kernel_time: usize, f_in: usize, f_out: usize) -> Self {
        Self {
            weights: vec![Matrix::zeros(f_in, f_out); kernel_time],
            bias: Matrix::zeros(1, f_out),
        }
    }

    pub fn kernel_time(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_time();
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidModel(format!("temporal kernel must be odd, got {k}")));
        }
        let shape = self.weights[0].shape();
        if self.weights.iter().any(|w| w.shape() != shape) {
            return Err(Error::InvalidModel("temporal conv taps differ in shape".into()));
        }
        if self.bias.shape() != (1, shape.1) {
            return Err(Error::InvalidModel("temporal conv bias width mismatch".into()));
        }
        Ok(())
    }

    fn check(&self, frames: &[Matrix]) -> Result<()> {
        self.validate()?;
        let (_, f) = check_frames("temporal_conv2d", frames)?;
        if f != self.weights[0].rows() {
            return Err(Error::DimensionMismatch {
                op: "temporal_conv2d",
                left: self.weights[0].shape(),
                right: frames[0].shape(),
            });
        }
        let t = frames.len();
        if self.kernel_time() > 2 * t - 1 {
            return Err(Error::InvalidArgument(format!(
                "temporal kernel {} exceeds 2T-1 = {}",
                self.kernel_time(),
                2 * t - 1
            )));
        }
        Ok(())
    }

    fn source(&self, t: usize, tap: usize, len: usize) -> usize {
        let r = self.kernel_time() / 2;
        (t + tap).saturating_sub(r).min(len - 1)
    }
}

/// Same-length convolution over time with replicate padding, applied per
/// vertex with channel mixing. `frames[t]` is the `V x F_in` slice at time t.
pub fn temporal_conv2d(params: &TemporalConvParams, frames: &[Matrix]) -> Result<Vec<Matrix>> {
    params.check(frames)?;
    let t_len = frames.len();
    let (v, _) = frames[0].shape();
    let f_out = params.bias.cols();
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut y = Matrix::zeros(v, f_out);
        for (tap, w) in params.weights.iter().enumerate() {
            y.axpy(1.0, &matmul(&frames[params.source(t, tap, t_len)], w)?)?;
        }
        for r in 0..v {
            for (a, b) in y.row_mut(r).iter_mut().zip(params.bias.row(0)) {
                *a += b;
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Returns `(grad_frames, grad_taps, grad_bias)`.
pub fn temporal_conv2d_backward(
    params: &TemporalConvParams,
    frames: &[Matrix],
    upstream: &[Matrix],
) -> Result<(Vec<Matrix>, Vec<Matrix>, Matrix)> {
    params.check(frames)?;
    let t_len = frames.len();
    if upstream.len() != t_len {
        return Err(Error::InvalidArgument(format!(
            "temporal_conv2d_backward: {} upstream frames for {t_len} inputs",
            upstream.len()
        )));
    }
    let (v, f_in) = frames[0].shape();
    let f_out = params.bias.cols();
    check_frames("temporal_conv2d_backward", upstream)?;
    if upstream[0].shape() != (v, f_out) {
        return Err(Error::DimensionMismatch {
            op: "temporal_conv2d_backward",
            left: (v, f_out),
            right: upstream[0].shape(),
        });
    }
    let mut grad_x = vec![Matrix::zeros(v, f_in); t_len];
    let mut grad_w = vec![Matrix::zeros(f_in, f_out); params.kernel_time()];
    let mut grad_b = Matrix::zeros(1, f_out);
    for (t, g) in upstream.iter().enumerate() {
        for r in 0..v {
            for (a, b) in grad_b.row_mut(0).iter_mut().zip(g.row(r)) {
                *a += b;
            }
        }
        for (tap, w) in params.weights.iter().enumerate() {
            let src = params.source(t, tap, t_len);
            grad_w[tap].axpy(1.0, &matmul_tn(&frames[src], g)?)?;
            grad_x[src].axpy(1.0, &matmul_nt(g, w)?)?;
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Matrix::from_fn(1, channels, |_, _| 1.0),
            beta: Matrix::zeros(1, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Matrix,
    pub var: Matrix,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Matrix::zeros(1, channels),
            var: Matrix::from_fn(1, channels, |_, _| 1.0),
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for c in 0..self.mean.cols() {
            let m = BN_MOMENTUM * self.mean.get(0, c) + (1.0 - BN_MOMENTUM) * cache.batch_mean[c];
            let v = BN_MOMENTUM * self.var.get(0, c) + (1.0 - BN_MOMENTUM) * cache.batch_var[c];
            self.mean.set(0, c, m);
            self.var.set(0, c, v);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    xhat: Vec<Matrix>,
    inv_std: Vec<f64>,
    clamped: Vec<bool>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNormCache {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

/// Per-channel standardization over every row of every frame. Variances
/// below [`BN_EPS`] are raised to it.
pub fn batch_norm(
    params: &BatchNormParams,
    stats: &RunningStats,
    frames: &[Matrix],
    mode: Mode,
) -> Result<(Vec<Matrix>, BatchNormCache)> {
    let (rows, c) = check_frames("batch_norm", frames)?;
    if c != params.channels() || stats.mean.cols() != c {
        return Err(Error::DimensionMismatch {
            op: "batch_norm",
            left: params.gamma.shape(),
            right: frames[0].shape(),
        });
    }
    let count = rows * frames.len();
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument("batch_norm in train mode needs at least 2 positions".into()));
            }
            let mut mean = vec![0.0; c];
            for f in frames {
                for r in 0..rows {
                    for (m, x) in mean.iter_mut().zip(f.row(r)) {
                        *m += x;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; c];
            for f in frames {
                for r in 0..rows {
                    for ((s, x), m) in var.iter_mut().zip(f.row(r)).zip(&mean) {
                        *s += (x - m) * (x - m);
                    }
                }
            }
            var.iter_mut().for_each(|s| *s /= count as f64);
            (mean, var)
        }
        Mode::Eval => (stats.mean.row(0).to_vec(), stats.var.row(0).to_vec()),
    };
    let clamped: Vec<bool> = var.iter().map(|&v| v < BN_EPS).collect();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / v.max(BN_EPS).sqrt()).collect();
    let gamma = params.gamma.row(0);
    let beta = params.beta.row(0);
    let mut xhat = Vec::with_capacity(frames.len());
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let mut h = f.clone();
        let mut y = f.clone();
        for r in 0..rows {
            for ch in 0..c {
                let v = (f.get(r, ch) - mean[ch]) * inv_std[ch];
                h.set(r, ch, v);
                y.set(r, ch, gamma[ch] * v + beta[ch]);
            }
        }
        xhat.push(h);
        out.push(y);
    }
    Ok((
        out,
        BatchNormCache { mode, xhat, inv_std, clamped, batch_mean: mean, batch_var: var },
    ))
}

/// Returns `(grad_frames, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    params: &BatchNormParams,
    cache: &BatchNormCache,
    upstream: &[Matrix],
) -> Result<(Vec<Matrix>, Matrix, Matrix)> {
    if upstream.len() != cache.xhat.len() {
        return Err(Error::InvalidArgument("batch_norm_backward: frame count mismatch".into()));
    }
    let (rows, c) = check_frames("batch_norm_backward", upstream)?;
    if cache.xhat[0].shape() != (rows, c) {
        return Err(Error::DimensionMismatch {
            op: "batch_norm_backward",
            left: cache.xhat[0].shape(),
            right: upstream[0].shape(),
        });
    }
    let count = (rows * upstream.len()) as f64;
    let gamma = params.gamma.row(0);
    let mut grad_gamma = Matrix::zeros(1, c);
    let mut grad_beta = Matrix::zeros(1, c);
    for (g, h) in upstream.iter().zip(&cache.xhat) {
        for r in 0..rows {
            for ch in 0..c {
                grad_gamma.add_at(0, ch, g.get(r, ch) * h.get(r, ch));
                grad_beta.add_at(0, ch, g.get(r, ch));
            }
        }
    }
    let mut grad_x = Vec::with_capacity(upstream.len());
    for (g, h) in upstream.iter().zip(&cache.xhat) {
        let mut dx = g.clone();
        for r in 0..rows {
            for ch in 0..c {
                let dh = g.get(r, ch) * gamma[ch];
                let v = match cache.mode {
                    Mode::Eval => dh * cache.inv_std[ch],
                    Mode::Train => {
                        let sum_dh = grad_beta.get(0, ch) * gamma[ch];
                        let sum_dh_h = grad_gamma.get(0, ch) * gamma[ch];
                        if cache.clamped[ch] {
                            cache.inv_std[ch] * (dh - sum_dh / count)
                        } else {
                            cache.inv_std[ch] * (dh - sum_dh / count - h.get(r, ch) * sum_dh_h / count)
                        }
                    }
                };
                dx.set(r, ch, v);
            }
        }
        grad_x.push(dx);
    }
    Ok((grad_x, grad_gamma, grad_beta))
}

/// Inverted dropout. Returns the outputs and the per-entry scale masks.
pub fn dropout<R: Rng + ?Sized>(frames: &[Matrix], rate: f64, rng: &mut R) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 - rate;
    let mut out = Vec::with_capacity(frames.len());
    let mut masks = Vec::with_capacity(frames.len());
    for f in frames {
        let mut mask = Matrix::zeros(f.rows(), f.cols());
        let mut y = f.clone();
        for (m, v) in mask.as_mut_slice().iter_mut().zip(y.as_mut_slice()) {
            let s = if rate == 0.0 || rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            *m = s;
            *v *= s;
        }
        out.push(y);
        masks.push(mask);
    }
    Ok((out, masks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LinearParams {
    pub fn zeros(f_in: usize, f_out: usize) -> Self {
        Self { weight: Matrix::zeros(f_in, f_out), bias: Matrix::zeros(1, f_out) }
    }
}

/// Mean over every row of every frame: `1 x F`.
pub fn pool_features(frames: &[Matrix]) -> Result<Matrix> {
    let (rows, f) = check_frames("pool", frames)?;
    let mut acc = vec![0.0; f];
    for m in frames {
        for r in 0..rows {
            for (a, x) in acc.iter_mut().zip(m.row(r)) {
                *a += x;
            }
        }
    }
    let n = (rows * frames.len()) as f64;
    Matrix::new(1, f, acc.into_iter().map(|a| a / n).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean-pools `P x T` frames of `N x F` features, then applies the linear
/// head. Returns `(logits, probabilities)`.
pub fn pool_and_classify(frames: &[Matrix], fc: &LinearParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let pooled = pool_features(frames)?;
    classify_pooled(&pooled, fc)
}

pub(crate) fn classify_pooled(pooled: &Matrix, fc: &LinearParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if pooled.cols() != fc.weight.rows() {
        return Err(Error::DimensionMismatch {
            op: "pool_and_classify",
            left: fc.weight.shape(),
            right: pooled.shape(),
        });
    }
    let mut logits = matmul(pooled, &fc.weight)?;
    logits.axpy(1.0, &fc.bias)?;
    let logits = logits.into_vec();
    let probs = softmax(&logits);
    Ok((logits, probs))
}

pub fn cross_entropy_loss(probabilities: &[f64], label: usize) -> Result<f64> {
    let p = probabilities.get(label).ok_or_else(|| {
        Error::InvalidArgument(format!("label {label} out of range for {} classes", probabilities.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy_loss(softmax(z), label)` with respect to `z`.
pub fn softmax_cross_entropy_grad(probabilities: &[f64], label: usize) -> Result<Vec<f64>> {
    let p_label = *probabilities.get(label).ok_or_else(|| {
        Error::InvalidArgument(format!("label {label} out of range for {} classes", probabilities.len()))
    })?;
    if p_label < PROB_FLOOR {
        return Ok(vec![0.0; probabilities.len()]);
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(c, &p)| if c == label { p - 1.0 } else { p })
        .collect())
}
