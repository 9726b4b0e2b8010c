//! The GR-GCN classifier: input batch norm, a stack of basic layers (graph
//! convolution followed by temporal convolutions), average pooling over
//! actors, time and vertices, then a linear softmax head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chebyshev::{
    graph_conv_backward_cached, graph_conv_forward_cached, ChebyLayerParams, ChebyMode, ChebyOperator, GraphConvCache,
    MixingSide,
};
use super::layers::{
    batch_norm, batch_norm_backward, classify_pooled, cross_entropy_loss, dropout, pool_features,
    softmax_cross_entropy_grad, temporal_conv2d, temporal_conv2d_backward, BatchNormCache, BatchNormParams,
    LinearParams, Mode, RunningStats, TemporalConvParams,
};
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, matmul_tn, Matrix};
use crate::stgraph::concat_frames;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Vertices of the spatio-temporal graph (`3 N0`).
    pub vertices: usize,
    pub input_channels: usize,
    /// Output width of each basic layer; its length is the depth.
    pub feature_dims: Vec<usize>,
    pub cheb_order: usize,
    pub cheb_mode: ChebyMode,
    pub mixing: MixingSide,
    pub conv_kernel_time: usize,
    pub convs_per_layer: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl NetworkConfig {
    /// Two basic layers of widths 8 and 16, `K = 4`.
    pub fn desk(vertices: usize, classes: usize) -> Self {
        Self {
            vertices,
            input_channels: 3,
            feature_dims: vec![8, 16],
            cheb_order: 4,
            cheb_mode: ChebyMode::Rescaled,
            mixing: MixingSide::Feature,
            conv_kernel_time: 3,
            convs_per_layer: 2,
            dropout: 0.5,
            classes,
        }
    }

    pub fn num_basic_layers(&self) -> usize {
        self.feature_dims.len()
    }

    /// Width of the pooled feature vector fed to the classifier.
    pub fn final_dim(&self) -> usize {
        self.feature_dims.last().copied().unwrap_or(self.input_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidModel(m));
        if self.vertices == 0 || self.input_channels == 0 {
            return fail("vertices and input channels must be positive".into());
        }
        if self.feature_dims.is_empty() || self.feature_dims.contains(&0) {
            return fail(format!("feature dims {:?} must be non-empty and positive", self.feature_dims));
        }
        if self.cheb_order == 0 {
            return fail("chebyshev order K must be >= 1".into());
        }
        if self.conv_kernel_time == 0 || self.conv_kernel_time % 2 == 0 {
            return fail(format!("temporal kernel {} must be odd", self.conv_kernel_time));
        }
        if self.mixing == MixingSide::Vertex && self.convs_per_layer == 0 {
            return fail("vertex mixing needs at least one conv per layer to change width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        Ok(())
    }
}

/// One model input: `frames[p * time + t]` is the `V x C_in` signal of actor
/// `p` at window `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    frames: Vec<Matrix>,
    actors: usize,
    time: usize,
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(frames: Vec<Matrix>, actors: usize, time: usize, label: Option<usize>) -> Result<Self> {
        if actors == 0 || time == 0 || frames.len() != actors * time {
            return Err(Error::InvalidData(format!(
                "{} frames for {actors} actors x {time} steps",
                frames.len()
            )));
        }
        let shape = frames[0].shape();
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(Error::InvalidData("sample frames differ in shape".into()));
        }
        Ok(Self { frames, actors, time, label })
    }

    /// Concatenates consecutive frames into `3 N0`-vertex windows.
    pub fn from_sequence(seq: &SkeletonSequence) -> Result<Self> {
        let windows = concat_frames(seq)?;
        let time = windows.len();
        let actors = seq.actors();
        let mut frames = Vec::with_capacity(actors * time);
        for p in 0..actors {
            for w in &windows {
                frames.push(w.coordinates(p).clone());
            }
        }
        Self::new(frames, actors, time, seq.label)
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn actors(&self) -> usize {
        self.actors
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn vertices(&self) -> usize {
        self.frames[0].rows()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicLayer {
    pub cheb: ChebyLayerParams,
    pub convs: Vec<TemporalConvParams>,
    pub norms: Vec<BatchNormParams>,
}

/// Every trainable tensor of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct GrGcnParams {
    pub input_norm: BatchNormParams,
    pub layers: Vec<BasicLayer>,
    pub fc: LinearParams,
}

impl GrGcnParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let mut layers = Vec::with_capacity(config.num_basic_layers());
        let mut f_in = config.input_channels;
        for &f_out in &config.feature_dims {
            let (cheb, mut width) = match config.mixing {
                MixingSide::Feature => (
                    ChebyLayerParams::zeros(config.cheb_order, f_in, f_out, config.cheb_mode, config.mixing),
                    f_out,
                ),
                MixingSide::Vertex => {
                    let mut p = ChebyLayerParams::zeros(
                        config.cheb_order,
                        config.vertices,
                        config.vertices,
                        config.cheb_mode,
                        config.mixing,
                    );
                    p.bias = Matrix::zeros(1, f_in);
                    (p, f_in)
                }
            };
            let mut convs = Vec::with_capacity(config.convs_per_layer);
            let mut norms = Vec::with_capacity(config.convs_per_layer);
            for _ in 0..config.convs_per_layer {
                convs.push(TemporalConvParams::zeros(config.conv_kernel_time, width, f_out));
                norms.push(BatchNormParams::new(f_out));
                width = f_out;
            }
            layers.push(BasicLayer { cheb, convs, norms });
            f_in = f_out;
        }
        Self {
            input_norm: BatchNormParams::new(config.input_channels),
            layers,
            fc: LinearParams::zeros(config.final_dim(), config.classes),
        }
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("input_bn.gamma".to_string(), &self.input_norm.gamma),
            ("input_bn.beta".to_string(), &self.input_norm.beta),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (k, w) in layer.cheb.weights.iter().enumerate() {
                out.push((format!("layer{i}.cheb.w{k}"), w));
            }
            out.push((format!("layer{i}.cheb.b"), &layer.cheb.bias));
            for (c, (conv, norm)) in layer.convs.iter().zip(&layer.norms).enumerate() {
                for (tap, w) in conv.weights.iter().enumerate() {
                    out.push((format!("layer{i}.conv{c}.w{tap}"), w));
                }
                out.push((format!("layer{i}.conv{c}.b"), &conv.bias));
                out.push((format!("layer{i}.bn{c}.gamma"), &norm.gamma));
                out.push((format!("layer{i}.bn{c}.beta"), &norm.beta));
            }
        }
        out.push(("fc.w".to_string(), &self.fc.weight));
        out.push(("fc.b".to_string(), &self.fc.bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable view in the order of [`GrGcnParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input_norm.gamma, &mut self.input_norm.beta];
        for layer in &mut self.layers {
            out.extend(layer.cheb.weights.iter_mut());
            out.push(&mut layer.cheb.bias);
            for (conv, norm) in layer.convs.iter_mut().zip(&mut layer.norms) {
                out.extend(conv.weights.iter_mut());
                out.push(&mut conv.bias);
                out.push(&mut norm.gamma);
                out.push(&mut norm.beta);
            }
        }
        out.push(&mut self.fc.weight);
        out.push(&mut self.fc.bias);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }
}

/// Batch-norm running statistics, one per normalization site.
#[derive(Debug, Clone, PartialEq)]
pub struct NormBuffers {
    pub input: RunningStats,
    pub layers: Vec<Vec<RunningStats>>,
}

impl NormBuffers {
    pub fn new(config: &NetworkConfig) -> Self {
        Self {
            input: RunningStats::new(config.input_channels),
            layers: config
                .feature_dims
                .iter()
                .map(|&f| (0..config.convs_per_layer).map(|_| RunningStats::new(f)).collect())
                .collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("input_bn.running_mean".to_string(), &self.input.mean),
            ("input_bn.running_var".to_string(), &self.input.var),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (c, s) in layer.iter().enumerate() {
                out.push((format!("layer{i}.bn{c}.running_mean"), &s.mean));
                out.push((format!("layer{i}.bn{c}.running_var"), &s.var));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input.mean, &mut self.input.var];
        for layer in &mut self.layers {
            for s in layer {
                out.push(&mut s.mean);
                out.push(&mut s.var);
            }
        }
        out
    }
}

struct ConvStage {
    input: Vec<Matrix>,
    norm: BatchNormCache,
    normalized: Vec<Matrix>,
    masks: Option<Vec<Matrix>>,
}

struct LayerTrace {
    gconv: Vec<GraphConvCache>,
    stages: Vec<ConvStage>,
}

/// Intermediate values of one batched forward pass.
pub struct ForwardTrace {
    mode: Mode,
    time: usize,
    frames_per_sample: usize,
    input_norm: BatchNormCache,
    layers: Vec<LayerTrace>,
    pooled: Vec<Matrix>,
    probabilities: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.probabilities
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrGcn {
    config: NetworkConfig,
    pub params: GrGcnParams,
    pub buffers: NormBuffers,
}

fn uniform(m: &mut Matrix, scale: f64, rng: &mut impl Rng) {
    for v in m.as_mut_slice() {
        *v = rng.random_range(-scale..=scale);
    }
}

impl GrGcn {
    /// Seeded uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`;
    /// biases and shifts start at zero, scales at one.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = GrGcnParams::zeros(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            for w in &mut layer.cheb.weights {
                let s = 1.0 / (w.rows() as f64).sqrt();
                uniform(w, s, &mut rng);
            }
            for conv in &mut layer.convs {
                let fan_in = conv.weights[0].rows() * conv.kernel_time();
                let s = 1.0 / (fan_in as f64).sqrt();
                for w in &mut conv.weights {
                    uniform(w, s, &mut rng);
                }
            }
        }
        let s = 1.0 / (params.fc.weight.rows() as f64).sqrt();
        uniform(&mut params.fc.weight, s, &mut rng);
        let buffers = NormBuffers::new(&config);
        Ok(Self { config, params, buffers })
    }

    /// All parameters zero except unit batch-norm scales.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let params = GrGcnParams::zeros(&config);
        let buffers = NormBuffers::new(&config);
        Ok(Self { config, params, buffers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_batch(&self, op: &ChebyOperator, batch: &[&Sample]) -> Result<(usize, usize)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        if op.vertices() != self.config.vertices {
            return Err(Error::InvalidModel(format!(
                "graph has {} vertices, model expects {}",
                op.vertices(),
                self.config.vertices
            )));
        }
        if op.mode() != self.config.cheb_mode {
            return Err(Error::InvalidModel(format!(
                "operator built for {:?}, model uses {:?}",
                op.mode(),
                self.config.cheb_mode
            )));
        }
        for s in batch {
            if s.vertices() != self.config.vertices || s.channels() != self.config.input_channels {
                return Err(Error::DimensionMismatch {
                    op: "forward",
                    left: (self.config.vertices, self.config.input_channels),
                    right: (s.vertices(), s.channels()),
                });
            }
            if s.actors() != first.actors() || s.time() != first.time() {
                return Err(Error::InvalidData("samples in a batch must share actors and length".into()));
            }
        }
        Ok((first.actors(), first.time()))
    }

    /// Batched forward pass. Train mode uses batch statistics and draws
    /// dropout masks from `rng`; eval mode uses running statistics and
    /// ignores `rng`.
    pub fn forward(
        &self,
        op: &ChebyOperator,
        batch: &[&Sample],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardTrace> {
        let (actors, time) = self.check_batch(op, batch)?;
        let frames_per_sample = actors * time;
        let input: Vec<Matrix> = batch.iter().flat_map(|s| s.frames.iter().cloned()).collect();
        let (mut x, input_norm) = batch_norm(&self.params.input_norm, &self.buffers.input, &input, mode)?;
        let mut layers = Vec::with_capacity(self.params.layers.len());
        for (layer, stats) in self.params.layers.iter().zip(&self.buffers.layers) {
            let mut gconv = Vec::with_capacity(x.len());
            let mut y = Vec::with_capacity(x.len());
            for f in &x {
                let (out, cache) = graph_conv_forward_cached(&layer.cheb, op, f)?;
                y.push(out);
                gconv.push(cache);
            }
            x = y;
            let mut stages = Vec::with_capacity(layer.convs.len());
            for ((conv, norm), stat) in layer.convs.iter().zip(&layer.norms).zip(stats) {
                let mut z = Vec::with_capacity(x.len());
                for chunk in x.chunks(time) {
                    z.extend(temporal_conv2d(conv, chunk)?);
                }
                let (normalized, norm_cache) = batch_norm(norm, stat, &z, mode)?;
                let mut act: Vec<Matrix> = normalized
                    .iter()
                    .map(|m| {
                        let mut a = m.clone();
                        a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                        a
                    })
                    .collect();
                let masks = if mode == Mode::Train && self.config.dropout > 0.0 {
                    let (dropped, masks) = dropout(&act, self.config.dropout, rng)?;
                    act = dropped;
                    Some(masks)
                } else {
                    None
                };
                stages.push(ConvStage {
                    input: std::mem::replace(&mut x, act),
                    norm: norm_cache,
                    normalized,
                    masks,
                });
            }
            layers.push(LayerTrace { gconv, stages });
        }
        let mut pooled = Vec::with_capacity(batch.len());
        let mut probabilities = Vec::with_capacity(batch.len());
        for chunk in x.chunks(frames_per_sample) {
            let h = pool_features(chunk)?;
            let (_, probs) = classify_pooled(&h, &self.params.fc)?;
            if probs.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite { context: "class probabilities".into() });
            }
            pooled.push(h);
            probabilities.push(probs);
        }
        Ok(ForwardTrace { mode, time, frames_per_sample, input_norm, layers, pooled, probabilities })
    }

    /// Eval-mode class probabilities for one sample.
    pub fn predict(&self, op: &ChebyOperator, sample: &Sample) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(op, &[sample], Mode::Eval, &mut rng)?;
        Ok(trace.probabilities.into_iter().next().unwrap_or_default())
    }

    /// Mean cross-entropy of a traced batch.
    pub fn loss(trace: &ForwardTrace, labels: &[usize]) -> Result<f64> {
        if labels.len() != trace.probabilities.len() {
            return Err(Error::InvalidArgument("one label per sample required".into()));
        }
        let mut total = 0.0;
        for (p, &l) in trace.probabilities.iter().zip(labels) {
            total += cross_entropy_loss(p, l)?;
        }
        Ok(total / labels.len() as f64)
    }

    /// Gradient of the mean cross-entropy with respect to every parameter.
    pub fn backward(&self, op: &ChebyOperator, trace: &ForwardTrace, labels: &[usize]) -> Result<GrGcnParams> {
        if labels.len() != trace.probabilities.len() {
            return Err(Error::InvalidArgument("one label per sample required".into()));
        }
        let batch = labels.len() as f64;
        let mut grads = self.params.zeros_like();
        let mut upstream: Vec<Matrix> = Vec::with_capacity(trace.frames_per_sample * labels.len());
        let vertices = self.config.vertices as f64;
        for ((probs, &label), h) in trace.probabilities.iter().zip(labels).zip(&trace.pooled) {
            let dz: Vec<f64> = softmax_cross_entropy_grad(probs, label)?.into_iter().map(|g| g / batch).collect();
            let dz = Matrix::new(1, dz.len(), dz)?;
            grads.fc.weight.axpy(1.0, &matmul_tn(h, &dz)?)?;
            grads.fc.bias.axpy(1.0, &dz)?;
            let dh = matmul_nt(&dz, &self.params.fc.weight)?;
            let share = 1.0 / (trace.frames_per_sample as f64 * vertices);
            let frame_grad = Matrix::from_fn(self.config.vertices, dh.cols(), |_, j| dh.get(0, j) * share);
            upstream.extend(std::iter::repeat_n(frame_grad, trace.frames_per_sample));
        }
        for ((layer, grad_layer), layer_trace) in self
            .params
            .layers
            .iter()
            .zip(&mut grads.layers)
            .zip(&trace.layers)
            .rev()
        {
            for (c, stage) in layer_trace.stages.iter().enumerate().rev() {
                if let Some(masks) = &stage.masks {
                    for (g, m) in upstream.iter_mut().zip(masks) {
                        for (gv, mv) in g.as_mut_slice().iter_mut().zip(m.as_slice()) {
                            *gv *= mv;
                        }
                    }
                }
                for (g, n) in upstream.iter_mut().zip(&stage.normalized) {
                    for (gv, nv) in g.as_mut_slice().iter_mut().zip(n.as_slice()) {
                        if *nv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                let (dz, dgamma, dbeta) = batch_norm_backward(&layer.norms[c], &stage.norm, &upstream)?;
                grad_layer.norms[c].gamma.axpy(1.0, &dgamma)?;
                grad_layer.norms[c].beta.axpy(1.0, &dbeta)?;
                let seq_len = trace.time;
                let mut dx = Vec::with_capacity(dz.len());
                for (inp, g) in stage.input.chunks(seq_len).zip(dz.chunks(seq_len)) {
                    let (gx, gw, gb) = temporal_conv2d_backward(&layer.convs[c], inp, g)?;
                    for (acc, w) in grad_layer.convs[c].weights.iter_mut().zip(&gw) {
                        acc.axpy(1.0, w)?;
                    }
                    grad_layer.convs[c].bias.axpy(1.0, &gb)?;
                    dx.extend(gx);
                }
                upstream = dx;
            }
            let mut dx = Vec::with_capacity(upstream.len());
            for (cache, g) in layer_trace.gconv.iter().zip(&upstream) {
                let (gx, gw, gb) = graph_conv_backward_cached(&layer.cheb, op, cache, g)?;
                for (acc, w) in grad_layer.cheb.weights.iter_mut().zip(&gw) {
                    acc.axpy(1.0, w)?;
                }
                grad_layer.cheb.bias.axpy(1.0, &gb)?;
                dx.push(gx);
            }
            upstream = dx;
        }
        let (_, dgamma, dbeta) = batch_norm_backward(&self.params.input_norm, &trace.input_norm, &upstream)?;
        grads.input_norm.gamma.axpy(1.0, &dgamma)?;
        grads.input_norm.beta.axpy(1.0, &dbeta)?;
        Ok(grads)
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        if trace.mode != Mode::Train {
            return;
        }
        self.buffers.input.update(&trace.input_norm);
        for (stats, layer) in self.buffers.layers.iter_mut().zip(&trace.layers) {
            for (s, stage) in stats.iter_mut().zip(&layer.stages) {
                s.update(&stage.norm);
            }
        }
    }
}

/// Eval-mode probabilities for a prepared sample under a normalized
/// Laplacian.
pub fn forward_full(model: &GrGcn, normalized_laplacian: &Matrix, sample: &Sample) -> Result<Vec<f64>> {
    let op = ChebyOperator::new(normalized_laplacian, model.config.cheb_mode)?;
    model.predict(&op, sample)
}
