//! Command implementations for the `grgcn` binary. Every artifact embeds the
//! [`RunConfig`] that produced it, so `grgcn replay` can regenerate it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use grgcn_core::chebynet::{
    self, ChebyMode, ChebyOperator, EpochStats, GrGcn, LrSchedule, MixingSide, NetworkConfig, Sample, TrainConfig,
};
use grgcn_core::data::{self, DatasetSplit, SkeletonSequence, SyntheticSpec};
use grgcn_core::graph::{laplacian_from_adjacency, Graph, GraphFile};
use grgcn_core::metrics::{ConfusionMatrix, MetricsReport};
use grgcn_core::regression::{self, RegressionSolution, Template};
use grgcn_core::stgraph::{self, concat_frames, EdgeWeightScheme, GraphVariant, SkeletonTopology};
use grgcn_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Prefix of the provenance line at the top of CSV outputs.
pub const CSV_RUN_PREFIX: &str = "# run=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Bone,
    Intra,
    Complete,
}

impl From<VariantArg> for GraphVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Bone => GraphVariant::Bone,
            VariantArg::Intra => GraphVariant::Intra,
            VariantArg::Complete => GraphVariant::Complete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Literal,
    Rescaled,
}

impl From<ModeArg> for ChebyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Literal => ChebyMode::Literal,
            ModeArg::Rescaled => ChebyMode::Rescaled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MixingArg {
    Feature,
    Vertex,
}

impl From<MixingArg> for MixingSide {
    fn from(m: MixingArg) -> Self {
        match m {
            MixingArg::Feature => MixingSide::Feature,
            MixingArg::Vertex => MixingSide::Vertex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct GenerateConfig {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 75)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    /// Standard deviation of the coordinate noise, meters.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Every `test_every`-th sequence of a class goes to the test split.
    #[arg(long, default_value_t = 3)]
    pub test_every: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct LearnGraphConfig {
    #[arg(long)]
    pub data: PathBuf,
    /// Topology JSON file or a builtin name.
    #[arg(long, default_value = "toy15")]
    pub topology: String,
    #[arg(long, default_value_t = regression::DEFAULT_BETA)]
    pub beta: f64,
    /// Number of spatio-temporal frames to solve.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = regression::DEFAULT_STRONG_QUANTILE)]
    pub strong_q: f64,
    #[arg(long, default_value_t = regression::DEFAULT_WEAK_QUANTILE)]
    pub weak_q: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidate template the weights are learned over.
    #[arg(long, value_enum, default_value_t = VariantArg::Complete)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    pub hops: usize,
    #[arg(long, default_value_t = 5.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
    #[arg(long, default_value_t = regression::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = regression::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct BuildGraphConfig {
    #[arg(long, default_value = "toy15")]
    pub topology: String,
    #[arg(long, default_value_t = 5.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Complete)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    pub hops: usize,
}

/// Training hyper-parameters shared by `train` and `sweep-k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct TrainParams {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = chebynet::DEFAULT_LR)]
    pub lr: f64,
    /// 1-based epoch from which the learning rate is multiplied by 0.1.
    #[arg(long, default_value_t = 10)]
    pub lr_drop_epoch: usize,
    /// Number of basic layers.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Per-layer widths; defaults to 16 then 32 for the remaining layers.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Rescaled)]
    pub cheb_mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MixingArg::Feature)]
    pub mixing: MixingArg,
    #[arg(long, default_value_t = 3)]
    pub kernel_time: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct TrainRunConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub params: TrainParams,
    #[arg(long, default_value_t = 4)]
    pub k_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct EvalConfig {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SweepConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub params: TrainParams,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub k: Vec<usize>,
}

/// Full parameter set of one command invocation, minus the output path and
/// thread count, which do not affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Generate(GenerateConfig),
    LearnGraph(LearnGraphConfig),
    BuildGraph(BuildGraphConfig),
    Train(TrainRunConfig),
    Eval(EvalConfig),
    SweepK(SweepConfig),
}

impl RunConfig {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn execute(&self, out: &Path) -> Result<String> {
        match self {
            RunConfig::Generate(c) => cmd_generate(c, out),
            RunConfig::LearnGraph(c) => cmd_learn_graph(c, out).map(|r| r.summary),
            RunConfig::BuildGraph(c) => cmd_build_graph(c, out),
            RunConfig::Train(c) => cmd_train(c, out).map(|r| r.summary),
            RunConfig::Eval(c) => cmd_eval(c, out).map(|r| format!("accuracy {:.4}", r.accuracy)),
            RunConfig::SweepK(c) => cmd_sweep_k(c, out).map(|rows| format!("{} rows", rows.len())),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::io(path, source)
}

fn pretty(value: &impl Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// `graph.json` -> `graph.report.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn resolve_topology(spec: &str) -> Result<SkeletonTopology> {
    match SkeletonTopology::builtin(spec) {
        Some(t) => Ok(t),
        None => SkeletonTopology::load(spec),
    }
}

pub fn cmd_generate(config: &GenerateConfig, out: &Path) -> Result<String> {
    let spec = SyntheticSpec {
        classes: config.classes,
        per_class: config.per_class,
        joints: 15,
        frames: config.frames,
        noise: config.noise,
        seed: config.seed,
        test_every: config.test_every,
    };
    let split = data::generate_synthetic(&spec)?;
    let run = RunConfig::Generate(config.clone());
    data::save_dataset(&split, out, json!({ "run": run.to_value() }))?;
    Ok(format!("{} train / {} test sequences", split.train.len(), split.test.len()))
}

/// One solved spatio-temporal frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub sequence: String,
    pub label: usize,
    pub window: usize,
    pub actor: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub run: Value,
    pub beta: f64,
    pub trace_target: f64,
    pub edges: Vec<(usize, usize)>,
    pub stats: regression::CommonGraphStats,
    pub observations: Vec<Observation>,
    pub warnings: Vec<String>,
}

pub struct LearnOutcome {
    pub graph: Graph,
    pub report: LearnReport,
    pub summary: String,
}

/// Seeded round-robin over classes; within a class, candidate
/// `(sequence, window, actor)` triples are drawn without replacement.
pub fn sample_frames(train: &[SkeletonSequence], classes: usize, m: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); classes];
    for (si, seq) in train.iter().enumerate() {
        let label = seq.label.ok_or_else(|| Error::InvalidData(format!("{} has no label", seq.source_id)))?;
        let windows = seq.len().saturating_sub(2);
        for w in 0..windows {
            for p in 0..seq.actors() {
                pools[label].push((si, w, p));
            }
        }
    }
    let available: usize = pools.iter().map(Vec::len).sum();
    if available < m {
        return Err(Error::InvalidData(format!(
            "requested m = {m} spatio-temporal frames but the training split has {available}"
        )));
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut picks = Vec::with_capacity(m);
    let mut cursor = vec![0usize; classes];
    while picks.len() < m {
        for (c, pool) in pools.iter().enumerate() {
            if picks.len() == m {
                break;
            }
            if cursor[c] < pool.len() {
                picks.push(pool[cursor[c]]);
                cursor[c] += 1;
            }
        }
    }
    Ok(picks)
}

pub fn cmd_learn_graph(config: &LearnGraphConfig, out: &Path) -> Result<LearnOutcome> {
    if config.m == 0 {
        return Err(Error::InvalidArgument("--m must be at least 1".into()));
    }
    let topo = resolve_topology(&config.topology)?;
    let scheme = EdgeWeightScheme::new(config.w1, config.w2)?;
    let split = data::load_dataset(&config.data)?;
    for seq in &split.train {
        seq.validate_against(&topo)?;
    }
    let template = stgraph::build_template(&topo, &scheme, config.variant.into(), config.hops)?;
    let edges = template.edge_pairs();
    let picks = sample_frames(&split.train, split.classes, config.m, config.seed)?;
    let solved: Vec<(Observation, RegressionSolution, f64)> = picks
        .par_iter()
        .map(|&(si, w, p)| {
            let seq = &split.train[si];
            let frames = concat_frames(seq)?;
            let problem = regression::build_problem(&frames[w], p, Template::Edges(&edges), config.beta)?;
            let sol = regression::solve(&problem, config.tol, config.max_iter)?;
            let obs = Observation {
                sequence: seq.source_id.clone(),
                label: seq.label.unwrap_or(0),
                window: w,
                actor: p,
                objective: sol.objective,
                iterations: sol.iterations,
                converged: sol.converged,
                weights: sol.weights.clone(),
            };
            Ok((obs, sol, problem.trace_target))
        })
        .collect::<Result<_>>()?;
    let trace_target = solved.first().map(|s| s.2).unwrap_or(0.0);
    let mut warnings = Vec::new();
    for (obs, _, _) in &solved {
        if !obs.converged {
            warnings.push(format!(
                "solver did not converge on {} window {} after {} iterations",
                obs.sequence, obs.window, obs.iterations
            ));
        }
    }
    let solutions: Vec<RegressionSolution> = solved.iter().map(|s| s.1.clone()).collect();
    let (stats, classified) =
        regression::aggregate_common(&edges, &solutions, &template.layout(), config.strong_q, config.weak_q)?;
    let learned = stgraph::apply_learned_graph(&template, &classified, &scheme)?;
    let run = RunConfig::LearnGraph(config.clone()).to_value();
    let report = LearnReport {
        run: run.clone(),
        beta: config.beta,
        trace_target,
        edges,
        stats,
        observations: solved.into_iter().map(|s| s.0).collect(),
        warnings,
    };
    let file = learned.graph().to_file(json!({
        "run": run,
        "variant": config.variant,
        "learned_from": report.observations.len(),
    }));
    file.save(out)?;
    write_text(&sidecar(out, "report.json"), &pretty(&report)?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let summary = format!(
        "{} of {} template edges kept from {} frames",
        learned.edge_pairs().len(),
        report.edges.len(),
        report.observations.len()
    );
    Ok(LearnOutcome { graph: learned.into_graph(), report, summary })
}

pub fn cmd_build_graph(config: &BuildGraphConfig, out: &Path) -> Result<String> {
    let topo = resolve_topology(&config.topology)?;
    let scheme = EdgeWeightScheme::new(config.w1, config.w2)?;
    let st = stgraph::build_template(&topo, &scheme, config.variant.into(), config.hops)?;
    let run = RunConfig::BuildGraph(config.clone()).to_value();
    st.graph().to_file(json!({ "run": run, "variant": config.variant })).save(out)?;
    Ok(format!("{} edges on {} vertices", st.edge_pairs().len(), st.graph().n()))
}

/// Normalized Laplacian of a graph file.
pub fn load_normalized(path: &Path) -> Result<grgcn_core::Matrix> {
    let graph = Graph::from_file(&GraphFile::load(path)?)?;
    Ok(laplacian_from_adjacency(&graph).normalized())
}

pub fn to_samples(seqs: &[SkeletonSequence]) -> Result<Vec<Sample>> {
    seqs.iter().map(Sample::from_sequence).collect()
}

pub fn default_features(depth: usize) -> Vec<usize> {
    (0..depth).map(|i| if i == 0 { 16 } else { 32 }).collect()
}

pub fn network_config(params: &TrainParams, k_order: usize, vertices: usize, classes: usize) -> Result<NetworkConfig> {
    let features = match &params.features {
        Some(f) if f.len() != params.depth => {
            return Err(Error::InvalidArgument(format!(
                "--features lists {} widths but --depth is {}",
                f.len(),
                params.depth
            )))
        }
        Some(f) => f.clone(),
        None => default_features(params.depth),
    };
    let config = NetworkConfig {
        vertices,
        input_channels: 3,
        feature_dims: features,
        cheb_order: k_order,
        cheb_mode: params.cheb_mode.into(),
        mixing: params.mixing.into(),
        conv_kernel_time: params.kernel_time,
        convs_per_layer: 2,
        dropout: params.dropout,
        classes,
    };
    config.validate()?;
    Ok(config)
}

pub struct TrainOutcome {
    pub model: GrGcn,
    pub history: Vec<EpochStats>,
    pub summary: String,
}

struct Prepared {
    split: DatasetSplit,
    normalized: grgcn_core::Matrix,
}

fn prepare(params: &TrainParams) -> Result<Prepared> {
    let split = data::load_dataset(&params.data)?;
    let normalized = load_normalized(&params.graph)?;
    let joints = split.train[0].joints();
    if normalized.rows() != stgraph::FRAMES_PER_WINDOW * joints {
        return Err(Error::InvalidData(format!(
            "graph has {} vertices but {joints}-joint data needs {}",
            normalized.rows(),
            stgraph::FRAMES_PER_WINDOW * joints
        )));
    }
    Ok(Prepared { split, normalized })
}

fn fit(params: &TrainParams, k_order: usize, prep: &Prepared, log: &mut dyn FnMut(&EpochStats)) -> Result<(GrGcn, Vec<EpochStats>, ChebyOperator)> {
    let config = network_config(params, k_order, prep.normalized.rows(), prep.split.classes)?;
    let op = ChebyOperator::new(&prep.normalized, config.cheb_mode)?;
    let samples = to_samples(&prep.split.train)?;
    let model = GrGcn::new(config, params.seed)?;
    let train_config = TrainConfig {
        epochs: params.epochs,
        batch_size: params.batch,
        schedule: LrSchedule { initial: params.lr, drop_epoch: params.lr_drop_epoch, factor: 0.1 },
        adam: Default::default(),
        seed: params.seed,
    };
    let (model, history) = chebynet::train(model, &op, &samples, &train_config, &mut *log)?;
    Ok((model, history, op))
}

pub fn cmd_train(config: &TrainRunConfig, out: &Path) -> Result<TrainOutcome> {
    cmd_train_with(config, out, &mut |e: &EpochStats| {
        eprintln!("epoch {:>3}  lr {:.4}  loss {:.6}  train-acc {:.4}", e.epoch, e.lr, e.mean_loss, e.train_accuracy)
    })
}

/// `cmd_train` with a caller-supplied per-epoch callback.
pub fn cmd_train_with(config: &TrainRunConfig, out: &Path, log: &mut dyn FnMut(&EpochStats)) -> Result<TrainOutcome> {
    let prep = prepare(&config.params)?;
    let (model, history, _) = fit(&config.params, config.k_order, &prep, log)?;
    let run = RunConfig::Train(config.clone()).to_value();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    chebynet::save_checkpoint(&model, run.clone(), out)?;
    let mut lines = serde_json::to_string(&json!({ "run": run }))?;
    lines.push('\n');
    for e in &history {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    write_text(&sidecar(out, "log.jsonl"), &lines)?;
    let summary = match history.last() {
        Some(e) => format!("{} epochs, final loss {:.6}", history.len(), e.mean_loss),
        None => "0 epochs, checkpoint holds the initialization".to_string(),
    };
    Ok(TrainOutcome { model, history, summary })
}

/// Eval-mode predictions in sample order.
pub fn predict(model: &GrGcn, op: &ChebyOperator, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| model.predict(op, s).map(|p| chebynet::argmax(&p)))
        .collect()
}

pub fn evaluate(model: &GrGcn, op: &ChebyOperator, seqs: &[SkeletonSequence], classes: usize) -> Result<ConfusionMatrix> {
    let samples = to_samples(seqs)?;
    let predicted = predict(model, op, &samples)?;
    let truth: Vec<usize> = samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::InvalidData("test sequence without label".into())))
        .collect::<Result<_>>()?;
    ConfusionMatrix::from_predictions(classes, &truth, &predicted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run: Value,
    pub checkpoint_run: Value,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl std::ops::Deref for EvalReport {
    type Target = MetricsReport;

    fn deref(&self) -> &MetricsReport {
        &self.metrics
    }
}

fn csv_with_run(run: &Value, body: &str) -> Result<String> {
    Ok(format!("{CSV_RUN_PREFIX}{}\n{body}", serde_json::to_string(run)?))
}

/// Drops leading provenance comment lines.
pub fn strip_csv_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn cmd_eval(config: &EvalConfig, out: &Path) -> Result<EvalReport> {
    let split = data::load_dataset(&config.data)?;
    let normalized = load_normalized(&config.graph)?;
    let ck = chebynet::load_checkpoint(&config.checkpoint)?;
    let model = ck.to_model()?;
    if model.config().classes != split.classes {
        return Err(Error::InvalidData(format!(
            "checkpoint predicts {} classes but the dataset has {}",
            model.config().classes,
            split.classes
        )));
    }
    let op = ChebyOperator::new(&normalized, model.config().cheb_mode)?;
    let confusion = evaluate(&model, &op, &split.test, split.classes)?;
    let run = RunConfig::Eval(config.clone()).to_value();
    let report = EvalReport {
        run: run.clone(),
        checkpoint_run: ck.config.run.clone(),
        metrics: MetricsReport::from_confusion(&confusion),
    };
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_text(&out.join("metrics.json"), &pretty(&report)?)?;
    write_text(&out.join("confusion.csv"), &csv_with_run(&run, &confusion.to_csv())?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub accuracy: f64,
    pub final_loss: f64,
}

pub fn cmd_sweep_k(config: &SweepConfig, out: &Path) -> Result<Vec<SweepRow>> {
    if config.k.is_empty() || config.k.contains(&0) {
        return Err(Error::InvalidArgument("--k needs a non-empty list of orders >= 1".into()));
    }
    let prep = prepare(&config.params)?;
    let mut rows = Vec::with_capacity(config.k.len());
    for &k in &config.k {
        let mut log = |e: &EpochStats| eprintln!("K={k} epoch {:>3}  loss {:.6}", e.epoch, e.mean_loss);
        let (model, history, op) = fit(&config.params, k, &prep, &mut log)?;
        let confusion = evaluate(&model, &op, &prep.split.test, prep.split.classes)?;
        rows.push(SweepRow { k, accuracy: confusion.accuracy(), final_loss: history.last().map_or(f64::NAN, |e| e.mean_loss) });
    }
    let mut body = String::from("k,accuracy,final_loss\n");
    for r in &rows {
        body.push_str(&format!("{},{},{}\n", r.k, r.accuracy, r.final_loss));
    }
    let run = RunConfig::SweepK(config.clone()).to_value();
    write_text(out, &csv_with_run(&run, &body)?)?;
    Ok(rows)
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let body = strip_csv_comments(text);
    let mut lines = body.lines();
    if lines.next() != Some("k,accuracy,final_loss") {
        return Err(Error::Parse { line: 1, message: "missing sweep header".into() });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = |m: String| Error::Parse { line: i + 2, message: m };
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != 3 {
                return Err(bad(format!("expected 3 cells, got {}", cells.len())));
            }
            Ok(SweepRow {
                k: cells[0].parse().map_err(|e| bad(format!("{e}")))?,
                accuracy: cells[1].parse().map_err(|e| bad(format!("{e}")))?,
                final_loss: cells[2].parse().map_err(|e| bad(format!("{e}")))?,
            })
        })
        .collect()
}

/// Extracts the embedded run config from any artifact: graph files,
/// reports, checkpoints, logs, metrics, CSVs or a dataset directory.
pub fn embedded_run(artifact: &Path) -> Result<RunConfig> {
    let path = if artifact.is_dir() { artifact.join(data::MANIFEST_FILE) } else { artifact.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let first = text.lines().next().unwrap_or("");
    let run = if let Some(rest) = first.strip_prefix(CSV_RUN_PREFIX) {
        serde_json::from_str::<Value>(rest)?
    } else {
        let value: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(_) => serde_json::from_str(first)?,
        };
        let found = [&value["meta"]["run"], &value["config"]["run"], &value["run"]]
            .into_iter()
            .find(|v| v.is_object())
            .cloned();
        found.ok_or_else(|| Error::InvalidData(format!("{} carries no embedded run config", path.display())))?
    };
    serde_json::from_value(run).map_err(|e| Error::InvalidData(format!("embedded run config: {e}")))
}

/// Re-runs the command recorded in `artifact`, writing to `out`.
pub fn cmd_replay(artifact: &Path, out: &Path) -> Result<String> {
    let run = embedded_run(artifact)?;
    run.execute(out)
}

/// Thread count from `--threads`, else `LR_THREADS`, else rayon's default.
pub fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = match std::env::var("LR_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("LR_THREADS={v:?} is not a thread count")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        // a second initialization (tests, embedding) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn error_code(e: &Error) -> (&'static str, i32) {
    match e.kind() {
        grgcn_core::ErrorKind::Config => ("E_CONFIG", 2),
        grgcn_core::ErrorKind::Data => ("E_DATA", 3),
        grgcn_core::ErrorKind::Numerical => ("E_NUMERICAL", 4),
    }
}

/// `error[E_CODE]: message` on one line.
pub fn format_error(code: &str, message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    format!("error[{code}]: {}", flat.join(" "))
}

pub fn write_stdout(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}
