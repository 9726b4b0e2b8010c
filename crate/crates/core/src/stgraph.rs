//! Sparsified spatio-temporal skeleton graphs.
//!
//! A spatio-temporal graph spans three consecutive frames. Vertex `(f, j)`
//! (frame offset `f ∈ {0, 1, 2}` for `t-1, t, t+1`, joint `j`) has index
//! `f * n + j`. Its adjacency is the 3x3 block matrix
//!
//! ```text
//! [ S   T   0 ]
//! [ Tᵀ  S   T ]
//! [ 0   Tᵀ  S ]
//! ```
//!
//! with `S` the intra-frame block and `T` the inter-frame block.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::graph::{EdgeClass, Graph};
use crate::numerics::Matrix;
use crate::regression::ClassifiedEdge;

pub const FRAMES_PER_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    #[serde(rename = "n")]
    pub num_joints: usize,
    pub bones: Vec<(usize, usize)>,
    /// Non-physical pairs that get the strong weight.
    #[serde(rename = "strong", default)]
    pub nonphysical_strong: Vec<(usize, usize)>,
    #[serde(rename = "weak", default)]
    pub nonphysical_weak: Vec<(usize, usize)>,
    #[serde(rename = "names", default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
}

impl SkeletonTopology {
    pub fn new(
        num_joints: usize,
        bones: Vec<(usize, usize)>,
        nonphysical_strong: Vec<(usize, usize)>,
        nonphysical_weak: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let topo = Self {
            num_joints,
            bones,
            nonphysical_strong,
            nonphysical_weak,
            joint_names: None,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// 15-joint body: head, neck, torso, both arms (shoulder, elbow, wrist)
    /// and both legs (hip, knee, ankle). Head-to-wrist pairs are strong
    /// non-physical edges; wrist-wrist, ankle-ankle and wrist-hip pairs are
    /// weak ones.
    pub fn toy15() -> Self {
        let names = [
            "head", "neck", "torso", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow",
            "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
        ];
        Self {
            num_joints: 15,
            bones: vec![
                (0, 1),
                (1, 2),
                (1, 3),
                (3, 4),
                (4, 5),
                (1, 6),
                (6, 7),
                (7, 8),
                (2, 9),
                (9, 10),
                (10, 11),
                (2, 12),
                (12, 13),
                (13, 14),
            ],
            nonphysical_strong: vec![(0, 5), (0, 8)],
            nonphysical_weak: vec![(5, 8), (11, 14), (5, 9), (8, 12)],
            joint_names: Some(names.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "toy15" => Some(Self::toy15()),
            _ => None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let topo: Self = serde_json::from_str(&text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_joints;
        if n == 0 {
            return Err(Error::InvalidTopology("skeleton needs at least one joint".into()));
        }
        if let Some(names) = &self.joint_names {
            if names.len() != n {
                return Err(Error::InvalidTopology(format!(
                    "{} joint names for {n} joints",
                    names.len()
                )));
            }
        }
        let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (list, label) in [
            (&self.bones, "bones"),
            (&self.nonphysical_strong, "strong"),
            (&self.nonphysical_weak, "weak"),
        ] {
            for &(i, j) in list.iter() {
                if i >= n || j >= n {
                    return Err(Error::InvalidTopology(format!(
                        "{label} pair ({i},{j}) out of range for {n} joints"
                    )));
                }
                if i == j {
                    return Err(Error::InvalidTopology(format!("{label} pair ({i},{j}) is a self loop")));
                }
                if !seen.insert((i.min(j), i.max(j))) {
                    return Err(Error::InvalidTopology(format!(
                        "pair ({i},{j}) declared twice (in {label})"
                    )));
                }
            }
        }
        let reach = self.hop_distances(0);
        if let Some(j) = reach.iter().position(Option::is_none) {
            return Err(Error::InvalidTopology(format!(
                "bones do not form a connected graph: joint {j} unreachable from joint 0"
            )));
        }
        Ok(())
    }

    fn bone_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(i, j) in &self.bones {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// BFS hop counts over bones from `source`.
    fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.bone_neighbors();
        let mut dist = vec![None; self.num_joints];
        let mut queue = VecDeque::from([source]);
        dist[source] = Some(0);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Joints at bone distance `1..=hops` from `joint`.
    pub fn neighborhood(&self, joint: usize, hops: usize) -> Vec<usize> {
        self.hop_distances(joint)
            .into_iter()
            .enumerate()
            .filter_map(|(j, d)| matches!(d, Some(d) if d >= 1 && d <= hops).then_some(j))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightScheme {
    pub w1: f64,
    pub w2: f64,
}

impl Default for EdgeWeightScheme {
    fn default() -> Self {
        Self { w1: 5.0, w2: 1.0 }
    }
}

impl EdgeWeightScheme {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1.is_finite() && w2.is_finite() && w2 > 0.0 && w1 > w2) {
            return Err(Error::InvalidArgument(format!(
                "edge weights need w1 > w2 > 0, got w1={w1}, w2={w2}"
            )));
        }
        Ok(Self { w1, w2 })
    }

    pub fn ratio(&self) -> f64 {
        self.w1 / self.w2
    }

    pub fn weight_for(&self, class: EdgeClass) -> f64 {
        if class.is_strong() {
            self.w1
        } else {
            self.w2
        }
    }
}

/// Intra-frame block: `w1` on bones and strong pairs, `w2` on weak pairs.
pub fn build_spatial_block(topo: &SkeletonTopology, scheme: &EdgeWeightScheme) -> Result<Matrix> {
    topo.validate()?;
    let n = topo.num_joints;
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in topo.bones.iter().chain(&topo.nonphysical_strong) {
        a.set(i, j, scheme.w1);
        a.set(j, i, scheme.w1);
    }
    for &(i, j) in &topo.nonphysical_weak {
        a.set(i, j, scheme.w2);
        a.set(j, i, scheme.w2);
    }
    Ok(a)
}

/// Inter-frame block `A_{t,t+1}` with one-hop potential edges.
pub fn build_temporal_block(topo: &SkeletonTopology, scheme: &EdgeWeightScheme) -> Result<Matrix> {
    build_temporal_block_hops(topo, scheme, 1)
}

/// Inter-frame block: `w1` between corresponding joints, `w2` from each
/// joint to the joints within `hops` bones of its correspondence.
/// `hops = 0` keeps only corresponding joints.
pub fn build_temporal_block_hops(
    topo: &SkeletonTopology,
    scheme: &EdgeWeightScheme,
    hops: usize,
) -> Result<Matrix> {
    topo.validate()?;
    let n = topo.num_joints;
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a.set(i, i, scheme.w1);
        if hops > 0 {
            for j in topo.neighborhood(i, hops) {
                a.set(i, j, scheme.w2);
            }
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameOffset {
    Previous,
    Current,
    Next,
}

impl FrameOffset {
    pub fn index(self) -> usize {
        match self {
            FrameOffset::Previous => 0,
            FrameOffset::Current => 1,
            FrameOffset::Next => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(FrameOffset::Previous),
            1 => Some(FrameOffset::Current),
            2 => Some(FrameOffset::Next),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

/// Block-layout equivalence class of an edge: the same joint pair in any
/// frame (spatial) or any pair of adjacent frames (temporal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeOrbit {
    pub kind: EdgeKind,
    pub joints: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    joints: usize,
}

impl BlockLayout {
    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    /// Layout for a 3n-vertex graph.
    pub fn for_vertices(vertices: usize) -> Result<Self> {
        if vertices == 0 || vertices % FRAMES_PER_WINDOW != 0 {
            return Err(Error::InvalidGraph(format!(
                "{vertices} vertices is not a positive multiple of {FRAMES_PER_WINDOW}"
            )));
        }
        Ok(Self::new(vertices / FRAMES_PER_WINDOW))
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn vertices(&self) -> usize {
        FRAMES_PER_WINDOW * self.joints
    }

    pub fn index(&self, frame: FrameOffset, joint: usize) -> usize {
        frame.index() * self.joints + joint
    }

    pub fn locate(&self, vertex: usize) -> (FrameOffset, usize) {
        let f = FrameOffset::from_index(vertex / self.joints).expect("vertex within layout");
        (f, vertex % self.joints)
    }

    pub fn kind(&self, i: usize, j: usize) -> EdgeKind {
        if i / self.joints == j / self.joints {
            EdgeKind::Spatial
        } else {
            EdgeKind::Temporal
        }
    }

    pub fn orbit(&self, i: usize, j: usize) -> EdgeOrbit {
        let (a, b) = (i % self.joints, j % self.joints);
        EdgeOrbit {
            kind: self.kind(i, j),
            joints: (a.min(b), a.max(b)),
        }
    }

    /// Class for an edge of this layout given whether it is strong.
    pub fn class_for(&self, i: usize, j: usize, strong: bool) -> EdgeClass {
        match (self.kind(i, j), strong) {
            (EdgeKind::Spatial, true) => EdgeClass::StrongSpatial,
            (EdgeKind::Spatial, false) => EdgeClass::WeakSpatial,
            (EdgeKind::Temporal, true) => EdgeClass::CorrespondingTemporal,
            (EdgeKind::Temporal, false) => EdgeClass::NeighborTemporal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StGraph {
    graph: Graph,
    layout: BlockLayout,
}

impl StGraph {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Adopts a loaded graph, checking the block-zero pattern.
    pub fn from_graph(graph: Graph) -> Result<Self> {
        let layout = BlockLayout::for_vertices(graph.n())?;
        let n = layout.joints();
        for i in 0..n {
            for j in 0..n {
                if graph.weight(i, 2 * n + j) != 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "frames t-1 and t+1 are linked at joints ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { graph, layout })
    }

    /// `(i, j)` pairs with `i < j` of all edges, row-major.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.graph.edges().into_iter().map(|(i, j, _)| (i, j)).collect()
    }

    pub fn block(&self, row: FrameOffset, col: FrameOffset) -> Matrix {
        let n = self.layout.joints();
        let (r0, c0) = (row.index() * n, col.index() * n);
        Matrix::from_fn(n, n, |i, j| self.graph.weight(r0 + i, c0 + j))
    }
}

/// Places the blocks per the layout above and classifies every edge:
/// spatial edges at the block's maximum weight are strong, other spatial
/// edges weak; temporal diagonal entries are corresponding edges and the
/// rest potential (neighbor) edges.
pub fn assemble_st_graph(spatial: &Matrix, temporal: &Matrix) -> Result<StGraph> {
    if !spatial.is_square() || spatial.shape() != temporal.shape() {
        return Err(Error::DimensionMismatch {
            op: "assemble_st_graph",
            left: spatial.shape(),
            right: temporal.shape(),
        });
    }
    if spatial.max_asymmetry()? != 0.0 {
        return Err(Error::InvalidGraph("spatial block must be symmetric".into()));
    }
    let n = spatial.rows();
    let layout = BlockLayout::new(n);
    let mut a = Matrix::zeros(3 * n, 3 * n);
    for f in 0..FRAMES_PER_WINDOW {
        for i in 0..n {
            for j in 0..n {
                a.set(f * n + i, f * n + j, spatial.get(i, j));
            }
        }
    }
    for f in 0..FRAMES_PER_WINDOW - 1 {
        for i in 0..n {
            for j in 0..n {
                let w = temporal.get(i, j);
                a.set(f * n + i, (f + 1) * n + j, w);
                a.set((f + 1) * n + j, f * n + i, w);
            }
        }
    }
    let strong_spatial = spatial.as_slice().iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut graph = Graph::new(a)?;
    for (i, j, w) in graph.edges() {
        let class = match layout.kind(i, j) {
            EdgeKind::Spatial => layout.class_for(i, j, w == strong_spatial),
            EdgeKind::Temporal => layout.class_for(i, j, i % n == j % n),
        };
        graph.set_edge_class(i, j, class)?;
    }
    Ok(StGraph { graph, layout })
}

/// Template variants mirroring the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphVariant {
    /// Bones inside each frame, corresponding joints across frames.
    Bone,
    /// Adds non-physical strong and weak intra-frame edges.
    Intra,
    /// Adds potential temporal edges to joint neighborhoods.
    Complete,
}

impl std::str::FromStr for GraphVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bone" => Ok(GraphVariant::Bone),
            "intra" => Ok(GraphVariant::Intra),
            "complete" => Ok(GraphVariant::Complete),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph variant {other:?} (expected bone|intra|complete)"
            ))),
        }
    }
}

pub fn build_template(
    topo: &SkeletonTopology,
    scheme: &EdgeWeightScheme,
    variant: GraphVariant,
    hops: usize,
) -> Result<StGraph> {
    let spatial = match variant {
        GraphVariant::Bone => {
            let bones_only = SkeletonTopology {
                nonphysical_strong: Vec::new(),
                nonphysical_weak: Vec::new(),
                ..topo.clone()
            };
            build_spatial_block(&bones_only, scheme)?
        }
        GraphVariant::Intra | GraphVariant::Complete => build_spatial_block(topo, scheme)?,
    };
    let temporal_hops = if variant == GraphVariant::Complete { hops } else { 0 };
    let temporal = build_temporal_block_hops(topo, scheme, temporal_hops)?;
    assemble_st_graph(&spatial, &temporal)
}

/// Re-weights template edges by their learned class and drops the rest.
pub fn apply_learned_graph(
    template: &StGraph,
    classified: &[ClassifiedEdge],
    scheme: &EdgeWeightScheme,
) -> Result<StGraph> {
    let n = template.graph.n();
    let mut a = Matrix::zeros(n, n);
    let mut classes = Vec::with_capacity(classified.len());
    for e in classified {
        let (i, j) = (e.i.min(e.j), e.i.max(e.j));
        if j >= n || template.graph.weight(i, j) <= 0.0 {
            return Err(Error::InvalidGraph(format!(
                "classified edge ({i},{j}) is not in the template"
            )));
        }
        let w = scheme.weight_for(e.class);
        a.set(i, j, w);
        a.set(j, i, w);
        classes.push((i, j, e.class));
    }
    let mut graph = Graph::new(a)?;
    for (i, j, c) in classes {
        graph.set_edge_class(i, j, c)?;
    }
    Ok(StGraph {
        graph,
        layout: template.layout,
    })
}

/// Three stacked frames of one sequence, one `3n x 3` matrix per actor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalFrame {
    actors: Vec<Matrix>,
    center: usize,
}

impl SpatioTemporalFrame {
    pub fn new(actors: Vec<Matrix>, center: usize) -> Result<Self> {
        let first = actors
            .first()
            .ok_or_else(|| Error::InvalidData("spatio-temporal frame needs an actor".into()))?;
        if first.rows() % FRAMES_PER_WINDOW != 0 || actors.iter().any(|m| m.shape() != first.shape()) {
            return Err(Error::InvalidData("inconsistent spatio-temporal frame shapes".into()));
        }
        Ok(Self { actors, center })
    }

    pub fn coordinates(&self, actor: usize) -> &Matrix {
        &self.actors[actor]
    }

    pub fn actors(&self) -> &[Matrix] {
        &self.actors
    }

    pub fn num_vertices(&self) -> usize {
        self.actors[0].rows()
    }

    /// Index of the middle source frame; sources are `center-1..=center+1`.
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn source_frames(&self) -> [usize; 3] {
        [self.center - 1, self.center, self.center + 1]
    }
}

/// Sliding window of three frames with stride one: `T0` frames of `N0`
/// joints give `T0 - 2` windows of `3 N0` vertices.
pub fn concat_frames(seq: &SkeletonSequence) -> Result<Vec<SpatioTemporalFrame>> {
    let t0 = seq.len();
    if t0 < FRAMES_PER_WINDOW {
        return Err(Error::InvalidData(format!(
            "need at least {FRAMES_PER_WINDOW} frames to concatenate, got {t0}"
        )));
    }
    let n0 = seq.joints();
    (1..t0 - 1)
        .map(|t| {
            let actors = (0..seq.actors())
                .map(|p| {
                    let mut m = Matrix::zeros(FRAMES_PER_WINDOW * n0, 3);
                    for (f, src) in [t - 1, t, t + 1].into_iter().enumerate() {
                        let frame = seq.frame(src);
                        for j in 0..n0 {
                            m.row_mut(f * n0 + j).copy_from_slice(frame.row(p * n0 + j));
                        }
                    }
                    m
                })
                .collect();
            SpatioTemporalFrame::new(actors, t)
        })
        .collect()
}
