//! Skeleton sequences: JSONL files, resampling and a seeded synthetic
//! action generator.
//!
//! Sequence file layout (one JSON object per line):
//!
//! ```text
//! {"n_joints": 15, "actors": 1, "label": 2, "topology": "toy15"}
//! {"t": 0, "joints": [[x, y, z], ...]}
//! {"t": 1, "joints": [[x, y, z], ...]}
//! ```
//!
//! Each frame lists `actors * n_joints` joints, actor-major. Coordinates
//! are meters.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::stgraph::SkeletonTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<Matrix>,
    actors: usize,
    joints: usize,
    pub label: Option<usize>,
    pub topology: String,
    pub source_id: String,
}

impl SkeletonSequence {
    /// `frames[t]` is `(actors * joints) x 3`.
    pub fn new(
        frames: Vec<Matrix>,
        actors: usize,
        joints: usize,
        label: Option<usize>,
        topology: impl Into<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if actors == 0 || joints == 0 {
            return Err(Error::InvalidData("sequence needs at least one actor and joint".into()));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.shape() != (actors * joints, 3) {
                return Err(Error::InvalidData(format!(
                    "frame {t} has shape {:?}, expected ({}, 3)",
                    f.shape(),
                    actors * joints
                )));
            }
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("frame {t}"),
                });
            }
        }
        Ok(Self {
            frames,
            actors,
            joints,
            label,
            topology: topology.into(),
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn actors(&self) -> usize {
        self.actors
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frame(&self, t: usize) -> &Matrix {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    fn with_frames(&self, frames: Vec<Matrix>, source_suffix: &str) -> Self {
        Self {
            frames,
            actors: self.actors,
            joints: self.joints,
            label: self.label,
            topology: self.topology.clone(),
            source_id: format!("{}{source_suffix}", self.source_id),
        }
    }

    pub fn validate_against(&self, topo: &SkeletonTopology) -> Result<()> {
        if topo.num_joints != self.joints {
            return Err(Error::InvalidData(format!(
                "sequence {} has {} joints, topology has {}",
                self.source_id, self.joints, topo.num_joints
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceHeader {
    n_joints: usize,
    actors: usize,
    label: Option<usize>,
    topology: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameLine {
    t: usize,
    joints: Vec<[f64; 3]>,
}

pub fn write_sequence(seq: &SkeletonSequence, mut out: impl Write) -> Result<()> {
    let header = SequenceHeader {
        n_joints: seq.joints,
        actors: seq.actors,
        label: seq.label,
        topology: seq.topology.clone(),
    };
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    for (t, f) in seq.frames.iter().enumerate() {
        let line = FrameLine {
            t,
            joints: (0..f.rows()).map(|r| [f.get(r, 0), f.get(r, 1), f.get(r, 2)]).collect(),
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<sequence writer>", e))
}

pub fn read_sequence(input: impl BufRead, source_id: &str) -> Result<SkeletonSequence> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty sequence file".into()))?;
    let first = first.map_err(|e| parse_err(1, e.to_string()))?;
    let header: SequenceHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    let expected = header.actors * header.n_joints;
    let mut frames = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameLine =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad frame: {e}")))?;
        if frame.t != frames.len() {
            return Err(parse_err(
                lineno,
                format!("frame index {} out of order (expected {})", frame.t, frames.len()),
            ));
        }
        if frame.joints.len() != expected {
            return Err(parse_err(
                lineno,
                format!("{} joints, header declares {expected}", frame.joints.len()),
            ));
        }
        let data: Vec<f64> = frame.joints.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite coordinate".into()));
        }
        frames.push(Matrix::new(expected, 3, data)?);
    }
    SkeletonSequence::new(
        frames,
        header.actors,
        header.n_joints,
        header.label,
        header.topology,
        source_id,
    )
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_sequence(BufReader::new(file), &source)
}

pub fn save_sequence(seq: &SkeletonSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_sequence(seq, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lengths of `num_segments` near-equal consecutive segments; the
/// remainder goes to the leading segments.
pub fn segment_lengths(total: usize, num_segments: usize) -> Vec<usize> {
    let base = total / num_segments;
    let rem = total % num_segments;
    (0..num_segments).map(|s| base + usize::from(s < rem)).collect()
}

/// Partitions the sequence into `num_segments` segments and, for every
/// 1-based `pick`, keeps that frame of each segment.
pub fn segment_split(seq: &SkeletonSequence, num_segments: usize, picks: &[usize]) -> Result<Vec<SkeletonSequence>> {
    let t0 = seq.len();
    if num_segments == 0 || t0 < num_segments {
        return Err(Error::InvalidArgument(format!(
            "cannot split {t0} frames into {num_segments} segments"
        )));
    }
    let lengths = segment_lengths(t0, num_segments);
    let shortest = t0 / num_segments;
    if let Some(p) = picks.iter().find(|&&p| p == 0 || p > shortest) {
        return Err(Error::InvalidArgument(format!(
            "pick {p} is outside the shortest segment (1..={shortest})"
        )));
    }
    let starts: Vec<usize> = lengths
        .iter()
        .scan(0, |acc, len| {
            let s = *acc;
            *acc += len;
            Some(s)
        })
        .collect();
    Ok(picks
        .iter()
        .map(|&p| {
            let frames = starts.iter().map(|s| seq.frames[s + p - 1].clone()).collect();
            seq.with_frames(frames, &format!("#pick{p}"))
        })
        .collect())
}

fn mean_frame(a: &Matrix, b: &Matrix) -> Matrix {
    let mut m = a.clone();
    for (x, y) in m.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x = 0.5 * (*x + y);
    }
    m
}

/// Stretches short sequences by inserting adjacent-frame means and
/// shortens long ones by seeded uniform subsampling (order kept).
///
/// Insertion sweeps left to right, one mean after each original frame,
/// and stops as soon as the target length is reached; further sweeps run
/// over the lengthened sequence if one pass is not enough.
pub fn interpolate_to_length(seq: &SkeletonSequence, target: usize, rng: &mut impl Rng) -> Result<SkeletonSequence> {
    if target < 3 {
        return Err(Error::InvalidArgument(format!("target length {target} is below 3")));
    }
    let t0 = seq.len();
    if t0 < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 frames to resample, got {t0}")));
    }
    if t0 == target {
        return Ok(seq.clone());
    }
    if t0 > target {
        let mut keep = sample(rng, t0, target).into_vec();
        keep.sort_unstable();
        let frames = keep.into_iter().map(|t| seq.frames[t].clone()).collect();
        return Ok(seq.with_frames(frames, "#sub"));
    }
    let mut frames = seq.frames.clone();
    while frames.len() < target {
        let mut next = Vec::with_capacity(target);
        let mut len = frames.len();
        for k in 0..frames.len() {
            next.push(frames[k].clone());
            if k + 1 < frames.len() && len < target {
                next.push(mean_frame(&frames[k], &frames[k + 1]));
                len += 1;
            }
        }
        frames = next;
    }
    Ok(seq.with_frames(frames, "#interp"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
    pub classes: usize,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::InvalidData("train and test splits must be non-empty".into()));
        }
        let mut ids = BTreeSet::new();
        for s in self.train.iter().chain(&self.test) {
            match s.label {
                Some(l) if l < self.classes => {}
                other => {
                    return Err(Error::InvalidData(format!(
                        "sequence {} has label {other:?} outside 0..{}",
                        s.source_id, self.classes
                    )))
                }
            }
            if !ids.insert(s.source_id.as_str()) {
                return Err(Error::InvalidData(format!(
                    "source id {} appears more than once",
                    s.source_id
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic action generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub noise: f64,
    pub seed: u64,
    /// Within each class, sequence `k` goes to the test split when
    /// `k % test_every == test_every - 1`; `2` splits by parity.
    #[serde(default = "default_test_every")]
    pub test_every: usize,
}

fn default_test_every() -> usize {
    2
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 75,
            joints: 15,
            frames: 32,
            noise: 0.02,
            seed: 7,
            test_every: 3,
        }
    }
}

/// Rest pose of the toy skeleton, meters, y up.
fn rest_pose() -> [[f64; 3]; 15] {
    [
        [0.0, 1.70, 0.0],   // head
        [0.0, 1.50, 0.0],   // neck
        [0.0, 1.10, 0.0],   // torso
        [-0.20, 1.45, 0.0], // l_shoulder
        [-0.45, 1.45, 0.0], // l_elbow
        [-0.70, 1.45, 0.0], // l_wrist
        [0.20, 1.45, 0.0],  // r_shoulder
        [0.45, 1.45, 0.0],  // r_elbow
        [0.70, 1.45, 0.0],  // r_wrist
        [-0.12, 0.95, 0.0], // l_hip
        [-0.12, 0.50, 0.0], // l_knee
        [-0.12, 0.05, 0.0], // l_ankle
        [0.12, 0.95, 0.0],  // r_hip
        [0.12, 0.50, 0.0],  // r_knee
        [0.12, 0.05, 0.0],  // r_ankle
    ]
}

/// Rotates `p` about `pivot` by `angle` around the z axis (frontal plane)
/// or x axis (sagittal plane).
fn rotate(p: [f64; 3], pivot: [f64; 3], angle: f64, sagittal: bool) -> [f64; 3] {
    let d = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
    let (s, c) = angle.sin_cos();
    let r = if sagittal {
        [d[0], c * d[1] - s * d[2], s * d[1] + c * d[2]]
    } else {
        [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]]
    };
    [pivot[0] + r[0], pivot[1] + r[1], pivot[2] + r[2]]
}

fn rotate_chain(pose: &mut [[f64; 3]; 15], pivot: usize, chain: &[usize], angle: f64, sagittal: bool) {
    let p = pose[pivot];
    for &j in chain {
        pose[j] = rotate(pose[j], p, angle, sagittal);
    }
}

/// One-sided raised-cosine profile in `[0, 1]`.
fn raise(phase: f64) -> f64 {
    0.5 * (1.0 - phase.cos())
}

/// Pose of motion family `family` at normalized time `u ∈ [0, 1]`.
fn synthetic_pose(family: usize, level: f64, u: f64, phase: f64, amp: f64) -> [[f64; 3]; 15] {
    let mut pose = rest_pose();
    let cycle = 2.0 * std::f64::consts::PI * u * (1.0 + 0.5 * level) + phase;
    let a = amp * raise(cycle);
    match family {
        // left hand toward the head
        0 => {
            rotate_chain(&mut pose, 3, &[4, 5], 1.2 * a, false);
            rotate_chain(&mut pose, 4, &[5], 1.4 * a, false);
        }
        // right leg swing
        1 => rotate_chain(&mut pose, 12, &[13, 14], 0.9 * a, true),
        // whole-body translation
        2 => {
            let shift = 0.4 * amp * u + 0.05 * a;
            for p in pose.iter_mut() {
                p[0] += shift;
            }
        }
        // wrists counter-rotating about the elbows
        _ => {
            rotate_chain(&mut pose, 4, &[5], 1.5 * a, true);
            rotate_chain(&mut pose, 7, &[8], -1.5 * a, true);
        }
    }
    pose
}

/// Seeded synthetic dataset on the bundled 15-joint skeleton.
///
/// Class `c` uses motion family `c % 4` (left hand to head, right leg
/// swing, body translation, counter-rotating wrists); classes beyond four
/// reuse a family at a faster tempo. Each sequence draws its own phase
/// offset and amplitude, then gets isotropic Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    if spec.classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.joints != 15 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data uses the 15-joint toy skeleton, got {} joints",
            spec.joints
        )));
    }
    if spec.frames < 3 || spec.per_class < 2 || spec.test_every < 2 {
        return Err(Error::InvalidArgument(
            "need frames >= 3, per_class >= 2 and test_every >= 2".into(),
        ));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..spec.classes {
        let family = class % 4;
        let level = (class / 4) as f64;
        for k in 0..spec.per_class {
            let phase = rng.random_range(0.0..0.6);
            let amp = rng.random_range(0.85..1.15);
            let frames = (0..spec.frames)
                .map(|t| {
                    let u = t as f64 / (spec.frames - 1) as f64;
                    let pose = synthetic_pose(family, level, u, phase, amp);
                    let data = pose
                        .iter()
                        .flatten()
                        .map(|&v| v + noise.sample(&mut rng))
                        .collect();
                    Matrix::new(15, 3, data)
                })
                .collect::<Result<Vec<_>>>()?;
            let seq = SkeletonSequence::new(frames, 1, 15, Some(class), "toy15", format!("synth-c{class}-{k:04}"))?;
            if k % spec.test_every == spec.test_every - 1 {
                test.push(seq);
            } else {
                train.push(seq);
            }
        }
    }
    let split = DatasetSplit {
        train,
        test,
        classes: spec.classes,
        seed: spec.seed,
    };
    split.validate()?;
    Ok(split)
}

/// `dataset.json` at the root of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: usize,
    pub seed: u64,
    pub topology: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "dataset.json";

/// Writes `dataset.json`, `train/*.jsonl` and `test/*.jsonl` under `dir`.
pub fn save_dataset(split: &DatasetSplit, dir: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    let mut names = (Vec::new(), Vec::new());
    for (sub, seqs, out) in [("train", &split.train, &mut names.0), ("test", &split.test, &mut names.1)] {
        let sub_dir = dir.join(sub);
        std::fs::create_dir_all(&sub_dir).map_err(|e| Error::io(&sub_dir, e))?;
        for seq in seqs {
            let rel = format!("{sub}/{}.jsonl", seq.source_id);
            save_sequence(seq, dir.join(&rel))?;
            out.push(rel);
        }
    }
    let topology = split
        .train
        .first()
        .map(|s| s.topology.clone())
        .unwrap_or_default();
    let manifest = DatasetManifest {
        classes: split.classes,
        seed: split.seed,
        topology,
        train: names.0,
        test: names.1,
        meta,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path: PathBuf = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let load_all = |names: &[String]| -> Result<Vec<SkeletonSequence>> {
        names.iter().map(|n| load_sequence(dir.join(n))).collect()
    };
    let split = DatasetSplit {
        train: load_all(&manifest.train)?,
        test: load_all(&manifest.test)?,
        classes: manifest.classes,
        seed: manifest.seed,
    };
    split.validate()?;
    Ok(split)
}
