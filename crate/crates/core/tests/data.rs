mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{random_sequence, rng};
use grgcn_core::data::{
    generate_synthetic, interpolate_to_length, load_dataset, save_dataset, segment_lengths, segment_split,
    SkeletonSequence, SyntheticSpec,
};
use grgcn_core::stgraph::concat_frames;
use grgcn_core::Matrix;
use proptest::prelude::*;

fn flatten(seq: &SkeletonSequence) -> Vec<f64> {
    seq.frames().iter().flat_map(|f| f.as_slice().iter().copied()).collect()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn hundred_sequences_round_trip() {
    let spec = SyntheticSpec { per_class: 25, ..SyntheticSpec::default() };
    let split = generate_synthetic(&spec).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&split, dir.path(), serde_json::json!({})).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.classes, 4);
    for (a, b) in split.train.iter().chain(&split.test).zip(back.train.iter().chain(&back.test)) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.source_id, b.source_id);
        assert_eq!(a.frames(), b.frames());
    }
}

#[test]
fn generator_output_is_byte_identical() {
    let spec = SyntheticSpec { per_class: 6, ..SyntheticSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(&generate_synthetic(&spec).unwrap(), a.path(), serde_json::json!({"k": 1})).unwrap();
    save_dataset(&generate_synthetic(&spec).unwrap(), b.path(), serde_json::json!({"k": 1})).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 1 + 24);
    assert_eq!(ta, tb);
    let other = SyntheticSpec { seed: spec.seed + 1, ..spec };
    assert_ne!(generate_synthetic(&other).unwrap().train[0].frames(), generate_synthetic(&spec).unwrap().train[0].frames());
}

#[test]
fn seventy_frames_into_32_segments() {
    let lengths = segment_lengths(70, 32);
    assert_eq!(lengths.iter().sum::<usize>(), 70);
    assert_eq!(lengths.iter().filter(|&&l| l == 3).count(), 6);
    assert_eq!(lengths.iter().filter(|&&l| l == 2).count(), 26);
    assert!(lengths[..6].iter().all(|&l| l == 3));
}

#[test]
fn four_picks_give_four_sequences_of_32() {
    let seq = random_sequence(3, 140, 1, &mut rng(61));
    let picks = segment_split(&seq, 32, &[1, 2, 3, 4]).unwrap();
    assert_eq!(picks.len(), 4);
    let lengths = segment_lengths(140, 32);
    for (k, p) in picks.iter().enumerate() {
        assert_eq!(p.len(), 32);
        assert_eq!(p.label, Some(1));
        let mut start = 0;
        for (s, len) in lengths.iter().enumerate() {
            assert_eq!(p.frame(s), seq.frame(start + k));
            start += len;
        }
    }
    assert!(segment_split(&seq, 32, &[5]).is_err());
    assert!(segment_split(&seq, 200, &[1]).is_err());
}

#[test]
fn interpolated_frames_are_neighbor_means() {
    let seq = random_sequence(4, 20, 0, &mut rng(62));
    let out = interpolate_to_length(&seq, 32, &mut rng(0)).unwrap();
    assert_eq!(out.len(), 32);
    let mut next_original = 0;
    let mut inserted = Vec::new();
    for (t, f) in out.frames().iter().enumerate() {
        if next_original < seq.len() && f == seq.frame(next_original) {
            next_original += 1;
        } else {
            inserted.push((t, next_original));
        }
    }
    assert_eq!(next_original, 20);
    assert_eq!(inserted.len(), 12);
    for (t, k) in inserted {
        let (a, b) = (seq.frame(k - 1), seq.frame(k));
        let want = Matrix::from_fn(4, 3, |i, j| 0.5 * (a.get(i, j) + b.get(i, j)));
        let got = out.frame(t);
        for i in 0..4 {
            for j in 0..3 {
                assert!((got.get(i, j) - want.get(i, j)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn noiseless_classes_are_centroid_separable() {
    let spec = SyntheticSpec { noise: 0.0, ..SyntheticSpec::default() };
    let split = generate_synthetic(&spec).unwrap();
    let dim = flatten(&split.train[0]).len();
    let mut centroids = vec![vec![0.0; dim]; spec.classes];
    let mut counts = vec![0usize; spec.classes];
    for s in &split.train {
        let c = s.label.unwrap();
        counts[c] += 1;
        for (acc, v) in centroids[c].iter_mut().zip(flatten(s)) {
            *acc += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    for s in &split.test {
        let x = flatten(s);
        let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..spec.classes).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
        assert_eq!(Some(best), s.label, "{}", s.source_id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocessing_preserves_joints(t0 in 2usize..60, n0 in 1usize..6, target in 3usize..50, seed in 0u64..1000) {
        let seq = random_sequence(n0, t0, 2, &mut rng(seed));
        let out = interpolate_to_length(&seq, target, &mut rng(seed + 1)).unwrap();
        prop_assert_eq!(out.len(), target);
        prop_assert_eq!(out.joints(), n0);
        prop_assert!(out.frames().iter().all(|f| f.is_finite()));
        prop_assert_eq!(concat_frames(&out).unwrap().len(), target - 2);
    }

    #[test]
    fn distinct_picks_take_distinct_frames(t0 in 8usize..120, segs in 1usize..8, seed in 0u64..1000) {
        let seq = random_sequence(2, t0, 0, &mut rng(seed));
        let shortest = t0 / segs;
        let picks: Vec<usize> = (1..=shortest.min(4)).collect();
        let out = segment_split(&seq, segs, &picks).unwrap();
        for s in 0..segs {
            for a in 0..out.len() {
                for b in a + 1..out.len() {
                    prop_assert_ne!(out[a].frame(s), out[b].frame(s));
                }
            }
        }
        for o in &out {
            prop_assert_eq!(o.joints(), 2);
            prop_assert_eq!(o.len(), segs);
        }
    }
}
