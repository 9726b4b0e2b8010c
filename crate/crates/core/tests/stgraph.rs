mod common;

use common::{random_sequence, rng};
use grgcn_core::graph::EdgeClass;
use grgcn_core::regression::ClassifiedEdge;
use grgcn_core::stgraph::{
    apply_learned_graph, assemble_st_graph, build_spatial_block, build_temporal_block, build_template,
    concat_frames, BlockLayout, EdgeWeightScheme, FrameOffset, GraphVariant, SkeletonTopology,
};
use grgcn_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn chain(n: usize) -> SkeletonTopology {
    SkeletonTopology::new(n, (0..n - 1).map(|i| (i, i + 1)).collect(), vec![], vec![]).unwrap()
}

#[test]
fn two_joint_blocks_use_default_weights() {
    let topo = chain(2);
    let scheme = EdgeWeightScheme::default();
    assert_eq!((scheme.w1, scheme.w2), (5.0, 1.0));
    let s = build_spatial_block(&topo, &scheme).unwrap();
    assert_eq!(s.to_rows(), vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
    let t = build_temporal_block(&topo, &scheme).unwrap();
    assert_eq!(t.to_rows(), vec![vec![5.0, 1.0], vec![1.0, 5.0]]);
}

#[test]
fn toy15_spatial_block_matches_edge_list() {
    let topo = SkeletonTopology::toy15();
    let scheme = EdgeWeightScheme::default();
    let s = build_spatial_block(&topo, &scheme).unwrap();
    let mut oracle = Matrix::zeros(15, 15);
    for &(i, j) in topo.bones.iter().chain(&topo.nonphysical_strong) {
        oracle.set(i, j, 5.0);
        oracle.set(j, i, 5.0);
    }
    for &(i, j) in &topo.nonphysical_weak {
        oracle.set(i, j, 1.0);
        oracle.set(j, i, 1.0);
    }
    assert_eq!(s, oracle);
    for i in 0..15 {
        assert_eq!(s.get(i, i), 0.0);
    }
    let count = |w: f64| s.as_slice().iter().filter(|&&v| v == w).count();
    assert_eq!(count(5.0), 2 * (topo.bones.len() + topo.nonphysical_strong.len()));
    assert_eq!(count(1.0), 2 * topo.nonphysical_weak.len());
}

#[test]
fn chain_temporal_support_is_identity_plus_bones() {
    let topo = chain(4);
    let t = build_temporal_block(&topo, &EdgeWeightScheme::default()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let expected = i == j || usize::abs_diff(i, j) == 1;
            assert_eq!(t.get(i, j) != 0.0, expected, "({i},{j})");
        }
    }
}

#[test]
fn assembled_graph_has_block_pattern() {
    let mut r = rng(51);
    let n = 5;
    let mut s = Matrix::zeros(n, n);
    let mut t = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            if i != j && r.random::<f64>() < 0.5 {
                let w = if r.random::<bool>() { 5.0 } else { 1.0 };
                s.set(i, j, w);
                s.set(j, i, w);
            }
            if i == j || r.random::<f64>() < 0.3 {
                let w = r.random_range(0.5..2.0);
                t.set(i, j, w);
                t.set(j, i, w);
            }
        }
    }
    let st = assemble_st_graph(&s, &t).unwrap();
    let a = st.graph().adjacency();
    for u in 0..3 * n {
        for v in 0..3 * n {
            let (fu, fv) = (u / n, v / n);
            let want = match fu.abs_diff(fv) {
                0 => s.get(u % n, v % n),
                1 if fu < fv => t.get(u % n, v % n),
                1 => t.get(v % n, u % n),
                _ => 0.0,
            };
            assert_eq!(a.get(u, v), want, "({u},{v})");
            assert_eq!(a.get(u, v), a.get(v, u));
        }
    }
}

#[test]
fn learned_classes_set_weight_multiset() {
    let topo = SkeletonTopology::toy15();
    let scheme = EdgeWeightScheme::default();
    let template = build_template(&topo, &scheme, GraphVariant::Complete, 1).unwrap();
    let layout = template.layout();
    let mut r = rng(52);
    let classified: Vec<ClassifiedEdge> = template
        .edge_pairs()
        .into_iter()
        .filter_map(|(i, j)| match r.random_range(0..3) {
            0 => None,
            k => Some(ClassifiedEdge { i, j, class: layout.class_for(i, j, k == 1), mean_weight: 1.0 }),
        })
        .collect();
    let learned = apply_learned_graph(&template, &classified, &scheme).unwrap();
    let strong = classified.iter().filter(|e| e.class.is_strong()).count();
    let weak = classified.len() - strong;
    let weights: Vec<f64> = learned.graph().edges().iter().map(|e| e.2).collect();
    assert_eq!(weights.len(), classified.len());
    assert_eq!(weights.iter().filter(|&&w| w == 5.0).count(), strong);
    assert_eq!(weights.iter().filter(|&&w| w == 1.0).count(), weak);
    for e in &classified {
        assert_eq!(learned.graph().edge_class(e.i, e.j), Some(e.class));
    }
}

#[test]
fn concat_counts_for_reference_shapes() {
    let seq = random_sequence(25, 32, 0, &mut rng(53));
    let frames = concat_frames(&seq).unwrap();
    assert_eq!(frames.len(), 30);
    assert_eq!(frames[0].num_vertices(), 75);
}

fn template_strategy() -> impl Strategy<Value = (GraphVariant, usize)> {
    (prop_oneof![Just(GraphVariant::Bone), Just(GraphVariant::Intra), Just(GraphVariant::Complete)], 0usize..3)
}

proptest! {
    #[test]
    fn template_block_invariants((variant, hops) in template_strategy()) {
        let topo = SkeletonTopology::toy15();
        let scheme = EdgeWeightScheme::default();
        let st = build_template(&topo, &scheme, variant, hops).unwrap();
        let layout = st.layout();
        for v in 0..layout.vertices() {
            let (f, j) = layout.locate(v);
            prop_assert_eq!(layout.index(f, j), v);
        }
        let a = st.graph().adjacency();
        prop_assert_eq!(a.max_asymmetry().unwrap(), 0.0);
        prop_assert!(a.as_slice().iter().all(|&w| w == 0.0 || w == 5.0 || w == 1.0));
        let (f0, f1, f2) = (FrameOffset::from_index(0).unwrap(), FrameOffset::from_index(1).unwrap(), FrameOffset::from_index(2).unwrap());
        prop_assert_eq!(st.block(f0, f2).max_abs(), 0.0);
        prop_assert_eq!(st.block(f2, f0).max_abs(), 0.0);
        prop_assert_eq!(st.block(f0, f0), st.block(f1, f1));
        prop_assert_eq!(st.block(f1, f1), st.block(f2, f2));
        prop_assert_eq!(st.block(f0, f1), st.block(f1, f2));
        let temporal = st.block(f0, f1);
        let spatial_bones = build_spatial_block(&SkeletonTopology { nonphysical_strong: vec![], nonphysical_weak: vec![], ..topo.clone() }, &scheme).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                let allowed = i == j || spatial_bones.get(i, j) != 0.0;
                prop_assert!(temporal.get(i, j) == 0.0 || allowed || hops > 1);
                if i == j {
                    prop_assert_eq!(temporal.get(i, j), 5.0);
                }
            }
        }
        let layout2 = BlockLayout::for_vertices(45).unwrap();
        prop_assert_eq!(layout2, layout);
        for (i, j, _) in st.graph().edges() {
            let c = st.graph().edge_class(i, j).unwrap();
            let spatial = matches!(c, EdgeClass::StrongSpatial | EdgeClass::WeakSpatial);
            prop_assert_eq!(spatial, i / 15 == j / 15);
        }
    }

    #[test]
    fn concat_shape_law(t0 in 3usize..40, n0 in 1usize..9, seed in 0u64..1000) {
        let seq = random_sequence(n0, t0, 0, &mut rng(seed));
        let frames = concat_frames(&seq).unwrap();
        prop_assert_eq!(frames.len(), t0 - 2);
        for (k, f) in frames.iter().enumerate() {
            prop_assert_eq!(f.num_vertices(), 3 * n0);
            let src = f.source_frames();
            prop_assert_eq!(src, [k, k + 1, k + 2]);
            for (slot, &t) in src.iter().enumerate() {
                for j in 0..n0 {
                    prop_assert_eq!(f.coordinates(0).row(slot * n0 + j), seq.frame(t).row(j));
                }
            }
        }
    }
}
