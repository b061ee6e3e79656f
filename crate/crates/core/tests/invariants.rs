//! Randomized invariant suites, 1000 cases each.

mod common;

use common::*;
use proptest::prelude::*;

use sgpc_core::decoder::decode_patch;
use sgpc_core::encoder::encode_patch;
use sgpc_core::geometry::{LabeledPointCloud, ObbAttributes, Vec3};
use sgpc_core::losses::chamfer;
use sgpc_core::model::LayerModel;
use sgpc_core::patching::{graph_patches, make_patch, Patch};
use sgpc_core::scene_graph::{build_scene_graph, GraphParams, FRAME_ID};
use sgpc_core::SemanticClassTable;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// A street-like cloud: points scattered over a 30 m square with a few
/// compact blobs, labels drawn from the bundled table plus unknown ids.
fn labeled_cloud() -> impl Strategy<Value = LabeledPointCloud> {
    let blob = (vec3(12.0), 0u16..10, 5usize..60, 0.1f64..1.5);
    let scatter = prop::collection::vec((vec3(15.0), 0u16..10), 1..150);
    (prop::collection::vec(blob, 0..6), scatter, any::<u64>()).prop_map(|(blobs, scatter, seed)| {
        let mut g = rng(seed);
        let mut cloud = LabeledPointCloud::default();
        for (p, l) in scatter {
            cloud.push(Vec3::new(p.x, p.y, p.z * 0.1), l);
        }
        for (c, l, n, r) in blobs {
            for q in points(&mut g, n, r) {
                cloud.push(c + q, l);
            }
        }
        cloud
    })
}

fn tiny_model(layer: u8, capacity: usize, seed: u64) -> LayerModel {
    let mut m = LayerModel::init(layer, tiny_layer(capacity, 8), 10, seed).unwrap();
    // Perturb FiLM away from identity so the class path is exercised.
    let mut g = rng(seed ^ 0xF11);
    for (name, p) in m.params.iter_mut() {
        if name.contains("film") {
            for v in p.value.data_mut() {
                *v += rand::Rng::gen_range(&mut g, -0.3f32..0.3);
            }
        }
    }
    m
}

#[test]
pub fn graph_partitions_points_and_respects_edges() {
    proptest!(cfg(), |(cloud in labeled_cloud())| {
    let table = SemanticClassTable::bundled();
    let g = build_scene_graph(&cloud, &table, &GraphParams::default(), 3).unwrap();
    let mut owner = vec![usize::MAX; cloud.len()];
    for (k, n) in g.nodes.iter().enumerate() {
        prop_assert_eq!(n.id as usize, k);
        prop_assert!((1..=4).contains(&n.layer));
        for &i in &n.points {
            prop_assert_eq!(owner[i], usize::MAX, "point {} owned twice", i);
            owner[i] = k;
        }
        match &n.terrain_cells {
            Some(cells) => {
                prop_assert_eq!(n.layer, 1);
                let mut all: Vec<usize> = cells.iter().flat_map(|c| c.points.iter().copied()).collect();
                all.sort_unstable();
                prop_assert_eq!(&all, &n.points);
            }
            None => prop_assert!(n.layer != 1),
        }
    }
    prop_assert!(owner.iter().all(|&o| o != usize::MAX));
    prop_assert_eq!(g.edges.len(), g.nodes.len());
    for n in &g.nodes {
        let parent = g.parent_of(n.id).unwrap();
        if n.layer == 1 {
            prop_assert_eq!(parent, FRAME_ID);
        } else {
            prop_assert_eq!(g.node(parent).map(|p| p.layer), Some(1));
        }
    }
    let patches = graph_patches(&cloud, &g, &[32, 32, 16, 16]).unwrap();
    for p in &patches {
        prop_assert!(p.check_canonical().is_ok());
    }
    });
}

#[test]
pub fn patches_have_canonical_prefix_layout() {
    proptest!(cfg(), |(pts in prop::collection::vec(vec3(3.0), 1..80), capacity in 1usize..64, seed in any::<u64>())| {
    let node = sgpc_core::GraphNode {
        id: 1,
        layer: 3,
        class_id: 5,
        obb: sgpc_core::geometry::fit_obb(&pts).unwrap(),
        terrain_cells: None,
        points: vec![],
    };
    let p = make_patch(&node, 0, &node.obb, &pts, capacity, seed).unwrap();
    prop_assert!(p.check_canonical().is_ok());
    prop_assert_eq!(p.n_valid, pts.len().min(capacity));
    prop_assert_eq!(p.capacity(), capacity);
    prop_assert!(p.valid_mask[..p.n_valid].iter().all(|&v| v));
    prop_assert!(p.points_local[p.n_valid..].iter().all(|q| *q == Vec3::zeros()));
    });
}

#[test]
pub fn chamfer_is_symmetric_and_non_negative() {
    proptest!(cfg(), |(a in prop::collection::vec(vec3(2.0), 1..64), b in prop::collection::vec(vec3(2.0), 1..64))| {
    let (ab, ba) = (chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
    prop_assert!(ab >= 0.0);
    prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    });
}

#[test]
pub fn encoder_is_permutation_invariant() {
    proptest!(cfg(), |(pts in prop::collection::vec(vec3(1.0), 1..=16), perm_seed in any::<u64>(), model_seed in 0u64..4, class_id in 0u16..10)| {
    let model = tiny_model(3, 16, model_seed);
    let n = pts.len();
    let patch = |order: &[usize]| {
        let mut rows: Vec<Vec3> = order.iter().map(|&i| pts[i]).collect();
        rows.resize(16, Vec3::zeros());
        Patch {
            node_id: 0,
            cell_index: 0,
            class_id,
            layer: 3,
            points_local: rows,
            valid_mask: (0..16).map(|i| i < n).collect(),
            n_valid: n,
            obb: ObbAttributes::axis_aligned(Vec3::zeros(), Vec3::repeat(2.0)),
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng(perm_seed));
    let enc = &model.config.encoder;
    let z0 = encode_patch(&patch(&(0..n).collect::<Vec<_>>()), enc, &model.params).unwrap().values;
    let z1 = encode_patch(&patch(&order), enc, &model.params).unwrap().values;
    let norm = z0.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
    let diff = z0.iter().zip(&z1).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt();
    prop_assert!(diff / norm <= 1e-5, "relative change {}", diff / norm);
    // The masked full-size path agrees with the prefix shortcut.
    let zm = sgpc_core::encoder::encode_patch_masked(&patch(&order), enc, &model.params).unwrap().values;
    let dm = z1.iter().zip(&zm).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt();
    prop_assert!(dm / norm <= 1e-5);
    });
}

#[test]
pub fn decoder_is_deterministic() {
    proptest!(cfg(), |(z in prop::collection::vec(-3.0f32..3.0, 8), node_id in 0u32..1000, cell in 0u32..8, center in vec3(20.0))| {
    let model = tiny_model(3, 16, 1);
    let obb = ObbAttributes::axis_aligned(center, Vec3::new(1.0, 2.0, 3.0));
    let d = &model.config.decoder;
    let a = decode_patch(&z, &obb, node_id, cell, d, &model.params).unwrap();
    let b = decode_patch(&z, &obb, node_id, cell, d, &model.params).unwrap();
    prop_assert_eq!(&a, &b);
    prop_assert_eq!(a.points_world.len(), 16);
    prop_assert!(a.confidence.iter().all(|c| *c > 0.0 && *c < 1.0));
    });
}
