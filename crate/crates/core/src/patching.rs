//! Patch extraction and the fixed-size, prefix-masked patch layout.

use rand::seq::index;

use crate::geometry::{LabeledPointCloud, ObbAttributes, Vec3};
use crate::rng;
use crate::scene_graph::{GraphNode, SceneGraph};
use crate::{ClassId, Error, Result};

/// Maximum points per patch for layers 1-4.
pub const DEFAULT_LAYER_CAPS: [usize; 4] = [720, 1720, 320, 1536];

/// Tolerance used for box membership and local-range checks.
pub const BOX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub node_id: u32,
    pub cell_index: u32,
    pub class_id: ClassId,
    pub layer: u8,
    /// `capacity` rows; rows `n_valid..` are zero.
    pub points_local: Vec<Vec3>,
    pub valid_mask: Vec<bool>,
    pub n_valid: usize,
    pub obb: ObbAttributes,
}

impl Patch {
    pub fn capacity(&self) -> usize {
        self.points_local.len()
    }

    pub fn valid_points(&self) -> &[Vec3] {
        &self.points_local[..self.n_valid]
    }

    /// Verifies the canonical prefix layout.
    pub fn check_canonical(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::invalid(format!(
                "patch {}/{}: {m}",
                self.node_id, self.cell_index
            )))
        };
        if self.valid_mask.len() != self.points_local.len() {
            return bad("mask length differs from row count".into());
        }
        if self.valid_mask.iter().filter(|&&v| v).count() != self.n_valid {
            return bad("n_valid disagrees with mask".into());
        }
        if self.valid_mask.iter().skip(self.n_valid).any(|&v| v) || self.valid_mask[..self.n_valid].iter().any(|&v| !v)
        {
            return bad("mask is not a prefix".into());
        }
        if self.points_local[self.n_valid..].iter().any(|p| *p != Vec3::zeros()) {
            return bad("padding row is non-zero".into());
        }
        let lim = 1.0 + BOX_TOL;
        if self.valid_points().iter().any(|p| p.iter().any(|c| !(c.abs() <= lim))) {
            return bad("valid coordinate outside [-1, 1]".into());
        }
        Ok(())
    }
}

/// Points of `node`'s class inside its box (or inside terrain cell `cell`'s
/// box), in cloud order.
pub fn extract_patch(cloud: &LabeledPointCloud, node: &GraphNode, cell: usize) -> Result<Vec<Vec3>> {
    let obb = patch_obb(node, cell)?;
    Ok(cloud
        .iter()
        .filter(|(p, l)| *l == node.class_id && obb.contains(p, BOX_TOL))
        .map(|(p, _)| *p)
        .collect())
}

fn patch_obb(node: &GraphNode, cell: usize) -> Result<&ObbAttributes> {
    match &node.terrain_cells {
        Some(cells) => cells
            .get(cell)
            .map(|c| &c.obb)
            .ok_or_else(|| Error::invalid(format!("node {} has no terrain cell {cell}", node.id))),
        None if cell == 0 => Ok(&node.obb),
        None => Err(Error::invalid(format!("non-terrain node {} only has cell 0", node.id))),
    }
}

/// World -> box-local unit frame: `2 R^T (x - c) / e`.
pub fn normalize_patch(points_world: &[Vec3], obb: &ObbAttributes) -> Result<Vec<Vec3>> {
    if obb.extent.iter().any(|e| !(*e >= 1e-6)) {
        return Err(Error::invalid(format!("degenerate extent {:?}", obb.extent)));
    }
    Ok(points_world.iter().map(|p| obb.normalize(p)).collect())
}

pub fn denormalize_patch(points_local: &[Vec3], obb: &ObbAttributes) -> Vec<Vec3> {
    points_local.iter().map(|u| obb.denormalize(u)).collect()
}

/// Subsamples (uniformly, without replacement) or zero-pads to `capacity`
/// rows. Kept points keep their relative order and form the valid prefix.
pub fn fix_size(points_local: &[Vec3], capacity: usize, seed: u64) -> (Vec<Vec3>, Vec<bool>) {
    assert!(capacity >= 1, "patch capacity must be positive");
    let n = points_local.len();
    let mut rows: Vec<Vec3> = if n > capacity {
        let mut picked = index::sample(&mut rng::stream(seed), n, capacity).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| points_local[i]).collect()
    } else {
        points_local.to_vec()
    };
    let n_valid = rows.len();
    rows.resize(capacity, Vec3::zeros());
    let mask = (0..capacity).map(|i| i < n_valid).collect();
    (rows, mask)
}

/// Builds the patch of an owned point set.
pub fn make_patch(
    node: &GraphNode,
    cell_index: u32,
    obb: &ObbAttributes,
    points_world: &[Vec3],
    capacity: usize,
    seed: u64,
) -> Result<Patch> {
    let local = normalize_patch(points_world, obb)?;
    let (points_local, valid_mask) = fix_size(&local, capacity, seed);
    let n_valid = valid_mask.iter().filter(|&&v| v).count();
    Ok(Patch {
        node_id: node.id,
        cell_index,
        class_id: node.class_id,
        layer: node.layer,
        points_local,
        valid_mask,
        n_valid,
        obb: *obb,
    })
}

/// All patches of a graph from each node's owned points: one per non-terrain
/// node, one per terrain cell.
pub fn graph_patches(cloud: &LabeledPointCloud, graph: &SceneGraph, caps: &[usize; 4]) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for node in &graph.nodes {
        let cap = caps[node.layer as usize - 1];
        match &node.terrain_cells {
            Some(cells) => {
                for (k, cell) in cells.iter().enumerate() {
                    let pts: Vec<Vec3> = cell.points.iter().map(|&i| cloud.points()[i]).collect();
                    let seed = rng::patch_seed(graph.frame_id, node.id, k as u32);
                    out.push(make_patch(node, k as u32, &cell.obb, &pts, cap, seed)?);
                }
            }
            None => {
                let pts: Vec<Vec3> = node.points.iter().map(|&i| cloud.points()[i]).collect();
                let seed = rng::patch_seed(graph.frame_id, node.id, 0);
                out.push(make_patch(node, 0, &node.obb, &pts, cap, seed)?);
            }
        }
    }
    Ok(out)
}
