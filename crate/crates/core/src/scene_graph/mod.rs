//! Layered semantic scene graph.
//!
//! Points are clustered per class into nodes carrying OBB attributes. Terrain
//! nodes (layer 1) are tiled into cells; every node of layers 2-4 hangs off
//! its horizontally nearest terrain node, and the frame connects to all
//! terrain nodes. Points that no node claims land in the reserved "other"
//! terrain node so the nodes partition the cloud.

mod classes;
mod cluster;
mod terrain;

use std::collections::BTreeMap;
use std::fmt::Write;

pub use classes::{ClassInfo, SemanticClassTable};
pub use cluster::{cluster_class, euclidean_clusters, ClusterParams};
pub use terrain::{subdivide_terrain, TerrainCell};

use crate::geometry::{fit_obb, LabeledPointCloud, ObbAttributes, Vec3, MIN_EXTENT};
use crate::{ClassId, Error, Result};

/// Pseudo node id of the frame (layer 0) in edges and parent links.
pub const FRAME_ID: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: u32,
    pub layer: u8,
    pub class_id: ClassId,
    pub obb: ObbAttributes,
    /// Present exactly for terrain nodes.
    pub terrain_cells: Option<Vec<TerrainCell>>,
    /// Global indices of the points this node owns, ascending.
    pub points: Vec<usize>,
}

impl GraphNode {
    pub fn is_terrain(&self) -> bool {
        self.layer == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub frame_id: u32,
    pub nodes: Vec<GraphNode>,
    /// `(child, parent)` pairs; terrain nodes point at [`FRAME_ID`].
    pub edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    /// Connection distance per layer (terrain, infrastructure, objects, agents).
    pub cluster_cell: [f64; 4],
    pub min_points: usize,
    pub terrain_cell: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            cluster_cell: [2.0, 1.0, 0.5, 0.5],
            min_points: 10,
            terrain_cell: 8.0,
        }
    }
}

impl SceneGraph {
    pub fn node(&self, id: u32) -> Option<&GraphNode> {
        self.nodes.get(id as usize).filter(|n| n.id == id)
    }

    /// Parent of a node: the frame for terrain nodes, a terrain node otherwise.
    pub fn parent_of(&self, id: u32) -> Option<u32> {
        self.edges.iter().find(|(c, _)| *c == id).map(|(_, p)| *p)
    }

    pub fn layer_histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for n in &self.nodes {
            h[n.layer as usize - 1] += 1;
        }
        h
    }

    /// Line-oriented debug dump: `NODE id layer class cx cy cz ex ey ez qw qx qy qz`
    /// then `EDGE child parent` (frame printed as `F`).
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let (c, e, q) = (n.obb.center, n.obb.extent, n.obb.quaternion());
            writeln!(
                s,
                "NODE {} {} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                n.id, n.layer, n.class_id, c.x, c.y, c.z, e.x, e.y, e.z, q[0], q[1], q[2], q[3]
            )
            .unwrap();
        }
        for (a, b) in &self.edges {
            let b = if *b == FRAME_ID { "F".to_string() } else { b.to_string() };
            writeln!(s, "EDGE {a} {b}").unwrap();
        }
        s
    }
}

/// Builds the layered graph of a labeled cloud.
///
/// Node ids follow (layer, class id, cluster rank). Points of unknown
/// classes, of the reserved class, and of clusters below `min_points` all
/// belong to the "other" terrain node, which exists whenever it owns points
/// or no other terrain node exists.
pub fn build_scene_graph(
    cloud: &LabeledPointCloud,
    table: &SemanticClassTable,
    params: &GraphParams,
    frame_id: u32,
) -> Result<SceneGraph> {
    if table.is_empty() {
        return Err(Error::invalid("class table is empty"));
    }
    if cloud.is_empty() {
        return Err(Error::Empty("build_scene_graph"));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in cloud.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }

    let other = table.other_class();
    let mut leftovers: Vec<usize> = Vec::new();
    // (layer, class, rank, members)
    let mut found: Vec<(u8, ClassId, usize, Vec<usize>)> = Vec::new();
    for (class, members) in by_class {
        let layer = match table.layer_of(class) {
            Some(l) if class != other => l,
            _ => {
                leftovers.extend(members);
                continue;
            }
        };
        let cp = ClusterParams {
            cell: params.cluster_cell[layer as usize - 1],
            min_points: params.min_points,
        };
        let clusters = euclidean_clusters(cloud.points(), &members, cp);
        let claimed: usize = clusters.iter().map(Vec::len).sum();
        if claimed < members.len() {
            let mut owned = vec![false; cloud.len()];
            clusters.iter().flatten().for_each(|&i| owned[i] = true);
            leftovers.extend(members.iter().copied().filter(|&i| !owned[i]));
        }
        for (rank, c) in clusters.into_iter().enumerate() {
            found.push((layer, class, rank, c));
        }
    }
    leftovers.sort_unstable();

    let has_terrain = found.iter().any(|f| f.0 == 1);
    if !leftovers.is_empty() || !has_terrain {
        found.push((1, other, 0, leftovers));
    }
    found.sort_by_key(|a| (a.0, a.1, a.2));

    let mut nodes = Vec::with_capacity(found.len());
    for (id, (layer, class_id, _, members)) in found.into_iter().enumerate() {
        let pts: Vec<Vec3> = members.iter().map(|&i| cloud.points()[i]).collect();
        let obb = if pts.is_empty() {
            ObbAttributes::axis_aligned(Vec3::zeros(), Vec3::repeat(MIN_EXTENT))
        } else {
            fit_obb(&pts)?
        };
        let terrain_cells = (layer == 1).then(|| {
            if members.is_empty() {
                Vec::new()
            } else {
                subdivide_terrain(cloud.points(), &members, &obb, params.terrain_cell)
            }
        });
        nodes.push(GraphNode {
            id: id as u32,
            layer,
            class_id,
            obb,
            terrain_cells,
            points: members,
        });
    }
    let edges = connect_edges(&nodes);
    Ok(SceneGraph { frame_id, nodes, edges })
}

/// Frame -> every terrain node, and each layer >= 2 node -> the terrain node
/// with the nearest OBB centre in the horizontal plane (lower id on ties).
pub fn connect_edges(nodes: &[GraphNode]) -> Vec<(u32, u32)> {
    let terrain: Vec<&GraphNode> = nodes.iter().filter(|n| n.layer == 1).collect();
    let mut edges: Vec<(u32, u32)> = terrain.iter().map(|t| (t.id, FRAME_ID)).collect();
    for n in nodes.iter().filter(|n| n.layer >= 2) {
        let mut best: Option<(f64, u32)> = None;
        for t in &terrain {
            let d = horizontal_dist2(&n.obb.center, &t.obb.center);
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && t.id < bid)) {
                best = Some((d, t.id));
            }
        }
        if let Some((_, t)) = best {
            edges.push((n.id, t));
        }
    }
    edges.sort_unstable();
    edges
}

fn horizontal_dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn node(id: u32, layer: u8, x: f64, y: f64) -> GraphNode {
        GraphNode {
            id,
            layer,
            class_id: 0,
            obb: ObbAttributes::axis_aligned(Vec3::new(x, y, 0.0), Vec3::repeat(1.0)),
            terrain_cells: (layer == 1).then(Vec::new),
            points: Vec::new(),
        }
    }

    #[test]
    fn car_links_to_nearest_terrain() {
        let nodes = [node(0, 1, 0.0, 0.0), node(1, 1, 100.0, 0.0), node(2, 4, 1.0, 1.0)];
        let e = connect_edges(&nodes);
        assert!(e.contains(&(2, 0)));
        assert!(e.contains(&(0, FRAME_ID)) && e.contains(&(1, FRAME_ID)));
    }

    #[test]
    fn equidistant_terrain_prefers_lower_id() {
        let nodes = [node(0, 1, -5.0, 0.0), node(1, 1, 5.0, 0.0), node(2, 3, 0.0, 3.0)];
        assert!(connect_edges(&nodes).contains(&(2, 0)));
    }

    #[test]
    fn edges_match_brute_force_scan() {
        let mut rng = crate::rng::stream(40);
        for _ in 0..50 {
            let nodes: Vec<GraphNode> = (0..20)
                .map(|i| {
                    node(
                        i,
                        if i < 5 { 1 } else { rng.gen_range(2..=4) },
                        rng.gen_range(-50.0..50.0),
                        rng.gen_range(-50.0..50.0),
                    )
                })
                .collect();
            let edges = connect_edges(&nodes);
            for n in nodes.iter().filter(|n| n.layer >= 2) {
                let mut best = (f64::INFINITY, u32::MAX);
                for t in nodes.iter().filter(|t| t.layer == 1) {
                    let d = (n.obb.center.xy() - t.obb.center.xy()).norm_squared();
                    if d < best.0 {
                        best = (d, t.id);
                    }
                }
                let parents: Vec<_> = edges.iter().filter(|(c, _)| *c == n.id).collect();
                assert_eq!(parents, vec![&(n.id, best.1)]);
            }
        }
    }

    fn road_and_car() -> LabeledPointCloud {
        let mut c = LabeledPointCloud::default();
        for i in 0..40 {
            for j in 0..20 {
                c.push(Vec3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0), 0);
            }
        }
        for i in 0..8 {
            for j in 0..4 {
                for k in 0..3 {
                    c.push(
                        Vec3::new(5.0 + i as f64 * 0.3, 3.0 + j as f64 * 0.3, 0.5 + k as f64 * 0.3),
                        7,
                    );
                }
            }
        }
        c
    }

    #[test]
    fn minimal_scene_has_two_nodes() {
        let g = build_scene_graph(
            &road_and_car(),
            &SemanticClassTable::bundled(),
            &GraphParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.layer_histogram(), [1, 0, 0, 1]);
        let cross: Vec<_> = g.edges.iter().filter(|(_, p)| *p != FRAME_ID).collect();
        assert_eq!(cross, vec![&(1, 0)]);
    }

    #[test]
    fn unknown_labels_go_to_other_node() {
        let mut c = LabeledPointCloud::default();
        for i in 0..30 {
            c.push(Vec3::new(i as f64, 0.0, 0.0), 200);
        }
        let table = SemanticClassTable::bundled();
        let g = build_scene_graph(&c, &table, &GraphParams::default(), 0).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].class_id, table.other_class());
        assert_eq!(g.nodes[0].points, (0..30).collect::<Vec<_>>());
        assert_eq!(g.edges, vec![(0, FRAME_ID)]);
    }

    #[test]
    fn empty_inputs_fail() {
        let table = SemanticClassTable::bundled();
        assert!(build_scene_graph(&LabeledPointCloud::default(), &table, &GraphParams::default(), 0).is_err());
    }

    #[test]
    fn dump_is_line_oriented() {
        let g = build_scene_graph(
            &road_and_car(),
            &SemanticClassTable::bundled(),
            &GraphParams::default(),
            0,
        )
        .unwrap();
        let d = g.dump();
        assert_eq!(d.lines().filter(|l| l.starts_with("NODE ")).count(), 2);
        assert!(d.contains("EDGE 0 F"));
        assert!(d.contains("EDGE 1 0"));
        assert_eq!(d.lines().next().unwrap().split_whitespace().count(), 14);
    }
}
