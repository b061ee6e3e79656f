//! End-to-end encode and decode of labeled scenes.
//!
//! Encoding crops the cloud, builds the scene graph, encodes one latent per
//! patch (terrain cells and other nodes) and serializes the graph metadata
//! with the latents. Decoding rebuilds every patch from its latent and OBB,
//! keeps the points whose confidence reaches [`PRUNE_THRESHOLD`] and labels
//! them with the node's class.

use rayon::prelude::*;

use crate::bitstream::{self, EncodedCell, EncodedNode, EncodedScene, Precision, WireObb};
use crate::config::{RunConfig, DEFAULT_CROP_RADIUS};
use crate::decoder::decode_patch;
use crate::encoder::encode_patch;
use crate::model::CodecModel;
use crate::patching::{graph_patches, Patch};
use crate::scene_graph::{build_scene_graph, GraphParams, FRAME_ID};
use crate::{Error, LabeledPointCloud, Result, SceneGraph, SemanticClassTable, NUM_LAYERS};

/// Decoded points with confidence below this are dropped.
pub const PRUNE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOptions {
    pub crop_radius: f64,
    pub graph: GraphParams,
    pub precision: Precision,
    pub frame_id: u32,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            crop_radius: DEFAULT_CROP_RADIUS,
            graph: GraphParams::default(),
            precision: Precision::F32,
            frame_id: 0,
        }
    }
}

impl From<&RunConfig> for EncodeOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            crop_radius: c.crop_radius,
            graph: c.graph.clone(),
            precision: c.precision,
            frame_id: c.frame_id,
        }
    }
}

/// Everything produced while encoding one scene.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// The cropped cloud that was actually coded.
    pub cloud: LabeledPointCloud,
    /// `None` when the crop left no points.
    pub graph: Option<SceneGraph>,
    pub scene: EncodedScene,
    pub bytes: Vec<u8>,
}

fn model_dims(model: &CodecModel) -> [u16; NUM_LAYERS] {
    model.config.latent_dims().map(|d| d as u16)
}

/// Latent of one patch; an empty cell codes as zeros.
fn patch_latent(patch: &Patch, model: &CodecModel) -> Result<Vec<f32>> {
    let m = model.layer(patch.layer);
    if patch.n_valid == 0 {
        return Ok(vec![0.0; m.config.encoder.d_z]);
    }
    Ok(encode_patch(patch, &m.config.encoder, &m.params)?.values)
}

/// Encodes an already built graph of `cloud`.
pub fn encode_graph(
    cloud: &LabeledPointCloud,
    graph: &SceneGraph,
    model: &CodecModel,
    precision: Precision,
) -> Result<EncodedScene> {
    let patches = graph_patches(cloud, graph, &model.config.capacities())?;
    let latents = patches
        .par_iter()
        .map(|p| patch_latent(p, model))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = patches.iter().zip(latents);
    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let parent = graph.parent_of(node.id).unwrap_or(FRAME_ID);
        let count = node.terrain_cells.as_ref().map_or(1, |c| c.len());
        let node_cells = (0..count)
            .map(|k| {
                let (patch, latent) = cells.next().expect("one patch per cell");
                EncodedCell {
                    obb: node.terrain_cells.as_ref().map(|c| WireObb::from_obb(&c[k].obb)),
                    n_valid: patch.n_valid as u16,
                    latent,
                }
            })
            .collect();
        nodes.push(EncodedNode {
            id: node.id,
            layer: node.layer,
            class_id: node.class_id,
            parent,
            obb: WireObb::from_obb(&node.obb),
            cells: node_cells,
        });
    }
    let scene = EncodedScene {
        frame_id: graph.frame_id,
        point_count: cloud.len() as u32,
        dims: model_dims(model),
        nodes,
    };
    // Validates the scene as a side effect.
    bitstream::serialize(&scene, precision)?;
    Ok(scene)
}

/// Crop, graph, encode and serialize one scene.
pub fn encode_scene(
    cloud: &LabeledPointCloud,
    table: &SemanticClassTable,
    model: &CodecModel,
    opts: &EncodeOptions,
) -> Result<Encoded> {
    let cropped = cloud.crop_radius(opts.crop_radius);
    if cropped.len() > u32::MAX as usize {
        return Err(Error::invalid("scene has more than 2^32 - 1 points"));
    }
    let (graph, scene) = if cropped.is_empty() {
        (None, EncodedScene::empty(opts.frame_id, 0, model_dims(model)))
    } else {
        let graph = build_scene_graph(&cropped, table, &opts.graph, opts.frame_id)?;
        let scene = encode_graph(&cropped, &graph, model, opts.precision)?;
        (Some(graph), scene)
    };
    let bytes = bitstream::serialize(&scene, opts.precision)?;
    Ok(Encoded {
        cloud: cropped,
        graph,
        scene,
        bytes,
    })
}

/// Rebuilds a labeled cloud from a parsed scene.
pub fn decode_encoded(scene: &EncodedScene, model: &CodecModel) -> Result<LabeledPointCloud> {
    let dims = model_dims(model);
    if scene.dims != dims {
        return Err(Error::ConfigMismatch(format!(
            "stream latent widths {:?} differ from the model's {:?}",
            scene.dims, dims
        )));
    }
    let jobs: Vec<(&EncodedNode, usize)> = scene
        .nodes
        .iter()
        .flat_map(|n| (0..n.cells.len()).map(move |k| (n, k)))
        .filter(|(n, k)| n.cells[*k].n_valid > 0)
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(node, k)| {
            let cell = &node.cells[k];
            let obb = cell.obb.as_ref().unwrap_or(&node.obb).to_obb();
            let m = model.layer(node.layer);
            let rec = decode_patch(&cell.latent, &obb, node.id, k as u32, &m.config.decoder, &m.params)?;
            Ok((rec.pruned(PRUNE_THRESHOLD), node.class_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = LabeledPointCloud::with_capacity(parts.iter().map(|(p, _)| p.len()).sum());
    for (points, class) in parts {
        for p in points {
            out.push(p, class);
        }
    }
    Ok(out)
}

/// Parses and decodes a `.sgpc` stream.
pub fn decode_scene(bytes: &[u8], model: &CodecModel) -> Result<LabeledPointCloud> {
    let (scene, _) = bitstream::deserialize(bytes)?;
    decode_encoded(&scene, model)
}
