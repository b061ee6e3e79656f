//! Scene-graph-aware point cloud compression.
//!
//! A labeled point cloud is split into a layered semantic scene graph
//! (terrain, infrastructure, objects, agents). Every node, or every terrain
//! sub-cell, becomes a fixed-size patch that a per-layer transformer
//! autoencoder compresses into a short latent vector. The transmitted payload
//! is the graph metadata plus those latents; a folding decoder rebuilds the
//! points from them.
//!
//! Module map:
//!
//! - [`geometry`]: clouds, OBB fitting, nearest neighbours, normals, voxels
//! - [`scene_graph`]: clustering, layering, edges, terrain tiling
//! - [`patching`]: patch extraction, normalization and fixed-size layout
//! - [`numerics`]: tensors, reverse-mode tape, Adam, checkpoints
//! - [`encoder`] / [`decoder`] / [`model`]: the per-layer autoencoder
//! - [`losses`]: Chamfer, density, mask BCE and the weighted objective
//! - [`bitstream`]: the `.sgpc` wire format and bpp accounting
//! - [`metrics`]: D_CD, point-to-plane distance, occupancy IoU
//! - [`octree`]: geometry-only octree baseline codec
//! - [`synth`], [`config`], [`train`], [`codec`], [`sweep`]: pipeline glue

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitstream;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod encoder;
mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod octree;
pub mod patching;
pub mod rng;
pub mod scene_graph;
pub mod sweep;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{LabeledPointCloud, ObbAttributes, OccupancyGrid, Vec3};
pub use scene_graph::{GraphNode, SceneGraph, SemanticClassTable};

/// Semantic class identifier as stored on the wire.
pub type ClassId = u16;

/// Number of semantic layers (terrain, infrastructure, objects, agents).
pub const NUM_LAYERS: usize = 4;
