//! Geometry-only octree baseline codec.
//!
//! `.oct` layout: `"OCT1" | depth u8 | origin 3 x f32 | edge f32 | masks`,
//! one child-occupancy byte per internal node in breadth-first order. Child
//! `c` of a node covers the octant with `x = c & 1`, `y = (c >> 1) & 1`,
//! `z = (c >> 2) & 1`. Decoding yields leaf-cell centres.
//!
//! The root cube starts at the bounding-box minimum (rounded down to `f32`)
//! and has a power-of-two edge, so origin and edge are exact in the stream
//! and every leaf edge is exact as well.

use crate::bitstream::{Reader, Writer};
use crate::geometry::Vec3;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OCT1";
pub const MAX_DEPTH: u8 = 16;
pub const MIN_ROOT_EDGE: f64 = 1.0 / 256.0;
pub const HEADER_BYTES: usize = 4 + 1 + 12 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeStream {
    pub depth: u8,
    pub origin: [f32; 3],
    pub edge: f32,
    pub masks: Vec<u8>,
}

impl OctreeStream {
    pub fn leaf_edge(&self) -> f64 {
        self.edge as f64 / (1u64 << self.depth) as f64
    }

    /// Half the leaf diagonal: the geometric error bound.
    pub fn error_bound(&self) -> f64 {
        self.leaf_edge() * 3f64.sqrt() / 2.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u8(self.depth);
        self.origin.iter().for_each(|&o| w.f32(o));
        w.f32(self.edge);
        w.bytes(&self.masks);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic.to_vec(),
            });
        }
        let depth = r.u8()?;
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::Malformed(format!("octree depth {depth} outside 1..=16")));
        }
        let origin = [r.f32()?, r.f32()?, r.f32()?];
        let edge = r.f32()?;
        if !(edge > 0.0 && edge.is_finite()) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Malformed("octree root cube is not finite and positive".into()));
        }
        let masks = r.take(bytes.len() - HEADER_BYTES)?.to_vec();
        Ok(Self {
            depth,
            origin,
            edge,
            masks,
        })
    }
}

/// Root cube: origin at the bounding-box minimum rounded down to f32, edge
/// the smallest power of two (at least [`MIN_ROOT_EDGE`]) strictly above the
/// largest span, so every point falls inside the half-open cube.
fn root_cube(points: &[Vec3]) -> Result<([f64; 3], f64)> {
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let origin = [0, 1, 2].map(|i| {
        let o = lo[i] as f32;
        if o as f64 > lo[i] {
            o.next_down() as f64
        } else {
            o as f64
        }
    });
    let span = (0..3).map(|i| hi[i] - origin[i]).fold(0.0, f64::max);
    let mut e = MIN_ROOT_EDGE;
    while e <= span {
        e *= 2.0;
    }
    if !(e as f32).is_finite() || origin.iter().any(|o| !o.is_finite()) {
        return Err(Error::invalid("point coordinates too large for the octree"));
    }
    Ok((origin, e))
}

/// Morton code of a leaf cell; three bits per level, root level first.
fn morton(ix: u64, iy: u64, iz: u64, depth: u8) -> u64 {
    let mut code = 0u64;
    for l in (0..depth).rev() {
        let child = ((ix >> l) & 1) | (((iy >> l) & 1) << 1) | (((iz >> l) & 1) << 2);
        code = (code << 3) | child;
    }
    code
}

fn unmorton(code: u64, depth: u8) -> [u64; 3] {
    let mut idx = [0u64; 3];
    for l in 0..depth {
        let child = (code >> (3 * (depth - 1 - l) as u32)) & 7;
        for (a, v) in idx.iter_mut().enumerate() {
            *v = (*v << 1) | ((child >> a) & 1);
        }
    }
    idx
}

/// Builds the occupancy stream of `points` at `depth`.
pub fn octree_encode_stream(points: &[Vec3], depth: u8) -> Result<OctreeStream> {
    if points.is_empty() {
        return Err(Error::Empty("octree_encode"));
    }
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::invalid(format!("octree depth {depth} outside 1..=16")));
    }
    let (origin, edge) = root_cube(points)?;
    let cells = 1u64 << depth;
    let leaf = edge / cells as f64;
    let mut codes: Vec<u64> = points
        .iter()
        .map(|p| {
            let i = [0, 1, 2].map(|a| (((p[a] - origin[a]) / leaf).floor().max(0.0) as u64).min(cells - 1));
            morton(i[0], i[1], i[2], depth)
        })
        .collect();
    codes.sort_unstable();
    codes.dedup();
    let mut masks = Vec::new();
    for level in 1..=depth {
        let shift = 3 * (depth - level) as u32;
        let mut current: Option<(u64, u8)> = None;
        let mut prev = u64::MAX;
        for &c in &codes {
            let node = c >> shift;
            if node == prev {
                continue;
            }
            prev = node;
            let (parent, child) = (node >> 3, (node & 7) as u8);
            match &mut current {
                Some((p, m)) if *p == parent => *m |= 1 << child,
                _ => {
                    if let Some((_, m)) = current {
                        masks.push(m);
                    }
                    current = Some((parent, 1 << child));
                }
            }
        }
        if let Some((_, m)) = current {
            masks.push(m);
        }
    }
    Ok(OctreeStream {
        depth,
        origin: origin.map(|o| o as f32),
        edge: edge as f32,
        masks,
    })
}

pub fn octree_encode(points: &[Vec3], depth: u8) -> Result<Vec<u8>> {
    Ok(octree_encode_stream(points, depth)?.to_bytes())
}

/// Leaf-cell centres in breadth-first (Morton) order.
pub fn octree_decode_stream(s: &OctreeStream) -> Result<Vec<Vec3>> {
    let mut nodes = vec![0u64];
    let mut pos = 0usize;
    for _ in 0..s.depth {
        let mut next = Vec::with_capacity(nodes.len() * 2);
        for &n in &nodes {
            let Some(&m) = s.masks.get(pos) else {
                return Err(Error::Truncated {
                    offset: HEADER_BYTES + pos,
                    needed: 1,
                });
            };
            pos += 1;
            if m == 0 {
                return Err(Error::Malformed(format!(
                    "empty child mask at byte {}",
                    HEADER_BYTES + pos - 1
                )));
            }
            next.extend((0..8u64).filter(|c| m >> c & 1 == 1).map(|c| (n << 3) | c));
        }
        nodes = next;
    }
    if pos != s.masks.len() {
        return Err(Error::Malformed(format!("{} trailing mask bytes", s.masks.len() - pos)));
    }
    let leaf = s.leaf_edge();
    let origin = s.origin.map(|o| o as f64);
    Ok(nodes
        .into_iter()
        .map(|code| {
            let i = unmorton(code, s.depth);
            Vec3::from_fn(|a, _| origin[a] + (i[a] as f64 + 0.5) * leaf)
        })
        .collect())
}

pub fn octree_decode(bytes: &[u8]) -> Result<Vec<Vec3>> {
    octree_decode_stream(&OctreeStream::from_bytes(bytes)?)
}
