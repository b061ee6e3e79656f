//! The `.sgpc` wire format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SGPC" | version u8 | flags u8 | frame_id u32 | point_count u32 | dz u16 x4 | node_count u32
//! per node: id u32 | layer u8 | class u16 | parent u32 | obb 10 x f32 | cell_count u16
//!   per cell: [obb 10 x f32, terrain only] | n_valid u16 | latent dz x (f32 | f16)
//! crc32 u32 over every preceding byte
//! ```
//!
//! An OBB is centre (3), extent (3) and a unit quaternion `w, x, y, z` with
//! `w >= 0`. Flag bit 0 selects half-precision latents.

use half::f16;

use crate::geometry::{ObbAttributes, Vec3, RAW_BITS_PER_POINT};
use crate::{ClassId, Error, Result, NUM_LAYERS};

pub const MAGIC: [u8; 4] = *b"SGPC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 1 + 4 + 4 + 2 * NUM_LAYERS + 4;
pub const TRAILER_BYTES: usize = 4;
pub const OBB_BYTES: usize = 10 * 4;
pub const NODE_BYTES: usize = 4 + 1 + 2 + 4 + OBB_BYTES + 2;
const FLAG_F16: u8 = 1;
const QUAT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F16,
}

impl Precision {
    pub fn bytes_per_value(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 => 2,
        }
    }
}

/// An OBB as stored on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireObb {
    pub center: [f32; 3],
    pub extent: [f32; 3],
    /// `[w, x, y, z]`
    pub rotation: [f32; 4],
}

impl WireObb {
    pub fn from_obb(obb: &ObbAttributes) -> Self {
        let q = obb.quaternion();
        Self {
            center: [obb.center.x as f32, obb.center.y as f32, obb.center.z as f32],
            extent: [obb.extent.x as f32, obb.extent.y as f32, obb.extent.z as f32],
            rotation: q.map(|c| c as f32),
        }
    }

    pub fn to_obb(&self) -> ObbAttributes {
        let v = |a: [f32; 3]| Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64);
        ObbAttributes::from_quaternion(v(self.center), v(self.extent), self.rotation.map(|c| c as f64))
    }

    fn validate(&self) -> Result<()> {
        let norm = self.rotation.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUAT_TOL {
            return Err(Error::invalid(format!("quaternion norm {norm} is not 1")));
        }
        if self.rotation[0] < 0.0 {
            return Err(Error::invalid("quaternion scalar part is negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCell {
    /// Present exactly for terrain cells.
    pub obb: Option<WireObb>,
    pub n_valid: u16,
    pub latent: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedNode {
    pub id: u32,
    pub layer: u8,
    pub class_id: ClassId,
    /// Terrain node this node hangs off, or the frame id for terrain nodes.
    pub parent: u32,
    pub obb: WireObb,
    pub cells: Vec<EncodedCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedScene {
    pub frame_id: u32,
    pub point_count: u32,
    /// Latent width per layer.
    pub dims: [u16; NUM_LAYERS],
    pub nodes: Vec<EncodedNode>,
}

impl EncodedScene {
    pub fn empty(frame_id: u32, point_count: u32, dims: [u16; NUM_LAYERS]) -> Self {
        Self {
            frame_id,
            point_count,
            dims,
            nodes: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        for node in &self.nodes {
            if !(1..=NUM_LAYERS as u8).contains(&node.layer) {
                return Err(Error::invalid(format!("node {} has layer {}", node.id, node.layer)));
            }
            node.obb.validate()?;
            let terrain = node.layer == 1;
            if !terrain && node.cells.len() != 1 {
                return Err(Error::invalid(format!(
                    "non-terrain node {} carries {} latents",
                    node.id,
                    node.cells.len()
                )));
            }
            if node.cells.len() > u16::MAX as usize {
                return Err(Error::invalid(format!("node {} has too many cells", node.id)));
            }
            let dz = self.dims[node.layer as usize - 1] as usize;
            for cell in &node.cells {
                if cell.obb.is_some() != terrain {
                    return Err(Error::invalid(format!("cell OBB presence wrong for node {}", node.id)));
                }
                if let Some(o) = &cell.obb {
                    o.validate()?;
                }
                if cell.latent.len() != dz {
                    return Err(Error::invalid(format!(
                        "node {} latent has {} values, layer {} expects {dz}",
                        node.id,
                        cell.latent.len(),
                        node.layer
                    )));
                }
            }
        }
        Ok(())
    }

    /// Byte length of the serialized stream, from the layout alone.
    pub fn stream_size(&self, precision: Precision) -> usize {
        let bpv = precision.bytes_per_value();
        HEADER_BYTES
            + TRAILER_BYTES
            + self
                .nodes
                .iter()
                .map(|n| {
                    let per_cell =
                        if n.layer == 1 { OBB_BYTES } else { 0 } + 2 + self.dims[n.layer as usize - 1] as usize * bpv;
                    NODE_BYTES + n.cells.len() * per_cell
                })
                .sum::<usize>()
    }
}

/// Little-endian byte sink.
#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
    fn obb(&mut self, o: &WireObb) {
        o.center
            .iter()
            .chain(&o.extent)
            .chain(&o.rotation)
            .for_each(|&v| self.f32(v));
    }
}

/// Little-endian cursor; running past the end is a [`Error::Truncated`].
#[derive(Debug)]
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }
    pub(crate) fn ensure(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - left,
            });
        }
        Ok(())
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
    pub(crate) fn position(&self) -> usize {
        self.pos
    }
    fn obb(&mut self) -> Result<WireObb> {
        let mut v = [0f32; 10];
        for x in &mut v {
            *x = self.f32()?;
        }
        let o = WireObb {
            center: [v[0], v[1], v[2]],
            extent: [v[3], v[4], v[5]],
            rotation: [v[6], v[7], v[8], v[9]],
        };
        o.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(o)
    }
}

pub fn serialize(scene: &EncodedScene, precision: Precision) -> Result<Vec<u8>> {
    scene.validate()?;
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u8(VERSION);
    w.u8(if precision == Precision::F16 { FLAG_F16 } else { 0 });
    w.u32(scene.frame_id);
    w.u32(scene.point_count);
    scene.dims.iter().for_each(|&d| w.u16(d));
    w.u32(scene.nodes.len() as u32);
    for node in &scene.nodes {
        w.u32(node.id);
        w.u8(node.layer);
        w.u16(node.class_id);
        w.u32(node.parent);
        w.obb(&node.obb);
        w.u16(node.cells.len() as u16);
        for cell in &node.cells {
            if let Some(o) = &cell.obb {
                w.obb(o);
            }
            w.u16(cell.n_valid);
            for &v in &cell.latent {
                match precision {
                    Precision::F32 => w.f32(v),
                    Precision::F16 => w.u16(f16::from_f32(v).to_bits()),
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.into_bytes())
}

/// Parses a stream. Magic and version are checked first, then the CRC over
/// everything before the trailer, then the body.
pub fn deserialize(bytes: &[u8]) -> Result<(EncodedScene, Precision)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_BYTES + TRAILER_BYTES {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: HEADER_BYTES + TRAILER_BYTES - bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_BYTES);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader::new(body);
    r.take(5)?;
    let flags = r.u8()?;
    if flags & !FLAG_F16 != 0 {
        return Err(Error::Malformed(format!("unknown flag bits {flags:#04x}")));
    }
    let precision = if flags & FLAG_F16 != 0 {
        Precision::F16
    } else {
        Precision::F32
    };
    let frame_id = r.u32()?;
    let point_count = r.u32()?;
    let mut dims = [0u16; NUM_LAYERS];
    for d in &mut dims {
        *d = r.u16()?;
    }
    let node_count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(node_count.min(body.len() / NODE_BYTES));
    for _ in 0..node_count {
        let id = r.u32()?;
        let layer = r.u8()?;
        if !(1..=NUM_LAYERS as u8).contains(&layer) {
            return Err(Error::Malformed(format!("node {id} has layer {layer}")));
        }
        let class_id = r.u16()?;
        let parent = r.u32()?;
        let obb = r.obb()?;
        let cell_count = r.u16()? as usize;
        if layer != 1 && cell_count != 1 {
            return Err(Error::Malformed(format!(
                "non-terrain node {id} has {cell_count} cells"
            )));
        }
        let dz = dims[layer as usize - 1] as usize;
        let mut cells = Vec::with_capacity(cell_count);
        for _ in 0..cell_count {
            let cell_obb = if layer == 1 { Some(r.obb()?) } else { None };
            let n_valid = r.u16()?;
            r.ensure(dz * precision.bytes_per_value())?;
            let latent = (0..dz)
                .map(|_| match precision {
                    Precision::F32 => r.f32(),
                    Precision::F16 => r.u16().map(|b| f16::from_bits(b).to_f32()),
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(EncodedCell {
                obb: cell_obb,
                n_valid,
                latent,
            });
        }
        nodes.push(EncodedNode {
            id,
            layer,
            class_id,
            parent,
            obb,
            cells,
        });
    }
    if !r.is_empty() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes before the checksum",
            body.len() - r.position()
        )));
    }
    Ok((
        EncodedScene {
            frame_id,
            point_count,
            dims,
            nodes,
        },
        precision,
    ))
}

/// Bits per original point.
pub fn compute_bpp(byte_len: usize, original_point_count: usize) -> Result<f64> {
    if original_point_count == 0 {
        return Err(Error::Empty("compute_bpp"));
    }
    Ok(8.0 * byte_len as f64 / original_point_count as f64)
}

/// `1 - bpp / 112`, clamped at zero.
pub fn compression_rate(bpp: f64) -> f64 {
    (1.0 - bpp / RAW_BITS_PER_POINT).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident() -> WireObb {
        WireObb {
            center: [1.0, 2.0, 3.0],
            extent: [4.0, 5.0, 6.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    fn sample() -> EncodedScene {
        let mut s = EncodedScene::empty(7, 1000, [2, 3, 1, 2]);
        s.nodes.push(EncodedNode {
            id: 0,
            layer: 1,
            class_id: 0,
            parent: u32::MAX,
            obb: ident(),
            cells: vec![
                EncodedCell {
                    obb: Some(ident()),
                    n_valid: 5,
                    latent: vec![0.5, -1.0],
                },
                EncodedCell {
                    obb: Some(ident()),
                    n_valid: 9,
                    latent: vec![1.5, 2.0],
                },
            ],
        });
        s.nodes.push(EncodedNode {
            id: 1,
            layer: 3,
            class_id: 5,
            parent: 0,
            obb: ident(),
            cells: vec![EncodedCell {
                obb: None,
                n_valid: 80,
                latent: vec![0.25],
            }],
        });
        s
    }

    #[test]
    fn empty_scene_is_thirty_bytes() {
        let bytes = serialize(&EncodedScene::empty(0, 1, [8; 4]), Precision::F32).unwrap();
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn round_trip_and_size() {
        let s = sample();
        for p in [Precision::F32, Precision::F16] {
            let bytes = serialize(&s, p).unwrap();
            assert_eq!(bytes.len(), s.stream_size(p));
            let (back, prec) = deserialize(&bytes).unwrap();
            assert_eq!(prec, p);
            assert_eq!(back, s);
            assert_eq!(serialize(&back, p).unwrap(), bytes);
        }
    }

    #[test]
    fn bpp_arithmetic() {
        assert_eq!(compute_bpp(1000, 1000).unwrap(), 8.0);
        assert!(compute_bpp(10, 0).is_err());
        assert_eq!(compression_rate(11.2), 0.9);
    }

    #[test]
    fn distinct_errors() {
        let bytes = serialize(&sample(), Precision::F32).unwrap();
        let mut b = bytes.clone();
        b[1] ^= 1;
        assert!(matches!(deserialize(&b), Err(Error::BadMagic { .. })));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(matches!(deserialize(&b), Err(Error::UnsupportedVersion(2))));
        let mut b = bytes.clone();
        b[20] ^= 0x40;
        assert!(matches!(deserialize(&b), Err(Error::ChecksumMismatch { .. })));
        assert!(matches!(deserialize(&bytes[..12]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn rejects_bad_latent_length_and_quaternion() {
        let mut s = sample();
        s.nodes[1].cells[0].latent.push(0.0);
        assert!(serialize(&s, Precision::F32).is_err());
        let mut s = sample();
        s.nodes[0].obb.rotation = [0.9, 0.0, 0.0, 0.0];
        assert!(serialize(&s, Precision::F32).is_err());
    }
}
