use std::fs;
use std::io::Write;
use std::path::Path;

use super::Vec3;
use crate::{ClassId, Error, Result};

const LPC_MAGIC: [u8; 4] = *b"LPC1";

/// Bits per point of the raw `.lpc` record (3 x f32 + u16).
pub const RAW_BITS_PER_POINT: f64 = 112.0;

/// World-frame points with one semantic label each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    points: Vec<Vec3>,
    labels: Vec<ClassId>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Vec3>, labels: Vec<ClassId>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, labels })
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            points: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        }
    }

    /// Appends a point. Panics on non-finite coordinates.
    pub fn push(&mut self, point: Vec3, label: ClassId) {
        assert!(point.iter().all(|c| c.is_finite()), "non-finite point {point:?}");
        self.points.push(point);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &LabeledPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec3, ClassId)> + '_ {
        self.points.iter().zip(self.labels.iter().copied())
    }

    pub fn select(&self, indices: &[usize]) -> LabeledPointCloud {
        LabeledPointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Keeps the points within `radius` (3-D Euclidean) of the origin, in order.
    pub fn crop_radius(&self, radius: f64) -> LabeledPointCloud {
        assert!(radius > 0.0, "crop radius must be positive, got {radius}");
        let r2 = radius * radius;
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.points[i].norm_squared() <= r2)
            .collect();
        self.select(&keep)
    }

    /// Rounds every coordinate to f32, i.e. what a `.lpc` round trip yields.
    pub fn quantized_f32(&self) -> LabeledPointCloud {
        LabeledPointCloud {
            points: self.points.iter().map(|p| p.map(|c| c as f32 as f64)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn to_lpc_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * 14);
        out.extend_from_slice(&LPC_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (p, l) in self.iter() {
            for c in p.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    /// Parses either the binary `.lpc` layout or ASCII `x y z label` lines.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(&LPC_MAGIC) {
            Self::from_lpc(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Malformed("neither LPC1 binary nor UTF-8 text".into()))?;
            Self::from_ascii(text)
        }
    }

    fn from_lpc(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: 12 - bytes.len(),
            });
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        let expected = count
            .checked_mul(14)
            .ok_or_else(|| Error::Malformed(format!("point count {count} overflows")))?;
        if body.len() < expected {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: expected - body.len(),
            });
        }
        if body.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after {count} points",
                body.len() - expected
            )));
        }
        let mut cloud = Self::with_capacity(count);
        for rec in body.chunks_exact(14) {
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
            let p = Vec3::new(f(0), f(4), f(8));
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Malformed("non-finite coordinate".into()));
            }
            cloud.points.push(p);
            cloud.labels.push(u16::from_le_bytes([rec[12], rec[13]]));
        }
        Ok(cloud)
    }

    fn from_ascii(text: &str) -> Result<Self> {
        let mut cloud = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Malformed(format!("line {}: expected `x y z label`", lineno + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let mut xyz = [0.0; 3];
            for (dst, src) in xyz.iter_mut().zip(&fields[..3]) {
                *dst = src.parse::<f64>().map_err(|_| bad())?;
                if !dst.is_finite() {
                    return Err(bad());
                }
            }
            let label = fields[3].parse::<ClassId>().map_err(|_| bad())?;
            cloud.push(Vec3::from(xyz), label);
        }
        Ok(cloud)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_lpc_bytes()).map_err(|e| Error::io(path, e))
    }
}
