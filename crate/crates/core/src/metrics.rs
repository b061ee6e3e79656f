//! Reconstruction metrics and the evaluation report.
//!
//! Units: `d_cd` is in m² (mean squared distances), `d_perp` in m.

use serde::Serialize;

use crate::bitstream::{compression_rate, compute_bpp};
use crate::geometry::{estimate_normals_for_points, voxelize_occupancy, KdTree, LabeledPointCloud, Vec3};
use crate::losses::chamfer;
use crate::{Error, Result};

pub const IOU_RESOLUTION: [f64; 3] = [0.2, 0.2, 0.1];
pub const NORMAL_RADIUS: f64 = 0.5;

fn directed_perp(from: &[Vec3], to: &[Vec3], to_normals: &[Vec3]) -> f64 {
    let tree = KdTree::new(to);
    let sum: f64 = from
        .iter()
        .map(|x| {
            let (j, _) = tree.nearest(x).expect("non-empty");
            to_normals[j].dot(&(x - to[j])).abs()
        })
        .sum();
    sum / from.len() as f64
}

/// Symmetric point-to-plane distance. Each direction matches points to their
/// Euclidean nearest neighbour in the other set and projects the residual on
/// that neighbour's normal.
pub fn d_perp(src: &[Vec3], trg: &[Vec3], trg_normals: &[Vec3], src_normals: &[Vec3]) -> Result<f64> {
    if src.is_empty() || trg.is_empty() {
        return Err(Error::Empty("d_perp"));
    }
    if trg_normals.len() != trg.len() || src_normals.len() != src.len() {
        return Err(Error::ShapeMismatch {
            op: "d_perp",
            lhs: vec![src.len(), trg.len()],
            rhs: vec![src_normals.len(), trg_normals.len()],
        });
    }
    Ok(0.5 * directed_perp(src, trg, trg_normals) + 0.5 * directed_perp(trg, src, src_normals))
}

/// Grid origin shared by two clouds: the joint minimum corner floored to the
/// resolution grid.
pub fn joint_origin(a: &[Vec3], b: &[Vec3], resolution: Vec3) -> Vec3 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    for p in a.iter().chain(b) {
        lo = lo.inf(p);
    }
    Vec3::from_fn(|i, _| (lo[i] / resolution[i]).floor() * resolution[i])
}

/// Intersection over union of the occupied voxel sets; 1 when both are empty.
pub fn occupancy_iou(src: &[Vec3], trg: &[Vec3], resolution: Vec3) -> f64 {
    if src.is_empty() && trg.is_empty() {
        return 1.0;
    }
    let origin = joint_origin(src, trg, resolution);
    let a = voxelize_occupancy(src, resolution, origin);
    let b = voxelize_occupancy(trg, resolution, origin);
    let inter = a.intersection_count(&b);
    let union = a.occupied() + b.occupied() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub d_cd: f64,
    pub d_perp: f64,
    pub iou: f64,
    pub bpp: f64,
    pub compression_rate: f64,
    pub original_points: usize,
    pub reconstructed_points: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "d_cd,d_perp,iou,bpp,compression_rate,original_points,reconstructed_points";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.9},{:.9},{:.9},{:.9},{:.9},{},{}",
            self.d_cd,
            self.d_perp,
            self.iou,
            self.bpp,
            self.compression_rate,
            self.original_points,
            self.reconstructed_points
        )
    }

    pub fn text(&self) -> String {
        format!(
            "d_cd                 {:.9} m^2\n\
             d_perp               {:.9} m\n\
             iou                  {:.9}\n\
             bpp                  {:.9}\n\
             compression_rate     {:.9}\n\
             original_points      {}\n\
             reconstructed_points {}\n",
            self.d_cd,
            self.d_perp,
            self.iou,
            self.bpp,
            self.compression_rate,
            self.original_points,
            self.reconstructed_points
        )
    }
}

/// Full report for a decoded cloud and the stream it came from.
pub fn evaluate(
    original: &LabeledPointCloud,
    reconstructed: &LabeledPointCloud,
    stream_len: usize,
) -> Result<MetricsReport> {
    if original.is_empty() {
        return Err(Error::Empty("evaluate (original)"));
    }
    if reconstructed.is_empty() {
        return Err(Error::Empty("evaluate (reconstruction)"));
    }
    let (a, b) = (original.points(), reconstructed.points());
    let na = estimate_normals_for_points(a, NORMAL_RADIUS);
    let nb = estimate_normals_for_points(b, NORMAL_RADIUS);
    let bpp = compute_bpp(stream_len, original.len())?;
    Ok(MetricsReport {
        d_cd: chamfer(a, b)?,
        d_perp: d_perp(b, a, &na, &nb)?,
        iou: occupancy_iou(a, b, Vec3::from(IOU_RESOLUTION)),
        bpp,
        compression_rate: compression_rate(bpp),
        original_points: original.len(),
        reconstructed_points: reconstructed.len(),
    })
}
