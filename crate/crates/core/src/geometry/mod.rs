//! Point containers and geometric kernels.

mod cloud;
mod kdtree;
mod normals;
mod obb;
mod voxel;

pub use cloud::{LabeledPointCloud, RAW_BITS_PER_POINT};
pub use kdtree::{nearest_neighbor, KdTree};
pub use normals::{estimate_normals, estimate_normals_for_points, orient_normal};
pub use obb::{fit_obb, ObbAttributes, MIN_EXTENT};
pub use voxel::{voxelize_occupancy, OccupancyGrid};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[inline]
pub(crate) fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
