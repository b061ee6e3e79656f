use crate::geometry::{fit_obb, ObbAttributes, Vec3};

/// One footprint tile of a terrain node.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainCell {
    pub obb: ObbAttributes,
    /// Global point indices, ascending.
    pub points: Vec<usize>,
}

/// Tiles the footprint (first two box axes) of a terrain OBB into
/// `cell_size x cell_size` columns and returns the non-empty ones in
/// row-major tile order, each with a tight box of its own points.
pub fn subdivide_terrain(points: &[Vec3], indices: &[usize], obb: &ObbAttributes, cell_size: f64) -> Vec<TerrainCell> {
    assert!(cell_size > 0.0, "terrain cell size must be positive");
    let cols = |a: usize| ((obb.extent[a] / cell_size).ceil() as i64).max(1);
    let (nx, ny) = (cols(0), cols(1));
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); (nx * ny) as usize];
    for &i in indices {
        let u = obb.to_box_frame(&points[i]);
        let ix = (((u[0] + obb.extent[0] / 2.0) / cell_size).floor() as i64).clamp(0, nx - 1);
        let iy = (((u[1] + obb.extent[1] / 2.0) / cell_size).floor() as i64).clamp(0, ny - 1);
        buckets[(ix * ny + iy) as usize].push(i);
    }
    buckets
        .into_iter()
        .filter(|b| !b.is_empty())
        .map(|mut b| {
            b.sort_unstable();
            let pts: Vec<Vec3> = b.iter().map(|&i| points[i]).collect();
            TerrainCell {
                obb: fit_obb(&pts).expect("bucket is non-empty"),
                points: b,
            }
        })
        .collect()
}
