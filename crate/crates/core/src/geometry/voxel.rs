use std::collections::BTreeSet;

use super::{LabeledPointCloud, Vec3};

/// Sparse set of occupied cells on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec3,
    pub resolution: Vec3,
    pub dims: [u64; 3],
    pub cells: BTreeSet<[u64; 3]>,
}

impl OccupancyGrid {
    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn intersection_count(&self, other: &OccupancyGrid) -> usize {
        self.cells.intersection(&other.cells).count()
    }
}

impl LabeledPointCloud {
    pub fn voxelize(&self, resolution: Vec3, origin: Vec3) -> OccupancyGrid {
        voxelize_occupancy(self.points(), resolution, origin)
    }
}

/// Cell index per axis is `floor((x - origin) / resolution)`. Points below the
/// origin on any axis have no non-negative cell and are skipped.
pub fn voxelize_occupancy(points: &[Vec3], resolution: Vec3, origin: Vec3) -> OccupancyGrid {
    assert!(
        resolution.iter().all(|r| *r > 0.0),
        "voxel resolution must be positive, got {resolution:?}"
    );
    let mut cells = BTreeSet::new();
    let mut dims = [0u64; 3];
    for p in points {
        let mut cell = [0u64; 3];
        let mut inside = true;
        for a in 0..3 {
            let f = ((p[a] - origin[a]) / resolution[a]).floor();
            if f < 0.0 {
                inside = false;
                break;
            }
            cell[a] = f as u64;
        }
        if inside {
            for a in 0..3 {
                dims[a] = dims[a].max(cell[a] + 1);
            }
            cells.insert(cell);
        }
    }
    OccupancyGrid {
        origin,
        resolution,
        dims,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use std::collections::HashSet;

    const RES: Vec3 = Vec3::new(0.2, 0.2, 0.1);

    #[test]
    fn single_point_single_cell() {
        let g = voxelize_occupancy(&[Vec3::new(0.05, 0.05, 0.05)], RES, Vec3::zeros());
        assert_eq!(g.cells.into_iter().collect::<Vec<_>>(), vec![[0, 0, 0]]);
        assert_eq!(g.dims, [1, 1, 1]);
    }

    #[test]
    fn shared_cell_counts_once() {
        let g = voxelize_occupancy(
            &[Vec3::new(0.05, 0.05, 0.05), Vec3::new(0.15, 0.1, 0.09)],
            RES,
            Vec3::zeros(),
        );
        assert_eq!(g.occupied(), 1);
    }

    #[test]
    fn random_points_match_floor_set_and_permutation() {
        let mut rng = crate::rng::stream(6);
        let mut pts: Vec<Vec3> = (0..1000)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        let oracle: HashSet<(i64, i64, i64)> = pts
            .iter()
            .map(|p| {
                (
                    (p.x / 0.2).floor() as i64,
                    (p.y / 0.2).floor() as i64,
                    (p.z / 0.1).floor() as i64,
                )
            })
            .collect();
        let g = voxelize_occupancy(&pts, RES, Vec3::zeros());
        assert_eq!(g.occupied(), oracle.len());
        for c in &g.cells {
            assert!((0..3).all(|a| c[a] < g.dims[a]));
        }
        pts.shuffle(&mut rng);
        assert_eq!(voxelize_occupancy(&pts, RES, Vec3::zeros()), g);
    }
}
