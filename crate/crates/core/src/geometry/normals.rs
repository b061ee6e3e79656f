use nalgebra::SymmetricEigen;

use super::{KdTree, LabeledPointCloud, Mat3, Vec3};

/// Flips `n` so that z >= 0, breaking ties on y and then x.
pub fn orient_normal(n: Vec3) -> Vec3 {
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.y != 0.0 {
        n.y < 0.0
    } else {
        n.x < 0.0
    };
    if flip {
        -n
    } else {
        n
    }
}

pub fn estimate_normals(cloud: &LabeledPointCloud, radius: f64) -> Vec<Vec3> {
    estimate_normals_for_points(cloud.points(), radius)
}

/// PCA normals: smallest-eigenvalue eigenvector of the covariance of the
/// neighbours within `radius` (the point itself included). Fewer than three
/// neighbours yield `(0, 0, 1)`.
pub fn estimate_normals_for_points(points: &[Vec3], radius: f64) -> Vec<Vec3> {
    assert!(radius > 0.0, "normal radius must be positive, got {radius}");
    let tree = KdTree::new(points);
    points
        .iter()
        .map(|p| {
            let nbrs = tree.within_radius(p, radius);
            if nbrs.len() < 3 {
                return Vec3::z();
            }
            let n = nbrs.len() as f64;
            let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &i| acc + points[i]) / n;
            let mut cov = Mat3::zeros();
            for &i in &nbrs {
                let d = points[i] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov / n);
            let k = eig.eigenvalues.imin();
            let v: Vec3 = eig.eigenvectors.column(k).into_owned();
            let norm = v.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Vec3::z();
            }
            orient_normal(v / norm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn flat_grid_has_vertical_normals() {
        let pts: Vec<Vec3> = (0..20)
            .flat_map(|i| (0..20).map(move |j| Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0)))
            .collect();
        for n in estimate_normals_for_points(&pts, 0.5) {
            assert!((n - Vec3::z()).norm() < 1e-9);
        }
    }

    #[test]
    fn isolated_points_fall_back() {
        let pts = [Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)];
        assert_eq!(estimate_normals_for_points(&pts, 0.5), vec![Vec3::z(), Vec3::z()]);
    }

    #[test]
    fn tilted_noisy_plane() {
        let mut rng = crate::rng::stream(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let truth = Vec3::new(1.0, 1.0, 1.0).normalize();
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| {
                let x: f64 = rng.gen_range(-3.0..3.0);
                let y: f64 = rng.gen_range(-3.0..3.0);
                let on_plane = Vec3::new(x, y, -x - y);
                on_plane + truth * noise.sample(&mut rng)
            })
            .collect();
        let normals = estimate_normals_for_points(&pts, 0.5);
        let good = normals
            .iter()
            .filter(|n| n.dot(&truth) >= 5f64.to_radians().cos())
            .count();
        assert!(good as f64 >= 0.95 * pts.len() as f64, "{good}/{}", pts.len());
        for n in &normals {
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert_eq!(orient_normal(*n), *n);
        }
    }

    #[test]
    fn orientation_tie_breaks() {
        assert_eq!(orient_normal(Vec3::new(0.0, -1.0, 0.0)), Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(orient_normal(Vec3::new(-1.0, 0.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(orient_normal(Vec3::new(0.5, 0.5, -0.1)), Vec3::new(-0.5, -0.5, 0.1));
    }
}
