use nalgebra::{Quaternion, Rotation3, SymmetricEigen, UnitQuaternion};

use super::{Mat3, Vec3};
use crate::{Error, Result};

/// Smallest extent assigned to any OBB axis (metres).
pub const MIN_EXTENT: f64 = 0.01;

/// Oriented bounding box: centre, full side lengths, and a rotation whose
/// columns are the box axes in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbAttributes {
    pub center: Vec3,
    pub extent: Vec3,
    pub rotation: Mat3,
}

impl ObbAttributes {
    pub fn axis_aligned(center: Vec3, extent: Vec3) -> Self {
        Self {
            center,
            extent,
            rotation: Mat3::identity(),
        }
    }

    /// Point expressed in the box frame, relative to the centre.
    pub fn to_box_frame(&self, x: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(x - self.center))
    }

    pub fn contains(&self, x: &Vec3, tol: f64) -> bool {
        let u = self.to_box_frame(x);
        (0..3).all(|a| u[a].abs() <= self.extent[a] / 2.0 + tol)
    }

    /// Maps a world point into the box's unit cube `[-1, 1]^3`.
    pub fn normalize(&self, x: &Vec3) -> Vec3 {
        self.to_box_frame(x).component_div(&self.extent) * 2.0
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, u: &Vec3) -> Vec3 {
        self.center + self.rotation * (u.component_mul(&self.extent) * 0.5)
    }

    /// Rotation as a unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let mut wxyz = [q.w, q.i, q.j, q.k];
        if wxyz[0] < 0.0 {
            wxyz.iter_mut().for_each(|c| *c = -*c);
        }
        wxyz
    }

    pub fn from_quaternion(center: Vec3, extent: Vec3, wxyz: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
        Self {
            center,
            extent,
            rotation: q.to_rotation_matrix().into_inner(),
        }
    }

    /// Checks the box invariants: positive finite extents and a proper rotation.
    pub fn validate(&self) -> Result<()> {
        if !self.extent.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(Error::invalid(format!("non-positive OBB extent {:?}", self.extent)));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("non-finite OBB centre"));
        }
        let orth = (self.rotation.transpose() * self.rotation - Mat3::identity())
            .abs()
            .max();
        let det = self.rotation.determinant();
        if orth > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "OBB rotation is not in SO(3) (orthogonality error {orth:e}, det {det})"
            )));
        }
        Ok(())
    }
}

/// PCA box fit.
///
/// Axes are covariance eigenvectors by descending eigenvalue. Each axis is
/// flipped so its largest-magnitude component is positive, then the last axis
/// is flipped if needed to make the frame right-handed. The centre is the
/// midpoint of the bounds in that frame and every extent is at least
/// [`MIN_EXTENT`].
pub fn fit_obb(points: &[Vec3]) -> Result<ObbAttributes> {
    if points.is_empty() {
        return Err(Error::Empty("fit_obb"));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let scale = cov.abs().max();
    let rotation = if scale <= f64::MIN_POSITIVE {
        Mat3::identity()
    } else {
        principal_axes(cov)
    };

    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        let u = rotation.tr_mul(p);
        lo = lo.inf(&u);
        hi = hi.sup(&u);
    }
    let center = rotation * ((lo + hi) * 0.5);
    let extent = (hi - lo).map(|w| w.max(MIN_EXTENT));
    Ok(ObbAttributes {
        center,
        extent,
        rotation,
    })
}

fn principal_axes(cov: Mat3) -> Mat3 {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    // stable sort keeps the solver's order for equal eigenvalues
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut r = Mat3::zeros();
    for (col, &src) in order.iter().enumerate() {
        let mut v: Vec3 = eig.eigenvectors.column(src).into_owned();
        v.normalize_mut();
        let mut arg = 0;
        for a in 1..3 {
            if v[a].abs() > v[arg].abs() {
                arg = a;
            }
        }
        if v[arg] < 0.0 {
            v = -v;
        }
        r.set_column(col, &v);
    }
    if r.determinant() < 0.0 {
        let last: Vec3 = -r.column(2).into_owned();
        r.set_column(2, &last);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn symmetric_cross_is_axis_aligned() {
        let pts = [
            v(1.0, 0.0, 0.0),
            v(-1.0, 0.0, 0.0),
            v(0.0, 0.5, 0.0),
            v(0.0, -0.5, 0.0),
            v(0.0, 0.0, 0.1),
            v(0.0, 0.0, -0.1),
        ];
        let obb = fit_obb(&pts).unwrap();
        assert!(obb.center.norm() < 1e-12);
        assert!((obb.extent - v(2.0, 1.0, 0.2)).norm() < 1e-12);
        assert!((obb.rotation - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn single_point_uses_floor() {
        let obb = fit_obb(&[v(3.0, 4.0, 5.0)]).unwrap();
        assert_eq!(obb.center, v(3.0, 4.0, 5.0));
        assert_eq!(obb.extent, Vec3::repeat(MIN_EXTENT));
        assert_eq!(obb.rotation, Mat3::identity());
    }

    #[test]
    fn empty_input_fails() {
        assert!(matches!(fit_obb(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn recovers_known_rotation() {
        let mut rng = crate::rng::stream(11);
        let r0 = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let pts: Vec<Vec3> = (0..200)
            .map(|_| {
                let local = v(
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-0.3..0.3),
                );
                r0 * local + v(10.0, -3.0, 2.0)
            })
            .collect();
        let obb = fit_obb(&pts).unwrap();
        obb.validate().unwrap();
        for a in 0..3 {
            let cos = obb.rotation.column(a).dot(&r0.column(a)).abs();
            assert!(
                cos >= 5f64.to_radians().cos(),
                "axis {a} off by {} deg",
                cos.acos().to_degrees()
            );
        }
        for p in &pts {
            assert!(obb.contains(p, 1e-6));
        }
    }

    #[test]
    fn sign_convention_and_containment_on_random_clusters() {
        let mut rng = crate::rng::stream(12);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    v(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let obb = fit_obb(&pts).unwrap();
            obb.validate().unwrap();
            assert!(obb.extent.iter().all(|e| *e >= MIN_EXTENT));
            for p in &pts {
                assert!(obb.contains(p, 1e-6));
            }
            for a in 0..2 {
                let col = obb.rotation.column(a);
                let big = col
                    .iter()
                    .copied()
                    .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
                assert!(big > 0.0);
            }
        }
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = crate::rng::stream(13);
        let obb = ObbAttributes {
            center: v(1.0, 2.0, 3.0),
            extent: v(4.0, 2.0, 0.5),
            rotation: Rotation3::from_euler_angles(0.2, 0.4, -0.9).into_inner(),
        };
        assert!(obb.normalize(&obb.center).norm() < 1e-12);
        let corner = obb.center + obb.rotation * (obb.extent * 0.5);
        assert!((obb.normalize(&corner) - Vec3::repeat(1.0)).norm() < 1e-12);
        for _ in 0..100 {
            let x = v(
                rng.gen_range(-9.0..9.0),
                rng.gen_range(-9.0..9.0),
                rng.gen_range(-9.0..9.0),
            );
            assert!((obb.denormalize(&obb.normalize(&x)) - x).norm() < 1e-5);
        }
    }

    #[test]
    fn quaternion_round_trip_has_nonnegative_scalar() {
        let mut rng = crate::rng::stream(14);
        for _ in 0..100 {
            let r = Rotation3::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let obb = ObbAttributes {
                center: Vec3::zeros(),
                extent: Vec3::repeat(1.0),
                rotation: r.into_inner(),
            };
            let q = obb.quaternion();
            assert!(q[0] >= 0.0);
            let back = ObbAttributes::from_quaternion(obb.center, obb.extent, q);
            assert!((back.rotation - obb.rotation).abs().max() < 1e-12);
        }
    }
}
