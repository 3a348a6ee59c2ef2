//! Geometric properties of `P` and `R` used as constraint targets.

use serde::{Deserialize, Serialize};

use super::linalg::{cross3, det3, dot3, frobenius3, identity3, mul3, norm3, sub3, transpose3, Mat3, Vec2, Vec3};
use super::projection::ProjectionMatrix;
use super::DEHOMOGENIZE_EPS;
use crate::diff::Scalar;

/// Dehomogenizes a column; `None` when the third entry is (numerically) zero.
pub fn dehomogenize<T: Scalar>(c: &Vec3<T>) -> Option<Vec2<T>> {
    if c[2].value().abs() < DEHOMOGENIZE_EPS {
        None
    } else {
        Some([c[0] / c[2], c[1] / c[2]])
    }
}

/// Images of the points at infinity along the world X, Y and Z axes.
///
/// Axis-aligned cameras legitimately put some of these at infinity, so a
/// vanishing point is `None` rather than an error.
pub fn vanishing_points<T: Scalar>(p: &ProjectionMatrix<T>) -> [Option<Vec2<T>>; 3] {
    [0, 1, 2].map(|j| dehomogenize(&p.column(j)))
}

/// Image of the world origin (fourth column of `P`).
pub fn world_center<T: Scalar>(p: &ProjectionMatrix<T>) -> Option<Vec2<T>> {
    dehomogenize(&p.column(3))
}

/// The five orthonormality residuals of a rotation:
/// `(r1·r2, r1·r3, r2·r3, ‖R·Rᵀ − I‖_F, det R − 1)`, all zero for a rotation.
pub fn rotation_residuals<T: Scalar>(r: &Mat3<T>) -> [T; 5] {
    let rrt = mul3(r, &transpose3(r));
    [
        dot3(&r[0], &r[1]),
        dot3(&r[0], &r[2]),
        dot3(&r[1], &r[2]),
        frobenius3(&sub3(&rrt, &identity3())),
        det3(r) - T::cst(1.0),
    ]
}

/// Norms of the cross products of the leading 3-vectors of each row pair
/// (1,2), (1,3), (2,3) of `P`.
///
/// This does not vanish for real cameras (`P = [I|0]` gives `(1, 1, 1)`), so
/// no shipped loss configuration enables it.
pub fn axis_plane_residuals<T: Scalar>(p: &ProjectionMatrix<T>) -> [T; 3] {
    let lead = |i: usize| -> Vec3<T> {
        let r = p.row(i);
        [r[0], r[1], r[2]]
    };
    let (a, b, c) = (lead(0), lead(1), lead(2));
    [norm3(&cross3(&a, &b)), norm3(&cross3(&a, &c)), norm3(&cross3(&b, &c))]
}

/// Vanishing points and world-center image of a camera. `None` entries lie at
/// infinity and are excluded from losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTargets<T = f64> {
    pub v_x: Option<Vec2<T>>,
    pub v_y: Option<Vec2<T>>,
    pub v_z: Option<Vec2<T>>,
    pub w_c: Option<Vec2<T>>,
}

impl<T: Scalar> ConstraintTargets<T> {
    pub fn from_projection(p: &ProjectionMatrix<T>) -> Self {
        let [v_x, v_y, v_z] = vanishing_points(p);
        ConstraintTargets {
            v_x,
            v_y,
            v_z,
            w_c: world_center(p),
        }
    }

    pub fn vanishing(&self) -> [Option<Vec2<T>>; 3] {
        [self.v_x, self.v_y, self.v_z]
    }

    /// Finiteness of `V_x, V_y, V_z, W_c`.
    pub fn finite_flags(&self) -> [bool; 4] {
        [
            self.v_x.is_some(),
            self.v_y.is_some(),
            self.v_z.is_some(),
            self.w_c.is_some(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_rotation_pitch, compose_projection, CameraParams};

    fn cam(theta: f64, t: [f64; 3]) -> CameraParams {
        CameraParams {
            f_x: 100.0,
            f_y: 100.0,
            p_x: 75.0,
            p_y: 75.0,
            b: 0.5,
            d: 10.0,
            theta_p: theta,
            t_x: t[0],
            t_y: t[1],
            t_z: t[2],
        }
    }

    #[test]
    fn axis_aligned_camera_has_two_vanishing_points_at_infinity() {
        let m = compose_projection(&cam(0.0, [0.0; 3])).unwrap();
        let [vx, vy, vz] = vanishing_points(&m.p);
        assert!(vx.is_none());
        assert!(vy.is_none());
        assert_eq!(vz, Some([75.0, 75.0]));
    }

    #[test]
    fn pitched_camera_x_vanishing_point() {
        let m = compose_projection(&cam(0.1, [0.0; 3])).unwrap();
        let vx = vanishing_points(&m.p)[0].unwrap();
        // first column of K·R_y(0.1) = (100 cos − 75 sin, −75 sin, −sin)
        let (c, s) = (0.1f64.cos(), 0.1f64.sin());
        let expected = [(100.0 * c - 75.0 * s) / -s, (-75.0 * s) / -s];
        assert!((vx[0] - expected[0]).abs() < 1e-9);
        assert!((vx[1] - 75.0).abs() < 1e-12);
        assert!((vx[0] - (-921.664)).abs() < 1e-3);
    }

    #[test]
    fn world_center_needs_nonzero_depth() {
        let m = compose_projection(&cam(0.0, [0.0; 3])).unwrap();
        assert!(world_center(&m.p).is_none());
        let m = compose_projection(&cam(0.0, [0.0, 0.0, 5.0])).unwrap();
        assert_eq!(world_center(&m.p), Some([75.0, 75.0]));
    }

    #[test]
    fn identity_rotation_residuals_vanish() {
        assert_eq!(rotation_residuals(&identity3::<f64>()), [0.0; 5]);
    }

    #[test]
    fn scaled_identity_residuals() {
        let r = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let res = rotation_residuals(&r);
        assert_eq!(&res[..3], &[0.0; 3]);
        assert!((res[3] - 3.0 * 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(res[4], 7.0);
    }

    #[test]
    fn pitch_rotation_residuals_vanish() {
        for &theta in &[-1.2, -0.3, 0.0, 0.05, 0.7, 1.5] {
            let res = rotation_residuals(&build_rotation_pitch(theta).unwrap());
            assert!(res.iter().all(|r| r.abs() < 1e-12), "{theta}: {res:?}");
        }
    }

    #[test]
    fn canonical_axis_planes_are_unit() {
        let p = ProjectionMatrix([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(axis_plane_residuals(&p), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn parallel_rows_have_zero_axis_residual() {
        let p = ProjectionMatrix([[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, -1.0], [0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(axis_plane_residuals(&p)[0], 0.0);
    }

    #[test]
    fn generic_camera_axis_planes_do_not_vanish() {
        let m = compose_projection(&cam(0.2, [1.0, 2.0, 3.0])).unwrap();
        assert!(axis_plane_residuals(&m.p).iter().all(|&r| r > 1.0));
    }

    #[test]
    fn flags_track_finiteness() {
        let m = compose_projection(&cam(0.0, [0.0; 3])).unwrap();
        let t = ConstraintTargets::from_projection(&m.p);
        assert_eq!(t.finite_flags(), [false, false, true, false]);
    }
}
