//! Stereo back-projection from an image point and disparity to the world.
//!
//! The camera frame here is x forward (depth), y left, z up. Depth comes from
//! the stereo relation `x_cam = f_x·b/d`; the image offsets from the principal
//! point give the two lateral coordinates. The camera-to-world transform is
//! the pitch rotation followed by the translation.

use super::camera::{CameraParams, Point3, PointImage};
use super::linalg::Vec3;
use super::{GeometryError, DEHOMOGENIZE_EPS};
use crate::diff::Scalar;

fn check_focal<T: Scalar>(p: &CameraParams<T>) -> Result<(), GeometryError> {
    let (fx, fy) = (p.f_x.value(), p.f_y.value());
    if fx > 0.0 && fy > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NonPositiveFocal { f_x: fx, f_y: fy })
    }
}

/// Camera-frame coordinates of an image point observed with disparity `p.d`.
pub fn reconstruct_camera_frame<T: Scalar>(
    p: &CameraParams<T>,
    img: &PointImage<T>,
) -> Result<Vec3<T>, GeometryError> {
    if p.d.value() <= DEHOMOGENIZE_EPS {
        return Err(GeometryError::ZeroDisparity(p.d.value()));
    }
    check_focal(p)?;
    let x_cam = p.f_x * p.b / p.d;
    let y_cam = -(x_cam / p.f_x) * (img.x - p.p_x);
    let z_cam = (x_cam / p.f_y) * (p.p_y - img.y);
    Ok([x_cam, y_cam, z_cam])
}

pub fn camera_to_world<T: Scalar>(p: &CameraParams<T>, cam: &Vec3<T>) -> Point3<T> {
    let (c, s) = (p.theta_p.cos(), p.theta_p.sin());
    Point3::new(
        cam[0] * c + cam[2] * s + p.t_x,
        cam[1] + p.t_y,
        -cam[0] * s + cam[2] * c + p.t_z,
    )
}

pub fn reconstruct_3d<T: Scalar>(
    p: &CameraParams<T>,
    img: &PointImage<T>,
) -> Result<Point3<T>, GeometryError> {
    let cam = reconstruct_camera_frame(p, img)?;
    Ok(camera_to_world(p, &cam))
}

/// Reconstructs a set of observations that share one camera. Point `i` uses
/// disparity `p.d·ratios[i]`, so `p.d` acts as the scene's mean disparity.
pub fn reconstruct_observations<T: Scalar>(
    p: &CameraParams<T>,
    left: &[PointImage],
    ratios: &[f64],
) -> Result<Vec<Point3<T>>, GeometryError> {
    debug_assert_eq!(left.len(), ratios.len());
    left.iter()
        .zip(ratios)
        .map(|(img, &r)| {
            let mut pi = *p;
            pi.d = p.d * T::cst(r);
            reconstruct_3d(&pi, &img.lift())
        })
        .collect()
}

/// Inverse of [`camera_to_world`].
pub fn world_to_camera(p: &CameraParams, q: &Point3) -> Vec3 {
    let (c, s) = (p.theta_p.cos(), p.theta_p.sin());
    let (dx, dy, dz) = (q.x - p.t_x, q.y - p.t_y, q.z - p.t_z);
    [c * dx - s * dz, dy, s * dx + c * dz]
}

/// A rectified stereo observation of one world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoObservation {
    pub left: PointImage,
    pub right: PointImage,
    pub disparity: f64,
    /// Camera-frame forward coordinate, meters.
    pub depth: f64,
}

/// Forward stereo model matching [`reconstruct_3d`]: disparity is
/// `f_x·b/depth` and the right image point is shifted left by it.
///
/// `p.d` is ignored; each point carries its own disparity.
pub fn project_stereo(p: &CameraParams, q: &Point3) -> Result<StereoObservation, GeometryError> {
    check_focal(p)?;
    let cam = world_to_camera(p, q);
    let depth = cam[0];
    if depth <= DEHOMOGENIZE_EPS {
        return Err(GeometryError::PointAtInfinity);
    }
    let x = p.p_x - p.f_x * cam[1] / depth;
    let y = p.p_y - p.f_y * cam[2] / depth;
    let disparity = p.f_x * p.b / depth;
    Ok(StereoObservation {
        left: PointImage::new(x, y),
        right: PointImage::new(x - disparity, y),
        disparity,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn principal_point_gives_pure_depth() {
        let c = reconstruct_camera_frame(&cam(0.0, [0.0; 3]), &PointImage::new(75.0, 75.0)).unwrap();
        assert_eq!(c, [5.0, 0.0, 0.0]);
    }

    #[test]
    fn off_center_point() {
        let c = reconstruct_camera_frame(&cam(0.0, [0.0; 3]), &PointImage::new(85.0, 65.0)).unwrap();
        assert_eq!(c, [5.0, -0.5, 0.5]);
    }

    #[test]
    fn zero_disparity_is_rejected() {
        let mut p = cam(0.0, [0.0; 3]);
        p.d = 0.0;
        assert!(matches!(
            reconstruct_camera_frame(&p, &PointImage::new(1.0, 1.0)),
            Err(GeometryError::ZeroDisparity(_))
        ));
    }

    #[test]
    fn identity_extrinsics() {
        let q = camera_to_world(&cam(0.0, [0.0; 3]), &[5.0, -0.5, 0.5]);
        assert_eq!(q, Point3::new(5.0, -0.5, 0.5));
    }

    #[test]
    fn quarter_turn_extrinsics() {
        let q = camera_to_world(&cam(std::f64::consts::FRAC_PI_2, [0.0; 3]), &[1.0, 0.0, 0.0]);
        assert!(q.x.abs() < 1e-15 && q.y == 0.0 && (q.z + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pitched_and_translated() {
        let q = camera_to_world(&cam(0.1, [1.0, 2.0, 3.0]), &[5.0, -0.5, 0.5]);
        let (c, s) = (0.1f64.cos(), 0.1f64.sin());
        assert!((q.x - (5.0 * c + 0.5 * s + 1.0)).abs() < 1e-14);
        assert_eq!(q.y, 1.5);
        assert!((q.z - (-5.0 * s + 0.5 * c + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn identity_extrinsics_reconstruction_equals_camera_frame() {
        let p = cam(0.0, [0.0; 3]);
        let img = PointImage::new(12.0, 140.0);
        let c = reconstruct_camera_frame(&p, &img).unwrap();
        assert_eq!(reconstruct_3d(&p, &img).unwrap().to_array(), c);
    }

    #[test]
    fn stage_by_stage() {
        let p = cam(-0.2, [0.5, -1.0, 2.0]);
        let img = PointImage::new(30.0, 90.0);
        // x_cam = 100·0.5/10 = 5; y_cam = −0.05·(30 − 75) = 2.25; z_cam = 0.05·(75 − 90) = −0.75
        let (c, s) = ((-0.2f64).cos(), (-0.2f64).sin());
        let expected = [5.0 * c - 0.75 * s + 0.5, 2.25 - 1.0, -5.0 * s - 0.75 * c + 2.0];
        let q = reconstruct_3d(&p, &img).unwrap();
        for (a, b) in q.to_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stereo_projection_inverts_reconstruction() {
        let p = cam(0.13, [1.5, -0.5, 4.0]);
        let q = Point3::new(20.0, 3.0, -1.0);
        let obs = project_stereo(&p, &q).unwrap();
        assert!((obs.left.x - obs.right.x - obs.disparity).abs() < 1e-12);
        let back = reconstruct_3d(&p.with(super::super::ParamId::Disparity, obs.disparity), &obs.left).unwrap();
        for (a, b) in back.to_array().iter().zip(q.to_array()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }
}
