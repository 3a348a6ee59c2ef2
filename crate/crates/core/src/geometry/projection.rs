use serde::{Deserialize, Serialize};

use super::camera::{CameraParams, Point3, PointImage};
use super::linalg::{mul3x34, Mat3, Mat34, Vec3, Vec4};
use super::{GeometryError, DEHOMOGENIZE_EPS};
use crate::diff::Scalar;

/// `K = [[f_x, 0, p_x], [0, f_y, p_y], [0, 0, 1]]`.
pub fn build_intrinsics<T: Scalar>(p: &CameraParams<T>) -> Result<Mat3<T>, GeometryError> {
    let (fx, fy) = (p.f_x.value(), p.f_y.value());
    if !(fx > 0.0 && fy > 0.0) {
        return Err(GeometryError::NonPositiveFocal { f_x: fx, f_y: fy });
    }
    let (z, o) = (T::cst(0.0), T::cst(1.0));
    Ok([[p.f_x, z, p.p_x], [z, p.f_y, p.p_y], [z, z, o]])
}

/// Rotation about the camera Y axis by `theta` radians.
pub fn build_rotation_pitch<T: Scalar>(theta: T) -> Result<Mat3<T>, GeometryError> {
    if !theta.value().is_finite() {
        return Err(GeometryError::NonFinite("pitch"));
    }
    let (c, s) = (theta.cos(), theta.sin());
    let (z, o) = (T::cst(0.0), T::cst(1.0));
    Ok([[c, z, s], [z, o, z], [-s, z, c]])
}

/// A 3×4 projection matrix with row and column accessors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix<T = f64>(pub Mat34<T>);

impl<T: Scalar> ProjectionMatrix<T> {
    /// Row `i` (0-based) as a homogeneous 4-vector.
    pub fn row(&self, i: usize) -> Vec4<T> {
        self.0[i]
    }

    /// Column `j` (0-based).
    pub fn column(&self, j: usize) -> Vec3<T> {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn values(&self) -> ProjectionMatrix {
        ProjectionMatrix(self.0.map(|r| r.map(Scalar::value)))
    }
}

/// Intrinsics, pitch rotation, translation and the composed `P = K·[R|t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionModel<T = f64> {
    pub k: Mat3<T>,
    pub r: Mat3<T>,
    pub t: Vec3<T>,
    pub p: ProjectionMatrix<T>,
}

impl<T: Scalar> ProjectionModel<T> {
    pub fn rows(&self) -> [Vec4<T>; 3] {
        [self.p.row(0), self.p.row(1), self.p.row(2)]
    }

    pub fn columns(&self) -> [Vec3<T>; 4] {
        [self.p.column(0), self.p.column(1), self.p.column(2), self.p.column(3)]
    }
}

pub fn compose_projection<T: Scalar>(
    params: &CameraParams<T>,
) -> Result<ProjectionModel<T>, GeometryError> {
    let k = build_intrinsics(params)?;
    let r = build_rotation_pitch(params.theta_p)?;
    let t = [params.t_x, params.t_y, params.t_z];
    let rt: Mat34<T> = [
        [r[0][0], r[0][1], r[0][2], t[0]],
        [r[1][0], r[1][1], r[1][2], t[1]],
        [r[2][0], r[2][1], r[2][2], t[2]],
    ];
    Ok(ProjectionModel {
        k,
        r,
        t,
        p: ProjectionMatrix(mul3x34(&k, &rt)),
    })
}

/// `x = P·X̃`, dehomogenized.
pub fn project_point<T: Scalar>(
    p: &ProjectionMatrix<T>,
    point: &Point3<T>,
) -> Result<PointImage<T>, GeometryError> {
    let h = [point.x, point.y, point.z, T::cst(1.0)];
    project_homogeneous(p, &h).ok_or(GeometryError::PointAtInfinity)
}

/// Projects a homogeneous 4-vector; `None` when the image lies at infinity.
pub fn project_homogeneous<T: Scalar>(p: &ProjectionMatrix<T>, h: &Vec4<T>) -> Option<PointImage<T>> {
    let w = super::linalg::dot4(&p.row(2), h);
    if w.value().abs() < DEHOMOGENIZE_EPS {
        return None;
    }
    Some(PointImage::new(
        super::linalg::dot4(&p.row(0), h) / w,
        super::linalg::dot4(&p.row(1), h) / w,
    ))
}
