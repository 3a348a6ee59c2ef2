//! Fixed-size row-major matrices over any [`Scalar`].

use crate::diff::Scalar;

pub type Vec2<T = f64> = [T; 2];
pub type Vec3<T = f64> = [T; 3];
pub type Vec4<T = f64> = [T; 4];
pub type Mat3<T = f64> = [[T; 3]; 3];
pub type Mat34<T = f64> = [[T; 4]; 3];

pub fn identity3<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::cst(1.0), T::cst(0.0));
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn dot3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn dot4<T: Scalar>(a: &Vec4<T>, b: &Vec4<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn cross3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3<T: Scalar>(a: &Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

pub fn transpose3<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = *m;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    out
}

pub fn mul3<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// `a · b` for a 3×3 `a` and a 3×4 `b`.
pub fn mul3x34<T: Scalar>(a: &Mat3<T>, b: &Mat34<T>) -> Mat34<T> {
    let mut out = *b;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn det3<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn frobenius3<T: Scalar>(m: &Mat3<T>) -> T {
    let mut acc = T::cst(0.0);
    for row in m {
        for &v in row {
            acc = acc + v * v;
        }
    }
    acc.sqrt()
}

pub fn sub3<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][j] - b[i][j];
        }
    }
    out
}

pub fn values3(m: &Mat3<impl Scalar>) -> Mat3 {
    m.map(|r| r.map(Scalar::value))
}

pub fn values34(m: &Mat34<impl Scalar>) -> Mat34 {
    m.map(|r| r.map(Scalar::value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_and_transpose() {
        let m: Mat3 = [[2.0, 0.0, 1.0], [1.0, 3.0, 0.0], [0.0, 1.0, 4.0]];
        assert_eq!(det3(&m), 2.0 * 12.0 - 0.0 + 1.0 * 1.0);
        assert_eq!(transpose3(&transpose3(&m)), m);
        assert_eq!(mul3(&identity3(), &m), m);
    }

    #[test]
    fn cross_of_basis_vectors() {
        let e1: Vec3 = [1.0, 0.0, 0.0];
        let e2: Vec3 = [0.0, 1.0, 0.0];
        assert_eq!(cross3(&e1, &e2), [0.0, 0.0, 1.0]);
        assert_eq!(norm3(&cross3(&e1, &e1)), 0.0);
    }
}
