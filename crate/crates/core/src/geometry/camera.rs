use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::Scalar;

/// The ten regressed camera quantities.
///
/// Units: focal lengths, principal point and disparity in pixels; baseline
/// and translation in meters; pitch in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams<T = f64> {
    pub f_x: T,
    pub f_y: T,
    pub p_x: T,
    pub p_y: T,
    pub b: T,
    pub d: T,
    pub theta_p: T,
    pub t_x: T,
    pub t_y: T,
    pub t_z: T,
}

/// Index into [`CameraParams`], in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    Fx,
    Fy,
    Px,
    Py,
    Baseline,
    Disparity,
    Pitch,
    Tx,
    Ty,
    Tz,
}

impl ParamId {
    /// Storage order (also the order of the per-parameter loss weights).
    pub const ALL: [ParamId; 10] = [
        ParamId::Fx,
        ParamId::Fy,
        ParamId::Px,
        ParamId::Py,
        ParamId::Baseline,
        ParamId::Disparity,
        ParamId::Pitch,
        ParamId::Tx,
        ParamId::Ty,
        ParamId::Tz,
    ];

    /// Column order of MAE tables: pitch comes last.
    pub const TABLE_ORDER: [ParamId; 10] = [
        ParamId::Fx,
        ParamId::Fy,
        ParamId::Px,
        ParamId::Py,
        ParamId::Baseline,
        ParamId::Disparity,
        ParamId::Tx,
        ParamId::Ty,
        ParamId::Tz,
        ParamId::Pitch,
    ];

    pub const INTRINSICS: [ParamId; 4] = [ParamId::Fx, ParamId::Fy, ParamId::Px, ParamId::Py];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Fx => "f_x",
            ParamId::Fy => "f_y",
            ParamId::Px => "p_x",
            ParamId::Py => "p_y",
            ParamId::Baseline => "b",
            ParamId::Disparity => "d",
            ParamId::Pitch => "theta_p",
            ParamId::Tx => "t_x",
            ParamId::Ty => "t_y",
            ParamId::Tz => "t_z",
        }
    }

    /// Compact tag used in CSV headers (`mae_fx`, …, `mae_tp`).
    pub fn tag(self) -> &'static str {
        match self {
            ParamId::Fx => "fx",
            ParamId::Fy => "fy",
            ParamId::Px => "px",
            ParamId::Py => "py",
            ParamId::Baseline => "b",
            ParamId::Disparity => "d",
            ParamId::Pitch => "tp",
            ParamId::Tx => "tx",
            ParamId::Ty => "ty",
            ParamId::Tz => "tz",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ParamId::Fx | ParamId::Fy | ParamId::Px | ParamId::Py | ParamId::Disparity => "px",
            ParamId::Baseline | ParamId::Tx | ParamId::Ty | ParamId::Tz => "m",
            ParamId::Pitch => "rad",
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "");
        ParamId::ALL
            .into_iter()
            .find(|p| {
                p.name().replace('_', "") == key
                    || p.tag() == key
                    || (matches!(p, ParamId::Pitch) && (key == "pitch" || key == "theta"))
                    || (matches!(p, ParamId::Px) && key == "u0")
                    || (matches!(p, ParamId::Py) && key == "v0")
            })
            .ok_or_else(|| s.to_string())
    }
}

impl<T: Copy> CameraParams<T> {
    pub fn from_array(a: [T; 10]) -> Self {
        CameraParams {
            f_x: a[0],
            f_y: a[1],
            p_x: a[2],
            p_y: a[3],
            b: a[4],
            d: a[5],
            theta_p: a[6],
            t_x: a[7],
            t_y: a[8],
            t_z: a[9],
        }
    }

    pub fn to_array(&self) -> [T; 10] {
        [
            self.f_x,
            self.f_y,
            self.p_x,
            self.p_y,
            self.b,
            self.d,
            self.theta_p,
            self.t_x,
            self.t_y,
            self.t_z,
        ]
    }

    pub fn get(&self, id: ParamId) -> T {
        self.to_array()[id.index()]
    }

    pub fn set(&mut self, id: ParamId, value: T) {
        let mut a = self.to_array();
        a[id.index()] = value;
        *self = Self::from_array(a);
    }

    /// Copy with one entry replaced.
    pub fn with(&self, id: ParamId, value: T) -> Self {
        let mut out = *self;
        out.set(id, value);
        out
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> CameraParams<U> {
        CameraParams::from_array(self.to_array().map(f))
    }
}

impl CameraParams<f64> {
    /// Lifts plain values into any scalar type as constants.
    pub fn lift<T: Scalar>(&self) -> CameraParams<T> {
        self.map(T::cst)
    }

    /// Checks the physical-validity invariants (positive focal lengths,
    /// baseline and disparity; all entries finite).
    pub fn is_physical(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.f_x > 0.0
            && self.f_y > 0.0
            && self.b > 0.0
            && self.d > 0.0
    }
}

impl<T: Scalar> CameraParams<T> {
    pub fn values(&self) -> CameraParams<f64> {
        self.map(Scalar::value)
    }
}

/// A world-frame point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Copy> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl Point3<f64> {
    pub fn lift<T: Scalar>(&self) -> Point3<T> {
        Point3::new(T::cst(self.x), T::cst(self.y), T::cst(self.z))
    }
}

/// An image point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointImage<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Copy> PointImage<T> {
    pub fn new(x: T, y: T) -> Self {
        PointImage { x, y }
    }
}

impl PointImage<f64> {
    pub fn lift<T: Scalar>(&self) -> PointImage<T> {
        PointImage::new(T::cst(self.x), T::cst(self.y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_ids_parse_by_name_and_tag() {
        for id in ParamId::ALL {
            assert_eq!(id.name().parse::<ParamId>().unwrap(), id);
            assert_eq!(id.tag().parse::<ParamId>().unwrap(), id);
        }
        assert_eq!("pitch".parse::<ParamId>().unwrap(), ParamId::Pitch);
        assert!("focal".parse::<ParamId>().is_err());
    }

    #[test]
    fn table_order_is_a_permutation() {
        let mut sorted = ParamId::TABLE_ORDER;
        sorted.sort();
        assert_eq!(sorted, ParamId::ALL);
        assert_eq!(ParamId::TABLE_ORDER[9], ParamId::Pitch);
    }

    #[test]
    fn with_replaces_one_entry() {
        let p = CameraParams::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let q = p.with(ParamId::Pitch, -1.0);
        assert_eq!(q.theta_p, -1.0);
        assert_eq!(q.get(ParamId::Tz), 10.0);
        assert_eq!(p.theta_p, 7.0);
    }
}
