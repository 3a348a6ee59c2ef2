use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::geometry::ParamId;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// `lo + u·(hi − lo)` for `u ∈ [0, 1)`; a collapsed interval returns `lo`.
    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }

    /// Scale used to normalize values in this interval: the width, or the
    /// midpoint magnitude (at least 1) when the interval is collapsed.
    pub fn scale(&self) -> f64 {
        let w = self.width();
        if w > 0.0 {
            w
        } else {
            self.mid().abs().max(1.0)
        }
    }

    fn check(&self, field: &'static str) -> Result<(), DatagenError> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(DatagenError::InvalidRange {
                field,
                reason: "bounds must be finite".into(),
            });
        }
        if self.lo > self.hi {
            return Err(DatagenError::EmptyRange { field });
        }
        Ok(())
    }
}

/// Axis-aligned world-frame box from which scene points are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneVolume {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

/// Sampling ranges for camera configurations and scene points.
///
/// Pitch is stored in radians; the field of view in degrees, as it is only
/// ever used to derive the focal length `f = (W/2)/tan(fov/2)` (shared by
/// `f_x` and `f_y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigRange {
    pub fov_deg: Interval,
    pub pitch_rad: Interval,
    pub t_x: Interval,
    pub t_y: Interval,
    pub t_z: Interval,
    pub baseline: Interval,
    /// Accepted camera-frame depth of scene points, meters.
    pub depth: Interval,
    /// Accepted per-point disparity, pixels. Also bounds the regressed `d`.
    pub disparity: Interval,
    pub principal_x: Interval,
    pub principal_y: Interval,
    pub scene: SceneVolume,
    pub width: u32,
    pub height: u32,
    pub points_per_sample: usize,
    pub seed: u64,
}

impl Default for ConfigRange {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        ConfigRange {
            fov_deg: Interval::new(60.0, 100.0),
            pitch_rad: Interval::new(-15.0 * deg, 15.0 * deg),
            t_x: Interval::new(-2.0, 10.0),
            t_y: Interval::new(-2.0, 10.0),
            t_z: Interval::new(-2.0, 10.0),
            baseline: Interval::new(0.2, 1.0),
            depth: Interval::new(4.0, 50.0),
            disparity: Interval::new(0.1, 40.0),
            principal_x: Interval::point(75.0),
            principal_y: Interval::point(75.0),
            scene: SceneVolume {
                x: Interval::new(4.0, 60.0),
                y: Interval::new(-30.0, 40.0),
                z: Interval::new(-20.0, 30.0),
            },
            width: 150,
            height: 150,
            points_per_sample: 16,
            seed: 7,
        }
    }
}

pub fn focal_from_fov(fov_deg: f64, width: u32) -> f64 {
    0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan()
}

impl ConfigRange {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let named = [
            ("fov_deg", self.fov_deg),
            ("pitch_rad", self.pitch_rad),
            ("t_x", self.t_x),
            ("t_y", self.t_y),
            ("t_z", self.t_z),
            ("baseline", self.baseline),
            ("depth", self.depth),
            ("disparity", self.disparity),
            ("principal_x", self.principal_x),
            ("principal_y", self.principal_y),
            ("scene.x", self.scene.x),
            ("scene.y", self.scene.y),
            ("scene.z", self.scene.z),
        ];
        for (field, iv) in named {
            iv.check(field)?;
        }
        let invalid = |field, reason: &str| DatagenError::InvalidRange {
            field,
            reason: reason.to_string(),
        };
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width/height", "image size must be at least 1×1"));
        }
        if self.points_per_sample == 0 {
            return Err(invalid("points_per_sample", "need at least one point"));
        }
        if !(self.fov_deg.lo > 0.0 && self.fov_deg.hi < 180.0) {
            return Err(invalid("fov_deg", "field of view must lie in (0°, 180°)"));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.pitch_rad.lo > -half_pi && self.pitch_rad.hi < half_pi) {
            return Err(invalid("pitch_rad", "pitch must lie in (−π/2, π/2)"));
        }
        if self.baseline.lo <= 0.0 {
            return Err(invalid("baseline", "baseline must be positive"));
        }
        if self.depth.lo <= 0.0 {
            return Err(invalid("depth", "depth must be positive"));
        }
        if self.disparity.lo <= 0.0 {
            return Err(invalid("disparity", "disparity must be positive"));
        }
        Ok(())
    }

    pub fn focal(&self) -> Interval {
        // wider field of view, shorter focal length
        Interval::new(
            focal_from_fov(self.fov_deg.hi, self.width),
            focal_from_fov(self.fov_deg.lo, self.width),
        )
    }

    /// Range of each camera parameter, in [`ParamId::ALL`] order.
    pub fn param_bounds(&self) -> [Interval; 10] {
        let f = self.focal();
        let mut out = [Interval::point(0.0); 10];
        for id in ParamId::ALL {
            out[id.index()] = match id {
                ParamId::Fx | ParamId::Fy => f,
                ParamId::Px => self.principal_x,
                ParamId::Py => self.principal_y,
                ParamId::Baseline => self.baseline,
                ParamId::Disparity => self.disparity,
                ParamId::Pitch => self.pitch_rad,
                ParamId::Tx => self.t_x,
                ParamId::Ty => self.t_y,
                ParamId::Tz => self.t_z,
            };
        }
        out
    }
}
