use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LossError;
use crate::diff::{sigmoid, Scalar};
use crate::geometry::ParamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    Disentangled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    #[serde(rename = "VP")]
    VanishingPoints,
    #[serde(rename = "WC")]
    WorldCenter,
    #[serde(rename = "R")]
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightsMode {
    /// Every effective weight is 0.5.
    Fixed,
    /// Effective weight `σ(ω)`.
    Learnable,
}

/// Enabled constraint groups. Serialized as a list such as `["VP","WC"]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct ConstraintSet {
    pub vp: bool,
    pub wc: bool,
    pub r: bool,
}

impl From<Vec<Constraint>> for ConstraintSet {
    fn from(v: Vec<Constraint>) -> Self {
        ConstraintSet {
            vp: v.contains(&Constraint::VanishingPoints),
            wc: v.contains(&Constraint::WorldCenter),
            r: v.contains(&Constraint::Rotation),
        }
    }
}

impl From<ConstraintSet> for Vec<Constraint> {
    fn from(s: ConstraintSet) -> Self {
        let mut v = Vec::new();
        if s.vp {
            v.push(Constraint::VanishingPoints);
        }
        if s.wc {
            v.push(Constraint::WorldCenter);
        }
        if s.r {
            v.push(Constraint::Rotation);
        }
        v
    }
}

impl ConstraintSet {
    pub const NONE: ConstraintSet = ConstraintSet { vp: false, wc: false, r: false };
    pub const VP: ConstraintSet = ConstraintSet { vp: true, wc: false, r: false };
    pub const VP_WC: ConstraintSet = ConstraintSet { vp: true, wc: true, r: false };
    pub const VP_WC_R: ConstraintSet = ConstraintSet { vp: true, wc: true, r: true };

    pub fn name(&self) -> String {
        let parts: Vec<&str> = Vec::<Constraint>::from(*self)
            .into_iter()
            .map(|c| match c {
                Constraint::VanishingPoints => "VP",
                Constraint::WorldCenter => "WC",
                Constraint::Rotation => "R",
            })
            .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("-")
        }
    }
}

impl FromStr for ConstraintSet {
    type Err = LossError;

    /// Parses `VP-WC-R`, `vp,wc`, `none`, ….
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(ConstraintSet::NONE);
        }
        let mut set = ConstraintSet::NONE;
        for part in s.split(['-', ',', '+']) {
            match part.trim().to_ascii_uppercase().as_str() {
                "VP" => set.vp = true,
                "WC" => set.wc = true,
                "R" => set.r = true,
                _ => return Err(LossError::InvalidConfig(format!("unknown constraint group `{part}`"))),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub variant: Variant,
    pub constraints: ConstraintSet,
    pub weights_mode: WeightsMode,
    pub include_axis_planes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: Variant::Disentangled,
            constraints: ConstraintSet::VP_WC_R,
            weights_mode: WeightsMode::Fixed,
            include_axis_planes: false,
        }
    }
}

impl LossConfig {
    pub fn new(variant: Variant, constraints: ConstraintSet, weights_mode: WeightsMode) -> Self {
        LossConfig {
            variant,
            constraints,
            weights_mode,
            include_axis_planes: false,
        }
    }

    /// The cumulative constraint ladder VP, VP-WC, VP-WC-R.
    pub fn ladder(variant: Variant, weights_mode: WeightsMode) -> [LossConfig; 3] {
        [ConstraintSet::VP, ConstraintSet::VP_WC, ConstraintSet::VP_WC_R]
            .map(|c| LossConfig::new(variant, c, weights_mode))
    }

    /// Every shipped combination of variant, constraint set and weight mode.
    pub fn all_shipped() -> Vec<LossConfig> {
        let mut out = Vec::new();
        for variant in [Variant::Plain, Variant::Disentangled] {
            for mode in [WeightsMode::Fixed, WeightsMode::Learnable] {
                out.push(LossConfig::new(variant, ConstraintSet::NONE, mode));
                out.extend(LossConfig::ladder(variant, mode));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let c = self.constraints;
        if (c.wc || c.r || self.include_axis_planes) && !c.vp {
            return Err(LossError::InvalidConfig(format!(
                "constraint set {} needs VP",
                c.name()
            )));
        }
        Ok(())
    }

    /// Short name, e.g. `VP-WC-R` or `plain-VP-learnable`.
    pub fn name(&self) -> String {
        let mut s = self.constraints.name();
        if self.include_axis_planes {
            s.push_str("-AX");
        }
        if self.variant == Variant::Plain {
            s = format!("plain-{s}");
        }
        if self.weights_mode == WeightsMode::Learnable {
            s.push_str("-learnable");
        }
        s
    }

    /// Number of scalar terms averaged into `L_con`.
    pub fn constraint_term_count(&self) -> usize {
        let c = self.constraints;
        3 * c.vp as usize + c.wc as usize + 5 * c.r as usize + 3 * self.include_axis_planes as usize
    }
}

impl fmt::Display for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A loss term carrying its own weight `ω₁ … ω₁₆`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Camera(ParamId),
    X,
    Y,
    Z,
    Vx,
    Vy,
    Vz,
}

impl Term {
    pub const ALL: [Term; 16] = [
        Term::Camera(ParamId::Fx),
        Term::Camera(ParamId::Fy),
        Term::Camera(ParamId::Px),
        Term::Camera(ParamId::Py),
        Term::Camera(ParamId::Baseline),
        Term::Camera(ParamId::Disparity),
        Term::Camera(ParamId::Pitch),
        Term::Camera(ParamId::Tx),
        Term::Camera(ParamId::Ty),
        Term::Camera(ParamId::Tz),
        Term::X,
        Term::Y,
        Term::Z,
        Term::Vx,
        Term::Vy,
        Term::Vz,
    ];

    /// Zero-based index of the term's weight in [`OmegaWeights`].
    pub fn omega_index(self) -> usize {
        match self {
            Term::Camera(p) => p.index(),
            Term::X => 10,
            Term::Y => 11,
            Term::Z => 12,
            Term::Vx => 13,
            Term::Vy => 14,
            Term::Vz => 15,
        }
    }

    pub fn name(self) -> String {
        match self {
            Term::Camera(p) => format!("L_{}", p.tag()),
            Term::X => "L_X".into(),
            Term::Y => "L_Y".into(),
            Term::Z => "L_Z".into(),
            Term::Vx => "L_Vx".into(),
            Term::Vy => "L_Vy".into(),
            Term::Vz => "L_Vz".into(),
        }
    }
}

impl FromStr for Term {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().trim_start_matches("L_").replace('_', "");
        let found = match key.as_str() {
            "X" => Some(Term::X),
            "Y" => Some(Term::Y),
            "Z" => Some(Term::Z),
            "Vx" | "VX" => Some(Term::Vx),
            "Vy" | "VY" => Some(Term::Vy),
            "Vz" | "VZ" => Some(Term::Vz),
            _ => key.parse::<ParamId>().ok().map(Term::Camera),
        };
        found.ok_or_else(|| LossError::UnknownParameter(s.to_string()))
    }
}

/// Group weight indices (zero-based) for `L_Cam`, `L_3D` and `L_con`.
pub const OMEGA_CAM: usize = 16;
pub const OMEGA_3D: usize = 17;
pub const OMEGA_CON: usize = 18;

/// The 19 unconstrained weight logits. Effective weights are `σ(ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaWeights(pub [f64; 19]);

impl Default for OmegaWeights {
    fn default() -> Self {
        OmegaWeights([0.0; 19])
    }
}

impl OmegaWeights {
    /// Effective weights under `mode`.
    pub fn effective(&self, mode: WeightsMode) -> [f64; 19] {
        match mode {
            WeightsMode::Fixed => [0.5; 19],
            WeightsMode::Learnable => self.0.map(sigmoid),
        }
    }
}

/// Effective weights as scalars of any kind; in Fixed mode the logits are
/// ignored.
pub fn effective_weights<T: Scalar>(omega: &[T; 19], mode: WeightsMode) -> [T; 19] {
    match mode {
        WeightsMode::Fixed => [T::cst(0.5); 19],
        WeightsMode::Learnable => omega.map(Scalar::sigmoid),
    }
}
