//! Loss assembly: set losses, per-parameter disentangled terms, constraint
//! terms and the σ(ω)-weighted group combination.
//!
//! Everything is generic over [`Scalar`] so one implementation serves plain
//! evaluation and differentiation.

mod config;

pub use config::{
    effective_weights, Constraint, ConstraintSet, LossConfig, OmegaWeights, Term, Variant,
    WeightsMode, OMEGA_3D, OMEGA_CAM, OMEGA_CON,
};

use thiserror::Error;

use crate::datagen::Sample;
use crate::diff::{sum, DiffError, Scalar, Tape};
use crate::geometry::{
    axis_plane_residuals, compose_projection, reconstruct_observations, rotation_residuals,
    CameraParams, ConstraintTargets, GeometryError, ParamId, Point3, PointImage, Vec2,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("length mismatch: {pred} predicted vs {actual} actual values")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("mean absolute error of an empty vector")]
    Empty,
    #[error("unknown loss term `{0}`")]
    UnknownParameter(String),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn mae_t<T: Scalar>(pred: &[T], actual: &[f64]) -> Result<T, LossError> {
    if pred.len() != actual.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let diffs: Vec<T> = pred
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (p - T::cst(a)).abs())
        .collect();
    Ok(sum(&diffs) / T::cst(pred.len() as f64))
}

/// Mean absolute componentwise difference.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, LossError> {
    mae_t(pred, actual)
}

/// Everything a loss needs to know about the ground truth of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTarget {
    pub gt: CameraParams,
    pub left: Vec<PointImage>,
    /// Per-point disparity relative to `gt.d`.
    pub ratios: Vec<f64>,
    /// `s₂`: reconstruction of `left` under `gt`.
    pub reconstructed: Vec<Point3>,
    /// `s₃` plus the world-center image.
    pub constraints: ConstraintTargets,
}

impl LossTarget {
    pub fn from_sample(s: &Sample) -> Self {
        LossTarget {
            gt: s.gt,
            left: s.left.clone(),
            ratios: s.disparity_ratios(),
            reconstructed: s.targets.reconstructed.clone(),
            constraints: s.targets.constraints,
        }
    }

    fn flat_points(&self) -> Vec<f64> {
        self.reconstructed.iter().flat_map(|p| p.to_array()).collect()
    }
}

fn reconstruct_flat<T: Scalar>(p: &CameraParams<T>, target: &LossTarget) -> Result<Vec<T>, LossError> {
    Ok(reconstruct_observations(p, &target.left, &target.ratios)?
        .iter()
        .flat_map(|q| q.to_array())
        .collect())
}

/// Pairs of finite (predicted, actual) vanishing-point coordinates, with the
/// prediction for axis `j` taken from `pred` and the others from `actual`
/// when `only` is `Some(j)`.
fn vp_pairs<T: Scalar>(
    pred: &[Option<Vec2<T>>; 3],
    actual: &[Option<Vec2>; 3],
    only: Option<usize>,
) -> (Vec<T>, Vec<f64>) {
    let mut p_out = Vec::new();
    let mut a_out = Vec::new();
    for j in 0..3 {
        let Some(a) = actual[j] else { continue };
        let p = match only {
            Some(k) if k != j => Some(a.map(T::cst)),
            _ => pred[j],
        };
        if let Some(p) = p {
            p_out.extend(p);
            a_out.extend(a);
        }
    }
    (p_out, a_out)
}

/// MAE that treats an empty comparison as zero loss.
fn mae_or_zero<T: Scalar>(pred: &[T], actual: &[f64]) -> Result<T, LossError> {
    if pred.is_empty() {
        Ok(T::cst(0.0))
    } else {
        mae_t(pred, actual)
    }
}

/// Per-term values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValues<T = f64> {
    /// `L_fx … L_tz`, in [`ParamId::ALL`] order.
    pub cam: [T; 10],
    /// `L_X, L_Y, L_Z`.
    pub xyz: [T; 3],
    /// `L_Vx, L_Vy, L_Vz` (zero when VP is disabled).
    pub vp: [T; 3],
    /// World-center MAE, when WC is enabled.
    pub wc: Option<T>,
    /// Magnitudes of the rotation residuals, when R is enabled.
    pub rot: Option<[T; 5]>,
    /// Axis-plane residuals, when enabled.
    pub axis: Option<[T; 3]>,
}

impl<T: Scalar> TermValues<T> {
    pub fn get(&self, term: Term) -> T {
        match term {
            Term::Camera(p) => self.cam[p.index()],
            Term::X => self.xyz[0],
            Term::Y => self.xyz[1],
            Term::Z => self.xyz[2],
            Term::Vx => self.vp[0],
            Term::Vy => self.vp[1],
            Term::Vz => self.vp[2],
        }
    }

    pub fn values(&self) -> TermValues {
        let v = |xs: &[T]| xs.iter().map(|x| x.value()).collect::<Vec<_>>();
        TermValues {
            cam: v(&self.cam).try_into().unwrap(),
            xyz: v(&self.xyz).try_into().unwrap(),
            vp: v(&self.vp).try_into().unwrap(),
            wc: self.wc.map(Scalar::value),
            rot: self.rot.map(|r| r.map(Scalar::value)),
            axis: self.axis.map(|r| r.map(Scalar::value)),
        }
    }
}

/// Camera-parameter term for `q` with only `q` predicted: the reconstruction
/// MAE with every other parameter at ground truth.
pub fn disentangled_camera_term<T: Scalar>(
    q: ParamId,
    pred_value: T,
    target: &LossTarget,
) -> Result<T, LossError> {
    let params = target.gt.lift::<T>().with(q, pred_value);
    mae_t(&reconstruct_flat(&params, target)?, &target.flat_points())
}

/// [`disentangled_camera_term`] on plain values.
pub fn disentangled_param_loss(which: ParamId, pred_value: f64, target: &LossTarget) -> Result<f64, LossError> {
    disentangled_camera_term(which, pred_value, target)
}

/// Any of the 16 individually weighted terms, in its disentangled form.
///
/// Reconstruction terms substitute only the named coordinate of the
/// predicted points; vanishing-point terms substitute only the named
/// vanishing point.
pub fn disentangled_term<T: Scalar>(
    term: Term,
    pred: &CameraParams<T>,
    target: &LossTarget,
) -> Result<T, LossError> {
    match term {
        Term::Camera(q) => disentangled_camera_term(q, pred.get(q), target),
        Term::X | Term::Y | Term::Z => {
            let axis = match term {
                Term::X => 0,
                Term::Y => 1,
                _ => 2,
            };
            let pts = reconstruct_flat(pred, target)?;
            let actual = target.flat_points();
            let mixed: Vec<T> = pts
                .iter()
                .zip(&actual)
                .enumerate()
                .map(|(i, (&p, &a))| if i % 3 == axis { p } else { T::cst(a) })
                .collect();
            mae_t(&mixed, &actual)
        }
        Term::Vx | Term::Vy | Term::Vz => {
            let j = term.omega_index() - 13;
            let model = compose_projection(pred)?;
            let pred_c = ConstraintTargets::from_projection(&model.p);
            let (p, a) = vp_pairs(&pred_c.vanishing(), &target.constraints.vanishing(), Some(j));
            mae_or_zero(&p, &a)
        }
    }
}

/// Evaluates every term enabled by `cfg` for predicted parameters `pred`.
pub fn evaluate_terms<T: Scalar>(
    pred: &CameraParams<T>,
    target: &LossTarget,
    cfg: &LossConfig,
) -> Result<TermValues<T>, LossError> {
    let actual = target.flat_points();
    let pts = reconstruct_flat(pred, target)?;
    let cam = match cfg.variant {
        Variant::Disentangled => {
            let mut out = [T::cst(0.0); 10];
            for q in ParamId::ALL {
                out[q.index()] = disentangled_camera_term(q, pred.get(q), target)?;
            }
            out
        }
        Variant::Plain => [mae_t(&pts, &actual)?; 10],
    };
    let n3 = T::cst(pts.len() as f64);
    let mut xyz = [T::cst(0.0); 3];
    for (axis, slot) in xyz.iter_mut().enumerate() {
        let diffs: Vec<T> = pts
            .iter()
            .zip(&actual)
            .skip(axis)
            .step_by(3)
            .map(|(&p, &a)| (p - T::cst(a)).abs())
            .collect();
        *slot = sum(&diffs) / n3;
    }

    let c = cfg.constraints;
    let needs_p = c.vp || c.wc || cfg.include_axis_planes;
    let model = if needs_p || c.r { Some(compose_projection(pred)?) } else { None };
    let pred_c = model.as_ref().filter(|_| needs_p).map(|m| ConstraintTargets::from_projection(&m.p));
    let mut vp = [T::cst(0.0); 3];
    if c.vp {
        let pc = pred_c.as_ref().expect("projection computed");
        for (j, slot) in vp.iter_mut().enumerate() {
            let (p, a) = vp_pairs(&pc.vanishing(), &target.constraints.vanishing(), Some(j));
            *slot = mae_or_zero(&p, &a)?;
        }
    }
    let wc = if c.wc {
        let pc = pred_c.as_ref().expect("projection computed");
        Some(match (pc.w_c, target.constraints.w_c) {
            (Some(p), Some(a)) => mae_t(&p, &a)?,
            _ => T::cst(0.0),
        })
    } else {
        None
    };
    let model = model.as_ref();
    let rot = c.r.then(|| rotation_residuals(&model.expect("projection computed").r).map(Scalar::abs));
    let axis = cfg
        .include_axis_planes
        .then(|| axis_plane_residuals(&model.expect("projection computed").p));
    Ok(TermValues { cam, xyz, vp, wc, rot, axis })
}

/// Grouped losses of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T = f64> {
    pub l_total: T,
    pub l_cam: T,
    pub l_3d: T,
    pub l_con: T,
    pub terms: TermValues<T>,
    /// Effective weights `σ(ω₁) … σ(ω₁₉)`.
    pub weights: [f64; 19],
}

impl<T: Scalar> LossReport<T> {
    pub fn values(&self) -> LossReport {
        LossReport {
            l_total: self.l_total.value(),
            l_cam: self.l_cam.value(),
            l_3d: self.l_3d.value(),
            l_con: self.l_con.value(),
            terms: self.terms.values(),
            weights: self.weights,
        }
    }
}

/// Combines per-term values with effective weights `w = σ(ω)`.
///
/// WC, rotation and axis-plane terms have no weight of their own and share
/// the `L_con` group weight.
pub fn group_losses<T: Scalar>(terms: &TermValues<T>, w: &[T; 19], cfg: &LossConfig) -> LossReport<T> {
    let weighted = |range: std::ops::Range<usize>, vals: &[T]| -> T {
        let parts: Vec<T> = range.zip(vals).map(|(i, &v)| w[i] * v).collect();
        sum(&parts)
    };
    let l_cam = weighted(0..10, &terms.cam) / T::cst(10.0);
    let l_3d = weighted(10..13, &terms.xyz) / T::cst(3.0);

    let n_con = cfg.constraint_term_count();
    let l_con = if n_con == 0 {
        T::cst(0.0)
    } else {
        let mut parts = Vec::new();
        if cfg.constraints.vp {
            parts.push(weighted(13..16, &terms.vp));
        }
        let mut shared: Vec<T> = Vec::new();
        shared.extend(terms.wc);
        shared.extend(terms.rot.iter().flatten());
        shared.extend(terms.axis.iter().flatten());
        if !shared.is_empty() {
            parts.push(w[OMEGA_CON] * sum(&shared));
        }
        sum(&parts) / T::cst(n_con as f64)
    };
    let l_total =
        (w[OMEGA_CAM] * l_cam + w[OMEGA_3D] * l_3d + w[OMEGA_CON] * l_con) / T::cst(3.0);
    LossReport {
        l_total,
        l_cam,
        l_3d,
        l_con,
        terms: *terms,
        weights: w.map(Scalar::value),
    }
}

/// Terms plus grouping in one call.
pub fn total_loss<T: Scalar>(
    pred: &CameraParams<T>,
    omega: &[T; 19],
    target: &LossTarget,
    cfg: &LossConfig,
) -> Result<LossReport<T>, LossError> {
    cfg.validate()?;
    let terms = evaluate_terms(pred, target, cfg)?;
    Ok(group_losses(&terms, &effective_weights(omega, cfg.weights_mode), cfg))
}

/// Plain-valued [`total_loss`].
pub fn evaluate_loss(
    pred: &CameraParams,
    omega: &OmegaWeights,
    target: &LossTarget,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    total_loss(pred, &omega.0, target, cfg)
}

/// A loss evaluation with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub report: LossReport,
    /// `∂L_total/∂` each camera parameter, in [`ParamId::ALL`] order.
    pub d_params: [f64; 10],
    /// `∂L_total/∂ω`; all zero in Fixed mode.
    pub d_omega: [f64; 19],
    /// Arguments of every `abs` evaluated, for kink detection.
    pub abs_arguments: Vec<f64>,
}

/// Evaluates [`total_loss`] on a fresh tape and differentiates it with
/// respect to the camera parameters and the weight logits.
pub fn loss_gradient(
    pred: &CameraParams,
    omega: &[f64; 19],
    target: &LossTarget,
    cfg: &LossConfig,
) -> Result<LossGradient, LossError> {
    let tape = Tape::with_capacity(16 * 1024);
    let p = pred.map(|v| tape.var(v));
    let w = omega.map(|v| tape.var(v));
    let report = total_loss(&p, &w, target, cfg)?;
    if let Some(e) = tape.fault() {
        return Err(e.into());
    }
    let g = tape.backward(report.l_total);
    Ok(LossGradient {
        report: report.values(),
        d_params: p.to_array().map(|v| g.wrt(v)),
        d_omega: w.map(|v| g.wrt(v)),
        abs_arguments: tape.abs_arguments(),
    })
}

/// The three set losses and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetLosses {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_t: f64,
}

/// Undisentangled, unweighted losses over the parameter set, the
/// reconstructed points and the vanishing points.
pub fn set_losses(pred: &CameraParams, target: &LossTarget) -> Result<SetLosses, LossError> {
    let l1 = mae(&pred.to_array(), &target.gt.to_array())?;
    let l2 = mae(&reconstruct_flat(pred, target)?, &target.flat_points())?;
    let model = compose_projection(pred)?;
    let pc = ConstraintTargets::from_projection(&model.p);
    let (p, a) = vp_pairs(&pc.vanishing(), &target.constraints.vanishing(), None);
    let l3 = mae_or_zero(&p, &a)?;
    Ok(SetLosses {
        l1,
        l2,
        l3,
        l_t: (l1 + l2 + l3) / 3.0,
    })
}
