//! Finite-difference verification of loss gradients.
//!
//! Each trial perturbs a generated sample's ground truth, draws random weight
//! logits and compares the tape gradient with central differences
//! (`h = 1e-6·max(1, |x|)`) for all 10 camera parameters and 19 logits.
//! A trial whose step straddles an `abs` kink is redrawn.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{generate_dataset, stream_rng, ConfigRange, DatagenError};
use crate::diff::{Scalar, Tape};
use crate::geometry::{CameraParams, ParamId};
use crate::loss::{loss_gradient, total_loss, LossConfig, LossError, LossTarget, Variant, WeightsMode, ConstraintSet};

#[derive(Debug, thiserror::Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("trial {trial}: no kink-free point after {attempts} draws")]
    Unsampleable { trial: usize, attempts: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub rel_tol: f64,
    /// Absolute agreement accepted as `abs_floor·max(1, |L|)`, for components
    /// whose true derivative is zero.
    pub abs_floor: f64,
    /// Arguments of `abs` closer than this to zero mark a kink.
    pub kink_radius: f64,
    pub max_redraws: usize,
    pub points_per_sample: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 100,
            seed: 1,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            kink_radius: 1e-7,
            max_redraws: 100,
            points_per_sample: 8,
        }
    }
}

/// Below this magnitude an `abs` argument is rounding noise around an
/// identically zero quantity (rotation residuals of an exact rotation).
const NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct ComponentFailure {
    pub trial: usize,
    pub component: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub config: String,
    pub trials: usize,
    pub components: usize,
    pub redraws: usize,
    pub max_rel_err: f64,
    pub failures: Vec<ComponentFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Loss configurations covered by the suite: every shipped one plus the
/// axis-plane extension.
pub fn suite_configs() -> Vec<LossConfig> {
    let mut out = LossConfig::all_shipped();
    out.push(LossConfig {
        include_axis_planes: true,
        ..LossConfig::new(Variant::Disentangled, ConstraintSet::VP_WC_R, WeightsMode::Learnable)
    });
    out
}

fn component_name(k: usize) -> String {
    if k < 10 {
        ParamId::ALL[k].name().to_string()
    } else {
        format!("omega_{}", k - 9)
    }
}

fn unpack(x: &[f64; 29]) -> (CameraParams, [f64; 19]) {
    let p = CameraParams::from_array(std::array::from_fn(|i| x[i]));
    (p, std::array::from_fn(|i| x[10 + i]))
}

/// Value and `abs` arguments at `x`.
fn probe(x: &[f64; 29], target: &LossTarget, cfg: &LossConfig) -> Result<(f64, Vec<f64>), LossError> {
    let tape = Tape::with_capacity(16 * 1024);
    let (p, w) = unpack(x);
    let r = total_loss(&p.map(|v| tape.var(v)), &w.map(|v| tape.var(v)), target, cfg)?;
    if let Some(e) = tape.fault() {
        return Err(e.into());
    }
    Ok((r.l_total.value(), tape.abs_arguments()))
}

fn near_kink(args: &[f64], radius: f64) -> bool {
    args.iter().any(|&a| a.abs() > NOISE && a.abs() < radius)
}

fn crosses_kink(minus: &[f64], plus: &[f64]) -> bool {
    minus.len() != plus.len()
        || minus
            .iter()
            .zip(plus)
            .any(|(&a, &b)| a.abs().max(b.abs()) > NOISE && (a > 0.0) != (b > 0.0))
}

/// Random evaluation point around a ground truth: positive parameters are
/// scaled by up to ±10 %, signed ones shifted by up to 10 % of their range.
fn draw_point(rng: &mut impl Rng, gt: &CameraParams, range: &ConfigRange) -> [f64; 29] {
    let bounds = range.param_bounds();
    let mut x = [0.0; 29];
    for id in ParamId::ALL {
        let i = id.index();
        let u: f64 = rng.random_range(-1.0..1.0);
        x[i] = match id {
            ParamId::Fx | ParamId::Fy | ParamId::Baseline | ParamId::Disparity => gt.get(id) * (1.0 + 0.1 * u),
            _ => gt.get(id) + 0.1 * u * bounds[i].scale(),
        };
    }
    for w in &mut x[10..] {
        *w = rng.random_range(-2.0..2.0);
    }
    x
}

/// Checks one configuration on `targets` (trial `i` uses target
/// `i % targets.len()`).
pub fn gradcheck_config(
    cfg: &LossConfig,
    targets: &[LossTarget],
    range: &ConfigRange,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport, GradcheckError> {
    let mut report = GradcheckReport {
        config: cfg.name(),
        trials: opts.trials,
        components: 0,
        redraws: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..opts.trials {
        let target = &targets[trial % targets.len()];
        let mut rng = stream_rng(opts.seed, Some(trial as u64));
        let mut accepted = None;
        for _ in 0..opts.max_redraws {
            let x = draw_point(&mut rng, &target.gt, range);
            let (p, w) = unpack(&x);
            let g = loss_gradient(&p, &w, target, cfg)?;
            if near_kink(&g.abs_arguments, opts.kink_radius) {
                report.redraws += 1;
                continue;
            }
            let mut numeric = [0.0; 29];
            let mut kink = false;
            for k in 0..29 {
                let h = 1e-6 * x[k].abs().max(1.0);
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let (fp, ap) = probe(&xp, target, cfg)?;
                let (fm, am) = probe(&xm, target, cfg)?;
                if crosses_kink(&am, &ap) {
                    kink = true;
                    break;
                }
                numeric[k] = (fp - fm) / (xp[k] - xm[k]);
            }
            if kink {
                report.redraws += 1;
                continue;
            }
            let analytic: Vec<f64> = g.d_params.iter().chain(&g.d_omega).copied().collect();
            accepted = Some((g.report.l_total, analytic, numeric));
            break;
        }
        let (loss, analytic, numeric) = accepted.ok_or(GradcheckError::Unsampleable {
            trial,
            attempts: opts.max_redraws,
        })?;
        for k in 0..29 {
            let (a, n) = (analytic[k], numeric[k]);
            let diff = (a - n).abs();
            let rel = if diff == 0.0 { 0.0 } else { diff / a.abs().max(n.abs()) };
            report.components += 1;
            if rel < opts.rel_tol || diff <= opts.abs_floor * loss.abs().max(1.0) {
                if rel < opts.rel_tol {
                    report.max_rel_err = report.max_rel_err.max(rel);
                }
                continue;
            }
            report.failures.push(ComponentFailure {
                trial,
                component: component_name(k),
                analytic: a,
                numeric: n,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}

/// Runs every suite configuration on a freshly generated dataset.
pub fn gradcheck_suite(opts: &GradcheckOptions) -> Result<Vec<GradcheckReport>, GradcheckError> {
    let range = ConfigRange {
        points_per_sample: opts.points_per_sample,
        seed: opts.seed,
        ..ConfigRange::default()
    };
    let samples = generate_dataset(&range, opts.trials.clamp(1, 100))?;
    let targets: Vec<LossTarget> = samples.iter().map(LossTarget::from_sample).collect();
    suite_configs()
        .par_iter()
        .map(|cfg| gradcheck_config(cfg, &targets, &range, opts))
        .collect()
}
