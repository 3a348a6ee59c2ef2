//! Optimizers driven by the loss gradients: direct per-sample solves and a
//! small correspondence regressor.

mod regressor;

pub use regressor::{
    split_indices, train_regressor, EpochRow, TinyRegressor, TrainLog, TrainOptions, TrainOutcome,
    HIDDEN,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{stream_rng, ConfigRange, Interval, Sample};
use crate::diff::{Scalar, Tape};
use crate::geometry::{CameraParams, ParamId};
use crate::loss::{evaluate_terms, loss_gradient, ConstraintSet, LossConfig, LossError, LossReport, LossTarget, Variant, WeightsMode};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite loss at iteration {iteration} (trace of {} entries kept)", trace.len())]
    NonFiniteLoss { iteration: usize, trace: Vec<LossReport> },
    #[error("need at least two samples")]
    EmptyDataset,
    #[error("regressor expects {expected} points per sample, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub epoch: usize,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

impl OptimState {
    pub fn new(params: Vec<f64>, lr: f64) -> Self {
        let n = params.len();
        OptimState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            epoch: 0,
        }
    }

    /// One bias-corrected step at the current learning rate.
    pub fn adam_step(&mut self, grad: &[f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient shape");
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, &g) in grad.iter().enumerate() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            self.params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Each parameter moved by `fraction` of its magnitude, random sign.
    GtPerturbed { fraction: f64 },
    /// Midpoint of each parameter range.
    Midpoint,
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::GtPerturbed { fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Initial step in normalized units; decays on a half cosine.
    pub lr: f64,
    /// Final step as a fraction of `lr`.
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 2000,
            tol: 1e-8,
            lr: 0.005,
            lr_floor: 1e-4,
            seed: 0,
        }
    }
}

impl SolveOptions {
    fn lr_at(&self, iter: usize) -> f64 {
        let progress = iter as f64 / self.max_iters.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.lr_floor + (1.0 - self.lr_floor) * cosine)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub params: CameraParams,
    pub trace: Vec<LossReport>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    /// Absolute error per parameter in units of each range's scale.
    pub fn normalized_error(&self, gt: &CameraParams, range: &ConfigRange) -> [f64; 10] {
        normalized_error(&self.params, gt, range)
    }
}

pub fn normalized_error(pred: &CameraParams, gt: &CameraParams, range: &ConfigRange) -> [f64; 10] {
    let bounds = range.param_bounds();
    std::array::from_fn(|i| (pred.to_array()[i] - gt.to_array()[i]).abs() / bounds[i].scale())
}

pub fn initial_params(init: InitMode, gt: &CameraParams, range: &ConfigRange, rng: &mut impl Rng) -> CameraParams {
    match init {
        InitMode::Midpoint => CameraParams::from_array(range.param_bounds().map(|iv| iv.mid())),
        InitMode::GtPerturbed { fraction } => gt.map(|v| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            v * (1.0 + sign * fraction)
        }),
    }
}

/// Smallest admissible value of the strictly positive parameters, relative to
/// the lower end of their range.
const POSITIVE_FLOOR: f64 = 1e-3;

fn keep_physical(x: &mut [f64], bounds: &[Interval; 10]) {
    for id in [ParamId::Fx, ParamId::Fy, ParamId::Baseline, ParamId::Disparity] {
        let i = id.index();
        x[i] = x[i].max(POSITIVE_FLOOR * bounds[i].lo);
    }
}

/// Minimizes `L_total` over the camera parameters of one sample with fixed
/// weight logits `omega`, in range-normalized coordinates.
pub fn solve_sample(
    sample: &Sample,
    cfg: &LossConfig,
    init: InitMode,
    range: &ConfigRange,
    omega: &[f64; 19],
    opts: &SolveOptions,
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    let target = LossTarget::from_sample(sample);
    let bounds = range.param_bounds();
    let scale = bounds.map(|iv| iv.scale());
    let mut rng = stream_rng(opts.seed, Some(sample.id));
    let start = initial_params(init, &sample.gt, range, &mut rng).to_array();
    let mut state = OptimState::new((0..10).map(|i| start[i] / scale[i]).collect(), opts.lr);
    let mut trace = Vec::with_capacity(opts.max_iters + 1);
    let mut x = start;
    for iter in 0..=opts.max_iters {
        let pred = CameraParams::from_array(x);
        let g = loss_gradient(&pred, omega, &target, cfg)?;
        let loss = g.report.l_total;
        trace.push(g.report);
        if !loss.is_finite() || g.d_params.iter().any(|d| !d.is_finite()) {
            return Err(SolverError::NonFiniteLoss { iteration: iter, trace });
        }
        if loss < opts.tol || iter == opts.max_iters {
            return Ok(SolveResult {
                params: pred,
                trace,
                iterations: iter,
                converged: loss < opts.tol,
            });
        }
        let grad: Vec<f64> = (0..10).map(|i| g.d_params[i] * scale[i]).collect();
        state.lr = opts.lr_at(iter);
        state.adam_step(&grad);
        for i in 0..10 {
            x[i] = state.params[i] * scale[i];
        }
        keep_physical(&mut x, &bounds);
        for i in 0..10 {
            state.params[i] = x[i] / scale[i];
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Jacobian of the ten camera terms with respect to the ten predicted
/// parameters, plus structural dependence from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTalk {
    /// `jacobian[q][r] = ∂L_q/∂r`.
    pub jacobian: [[f64; 10]; 10],
    /// `depends[q][r]`: whether `L_q` is connected to `r` on the tape.
    pub depends: [[bool; 10]; 10],
}

impl CrossTalk {
    /// Frobenius norm of the off-diagonal part of the Jacobian.
    pub fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for q in 0..10 {
            for r in 0..10 {
                if q != r {
                    s += self.jacobian[q][r].powi(2);
                }
            }
        }
        s.sqrt()
    }

    pub fn any_off_diagonal_dependence(&self) -> bool {
        (0..10).any(|q| (0..10).any(|r| q != r && self.depends[q][r]))
    }
}

pub fn cross_talk(pred: &CameraParams, target: &LossTarget, variant: Variant) -> Result<CrossTalk, SolverError> {
    let tape = Tape::new();
    let p = pred.map(|v| tape.var(v));
    let cfg = LossConfig::new(variant, ConstraintSet::NONE, WeightsMode::Fixed);
    let terms = evaluate_terms(&p, target, &cfg)?;
    let leaves = p.to_array();
    let mut out = CrossTalk {
        jacobian: [[0.0; 10]; 10],
        depends: [[false; 10]; 10],
    };
    for q in 0..10 {
        let g = tape.backward(terms.cam[q]);
        for (r, &leaf) in leaves.iter().enumerate() {
            out.jacobian[q][r] = g.wrt(leaf);
            out.depends[q][r] = tape.depends_on(terms.cam[q], leaf);
        }
    }
    debug_assert!(terms.cam.iter().all(|t| t.value().is_finite()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;

    fn samples(n: usize) -> (ConfigRange, Vec<Sample>) {
        let range = ConfigRange {
            points_per_sample: 8,
            seed: 21,
            ..ConfigRange::default()
        };
        let s = generate_dataset(&range, n).unwrap();
        (range, s)
    }

    #[test]
    fn adam_first_step_is_lr_in_gradient_direction() {
        let mut s = OptimState::new(vec![1.0, -2.0], 0.1);
        s.adam_step(&[3.0, -0.5]);
        assert!((s.params[0] - 0.9).abs() < 1e-7);
        assert!((s.params[1] + 1.9).abs() < 1e-7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = OptimState::new(vec![5.0, -3.0], 0.05);
        for _ in 0..3000 {
            let g: Vec<f64> = s.params.iter().map(|x| 2.0 * (x - 1.0)).collect();
            s.adam_step(&g);
        }
        assert!(s.params.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }

    #[test]
    fn ground_truth_init_converges_immediately() {
        let (range, s) = samples(1);
        let r = solve_sample(
            &s[0],
            &LossConfig::default(),
            InitMode::GtPerturbed { fraction: 0.0 },
            &range,
            &[0.0; 19],
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.params, s[0].gt);
    }

    #[test]
    fn perturbed_init_recovers_parameters_without_constraints() {
        let (range, s) = samples(3);
        let cfg = LossConfig::new(Variant::Disentangled, ConstraintSet::NONE, WeightsMode::Fixed);
        for sample in &s {
            let r = solve_sample(sample, &cfg, InitMode::default(), &range, &[0.0; 19], &SolveOptions::default()).unwrap();
            let err = r.normalized_error(&sample.gt, &range);
            assert!(err.iter().all(|&e| e < 1e-3), "{err:?}");
        }
    }

    #[test]
    fn constrained_solve_reduces_loss() {
        let (range, s) = samples(3);
        for sample in &s {
            let opts = SolveOptions { max_iters: 300, ..SolveOptions::default() };
            let r = solve_sample(sample, &LossConfig::default(), InitMode::default(), &range, &[0.0; 19], &opts).unwrap();
            let ls: Vec<f64> = r.trace.iter().step_by(30).map(|t| t.l_total).collect();
            assert!(r.trace.last().unwrap().l_total < r.trace[0].l_total, "{ls:?}");
            assert_eq!(r.trace.len(), r.iterations + 1);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let o = SolveOptions::default();
        assert_eq!(o.lr_at(0), o.lr);
        assert!((o.lr_at(o.max_iters) - o.lr * o.lr_floor).abs() < 1e-15);
    }

    #[test]
    fn cross_talk_only_in_plain_mode() {
        let (_, s) = samples(2);
        for sample in &s {
            let t = LossTarget::from_sample(sample);
            let pred = sample.gt.map(|v| v * 1.07 + 0.01);
            let d = cross_talk(&pred, &t, Variant::Disentangled).unwrap();
            assert_eq!(d.off_diagonal_norm(), 0.0);
            assert!(!d.any_off_diagonal_dependence());
            let p = cross_talk(&pred, &t, Variant::Plain).unwrap();
            assert!(p.off_diagonal_norm() > 0.0);
            assert!(p.any_off_diagonal_dependence());
        }
    }
}
