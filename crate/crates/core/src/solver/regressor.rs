//! A one-hidden-layer network from stereo correspondences to camera
//! parameters. It is a desk-scale stand-in for an image backbone and sees
//! only point coordinates.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{OptimState, SolverError};
use crate::datagen::{stream_rng, ConfigRange, Interval, Sample};
use crate::diff::sigmoid;
use crate::geometry::{CameraParams, ParamId};
use crate::loss::{evaluate_loss, loss_gradient, LossConfig, LossReport, LossTarget, OmegaWeights, WeightsMode};

pub const HIDDEN: usize = 64;

/// Effective weights below this on every term count as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyRegressor {
    pub n_points: usize,
    pub width: f64,
    pub height: f64,
    pub bounds: [Interval; 10],
    /// `HIDDEN × 4N`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `10 × HIDDEN`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    hidden: Vec<f64>,
    squash: [f64; 10],
}

impl TinyRegressor {
    /// Xavier-uniform weights, zero biases.
    pub fn new(range: &ConfigRange, rng: &mut impl Rng) -> Self {
        let n_in = 4 * range.points_per_sample;
        let mut xavier = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = xavier(n_in, HIDDEN);
        let w2 = xavier(HIDDEN, 10);
        TinyRegressor {
            n_points: range.points_per_sample,
            width: range.width as f64,
            height: range.height as f64,
            bounds: range.param_bounds(),
            w1,
            b1: vec![0.0; HIDDEN],
            w2,
            b2: vec![0.0; 10],
        }
    }

    pub fn n_inputs(&self) -> usize {
        4 * self.n_points
    }

    pub fn n_weights(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        let n_b2 = self.b2.len();
        self.b2.copy_from_slice(&d[..n_b2]);
    }

    /// Per point `(left.x, left.y, right.x, right.y)` scaled to `[−1, 1]`,
    /// points ordered by decreasing disparity so the input does not depend on
    /// the order of the correspondences.
    pub fn features(&self, s: &Sample) -> Result<Vec<f64>, SolverError> {
        if s.len() != self.n_points {
            return Err(SolverError::ShapeMismatch {
                expected: self.n_points,
                got: s.len(),
            });
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s.disparity[b].total_cmp(&s.disparity[a]));
        let (sx, sy) = (2.0 / self.width, 2.0 / self.height);
        Ok(order
            .iter()
            .flat_map(|&i| {
                [
                    s.left[i].x * sx - 1.0,
                    s.left[i].y * sy - 1.0,
                    s.right[i].x * sx - 1.0,
                    s.right[i].y * sy - 1.0,
                ]
            })
            .collect())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let n_in = self.n_inputs();
        let hidden: Vec<f64> = (0..HIDDEN)
            .map(|h| {
                let row = &self.w1[h * n_in..(h + 1) * n_in];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h];
                z.tanh()
            })
            .collect();
        let squash = std::array::from_fn(|k| {
            let row = &self.w2[k * HIDDEN..(k + 1) * HIDDEN];
            let z: f64 = row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + self.b2[k];
            sigmoid(z)
        });
        Forward { hidden, squash }
    }

    fn output(&self, f: &Forward) -> CameraParams {
        CameraParams::from_array(std::array::from_fn(|k| self.bounds[k].lerp(f.squash[k])))
    }

    pub fn predict(&self, s: &Sample) -> Result<CameraParams, SolverError> {
        Ok(self.output(&self.forward(&self.features(s)?)))
    }

    /// Adds `∂L/∂weights` to `grad` (laid out as [`Self::flat`]) given
    /// `d_out = ∂L/∂(predicted parameters)`.
    fn backward(&self, x: &[f64], f: &Forward, d_out: &[f64; 10], grad: &mut [f64]) {
        let n_in = self.n_inputs();
        let (g_w1, rest) = grad.split_at_mut(self.w1.len());
        let (g_b1, rest) = rest.split_at_mut(HIDDEN);
        let (g_w2, g_b2) = rest.split_at_mut(self.w2.len());
        let mut d_hidden = [0.0; HIDDEN];
        for k in 0..10 {
            let s = f.squash[k];
            let dz = d_out[k] * self.bounds[k].width() * s * (1.0 - s);
            g_b2[k] += dz;
            for h in 0..HIDDEN {
                g_w2[k * HIDDEN + h] += dz * f.hidden[h];
                d_hidden[h] += dz * self.w2[k * HIDDEN + h];
            }
        }
        for h in 0..HIDDEN {
            let dz = d_hidden[h] * (1.0 - f.hidden[h] * f.hidden[h]);
            g_b1[h] += dz;
            for (i, xi) in x.iter().enumerate() {
                g_w1[h * n_in + i] += dz * xi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Keep ω at its initial value even in Learnable mode.
    pub freeze_omega: bool,
    pub val_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch: 32,
            lr: 0.001,
            seed: 7,
            freeze_omega: false,
            val_fraction: 0.1,
        }
    }
}

/// One line of the training log, evaluated on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub l_total: f64,
    pub l_cam: f64,
    pub l_3d: f64,
    pub l_con: f64,
    /// Mean absolute error per parameter, in [`ParamId::TABLE_ORDER`].
    pub mae: [f64; 10],
    /// Effective weights `σ(ω₁) … σ(ω₁₉)`.
    pub omega: [f64; 19],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    /// First epoch after which every effective weight was below
    /// [`COLLAPSE_THRESHOLD`].
    pub collapsed_at: Option<usize>,
    pub steps: u64,
}

impl TrainLog {
    pub fn csv_header() -> String {
        let mut cols = vec!["epoch", "L_total", "L_Cam", "L_3D", "L_con"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend(ParamId::TABLE_ORDER.iter().map(|p| format!("mae_{}", p.tag())));
        cols.extend((1..=19).map(|i| format!("omega_{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{},{}", r.epoch, r.l_total, r.l_cam, r.l_3d, r.l_con).unwrap();
            for v in r.mae.iter().chain(&r.omega) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses a CSV produced by [`Self::to_csv`], checking its shape.
    pub fn from_csv(text: &str) -> Result<TrainLog, String> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::csv_header().as_str()) {
            return Err("unexpected header".into());
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 34 {
                return Err(format!("row {}: {} columns, expected 34", i + 1, cells.len()));
            }
            let epoch = cells[0].parse::<usize>().map_err(|e| format!("row {}: {e}", i + 1))?;
            let v: Vec<f64> = cells[1..]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", i + 1))?;
            rows.push(EpochRow {
                epoch,
                l_total: v[0],
                l_cam: v[1],
                l_3d: v[2],
                l_con: v[3],
                mae: std::array::from_fn(|k| v[4 + k]),
                omega: std::array::from_fn(|k| v[14 + k]),
            });
        }
        Ok(TrainLog {
            rows,
            collapsed_at: None,
            steps: 0,
        })
    }
}

pub struct TrainOutcome {
    pub model: TinyRegressor,
    pub omega: OmegaWeights,
    pub log: TrainLog,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

/// Deterministic shuffled split; the validation part holds
/// `round(n·val_fraction)` samples (at least one when `n ≥ 2`).
pub fn split_indices(n: usize, seed: u64, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Some(1)));
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Validation metrics; all reports and absolute errors averaged.
fn validate(
    model: &TinyRegressor,
    omega: &OmegaWeights,
    samples: &[Sample],
    targets: &[LossTarget],
    val: &[usize],
    cfg: &LossConfig,
) -> Result<(LossReport, [f64; 10]), SolverError> {
    let per: Vec<(LossReport, CameraParams)> = val
        .par_iter()
        .map(|&i| {
            let pred = model.predict(&samples[i])?;
            Ok((evaluate_loss(&pred, omega, &targets[i], cfg)?, pred))
        })
        .collect::<Result<_, SolverError>>()?;
    let n = per.len().max(1) as f64;
    let mut mean = per[0].0;
    let (mut lt, mut lc, mut l3, mut lk) = (0.0, 0.0, 0.0, 0.0);
    let mut mae = [0.0; 10];
    for (&i, (r, pred)) in val.iter().zip(&per) {
        lt += r.l_total;
        lc += r.l_cam;
        l3 += r.l_3d;
        lk += r.l_con;
        for (k, p) in ParamId::TABLE_ORDER.iter().enumerate() {
            mae[k] += (pred.get(*p) - samples[i].gt.get(*p)).abs();
        }
    }
    mean.l_total = lt / n;
    mean.l_cam = lc / n;
    mean.l_3d = l3 / n;
    mean.l_con = lk / n;
    Ok((mean, mae.map(|m| m / n)))
}

/// Mini-batch training of a [`TinyRegressor`] (and of ω in Learnable mode)
/// on the mean `L_total` of each batch.
pub fn train_regressor(
    samples: &[Sample],
    range: &ConfigRange,
    cfg: &LossConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, SolverError> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(SolverError::EmptyDataset);
    }
    let batch = opts.batch.max(1);
    let (train_idx, val_idx) = split_indices(samples.len(), opts.seed, opts.val_fraction);
    let targets: Vec<LossTarget> = samples.iter().map(LossTarget::from_sample).collect();
    let features: Vec<Vec<f64>> = {
        let probe = TinyRegressor::new(range, &mut stream_rng(opts.seed, None));
        samples.iter().map(|s| probe.features(s)).collect::<Result<_, _>>()?
    };
    let mut model = TinyRegressor::new(range, &mut stream_rng(opts.seed, None));
    let learn_omega = cfg.weights_mode == WeightsMode::Learnable && !opts.freeze_omega;
    let n_w = model.n_weights();
    let mut initial = model.flat();
    if learn_omega {
        initial.extend([0.0; 19]);
    }
    let mut state = OptimState::new(initial, opts.lr);
    let mut omega = OmegaWeights::default();
    let mut log = TrainLog::default();

    for epoch in 1..=opts.epochs {
        state.epoch = epoch;
        let mut order = train_idx.clone();
        order.shuffle(&mut stream_rng(opts.seed, Some(1 + epoch as u64)));
        for chunk in order.chunks(batch) {
            let grads: Vec<(Vec<f64>, [f64; 19])> = chunk
                .par_iter()
                .map(|&i| {
                    let x = &features[i];
                    let f = model.forward(x);
                    let pred = model.output(&f);
                    let g = loss_gradient(&pred, &omega.0, &targets[i], cfg)?;
                    if !g.report.l_total.is_finite()
                        || g.d_params.iter().chain(&g.d_omega).any(|d| !d.is_finite())
                    {
                        return Err(SolverError::NonFiniteLoss {
                            iteration: state.step as usize,
                            trace: vec![g.report],
                        });
                    }
                    let mut gw = vec![0.0; n_w];
                    model.backward(x, &f, &g.d_params, &mut gw);
                    Ok((gw, g.d_omega))
                })
                .collect::<Result<_, SolverError>>()?;
            let scale = 1.0 / chunk.len() as f64;
            let mut total = vec![0.0; state.params.len()];
            for (gw, go) in &grads {
                for (t, g) in total.iter_mut().zip(gw) {
                    *t += g * scale;
                }
                if learn_omega {
                    for k in 0..19 {
                        total[n_w + k] += go[k] * scale;
                    }
                }
            }
            state.adam_step(&total);
            model.set_flat(&state.params[..n_w]);
            if learn_omega {
                omega.0.copy_from_slice(&state.params[n_w..]);
            }
        }
        let (mean, mae) = validate(&model, &omega, samples, &targets, &val_idx, cfg)?;
        if !mean.l_total.is_finite() {
            return Err(SolverError::NonFiniteLoss {
                iteration: state.step as usize,
                trace: vec![mean],
            });
        }
        let eff = omega.effective(cfg.weights_mode);
        if learn_omega && log.collapsed_at.is_none() && eff.iter().all(|&w| w < COLLAPSE_THRESHOLD) {
            log::warn!("epoch {epoch}: every effective loss weight is below {COLLAPSE_THRESHOLD}; the reported loss is degenerate");
            log.collapsed_at = Some(epoch);
        }
        log::debug!("epoch {epoch}: validation L_total {:.6e}", mean.l_total);
        log.rows.push(EpochRow {
            epoch,
            l_total: mean.l_total,
            l_cam: mean.l_cam,
            l_3d: mean.l_3d,
            l_con: mean.l_con,
            mae,
            omega: eff,
        });
    }
    log.steps = state.step;
    Ok(TrainOutcome {
        model,
        omega,
        log,
        train_idx,
        val_idx,
    })
}
