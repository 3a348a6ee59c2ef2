//! Per-parameter MAE tables, the constraint ladder and loss-curve export.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{ConfigRange, Sample};
use crate::geometry::{CameraParams, ParamId};
use crate::loss::{LossConfig, Variant, WeightsMode};
use crate::solver::{train_regressor, SolverError, TrainLog, TrainOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {samples} samples")]
    AlignmentMismatch { predictions: usize, samples: usize },
    #[error("prediction {index} is for sample {got}, expected {expected}")]
    IdMismatch { index: usize, expected: u64, got: u64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Label attached to every table produced by the correspondence regressor.
pub const REGRESSOR_LABEL: &str = "correspondence regressor (desk-scale stand-in for an image network)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub method: String,
    /// Columns in [`ParamId::TABLE_ORDER`].
    pub mae: [f64; 10],
}

impl MaeRow {
    pub fn get(&self, id: ParamId) -> f64 {
        let k = ParamId::TABLE_ORDER.iter().position(|&p| p == id).expect("every id is a column");
        self.mae[k]
    }

    /// Mean over f_x, f_y, p_x, p_y.
    pub fn intrinsic_mean(&self) -> f64 {
        ParamId::INTRINSICS.iter().map(|&p| self.get(p)).sum::<f64>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub dataset: String,
    /// Samples each row was averaged over.
    pub count: usize,
    pub seed: u64,
    pub predictor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeTable {
    pub meta: TableMeta,
    pub rows: Vec<MaeRow>,
}

/// Published full-scale ladder (19,080 test images). Kept for side-by-side
/// reading of desk runs, not as targets.
pub fn reference_ladder() -> [MaeRow; 3] {
    let row = |method: &str, mae| MaeRow { method: method.into(), mae };
    [
        row("UGCL-VP", [1.979, 1.973, 0.334, 0.438, 0.143, 2.616, 0.200, 0.125, 0.126, 0.009]),
        row("UGCL-VP-WC", [1.875, 1.900, 0.253, 0.129, 0.143, 2.640, 0.200, 0.125, 0.125, 0.013]),
        row("UGCL-VP-WC-R", [1.747, 1.804, 0.139, 0.089, 0.143, 2.542, 0.200, 0.125, 0.126, 0.009]),
    ]
}

fn column_header(id: ParamId) -> String {
    format!("{} [{}]", id.name(), id.unit())
}

impl MaeTable {
    pub fn new(meta: TableMeta) -> Self {
        MaeTable { meta, rows: Vec::new() }
    }

    pub fn row(&self, method: &str) -> Option<&MaeRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Aligned plain text with a metadata preamble.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# dataset: {}", self.meta.dataset).unwrap();
        writeln!(out, "# samples: {}", self.meta.count).unwrap();
        writeln!(out, "# seed: {}", self.meta.seed).unwrap();
        writeln!(out, "# predictor: {}", self.meta.predictor).unwrap();
        writeln!(out, "# units: pixels (f_x f_y p_x p_y d), meters (b t_x t_y t_z), radians (theta_p)").unwrap();
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let headers: Vec<String> = ParamId::TABLE_ORDER.iter().map(|&p| column_header(p)).collect();
        let col = headers.iter().map(|h| h.len()).max().unwrap_or(0).max(10);
        write!(out, "{:<width$}", "method").unwrap();
        for h in &headers {
            write!(out, "  {h:>col$}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{:<width$}", r.method).unwrap();
            for v in &r.mae {
                write!(out, "  {:>col$}", format!("{v:.3}")).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// One row per method with full-precision values; units in the header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,samples,seed");
        for p in ParamId::TABLE_ORDER {
            write!(out, ",mae_{}_{}", p.tag(), p.unit()).unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.method, self.meta.dataset, self.meta.count, self.meta.seed).unwrap();
            for v in &r.mae {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `mae_table.txt` and `mae_table.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::write(dir.join("mae_table.txt"), self.to_text())?;
        std::fs::write(dir.join("mae_table.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Mean absolute error per parameter, in raw units and table order.
pub fn evaluate(predictions: &[CameraParams], samples: &[Sample]) -> Result<[f64; 10], EvalError> {
    if predictions.len() != samples.len() || samples.is_empty() {
        return Err(EvalError::AlignmentMismatch {
            predictions: predictions.len(),
            samples: samples.len(),
        });
    }
    let mut mae = [0.0; 10];
    for (p, s) in predictions.iter().zip(samples) {
        for (k, &id) in ParamId::TABLE_ORDER.iter().enumerate() {
            mae[k] += (p.get(id) - s.gt.get(id)).abs();
        }
    }
    Ok(mae.map(|m| m / samples.len() as f64))
}

/// A prediction tagged with the id of the sample it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: u64,
    pub params: CameraParams,
}

/// Pairs predictions with samples by id, in prediction order.
pub fn align<'a>(predictions: &[Prediction], samples: &'a [Sample]) -> Result<Vec<&'a Sample>, EvalError> {
    let by_id: std::collections::HashMap<u64, &Sample> = samples.iter().map(|s| (s.id, s)).collect();
    predictions
        .iter()
        .enumerate()
        .map(|(index, p)| {
            by_id.get(&p.id).copied().ok_or(EvalError::IdMismatch {
                index,
                expected: samples.get(index).map_or(u64::MAX, |s| s.id),
                got: p.id,
            })
        })
        .collect()
}

/// Table-row label of a loss configuration, e.g. `UGCL-VP-WC-R`.
pub fn method_name(cfg: &LossConfig) -> String {
    format!("UGCL-{}", cfg.name())
}

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub train: TrainOptions,
    pub variant: Variant,
    pub weights_mode: WeightsMode,
    /// Train the rungs concurrently.
    pub parallel: bool,
}

impl Default for AblateOptions {
    fn default() -> Self {
        AblateOptions {
            train: TrainOptions::default(),
            variant: Variant::Disentangled,
            weights_mode: WeightsMode::Fixed,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LadderRun {
    pub config: LossConfig,
    pub log: TrainLog,
}

impl LadderRun {
    pub fn curve_file(&self) -> String {
        format!("curves_{}.csv", self.config.name())
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub table: MaeTable,
    pub runs: Vec<LadderRun>,
}

impl Ablation {
    /// Writes the table and one loss-curve CSV per rung into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        self.table.write_to(dir)?;
        for run in &self.runs {
            std::fs::write(dir.join(run.curve_file()), run.log.to_csv())?;
        }
        Ok(())
    }
}

fn run_rung(
    samples: &[Sample],
    range: &ConfigRange,
    cfg: LossConfig,
    opts: &TrainOptions,
) -> Result<(MaeRow, LadderRun, usize), EvalError> {
    let outcome = train_regressor(samples, range, &cfg, opts)?;
    let held_out: Vec<Sample> = outcome.val_idx.iter().map(|&i| samples[i].clone()).collect();
    let preds = held_out
        .iter()
        .map(|s| outcome.model.predict(s))
        .collect::<Result<Vec<_>, _>>()?;
    let row = MaeRow {
        method: method_name(&cfg),
        mae: evaluate(&preds, &held_out)?,
    };
    Ok((row, LadderRun { config: cfg, log: outcome.log }, held_out.len()))
}

/// Trains the regressor under VP, VP-WC and VP-WC-R with identical data,
/// split and initialization, and tabulates held-out MAE.
pub fn ablate(samples: &[Sample], range: &ConfigRange, dataset: &str, opts: &AblateOptions) -> Result<Ablation, EvalError> {
    let ladder = LossConfig::ladder(opts.variant, opts.weights_mode);
    let results: Vec<(MaeRow, LadderRun, usize)> = if opts.parallel {
        ladder
            .par_iter()
            .map(|&cfg| run_rung(samples, range, cfg, &opts.train))
            .collect::<Result<_, _>>()?
    } else {
        ladder
            .iter()
            .map(|&cfg| run_rung(samples, range, cfg, &opts.train))
            .collect::<Result<_, _>>()?
    };
    let mut table = MaeTable::new(TableMeta {
        dataset: dataset.to_string(),
        count: results[0].2,
        seed: opts.train.seed,
        predictor: REGRESSOR_LABEL.to_string(),
    });
    let mut runs = Vec::new();
    for (row, run, _) in results {
        table.rows.push(row);
        runs.push(run);
    }
    Ok(Ablation { table, runs })
}
