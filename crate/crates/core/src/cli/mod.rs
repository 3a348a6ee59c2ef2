//! The `ugcl` command line.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 invalid input, 3 I/O
//! failure, 4 gradient check failure.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::datagen::{
    generate_batch, read_dataset, sample_configs, ConfigRange, DatagenError, DatasetHeader, DatasetWriter, Interval,
    Sample,
};
use crate::eval::{ablate, align, evaluate, method_name, AblateOptions, EvalError, MaeRow, MaeTable, Prediction, TableMeta, REGRESSOR_LABEL};
use crate::geometry::{
    axis_plane_residuals, compose_projection, rotation_residuals, CameraParams, ConstraintTargets, GeometryError,
    Mat3, ProjectionMatrix, Vec2,
};
use crate::gradcheck::{gradcheck_suite, GradcheckError, GradcheckOptions};
use crate::loss::{ConstraintSet, LossConfig, LossError, LossReport, Variant, WeightsMode};
use crate::solver::{solve_sample, train_regressor, InitMode, SolveOptions, SolverError, TinyRegressor, TrainOptions};

/// Recovery threshold on every normalized parameter error.
pub const RECOVERY_TOL: f64 = 1e-3;

const GENERATE_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("gradient check failed for {0} configuration(s)")]
    GradcheckFailed(usize),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gradcheck(#[from] GradcheckError),
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn solver_code(e: &SolverError) -> u8 {
    match e {
        SolverError::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
            CliError::GradcheckFailed(_) => 4,
            CliError::Data(DatagenError::Io(_)) => 3,
            CliError::Data(DatagenError::Unfillable { .. }) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(e) => solver_code(e),
            CliError::Eval(EvalError::Io(_)) => 3,
            CliError::Eval(EvalError::Solver(e)) => solver_code(e),
            CliError::Eval(_) => 2,
            CliError::Gradcheck(GradcheckError::Unsampleable { .. }) => 4,
            CliError::Gradcheck(GradcheckError::Data(DatagenError::Io(_))) => 3,
            CliError::Gradcheck(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ugcl", version, about = "Camera calibration from stereo correspondences with geometric constraint losses")]
pub struct Cli {
    /// Worker threads for parallel sections [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic calibration dataset (JSON Lines)
    Generate(GenerateArgs),
    /// Fit camera parameters per sample by direct optimization
    Solve(SolveArgs),
    /// Train the correspondence regressor
    Train(TrainArgs),
    /// Tabulate per-parameter MAE of predictions against a dataset
    Evaluate(EvaluateArgs),
    /// Train the VP, VP-WC and VP-WC-R ladder on one dataset
    Ablate(AblateArgs),
    /// Compare loss gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Report constraint residuals of a projection matrix or camera
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Plain,
    Disentangled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightsArg {
    Fixed,
    Learnable,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Plain => Variant::Plain,
            VariantArg::Disentangled => Variant::Disentangled,
        }
    }
}

impl From<WeightsArg> for WeightsMode {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Fixed => WeightsMode::Fixed,
            WeightsArg::Learnable => WeightsMode::Learnable,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    /// Constraint groups, e.g. VP-WC-R, VP or none
    #[arg(long, default_value = "VP-WC-R")]
    pub constraints: String,
    /// Per-parameter loss form
    #[arg(long, value_enum, default_value_t = VariantArg::Disentangled)]
    pub variant: VariantArg,
    /// Loss weights: all 0.5, or sigmoid of learned logits
    #[arg(long, value_enum, default_value_t = WeightsArg::Fixed)]
    pub weights: WeightsArg,
    /// Add the axis-plane residuals to the constraint loss
    #[arg(long)]
    pub axis_planes: bool,
}

impl LossArgs {
    fn config(&self) -> Result<LossConfig, CliError> {
        let constraints: ConstraintSet = self.constraints.parse().map_err(|e: LossError| CliError::Invalid(e.to_string()))?;
        let cfg = LossConfig {
            include_axis_planes: self.axis_planes,
            ..LossConfig::new(self.variant.into(), constraints, self.weights.into())
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of samples
    #[arg(long)]
    pub count: usize,
    /// Random seed
    #[arg(long, env = "UGCL_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with parameter ranges (fov in degrees, pitch in radians, lengths in meters)
    #[arg(long)]
    pub range_file: Option<PathBuf>,
    /// Pitch interval in degrees, LO,HI (overrides the range file)
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true, value_name = "DEG")]
    pub pitch_deg: Option<Vec<f64>>,
    /// Correspondences per sample
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Perturbed,
    Midpoint,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Starting point: perturbed ground truth or range midpoints
    #[arg(long, value_enum, default_value_t = InitArg::Perturbed)]
    pub init: InitArg,
    /// Relative perturbation of each ground-truth parameter
    #[arg(long, default_value_t = 0.2)]
    pub perturb: f64,
    /// Iteration budget per sample
    #[arg(long, default_value_t = SolveOptions::default().max_iters)]
    pub max_iters: usize,
    /// Stop once L_total falls below this
    #[arg(long, default_value_t = SolveOptions::default().tol)]
    pub tol: f64,
    /// Initial step size in range-normalized units
    #[arg(long, default_value_t = SolveOptions::default().lr)]
    pub lr: f64,
    /// Only solve the first N samples
    #[arg(long)]
    pub limit: Option<usize>,
    /// Random seed (perturbation signs)
    #[arg(long, env = "UGCL_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Passes over the training split
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Samples per optimizer step
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Keep loss weights fixed at their initial logits in learnable mode
    #[arg(long)]
    pub freeze_omega: bool,
    /// Fraction of samples held out for validation
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Random seed (initialization, split, batch order)
    #[arg(long, env = "UGCL_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON Lines of {"id", "params"} as written by solve and train
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub predictions: Option<PathBuf>,
    /// Regressor weights (model.json from train); predicts every sample
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Row label in the table
    #[arg(long, default_value = "predictions")]
    pub method: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    /// Per-parameter loss form
    #[arg(long, value_enum, default_value_t = VariantArg::Disentangled)]
    pub variant: VariantArg,
    /// Loss weights: all 0.5, or sigmoid of learned logits
    #[arg(long, value_enum, default_value_t = WeightsArg::Fixed)]
    pub weights: WeightsArg,
    /// Passes over the training split
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Samples per optimizer step
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Fraction of samples held out for the table
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Train the three rungs concurrently
    #[arg(long)]
    pub parallel: bool,
    /// Random seed shared by every rung
    #[arg(long, env = "UGCL_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random evaluation points per configuration
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Random seed (dataset and evaluation points)
    #[arg(long, env = "UGCL_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Correspondences per generated sample
    #[arg(long, default_value_t = 8)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// A 3x4 matrix (12 whitespace-separated numbers, row-major) or a camera
    /// parameter JSON object (pitch in radians); `-` reads stdin
    #[arg(default_value = "-")]
    pub input: PathBuf,
}

/// Records everything a run prints so it can be saved as `log.txt`.
#[derive(Default)]
struct Console {
    text: String,
}

impl Console {
    fn say(&mut self, line: impl AsRef<str>) {
        println!("{}", line.as_ref());
        self.text.push_str(line.as_ref());
        self.text.push('\n');
    }
}

#[derive(Serialize)]
struct RunConfig<'a, O: Serialize> {
    subcommand: &'a str,
    dataset: Option<&'a Path>,
    range: Option<&'a ConfigRange>,
    loss: Vec<LossConfig>,
    options: O,
    seed: u64,
    out: &'a Path,
}

struct OutDir<'a> {
    path: &'a Path,
}

impl<'a> OutDir<'a> {
    fn create<O: Serialize>(cfg: &RunConfig<'a, O>) -> Result<Self, CliError> {
        fs::create_dir_all(cfg.out).map_err(io_err(cfg.out))?;
        let dir = OutDir { path: cfg.out };
        let json = serde_json::to_string_pretty(cfg).expect("run config serializes");
        dir.write("run_config", &(json + "\n"))?;
        Ok(dir)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path.join(name);
        fs::write(&path, contents).map_err(io_err(&path))
    }

    fn finish(&self, console: &Console) -> Result<(), CliError> {
        self.write("log.txt", &console.text)
    }
}

fn dataset_id(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn load(path: &Path) -> Result<(DatasetHeader, Vec<Sample>), CliError> {
    let (header, samples) = read_dataset(path).map_err(|e| match e {
        DatagenError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Data(other),
    })?;
    if samples.is_empty() {
        return Err(CliError::Invalid(format!("{}: dataset has no samples", path.display())));
    }
    Ok((header, samples))
}

fn predictions_jsonl(preds: &[Prediction]) -> String {
    preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
        .collect()
}

fn table_row(method: &str, mae: [f64; 10]) -> MaeRow {
    MaeRow {
        method: method.to_string(),
        mae,
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Solve(a) => solve(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Check(a) => check(&a),
    }
}

fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::Invalid("--count must be at least 1".into()));
    }
    let mut range = match &a.range_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<ConfigRange>(&text)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => ConfigRange::default(),
    };
    range.seed = a.seed;
    if let Some(p) = &a.pitch_deg {
        if p.len() != 2 {
            return Err(CliError::Invalid("--pitch-deg takes LO,HI".into()));
        }
        range.pitch_rad = Interval::new(p[0].to_radians(), p[1].to_radians());
    }
    if let Some(n) = a.points {
        range.points_per_sample = n;
    }
    range.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let configs = sample_configs(&range, a.count, range.seed).map_err(|e| CliError::Invalid(e.to_string()))?;
    let file = fs::File::create(&a.out).map_err(io_err(&a.out))?;
    let mut writer = DatasetWriter::new(BufWriter::new(file), &DatasetHeader::new(&range))?;
    for (k, chunk) in configs.chunks(GENERATE_CHUNK).enumerate() {
        for s in generate_batch(chunk, (k * GENERATE_CHUNK) as u64, &range)? {
            writer.write_sample(&s)?;
        }
    }
    let summary = writer.finish()?;
    println!("wrote {} samples to {}", summary.count, a.out.display());
    println!("checksum {}", summary.checksum_hex());
    println!("ranges {}", serde_json::to_string(&range).expect("range serializes"));
    Ok(())
}

/// Mean of each loss component per iteration; a sample that stopped early
/// contributes its final value.
fn mean_trace(traces: &[Vec<LossReport>]) -> String {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("iteration,L_total,L_Cam,L_3D,L_con\n");
    for it in 0..len {
        let mut acc = [0.0; 4];
        for t in traces {
            let r = &t[it.min(t.len() - 1)];
            for (a, v) in acc.iter_mut().zip([r.l_total, r.l_cam, r.l_3d, r.l_con]) {
                *a += v;
            }
        }
        let n = traces.len() as f64;
        writeln!(out, "{it},{},{},{},{}", acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n).unwrap();
    }
    out
}

#[derive(Serialize)]
struct SolveRun {
    init: InitMode,
    solver: SolveOptions,
    limit: Option<usize>,
}

fn solve(a: &SolveArgs) -> Result<(), CliError> {
    let cfg = a.loss.config()?;
    let (header, mut samples) = load(&a.dataset)?;
    if let Some(n) = a.limit {
        samples.truncate(n.max(1));
    }
    let init = match a.init {
        InitArg::Perturbed => InitMode::GtPerturbed { fraction: a.perturb },
        InitArg::Midpoint => InitMode::Midpoint,
    };
    let opts = SolveOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        lr: a.lr,
        seed: a.seed,
        ..SolveOptions::default()
    };
    let range = header.range;
    let out = OutDir::create(&RunConfig {
        subcommand: "solve",
        dataset: Some(&a.dataset),
        range: Some(&range),
        loss: vec![cfg],
        options: SolveRun { init, solver: opts.clone(), limit: a.limit },
        seed: a.seed,
        out: &a.out,
    })?;
    let omega = [0.0; 19];
    let results = samples
        .par_iter()
        .map(|s| solve_sample(s, &cfg, init, &range, &omega, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut con = Console::default();
    let recovered = results
        .iter()
        .zip(&samples)
        .filter(|(r, s)| r.normalized_error(&s.gt, &range).iter().all(|&e| e < RECOVERY_TOL))
        .count();
    let converged = results.iter().filter(|r| r.converged).count();
    let preds: Vec<Prediction> = results
        .iter()
        .zip(&samples)
        .map(|(r, s)| Prediction { id: s.id, params: r.params })
        .collect();
    let params: Vec<CameraParams> = preds.iter().map(|p| p.params).collect();
    let mut table = MaeTable::new(TableMeta {
        dataset: dataset_id(&a.dataset),
        count: samples.len(),
        seed: a.seed,
        predictor: "per-sample direct optimization".into(),
    });
    table.rows.push(table_row(&method_name(&cfg), evaluate(&params, &samples)?));
    con.say(format!("config {}", cfg.name()));
    con.say(format!("samples {}", samples.len()));
    con.say(format!("converged (L_total < {:e}) {converged}", opts.tol));
    con.say(format!("recovered (all normalized errors < {RECOVERY_TOL:e}) {recovered}"));
    let traces: Vec<Vec<LossReport>> = results.into_iter().map(|r| r.trace).collect();
    out.write("predictions.jsonl", &predictions_jsonl(&preds))?;
    out.write(&format!("curves_{}.csv", cfg.name()), &mean_trace(&traces))?;
    table.write_to(out.path)?;
    con.say(table.to_text().trim_end());
    out.finish(&con)
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = a.loss.config()?;
    let (header, samples) = load(&a.dataset)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
        freeze_omega: a.freeze_omega,
        val_fraction: a.val_fraction,
    };
    let range = header.range;
    let out = OutDir::create(&RunConfig {
        subcommand: "train",
        dataset: Some(&a.dataset),
        range: Some(&range),
        loss: vec![cfg],
        options: &opts,
        seed: a.seed,
        out: &a.out,
    })?;
    let outcome = train_regressor(&samples, &range, &cfg, &opts)?;
    let held_out: Vec<Sample> = outcome.val_idx.iter().map(|&i| samples[i].clone()).collect();
    let preds = held_out
        .iter()
        .map(|s| Ok(Prediction { id: s.id, params: outcome.model.predict(s)? }))
        .collect::<Result<Vec<_>, SolverError>>()?;
    let params: Vec<CameraParams> = preds.iter().map(|p| p.params).collect();
    let mut table = MaeTable::new(TableMeta {
        dataset: dataset_id(&a.dataset),
        count: held_out.len(),
        seed: a.seed,
        predictor: REGRESSOR_LABEL.into(),
    });
    table.rows.push(table_row(&method_name(&cfg), evaluate(&params, &held_out)?));

    let mut con = Console::default();
    con.say(format!("config {}", cfg.name()));
    con.say(format!(
        "train {} validation {} optimizer steps {}",
        outcome.train_idx.len(),
        outcome.val_idx.len(),
        outcome.log.steps
    ));
    if let (Some(first), Some(last)) = (outcome.log.rows.first(), outcome.log.rows.last()) {
        con.say(format!(
            "validation L_total epoch {} {:.6e}, epoch {} {:.6e}",
            first.epoch, first.l_total, last.epoch, last.l_total
        ));
    }
    if let Some(epoch) = outcome.log.collapsed_at {
        con.say(format!("warning: loss weights collapsed at epoch {epoch}"));
    }
    out.write(&format!("curves_{}.csv", cfg.name()), &outcome.log.to_csv())?;
    out.write(
        "model.json",
        &(serde_json::to_string(&outcome.model).expect("model serializes") + "\n"),
    )?;
    out.write("predictions.jsonl", &predictions_jsonl(&preds))?;
    table.write_to(out.path)?;
    con.say(table.to_text().trim_end());
    out.finish(&con)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let (header, samples) = load(&a.dataset)?;
    let (preds, predictor) = if let Some(path) = &a.predictions {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let preds = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<Prediction>(l)
                    .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        (preds, format!("predictions from {}", dataset_id(path)))
    } else {
        let path = a.model.as_ref().expect("clap requires one source");
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let model: TinyRegressor =
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let preds = samples
            .iter()
            .map(|s| Ok(Prediction { id: s.id, params: model.predict(s)? }))
            .collect::<Result<Vec<_>, SolverError>>()?;
        (preds, REGRESSOR_LABEL.to_string())
    };
    let seed = header.range.seed;
    let out = OutDir::create(&RunConfig {
        subcommand: "evaluate",
        dataset: Some(&a.dataset),
        range: Some(&header.range),
        loss: Vec::new(),
        options: (a.predictions.as_deref(), a.model.as_deref(), &a.method),
        seed,
        out: &a.out,
    })?;
    let matched: Vec<Sample> = align(&preds, &samples)?.into_iter().cloned().collect();
    let params: Vec<CameraParams> = preds.iter().map(|p| p.params).collect();
    let mut table = MaeTable::new(TableMeta {
        dataset: dataset_id(&a.dataset),
        count: matched.len(),
        seed,
        predictor,
    });
    table.rows.push(table_row(&a.method, evaluate(&params, &matched)?));
    table.write_to(out.path)?;
    let mut con = Console::default();
    con.say(table.to_text().trim_end());
    out.finish(&con)
}

fn ablate_cmd(a: &AblateArgs) -> Result<(), CliError> {
    let (header, samples) = load(&a.dataset)?;
    let opts = AblateOptions {
        train: TrainOptions {
            epochs: a.epochs,
            batch: a.batch,
            lr: a.lr,
            seed: a.seed,
            freeze_omega: false,
            val_fraction: a.val_fraction,
        },
        variant: a.variant.into(),
        weights_mode: a.weights.into(),
        parallel: a.parallel,
    };
    let out = OutDir::create(&RunConfig {
        subcommand: "ablate",
        dataset: Some(&a.dataset),
        range: Some(&header.range),
        loss: LossConfig::ladder(opts.variant, opts.weights_mode).to_vec(),
        options: &opts.train,
        seed: a.seed,
        out: &a.out,
    })?;
    let result = ablate(&samples, &header.range, &dataset_id(&a.dataset), &opts)?;
    result.write_to(out.path)?;
    let mut con = Console::default();
    for run in &result.runs {
        if let (Some(first), Some(last)) = (run.log.rows.first(), run.log.rows.last()) {
            con.say(format!(
                "{}: validation L_total {:.6e} -> {:.6e} ({})",
                run.config.name(),
                first.l_total,
                last.l_total,
                run.curve_file()
            ));
        }
    }
    con.say(result.table.to_text().trim_end());
    out.finish(&con)
}

fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if a.trials == 0 || a.points == 0 {
        return Err(CliError::Invalid("--trials and --points must be at least 1".into()));
    }
    let opts = GradcheckOptions {
        trials: a.trials,
        seed: a.seed,
        points_per_sample: a.points,
        ..GradcheckOptions::default()
    };
    let reports = gradcheck_suite(&opts)?;
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: {} components, max rel err {:.2e}, {} redraws, {} failures",
            r.config,
            r.components,
            r.max_rel_err,
            r.redraws,
            r.failures.len()
        );
        for f in r.failures.iter().take(5) {
            println!(
                "  trial {} {}: analytic {:e} numeric {:e} rel {:.2e}",
                f.trial, f.component, f.analytic, f.numeric, f.rel_err
            );
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::GradcheckFailed(failed));
    }
    Ok(())
}

/// What `check` was given.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckInput {
    Matrix(ProjectionMatrix),
    Camera(CameraParams),
}

pub fn parse_check_input(text: &str) -> Result<CheckInput, CliError> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        let p: CameraParams =
            serde_json::from_str(trimmed).map_err(|e| CliError::Invalid(format!("camera parameters: {e}")))?;
        return Ok(CheckInput::Camera(p));
    }
    let values = trimmed
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Invalid(format!("not a number: {t:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != 12 {
        return Err(CliError::Invalid(format!("expected 12 matrix entries, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Invalid("matrix entries must be finite".into()));
    }
    Ok(CheckInput::Matrix(ProjectionMatrix(std::array::from_fn(|i| {
        std::array::from_fn(|j| values[4 * i + j])
    }))))
}

fn fmt_point(name: &str, v: Option<Vec2>) -> String {
    match v {
        Some([u, w]) => format!("{name} = ({u}, {w}) finite"),
        None => format!("{name} infinite"),
    }
}

/// The report printed by `check`: rotation and axis-plane residuals,
/// vanishing points and world center.
pub fn check_report(input: &CheckInput) -> Result<String, CliError> {
    let (p, r, rotation_source): (ProjectionMatrix, Mat3, &str) = match input {
        CheckInput::Matrix(p) => {
            let m = p.0;
            let r = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j]));
            (*p, r, "left 3x3 block of P")
        }
        CheckInput::Camera(c) => {
            let model = compose_projection(c)?;
            (model.p, model.r, "R(theta_p)")
        }
    };
    let mut out = String::from("P =\n");
    for row in p.0 {
        writeln!(out, "  {} {} {} {}", row[0], row[1], row[2], row[3]).unwrap();
    }
    let rot = rotation_residuals(&r);
    writeln!(out, "rotation residuals ({rotation_source}):").unwrap();
    for (name, v) in ["r1.r2", "r1.r3", "r2.r3", "|R R^T - I|_F", "det R - 1"].iter().zip(rot) {
        writeln!(out, "  {name} = {v}").unwrap();
    }
    writeln!(out, "axis-plane residuals:").unwrap();
    for (name, v) in ["|p1 x p2|", "|p1 x p3|", "|p2 x p3|"].iter().zip(axis_plane_residuals(&p)) {
        writeln!(out, "  {name} = {v}").unwrap();
    }
    let t = ConstraintTargets::from_projection(&p);
    writeln!(out, "{}", fmt_point("V_x", t.v_x)).unwrap();
    writeln!(out, "{}", fmt_point("V_y", t.v_y)).unwrap();
    writeln!(out, "{}", fmt_point("V_z", t.v_z)).unwrap();
    writeln!(out, "{}", fmt_point("W_c", t.w_c)).unwrap();
    Ok(out)
}

fn check(a: &CheckArgs) -> Result<(), CliError> {
    let text = if a.input.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(io_err(Path::new("<stdin>")))?;
        s
    } else {
        fs::read_to_string(&a.input).map_err(io_err(&a.input))?
    };
    let report = check_report(&parse_check_input(&text)?)?;
    io::stdout().write_all(report.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
