//! Synthetic stereo-correspondence datasets with full ground truth.

mod io;
mod range;

pub use io::{
    read_dataset, write_dataset, DatasetHeader, DatasetReader, DatasetSummary, DatasetWriter,
    FORMAT_NAME, SCHEMA_VERSION,
};
pub use range::{focal_from_fov, ConfigRange, Interval, SceneVolume};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    compose_projection, project_stereo, reconstruct_observations, CameraParams, ConstraintTargets,
    GeometryError, Point3, PointImage,
};

/// Rejection-sampling budget per scene point.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("empty interval for {field}")]
    EmptyRange { field: &'static str },
    #[error("invalid range for {field}: {reason}")]
    InvalidRange { field: &'static str, reason: String },
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("sample {id}: no in-frame point found after {attempts} attempts")]
    Unfillable { id: u64, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported dataset header: {0}")]
    SchemaVersionMismatch(String),
    #[error("dataset checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed sample on line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Targets derived from the ground-truth camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTargets {
    pub constraints: ConstraintTargets,
    /// The left observations reconstructed with the ground-truth camera.
    pub reconstructed: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub gt: CameraParams,
    pub points3d: Vec<Point3>,
    pub left: Vec<PointImage>,
    pub right: Vec<PointImage>,
    /// Per-point disparity in pixels.
    pub disparity: Vec<f64>,
    pub targets: GroundTruthTargets,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.points3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3d.is_empty()
    }

    /// Per-point disparity relative to the scalar `d` (their mean).
    pub fn disparity_ratios(&self) -> Vec<f64> {
        self.disparity.iter().map(|&di| di / self.gt.d).collect()
    }
}

/// Random stream for config sampling (`None`) or for sample `id`.
pub fn stream_rng(seed: u64, id: Option<u64>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.map_or(0, |i| i + 1));
    rng
}

fn uniform(rng: &mut impl Rng, iv: &Interval) -> f64 {
    iv.lerp(rng.random::<f64>())
}

/// Draws `count` camera configurations uniformly from `range`.
///
/// `d` is provisional here (the disparity of a point at mid depth);
/// [`generate_sample`] replaces it with the mean disparity of the scene.
pub fn sample_configs(
    range: &ConfigRange,
    count: usize,
    seed: u64,
) -> Result<Vec<CameraParams>, DatagenError> {
    range.validate()?;
    if count == 0 {
        return Err(DatagenError::ZeroCount);
    }
    let mut rng = stream_rng(seed, None);
    Ok((0..count)
        .map(|_| {
            let fov = uniform(&mut rng, &range.fov_deg);
            let theta = uniform(&mut rng, &range.pitch_rad);
            let t = [range.t_x, range.t_y, range.t_z].map(|iv| uniform(&mut rng, &iv));
            let b = uniform(&mut rng, &range.baseline);
            let p_x = uniform(&mut rng, &range.principal_x);
            let p_y = uniform(&mut rng, &range.principal_y);
            let f = focal_from_fov(fov, range.width);
            CameraParams {
                f_x: f,
                f_y: f,
                p_x,
                p_y,
                b,
                d: f * b / range.depth.mid(),
                theta_p: theta,
                t_x: t[0],
                t_y: t[1],
                t_z: t[2],
            }
        })
        .collect())
}

fn in_frame(p: &PointImage, range: &ConfigRange) -> bool {
    (0.0..=range.width as f64).contains(&p.x) && (0.0..=range.height as f64).contains(&p.y)
}

/// Fills one camera configuration with `N` scene points whose stereo
/// observations are both in frame.
pub fn generate_sample(
    id: u64,
    cfg: &CameraParams,
    range: &ConfigRange,
    rng: &mut impl Rng,
) -> Result<Sample, DatagenError> {
    let n = range.points_per_sample;
    let mut points3d = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut disparity = Vec::with_capacity(n);
    for _ in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let q = Point3::new(
                uniform(rng, &range.scene.x),
                uniform(rng, &range.scene.y),
                uniform(rng, &range.scene.z),
            );
            let Ok(obs) = project_stereo(cfg, &q) else { continue };
            if range.depth.contains(obs.depth)
                && range.disparity.contains(obs.disparity)
                && in_frame(&obs.left, range)
                && in_frame(&obs.right, range)
            {
                accepted = Some((q, obs));
                break;
            }
        }
        let (q, obs) = accepted.ok_or(DatagenError::Unfillable {
            id,
            attempts: MAX_ATTEMPTS,
        })?;
        points3d.push(q);
        left.push(obs.left);
        right.push(obs.right);
        disparity.push(obs.disparity);
    }
    let mut gt = *cfg;
    gt.d = disparity.iter().sum::<f64>() / n as f64;
    let ratios: Vec<f64> = disparity.iter().map(|&di| di / gt.d).collect();
    let model = compose_projection(&gt)?;
    let targets = GroundTruthTargets {
        constraints: ConstraintTargets::from_projection(&model.p),
        reconstructed: reconstruct_observations(&gt, &left, &ratios)?,
    };
    Ok(Sample {
        id,
        gt,
        points3d,
        left,
        right,
        disparity,
        targets,
    })
}

/// Generates samples `first..first + configs.len()` in parallel; sample `i`
/// draws from its own substream so the result does not depend on scheduling.
pub fn generate_batch(
    configs: &[CameraParams],
    first: u64,
    range: &ConfigRange,
) -> Result<Vec<Sample>, DatagenError> {
    configs
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| {
            let id = first + k as u64;
            generate_sample(id, cfg, range, &mut stream_rng(range.seed, Some(id)))
        })
        .collect()
}

/// The whole dataset for `range` (seeded by `range.seed`), in memory.
pub fn generate_dataset(range: &ConfigRange, count: usize) -> Result<Vec<Sample>, DatagenError> {
    let configs = sample_configs(range, count, range.seed)?;
    generate_batch(&configs, 0, range)
}
