//! Camera calibration from stereo correspondences with geometric constraint
//! losses: projection geometry, a reverse-mode differentiation tape, loss
//! assembly, synthetic data, optimizers and evaluation.

pub mod cli;
pub mod datagen;
pub mod diff;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
pub mod solver;
