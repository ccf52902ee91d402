//! Conditional diffusion over delta-LUT images.
//!
//! A 16^3 delta LUT is reshaped to a 64x64x3 image and generated by a
//! denoising diffusion model conditioned on the style difference between
//! a reference frame and an input frame. Inference uses deterministic
//! DDIM sampling.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod sample;
pub mod scalar;
pub mod schedule;
pub mod toy;
pub mod train;

use std::path::PathBuf;

pub use checkpoint::Checkpoint;
pub use data::{build_sample, build_samples, TrainingSample};
pub use model::{Denoiser, DenoiserConfig, NoisePredictor, ZeroPredictor};
pub use sample::{ddim_sample, generate_lut, DEFAULT_SAMPLING_STEPS};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gradeforge_core::Error),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at step {step}: loss {loss} (batch samples {batch:?}, recent losses {tail:?})")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        batch: Vec<usize>,
        tail: Vec<f64>,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
