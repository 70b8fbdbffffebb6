//! Artifact-aware trajectory correction for rectified-flow and diffusion
//! samplers, with analytic toy models, differentiable detectors and the
//! metrics used to evaluate them.

pub mod detector;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod gradients;
pub mod grid;
pub mod guidance;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod vector;

pub use detector::{binarize, eval_mask, mask_jacobian_action, ArtifactMask, DetectorKind, DetectorSpec};
pub use diffusion::{
    clean_estimate_diffusion, euler_step_diffusion, make_sigma_schedule, ScheduleKind, SigmaSchedule,
};
pub use error::{Error, Result};
pub use flow::{clean_estimate_flow, euler_step_flow, interpolate, make_time_grid, LatentState, TimeGrid};
pub use gradients::{artifact_loss, grad_artifact, GradMode};
pub use grid::Grid;
pub use guidance::{
    correction_window, displacement, guided_step_diffusion, guided_step_flow, lambda_schedule, rec_loss,
    run_trajectory, GuidanceConfig, Pipeline, RecReference, Sampler, StepRecord, Trajectory, MASK_THRESHOLD,
};
pub use metrics::{artifact_pixel_ratio, mae_split, mean_artifact_freq, EvalBatch, MaeSplit};
pub use models::{mixture_denoiser, mixture_velocity, DecoderSpec, MixtureSpec, MlpField, ModelSpec, Predictor};
