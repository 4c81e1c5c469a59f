//! Image-aware diffusion schedules where every pixel gets its own noise rate.
//!
//! A clean image `x0` with samples in `(0, 1]` defines a per-pixel target
//! scale `exp(-gamma * x0)`; the forward chain shrinks each pixel towards
//! that scale with its own retention factor, so dark pixels keep their
//! signal longer than bright ones.

pub mod analytics;
pub mod error;
pub mod forward;
pub mod image;
pub mod learner;
pub mod metrics;
pub mod pnm;
pub mod posterior;
pub mod rng;
pub mod schedule;
pub mod synthetic;

pub use error::{Error, Result};
pub use forward::{
    forward_jump, forward_jump_with_noise, forward_step, forward_step_with_noise, simulate_chain,
    simulate_chain_to, ForwardTrajectory, Retention, StepRecord, TrajectoryReport,
};
pub use image::{normalize_image, Grid, Image, NoiseField, Shape, DEFAULT_EPSILON};
pub use metrics::{convergence_steps, ssim, SsimConfig};
pub use posterior::{
    oracle_reverse_trajectory, posterior_from_noise, posterior_from_x0, recover_x0, reverse_step,
    run_sampling_algorithm, NoisePredictor, OracleNoise, OracleScale, ScalePredictor,
};
pub use rng::RngStream;
pub use schedule::{
    baseline_linear, build_schedule, schedule_from_scale, BaselineSchedule, NoiseSchedule,
    PixelSchedule, ScaleSchedule, ScheduleConfig,
};
