//! Reverse-time posterior `q(x_{i-1} | x_i, x0)` with per-pixel
//! coefficients, oracle reverse trajectories and the one-shot sampler.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::image::{Grid, Shape};
use crate::pnm::write_pnm;
use crate::rng::{sample_standard_normal, RngStream};
use crate::schedule::{check_step, schedule_from_scale, NoiseSchedule, DENOMINATOR_FLOOR};

/// Mean and variance of the reverse Gaussian at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub step: usize,
    pub mu: Grid,
    pub beta_tilde: Grid,
    /// Set when some `1 - alpha_bar` denominator was floored.
    pub guarded: bool,
}

fn posterior_variance_grid(sched: &dyn NoiseSchedule, shape: Shape, step: usize, guarded: &mut bool) -> Grid {
    Grid::from_fn(shape, |p| {
        let (v, g) = sched.beta_tilde(step, p);
        *guarded |= g;
        v
    })
}

fn check_inputs(x_i: &Grid, other: &Grid, sched: &dyn NoiseSchedule, step: usize) -> Result<()> {
    sched.check_shape(x_i.shape())?;
    other.ensure_shape(x_i.shape())?;
    check_step(step, 1, sched.total_steps())
}

/// Posterior mean written in terms of the clean image:
/// `(sqrt(ab_{i-1}) beta_i x0 + sqrt(alpha_i) (1 - ab_{i-1}) x_i) / (1 - ab_i)`.
pub fn posterior_from_x0(x_i: &Grid, x0: &Grid, sched: &dyn NoiseSchedule, step: usize) -> Result<PosteriorParams> {
    check_inputs(x_i, x0, sched, step)?;
    let mut guarded = false;
    let mu = Grid::from_fn(x_i.shape(), |p| {
        let ab_prev = sched.alpha_bar(step - 1, p);
        let ab = sched.alpha_bar(step, p);
        let alpha = sched.alpha(step, p);
        let beta = sched.beta(step, p);
        let denom = 1.0 - ab;
        guarded |= denom < DENOMINATOR_FLOOR;
        let denom = denom.max(DENOMINATOR_FLOOR);
        ab_prev.sqrt() * beta / denom * x0.data()[p] + alpha.sqrt() * (1.0 - ab_prev) / denom * x_i.data()[p]
    });
    let beta_tilde = posterior_variance_grid(sched, x_i.shape(), step, &mut guarded);
    Ok(PosteriorParams {
        step,
        mu,
        beta_tilde,
        guarded,
    })
}

/// Posterior mean written in terms of the composite noise:
/// `(x_i - (1 - alpha_i) / sqrt(1 - ab_i) eps) / sqrt(alpha_i)`.
pub fn posterior_from_noise(x_i: &Grid, eps: &Grid, sched: &dyn NoiseSchedule, step: usize) -> Result<PosteriorParams> {
    check_inputs(x_i, eps, sched, step)?;
    let mut guarded = false;
    let mut singular = false;
    let mu = Grid::from_fn(x_i.shape(), |p| {
        let ab = sched.alpha_bar(step, p);
        let alpha = sched.alpha(step, p);
        let denom = 1.0 - ab;
        singular |= denom <= 0.0;
        guarded |= denom < DENOMINATOR_FLOOR;
        let denom = denom.max(DENOMINATOR_FLOOR);
        (x_i.data()[p] - (1.0 - alpha) / denom.sqrt() * eps.data()[p]) / alpha.sqrt()
    });
    if singular {
        return Err(Error::Underflow { step });
    }
    let beta_tilde = posterior_variance_grid(sched, x_i.shape(), step, &mut guarded);
    Ok(PosteriorParams {
        step,
        mu,
        beta_tilde,
        guarded,
    })
}

/// `mu + sqrt(beta_tilde) z`; at step 1 the noise term is dropped.
pub fn reverse_step_with_noise(params: &PosteriorParams, z: &Grid) -> Result<Grid> {
    if params.step <= 1 {
        return Ok(params.mu.clone());
    }
    z.ensure_shape(params.mu.shape())?;
    Ok(Grid::from_fn(params.mu.shape(), |p| {
        params.mu.data()[p] + params.beta_tilde.data()[p].sqrt() * z.data()[p]
    }))
}

/// Samples `x_{i-1}`; no random numbers are drawn at step 1.
pub fn reverse_step(params: &PosteriorParams, rng: &mut RngStream) -> Result<Grid> {
    if params.step <= 1 {
        return Ok(params.mu.clone());
    }
    let z = sample_standard_normal(params.mu.shape(), rng);
    reverse_step_with_noise(params, &z)
}

/// Inverts the reparameterized jump: `(x_i - sqrt(1 - ab_i) eps) / sqrt(ab_i)`.
pub fn recover_x0(x_i: &Grid, eps: &Grid, sched: &dyn NoiseSchedule, step: usize) -> Result<Grid> {
    sched.check_shape(x_i.shape())?;
    eps.ensure_shape(x_i.shape())?;
    check_step(step, 0, sched.total_steps())?;
    if step == 0 {
        return Ok(x_i.clone());
    }
    let mut underflow = false;
    let out = Grid::from_fn(x_i.shape(), |p| {
        let ab = sched.alpha_bar(step, p);
        underflow |= ab <= 0.0;
        (x_i.data()[p] - (1.0 - ab).sqrt() * eps.data()[p]) / ab.sqrt()
    });
    if underflow {
        return Err(Error::Underflow { step });
    }
    Ok(out)
}

/// Ground truth driving an oracle reverse trajectory.
#[derive(Debug, Clone, Copy)]
pub enum OracleTruth<'a> {
    /// The true clean image; each step uses the `x0` form of the mean.
    Clean(&'a Grid),
    /// Composite noises `eps_tilde_j`, index `j - 1`; each step uses the
    /// noise form of the mean.
    Noises(&'a [Grid]),
}

/// States visited by a reverse run, from `x_i` down to `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseTrajectory {
    pub start_step: usize,
    /// `states[k]` is the state at step `start_step - k`.
    pub states: Vec<Grid>,
    pub guarded: bool,
}

impl ReverseTrajectory {
    pub fn final_state(&self) -> &Grid {
        self.states.last().expect("trajectory holds at least the start state")
    }

    pub fn state_at(&self, step: usize) -> Option<&Grid> {
        self.start_step.checked_sub(step).and_then(|k| self.states.get(k))
    }
}

/// Runs the reverse chain from step `i` to 0 with true posterior means.
pub fn oracle_reverse_trajectory(
    x_i: &Grid,
    step: usize,
    truth: OracleTruth<'_>,
    sched: &dyn NoiseSchedule,
    rng: &mut RngStream,
) -> Result<ReverseTrajectory> {
    sched.check_shape(x_i.shape())?;
    check_step(step, 0, sched.total_steps())?;
    if let OracleTruth::Noises(n) = truth {
        if n.len() < step {
            return Err(Error::InvalidArgument(format!(
                "need {step} composite noises, got {}",
                n.len()
            )));
        }
    }
    let mut states = vec![x_i.clone()];
    let mut guarded = false;
    let mut x = x_i.clone();
    for j in (1..=step).rev() {
        let params = match truth {
            OracleTruth::Clean(x0) => posterior_from_x0(&x, x0, sched, j)?,
            OracleTruth::Noises(n) => posterior_from_noise(&x, &n[j - 1], sched, j)?,
        };
        guarded |= params.guarded;
        x = reverse_step(&params, rng)?;
        states.push(x.clone());
    }
    Ok(ReverseTrajectory {
        start_step: step,
        states,
        guarded,
    })
}

/// Estimates the image scale `exp(-gamma x0)` from a noisy state.
pub trait ScalePredictor: Send + Sync {
    fn estimate_scale(&self, x_i: &Grid, step: usize) -> Result<Grid>;
}

/// Predicts every composite noise `eps_tilde_j`, `j = 1..=T`, in one call.
/// Heads `j > step` must be all zeros.
pub trait NoisePredictor: Send + Sync {
    fn total_steps(&self) -> usize;

    /// Returns `T` grids; entry `j - 1` is head `j`.
    fn predict_noises(&self, x_i: &Grid, scale: &Grid, step: usize) -> Result<Vec<Grid>>;

    /// Number of `predict_noises` executions so far.
    fn invocations(&self) -> usize;
}

/// Returns a fixed, known scale.
#[derive(Debug, Clone)]
pub struct OracleScale {
    pub scale: Grid,
}

impl ScalePredictor for OracleScale {
    fn estimate_scale(&self, x_i: &Grid, _step: usize) -> Result<Grid> {
        x_i.ensure_shape(self.scale.shape())?;
        Ok(self.scale.clone())
    }
}

/// Returns the true composite noises of a recorded forward chain.
#[derive(Debug)]
pub struct OracleNoise {
    noises: Vec<Grid>,
    calls: AtomicUsize,
}

impl OracleNoise {
    /// `noises[j - 1]` is `eps_tilde_j`.
    pub fn new(noises: Vec<Grid>) -> Result<Self> {
        if noises.is_empty() {
            return Err(Error::Empty("oracle noises"));
        }
        let shape = noises[0].shape();
        for n in &noises {
            n.ensure_shape(shape)?;
        }
        Ok(Self {
            noises,
            calls: AtomicUsize::new(0),
        })
    }

    /// Takes the composite noises of a chain recorded with stride 1.
    pub fn from_trajectory(traj: &ForwardTrajectory) -> Result<Self> {
        if traj.stride != 1 {
            return Err(Error::InvalidArgument("oracle noises need a stride-1 trajectory".into()));
        }
        Self::new(traj.records[1..].iter().map(|r| r.composite_noise.clone()).collect())
    }

    pub fn noises(&self) -> &[Grid] {
        &self.noises
    }
}

impl NoisePredictor for OracleNoise {
    fn total_steps(&self) -> usize {
        self.noises.len()
    }

    fn predict_noises(&self, x_i: &Grid, scale: &Grid, step: usize) -> Result<Vec<Grid>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let shape = self.noises[0].shape();
        x_i.ensure_shape(shape)?;
        scale.ensure_shape(shape)?;
        check_step(step, 1, self.noises.len())?;
        Ok(self
            .noises
            .iter()
            .enumerate()
            .map(|(k, n)| if k < step { n.clone() } else { Grid::zeros(shape) })
            .collect())
    }

    fn invocations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Result of one sampler run.
#[derive(Debug, Clone)]
pub struct SamplingOutput {
    pub scale: Grid,
    pub trajectory: ReverseTrajectory,
}

impl SamplingOutput {
    pub fn x0_hat(&self) -> &Grid {
        self.trajectory.final_state()
    }
}

/// Reconstructs `x0` from `x_i`: estimate the scale once, derive the
/// schedule from it, predict all noises in a single predictor call, then
/// walk `j = i..1` with
/// `x_{j-1} = (x_j - (1 - alpha) / sqrt(1 - ab_j) Z_j) / sqrt(alpha) + sqrt(bt_j) z`.
pub fn run_sampling_algorithm(
    x_i: &Grid,
    step: usize,
    estimator: &dyn ScalePredictor,
    predictor: &dyn NoisePredictor,
    rng: &mut RngStream,
) -> Result<SamplingOutput> {
    let total = predictor.total_steps();
    check_step(step, 1, total)?;
    let scale = estimator.estimate_scale(x_i, step)?;
    scale.ensure_shape(x_i.shape())?;
    let sched = schedule_from_scale(&scale, total)?;
    let noises = predictor.predict_noises(x_i, &scale, step)?;
    if noises.len() != total {
        return Err(Error::InvalidArgument(format!(
            "predictor returned {} heads for T = {total}",
            noises.len()
        )));
    }
    let trajectory = oracle_reverse_trajectory(x_i, step, OracleTruth::Noises(&noises), &sched, rng)?;
    Ok(SamplingOutput { scale, trajectory })
}

#[derive(Serialize)]
struct FrameRow<'a> {
    step: usize,
    channel: usize,
    mean: f64,
    var: f64,
    file: &'a str,
}

/// Writes every `stride`-th state (and the final one) as a PGM/PPM frame
/// named `<prefix>_<step>.pgm|ppm` plus `<prefix>_manifest.csv` with
/// per-channel mean and variance of every state.
pub fn write_reverse_frames(dir: &Path, prefix: &str, traj: &ReverseTrajectory, stride: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stride = stride.max(1);
    let mut written = Vec::new();
    let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_manifest.csv")))?;
    for (k, state) in traj.states.iter().enumerate() {
        let step = traj.start_step - k;
        let shape = state.shape();
        let ext = if shape.channels == 3 { "ppm" } else { "pgm" };
        let keep = (shape.channels == 1 || shape.channels == 3) && (k % stride == 0 || step == 0);
        let name = if keep { format!("{prefix}_{step:04}.{ext}") } else { String::new() };
        if keep {
            let path = dir.join(&name);
            write_pnm(&path, state)?;
            written.push(path);
        }
        for c in 0..shape.channels {
            let vals: Vec<f64> = state.channel(c).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            w.serialize(FrameRow {
                step,
                channel: c,
                mean,
                var,
                file: &name,
            })?;
        }
    }
    w.flush()?;
    Ok(written)
}
