use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use pixdiff_core::forward::empirical_report;
use pixdiff_core::pnm::{read_image, write_image, write_pnm};
use pixdiff_core::synthetic::portrait_like;
use pixdiff_core::*;
use serde::{Deserialize, Serialize};

use crate::common::{create, output_dir, overlay, require_file, write_manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Linearly increasing beta from `beta_min` to `beta_max`.
    Linear,
    /// Constant beta matching the retention of the mean pixel value.
    Matched,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub gamma: f64,
    pub steps: usize,
    pub seed: u64,
    /// PGM/PPM input; when absent a synthetic image is used.
    pub image: Option<PathBuf>,
    /// Constant value for a uniform synthetic image.
    pub uniform: Option<f64>,
    pub size: usize,
    pub channels: usize,
    pub image_seed: u64,
    pub mean_tol: f64,
    pub var_tol: f64,
    pub baseline_kind: BaselineKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub baseline_only: bool,
    /// Frame stride; defaults to `max(T / 10, 1)`.
    pub frame_stride: Option<usize>,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            gamma: 20.0,
            steps: 200,
            seed: 0,
            image: None,
            uniform: None,
            size: 32,
            channels: 1,
            image_seed: 1,
            mean_tol: 0.05,
            var_tol: 0.05,
            baseline_kind: BaselineKind::Linear,
            beta_min: 1e-4,
            beta_max: 0.02,
            baseline_only: false,
            frame_stride: None,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PIXDIFF_OUTPUT_ROOT/forward).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "uniform")]
    image: Option<PathBuf>,
    #[arg(long)]
    uniform: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    image_seed: Option<u64>,
    #[arg(long)]
    mean_tol: Option<f64>,
    #[arg(long)]
    var_tol: Option<f64>,
    #[arg(long, value_enum)]
    baseline_kind: Option<BaselineKind>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    /// Run only the baseline chain.
    #[arg(long)]
    baseline_only: bool,
    #[arg(long)]
    frame_stride: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ConvergenceRow<'a> {
    schedule: &'a str,
    convergence_step: usize,
    total_steps: usize,
    converged: bool,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: ForwardConfig = crate::common::load_config(args.config.as_deref())?;
    overlay!(cfg, args; gamma, steps, seed, size, channels, image_seed, mean_tol, var_tol, baseline_kind, beta_min, beta_max);
    if args.image.is_some() {
        cfg.image = args.image.clone();
        cfg.uniform = None;
    }
    if args.uniform.is_some() {
        cfg.uniform = args.uniform;
        cfg.image = None;
    }
    cfg.baseline_only |= args.baseline_only;
    if args.frame_stride.is_some() {
        cfg.frame_stride = args.frame_stride;
    }
    let out = output_dir(args.out.as_deref(), "forward");
    execute(&cfg, &out)
}

fn load_input(cfg: &ForwardConfig) -> Result<(Image, f64)> {
    if let Some(path) = &cfg.image {
        require_file(path, "input image")?;
        return Ok(read_image(path)?);
    }
    let shape = Shape::new(cfg.size, cfg.size, cfg.channels);
    let image = match cfg.uniform {
        Some(v) => Image::uniform(shape, v)?,
        None => portrait_like(cfg.size, cfg.channels, cfg.image_seed),
    };
    Ok((image, DEFAULT_EPSILON))
}

pub fn execute(cfg: &ForwardConfig, out: &Path) -> Result<()> {
    let sched_cfg = ScheduleConfig::new(cfg.gamma, cfg.steps)?;
    let (x0, epsilon) = load_input(cfg)?;
    let baseline = match cfg.baseline_kind {
        BaselineKind::Linear => baseline_linear(cfg.beta_min, cfg.beta_max, cfg.steps)?,
        BaselineKind::Matched => BaselineSchedule::matched_constant(x0.mean(), &sched_cfg)?,
    };
    let pixel = if cfg.baseline_only {
        sched_cfg.validate_for(&x0)?;
        None
    } else {
        Some(build_schedule(&x0, &sched_cfg)?)
    };

    write_manifest(out, "forward", cfg)?;
    let frames = out.join("frames");
    fs::create_dir_all(&frames)?;
    let ext = if x0.shape().channels == 3 { "ppm" } else { "pgm" };
    write_image(out.join(format!("input.{ext}")), &x0, epsilon)?;
    let stride = cfg.frame_stride.unwrap_or(cfg.steps / 10).max(1);

    let mut rows = Vec::new();
    if let Some(sched) = &pixel {
        let mut steps = vec![cfg.steps / 4, cfg.steps / 2, cfg.steps];
        steps.dedup();
        sched.write_csv(create(&out.join("schedule.csv"))?, &steps)?;
        let conv = run_chain("pixelwise", &x0, sched, RngStream::new(cfg.seed, 0), cfg, out, stride)?;
        rows.push(("pixelwise", conv));
    }
    let conv = run_chain("baseline", &x0, &baseline, RngStream::new(cfg.seed, 1), cfg, out, stride)?;
    rows.push(("baseline", conv));

    let mut w = csv::Writer::from_writer(create(&out.join("convergence.csv"))?);
    for (schedule, step) in &rows {
        w.serialize(ConvergenceRow {
            schedule,
            convergence_step: *step,
            total_steps: cfg.steps,
            converged: *step <= cfg.steps,
        })?;
        if *step <= cfg.steps {
            println!("{schedule}: isotropic from step {step} of {}", cfg.steps);
        } else {
            println!("{schedule}: not isotropic within {} steps", cfg.steps);
        }
    }
    w.flush()?;
    Ok(())
}

/// Simulates one chain, writes its trajectory CSV and frames, and returns
/// the convergence step.
fn run_chain(
    label: &str,
    x0: &Image,
    sched: &dyn NoiseSchedule,
    mut rng: RngStream,
    cfg: &ForwardConfig,
    out: &Path,
    stride: usize,
) -> Result<usize> {
    let traj = simulate_chain(x0, sched, &mut rng, 1)?;
    let report = empirical_report(&traj, sched)?;
    report.write_csv(create(&out.join(format!("trajectory_{label}.csv")))?)?;
    let ext = if x0.shape().channels == 3 { "ppm" } else { "pgm" };
    for rec in &traj.records {
        if rec.step % stride == 0 || rec.step == cfg.steps {
            write_pnm(out.join("frames").join(format!("{label}_{:04}.{ext}", rec.step)), &rec.state)?;
        }
    }
    Ok(convergence_steps(&report, cfg.mean_tol, cfg.var_tol)?)
}
