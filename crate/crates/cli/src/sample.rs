use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use pixdiff_core::learner::*;
use pixdiff_core::pnm::{read_image, write_image, write_pnm};
use pixdiff_core::posterior::write_reverse_frames;
use pixdiff_core::*;
use serde::{Deserialize, Serialize};

use crate::common::{create, output_dir, output_root, overlay, reject, require_file, write_manifest};
use crate::train::{ESTIMATOR_FILE, PREDICTOR_FILE};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Directory holding the trained checkpoints (default:
    /// `$PIXDIFF_OUTPUT_ROOT/train`).
    pub models: Option<PathBuf>,
    /// Ground-truth images; when empty, validation images of the training
    /// corpus are used.
    pub images: Vec<PathBuf>,
    /// Number of corpus validation images when no images are given.
    pub count: usize,
    /// Overrides the corpus recorded in the checkpoints.
    pub corpus: Option<CorpusConfig>,
    /// Needed only when both oracle flags replace the trained models.
    pub gamma: Option<f64>,
    pub steps: Option<usize>,
    /// Forward steps `i` to reconstruct from; default `T/4, T/2, T`.
    pub from_steps: Vec<usize>,
    pub seed: u64,
    /// Use the true image scale instead of the estimator.
    pub oracle_scale: bool,
    /// Use the true composite noises instead of the predictor.
    pub oracle_noise: bool,
    pub frame_stride: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            models: None,
            images: Vec::new(),
            count: 4,
            corpus: None,
            gamma: None,
            steps: None,
            from_steps: Vec::new(),
            seed: 0,
            oracle_scale: false,
            oracle_noise: false,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PIXDIFF_OUTPUT_ROOT/sample).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with estimator.ckpt and predictor.ckpt.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Ground-truth image (repeatable).
    #[arg(long = "image")]
    images: Option<Vec<PathBuf>>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Forward step to reconstruct from (repeatable).
    #[arg(long = "from-step")]
    from_steps: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    oracle_scale: bool,
    #[arg(long)]
    oracle_noise: bool,
    #[arg(long)]
    frame_stride: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: SampleConfig = crate::common::load_config(args.config.as_deref())?;
    overlay!(cfg, args; images, count, from_steps, seed, frame_stride);
    if args.models.is_some() {
        cfg.models = args.models.clone();
    }
    if args.gamma.is_some() {
        cfg.gamma = args.gamma;
    }
    if args.steps.is_some() {
        cfg.steps = args.steps;
    }
    cfg.oracle_scale |= args.oracle_scale;
    cfg.oracle_noise |= args.oracle_noise;
    let out = output_dir(args.out.as_deref(), "sample");
    execute(&cfg, &out)
}

#[derive(Debug, Serialize)]
struct SsimRow<'a> {
    image: usize,
    source: &'a str,
    from_step: usize,
    ssim: f64,
    predictor_calls: usize,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    from_step: usize,
    samples: usize,
    mean_ssim: f64,
}

struct Models {
    estimator: Option<ScaleEstimator>,
    predictor: Option<ReversePredictor>,
    corpus: Option<CorpusConfig>,
    gamma: f64,
    steps: usize,
}

fn agree<T: PartialEq + std::fmt::Display>(name: &str, wanted: Option<T>, found: T) -> Result<T> {
    match wanted {
        Some(w) if w != found => Err(reject(format!("{name} = {w} conflicts with the trained models ({found})"))),
        _ => Ok(found),
    }
}

fn load_models(cfg: &SampleConfig) -> Result<Models> {
    let dir = cfg.models.clone().unwrap_or_else(|| output_root().join("train"));
    let mut models = Models {
        estimator: None,
        predictor: None,
        corpus: None,
        gamma: cfg.gamma.unwrap_or(10.0),
        steps: cfg.steps.unwrap_or(20),
    };
    if !cfg.oracle_scale {
        let path = dir.join(ESTIMATOR_FILE);
        require_file(&path, "estimator checkpoint")?;
        let ck = Checkpoint::load(&path)?;
        let est = ScaleEstimator::from_checkpoint(&ck)?;
        models.gamma = agree("gamma", cfg.gamma, est.config().gamma)?;
        models.steps = agree("steps", cfg.steps, est.config().total_steps)?;
        models.corpus = ck.header.corpus;
        models.estimator = Some(est);
    }
    if !cfg.oracle_noise {
        let path = dir.join(PREDICTOR_FILE);
        require_file(&path, "predictor checkpoint")?;
        let ck = Checkpoint::load(&path)?;
        let pred = ReversePredictor::from_checkpoint(&ck)?;
        let steps = models.estimator.as_ref().map(|_| models.steps).or(cfg.steps);
        models.steps = agree("steps", steps, pred.config().total_steps)?;
        models.corpus = models.corpus.or(ck.header.corpus);
        models.predictor = Some(pred);
    }
    if let (Some(e), Some(p)) = (&models.estimator, &models.predictor) {
        if e.shape() != p.shape() {
            return Err(reject("estimator and predictor were trained on different image shapes"));
        }
    }
    Ok(models)
}

pub fn execute(cfg: &SampleConfig, out: &Path) -> Result<()> {
    let models = load_models(cfg)?;
    let sched_cfg = ScheduleConfig::new(models.gamma, models.steps)?;
    let total = models.steps;
    let mut from_steps = if cfg.from_steps.is_empty() {
        vec![(total / 4).max(1), (total / 2).max(1), total]
    } else {
        cfg.from_steps.clone()
    };
    from_steps.dedup();
    for &i in &from_steps {
        if !(1..=total).contains(&i) {
            return Err(reject(format!("from-step {i} is outside 1..={total}")));
        }
    }

    let (images, sources): (Vec<(Image, f64)>, Vec<String>) = if cfg.images.is_empty() {
        let corpus = SyntheticCorpus::generate(cfg.corpus.or(models.corpus).unwrap_or_default())?;
        let val = corpus.validation();
        if cfg.count == 0 || cfg.count > val.len() {
            return Err(reject(format!("count must be in 1..={}, got {}", val.len(), cfg.count)));
        }
        (
            val[..cfg.count].iter().map(|x| (x.clone(), DEFAULT_EPSILON)).collect(),
            (0..cfg.count).map(|k| format!("validation:{k}")).collect(),
        )
    } else {
        let mut images = Vec::new();
        for path in &cfg.images {
            require_file(path, "ground-truth image")?;
            images.push(read_image(path)?);
        }
        (images, cfg.images.iter().map(|p| p.display().to_string()).collect())
    };
    let model_shape = models
        .estimator
        .as_ref()
        .map(|e| e.shape())
        .or(models.predictor.as_ref().map(|p| p.shape()));
    if let Some(shape) = model_shape {
        for (x0, _) in &images {
            if x0.shape() != shape {
                return Err(Error::ShapeMismatch { expected: shape, found: x0.shape() }.into());
            }
        }
    }

    write_manifest(out, "sample", cfg)?;
    for dir in ["truth", "x0_hat", "frames"] {
        fs::create_dir_all(out.join(dir))?;
    }
    let mut rows = csv::Writer::from_writer(create(&out.join("ssim.csv"))?);
    let mut means = vec![0.0; from_steps.len()];
    for (k, (x0, epsilon)) in images.iter().enumerate() {
        let ext = if x0.shape().channels == 3 { "ppm" } else { "pgm" };
        write_image(out.join("truth").join(format!("img{k:03}.{ext}")), x0, *epsilon)?;
        let sched = build_schedule(x0, &sched_cfg)?;
        let ssim_cfg = SsimConfig::for_shape(x0.shape());
        for (s, &i) in from_steps.iter().enumerate() {
            let (x0_hat, trajectory, calls) = reconstruct(x0, &sched, i, cfg.seed, k as u64, &models)?;
            let score = ssim(&x0_hat, x0, &ssim_cfg)?;
            means[s] += score;
            let name = format!("img{k:03}_from{i:04}");
            write_pnm(out.join("x0_hat").join(format!("{name}.{ext}")), &x0_hat)?;
            write_reverse_frames(&out.join("frames").join(&name), "reverse", &trajectory, cfg.frame_stride)?;
            rows.serialize(SsimRow {
                image: k,
                source: &sources[k],
                from_step: i,
                ssim: score,
                predictor_calls: calls,
            })?;
            println!("image {k} from step {i}: predictor executed {calls} time(s), SSIM {score:.4}");
        }
    }
    rows.flush()?;
    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    for (s, &i) in from_steps.iter().enumerate() {
        w.serialize(SummaryRow {
            from_step: i,
            samples: images.len(),
            mean_ssim: means[s] / images.len() as f64,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Diffuses `x0` to step `i` and runs the sampler from there. Image `k`
/// uses stream `k` of `seed` for the forward chain and its substream 1
/// for the reverse noise.
fn reconstruct(
    x0: &Image,
    sched: &PixelSchedule,
    i: usize,
    seed: u64,
    k: u64,
    models: &Models,
) -> Result<(Grid, posterior::ReverseTrajectory, usize)> {
    let mut rng = RngStream::new(seed, k);
    let traj = simulate_chain_to(x0, sched, &mut rng, 1, i)?;
    let x_i = &traj.last().state;

    let oracle_scale;
    let scale: &dyn ScalePredictor = match &models.estimator {
        Some(est) => est,
        None => {
            oracle_scale = OracleScale { scale: sched.scale().clone() };
            &oracle_scale
        }
    };
    let oracle_noise;
    let noise: &dyn NoisePredictor = match &models.predictor {
        Some(pred) => pred,
        None => {
            let mut noises: Vec<Grid> = traj.records[1..].iter().map(|r| r.composite_noise.clone()).collect();
            noises.resize(models.steps, Grid::zeros(x0.shape()));
            oracle_noise = OracleNoise::new(noises)?;
            &oracle_noise
        }
    };
    let before = noise.invocations();
    let out = run_sampling_algorithm(x_i, i, scale, noise, &mut rng.substream(1))?;
    let calls = noise.invocations() - before;
    Ok((out.x0_hat().clone(), out.trajectory, calls))
}
