use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use pixdiff_core::learner::*;
use pixdiff_core::*;
use serde::{Deserialize, Serialize};

use crate::common::{create, output_dir, overlay, reject, require_file, write_json, write_manifest};

pub const ESTIMATOR_FILE: &str = "estimator.ckpt";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    Estimator,
    Predictor,
    Both,
}

impl Component {
    fn estimator(self) -> bool {
        self != Component::Predictor
    }

    fn predictor(self) -> bool {
        self != Component::Estimator
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub component: Component,
    pub gamma: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Architecture; `gamma`/`total_steps` are taken from the top level.
    pub estimator: EstimatorConfig,
    pub predictor: PredictorConfig,
    /// Iterations between checkpoint writes.
    pub checkpoint_every: usize,
    /// Coordinates probed per parameter block by the gradient check.
    pub gradcheck_coords: usize,
    /// Continue from the checkpoints already in the output directory.
    pub resume: bool,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            component: Component::Both,
            gamma: 10.0,
            steps: 20,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            iterations: train.iterations,
            seed: 7,
            corpus: CorpusConfig::default(),
            estimator: EstimatorConfig::default(),
            predictor: PredictorConfig::default(),
            checkpoint_every: 500,
            gradcheck_coords: 20,
            resume: false,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PIXDIFF_OUTPUT_ROOT/train).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    component: Option<Component>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of diffusion steps T (also the number of predictor heads).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Total iterations per trained component.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus_count: Option<usize>,
    #[arg(long)]
    corpus_validation: Option<usize>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    gradcheck_coords: Option<usize>,
    /// Continue from checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: TrainCliConfig = crate::common::load_config(args.config.as_deref())?;
    overlay!(cfg, args; component, gamma, steps, learning_rate, batch_size, iterations, seed, checkpoint_every, gradcheck_coords);
    if let Some(v) = args.corpus_count {
        cfg.corpus.count = v;
    }
    if let Some(v) = args.corpus_validation {
        cfg.corpus.validation = v;
    }
    if let Some(v) = args.corpus_seed {
        cfg.corpus.seed = v;
    }
    cfg.resume |= args.resume;
    let out = output_dir(args.out.as_deref(), "train");
    execute(&cfg, &out)
}

impl TrainCliConfig {
    fn resolve(&mut self) -> Result<TrainConfig> {
        ScheduleConfig::new(self.gamma, self.steps)?;
        if self.checkpoint_every == 0 {
            return Err(reject("checkpoint_every must be positive"));
        }
        self.estimator.gamma = self.gamma;
        self.estimator.total_steps = self.steps;
        self.predictor.total_steps = self.steps;
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Serialize)]
struct GradCheckSummary {
    passed: bool,
    step: usize,
    checked: usize,
    fraction_within: f64,
    failure: Option<String>,
    report: GradCheckReport,
}

impl GradCheckSummary {
    fn new(step: usize, report: GradCheckReport) -> Self {
        Self {
            passed: report.passed() && report.masked_nonzero == 0,
            step,
            checked: report.checked(),
            fraction_within: report.fraction_within(),
            failure: report.failure(),
            report,
        }
    }
}

#[derive(Debug, Default, Serialize)]
struct GradCheckFile {
    estimator: Option<GradCheckSummary>,
    predictor: Option<GradCheckSummary>,
}

#[derive(Debug, Default, Serialize)]
struct EvaluationFile {
    estimator: Option<ScaleEvaluation>,
    predictor_head_mse: Option<Vec<f64>>,
}

/// Checks that a checkpoint continues the run described by `cfg`.
fn check_resumable(ck: &Checkpoint, train: &TrainConfig, corpus: CorpusConfig, path: &Path) -> Result<()> {
    let stored = ck
        .header
        .train
        .as_ref()
        .ok_or_else(|| reject(format!("{} holds no optimizer state", path.display())))?;
    let same = stored.learning_rate == train.learning_rate && stored.batch_size == train.batch_size && stored.seed == train.seed;
    if !same || ck.header.corpus != Some(corpus) {
        return Err(reject(format!(
            "{} was trained with a different optimizer, seed or corpus",
            path.display()
        )));
    }
    if ck.header.iteration > train.iterations {
        return Err(reject(format!(
            "{} is already at iteration {}, beyond the requested {}",
            path.display(),
            ck.header.iteration,
            train.iterations
        )));
    }
    Ok(())
}

fn save_with_state(ck: Checkpoint, state: &TrainState, train: &TrainConfig, corpus: CorpusConfig, path: &Path) -> Result<()> {
    ck.with_training(state, train, corpus)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn execute(cfg: &TrainCliConfig, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    let train = cfg.resolve()?;
    let corpus = SyntheticCorpus::generate(cfg.corpus)?;
    let shape = Shape::gray(cfg.corpus.size, cfg.corpus.size);
    write_manifest(out, "train", &cfg)?;
    let est_path = out.join(ESTIMATOR_FILE);
    let pred_path = out.join(PREDICTOR_FILE);

    let est = if cfg.component.estimator() {
        let (mut est, mut state) = if cfg.resume && est_path.exists() {
            let ck = Checkpoint::load(&est_path)?;
            check_resumable(&ck, &train, cfg.corpus, &est_path)?;
            let est = ScaleEstimator::from_checkpoint(&ck)?;
            if est.config() != &cfg.estimator {
                return Err(reject(format!("{} has a different architecture", est_path.display())));
            }
            (est, ck.train_state().expect("checked above"))
        } else {
            let est = ScaleEstimator::new(shape, cfg.estimator.clone(), cfg.seed)?;
            let state = TrainState::new(train.learning_rate, est.params().len());
            (est, state)
        };
        if state.iteration < train.iterations && cfg.component.predictor() && cfg.resume && pred_path.exists() {
            return Err(reject(format!(
                "{} was trained against an unfinished estimator; remove it or train the estimator alone",
                pred_path.display()
            )));
        }
        let start = state.iteration;
        while state.iteration < train.iterations {
            let until = (state.iteration + cfg.checkpoint_every).min(train.iterations);
            train_estimator(&mut est, &corpus, &train, &mut state, until)?;
            save_with_state(est.to_checkpoint(), &state, &train, cfg.corpus, &est_path)?;
        }
        if start == train.iterations {
            save_with_state(est.to_checkpoint(), &state, &train, cfg.corpus, &est_path)?;
        }
        state.curve.write_csv(create(&out.join("estimator_loss.csv"))?)?;
        println!(
            "estimator: {} iterations, mean loss {:.4e} -> {:.4e}",
            state.iteration,
            state.curve.initial_mean().unwrap_or(f64::NAN),
            state.curve.final_mean().unwrap_or(f64::NAN)
        );
        est
    } else {
        require_file(&est_path, "trained estimator (train it first)")?;
        let est = ScaleEstimator::from_checkpoint(&Checkpoint::load(&est_path)?)?;
        if est.config().gamma != cfg.gamma || est.config().total_steps != cfg.steps {
            return Err(reject(format!("{} uses a different gamma or T", est_path.display())));
        }
        est
    };

    let pred = if cfg.component.predictor() {
        let (mut pred, mut state) = if cfg.resume && pred_path.exists() {
            let ck = Checkpoint::load(&pred_path)?;
            check_resumable(&ck, &train, cfg.corpus, &pred_path)?;
            let pred = ReversePredictor::from_checkpoint(&ck)?;
            if pred.config() != &cfg.predictor {
                return Err(reject(format!("{} has a different architecture", pred_path.display())));
            }
            (pred, ck.train_state().expect("checked above"))
        } else {
            let pred = ReversePredictor::new(est.shape(), cfg.predictor.clone(), cfg.seed.wrapping_add(1))?;
            let state = TrainState::new(train.learning_rate, pred.params().len());
            (pred, state)
        };
        let start = state.iteration;
        while state.iteration < train.iterations {
            let until = (state.iteration + cfg.checkpoint_every).min(train.iterations);
            train_predictor(&mut pred, &est, &corpus, &train, &mut state, until)?;
            save_with_state(pred.to_checkpoint(), &state, &train, cfg.corpus, &pred_path)?;
        }
        if start == train.iterations {
            save_with_state(pred.to_checkpoint(), &state, &train, cfg.corpus, &pred_path)?;
        }
        state.curve.write_csv(create(&out.join("predictor_loss.csv"))?)?;
        println!(
            "predictor: {} iterations, mean loss {:.4e} -> {:.4e}",
            state.iteration,
            state.curve.initial_mean().unwrap_or(f64::NAN),
            state.curve.final_mean().unwrap_or(f64::NAN)
        );
        Some(pred)
    } else {
        None
    };

    // Gradient check and held-out evaluation on the validation split.
    let x0 = &corpus.validation()[0];
    let sched = build_schedule(x0, &ScheduleConfig::new(cfg.gamma, cfg.steps)?)?;
    let step = (cfg.steps / 2).max(1);
    let mut checks = GradCheckFile::default();
    let mut eval = EvaluationFile::default();
    if cfg.component.estimator() {
        let (x, _) = forward_jump(x0, &sched, step, &mut RngStream::new(cfg.seed, 0x6C))?;
        let report = est.gradient_check(&x, step, sched.scale(), cfg.gradcheck_coords, cfg.seed)?;
        checks.estimator = Some(GradCheckSummary::new(step, report));
        eval.estimator = Some(evaluate_estimator(&est, corpus.validation(), cfg.seed)?);
    }
    if let Some(pred) = &pred {
        let sample = make_predictor_sample(x0, &sched, &est, step, &mut RngStream::new(cfg.seed, 0x6D))?;
        let report = pred.gradient_check(&sample, cfg.gradcheck_coords, cfg.seed)?;
        checks.predictor = Some(GradCheckSummary::new(step, report));
        eval.predictor_head_mse = Some(head_validation_mse(pred, &est, corpus.validation(), cfg.seed)?);
    }
    write_json(&out.join("gradcheck.json"), &checks)?;
    write_json(&out.join("evaluation.json"), &eval)?;

    let failed: Vec<String> = [("estimator", &checks.estimator), ("predictor", &checks.predictor)]
        .into_iter()
        .filter_map(|(name, c)| c.as_ref().filter(|c| !c.passed).map(|c| (name, c)))
        .map(|(name, c)| format!("{name}: {}", c.failure.clone().unwrap_or_else(|| "masked head gradients".into())))
        .collect();
    for (name, c) in [("estimator", &checks.estimator), ("predictor", &checks.predictor)] {
        if let Some(c) = c {
            println!(
                "{name} gradient check: {} ({} coordinates, {:.1}% within tolerance)",
                if c.passed { "pass" } else { "FAIL" },
                c.checked,
                100.0 * c.fraction_within
            );
        }
    }
    if !failed.is_empty() {
        anyhow::bail!("gradient check failed: {}", failed.join("; "));
    }
    Ok(())
}
