use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::SyntheticCorpus;
use super::estimator::ScaleEstimator;
use super::params::Adam;
use super::predictor::{make_predictor_sample, PredictorSample, ReversePredictor};
use crate::error::{Error, Result};
use crate::forward::forward_jump_with_noise;
use crate::image::Grid;
use crate::rng::{sample_standard_normal, RngStream};
use crate::schedule::{build_schedule, PixelSchedule, ScheduleConfig};

const ESTIMATOR_STREAM: u64 = 1 << 40;
const PREDICTOR_STREAM: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            iterations: 5000,
            seed: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "need a positive learning rate and batch size, got {} and {}",
                self.learning_rate, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Mean batch loss per iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    fn window(&self, from_end: bool) -> Option<f64> {
        let n = self.losses.len();
        let w = (n / 10).max(1);
        if n == 0 {
            return None;
        }
        let slice = if from_end { &self.losses[n - w..] } else { &self.losses[..w] };
        Some(slice.iter().sum::<f64>() / w as f64)
    }

    /// Mean of the first 10% of iterations.
    pub fn initial_mean(&self) -> Option<f64> {
        self.window(false)
    }

    /// Mean of the last 10% of iterations.
    pub fn final_mean(&self) -> Option<f64> {
        self.window(true)
    }

    pub fn decreased(&self) -> bool {
        matches!((self.initial_mean(), self.final_mean()), (Some(a), Some(b)) if b < a)
    }

    /// Columns `iteration,loss`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "loss"])?;
        for (k, l) in self.losses.iter().enumerate() {
            w.write_record([(k + 1).to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Optimizer state and progress; enough to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub adam: Adam,
    pub curve: LossCurve,
}

impl TrainState {
    pub fn new(learning_rate: f64, params: usize) -> Self {
        Self {
            iteration: 0,
            adam: Adam::new(learning_rate, params),
            curve: LossCurve::default(),
        }
    }
}

fn schedules(images: &[crate::image::Image], cfg: &ScheduleConfig) -> Result<Vec<PixelSchedule>> {
    images.iter().map(|x| build_schedule(x, cfg)).collect()
}

/// Sums per-sample `(loss, gradient)` pairs in sample order, so the result
/// does not depend on how rayon splits the work.
fn reduce(parts: Vec<(f64, Vec<f64>)>, len: usize, iteration: usize) -> Result<(f64, Vec<f64>)> {
    let n = parts.len() as f64;
    let mut grad = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l / n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b / n;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { iteration, loss });
    }
    Ok((loss, grad))
}

fn apply(params: &mut [f64], state: &mut TrainState, grad: &[f64], loss: f64) -> Result<()> {
    state.adam.step(params, grad);
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            iteration: state.iteration + 1,
            loss,
        });
    }
    state.iteration += 1;
    state.curve.losses.push(loss);
    Ok(())
}

/// Trains the scale estimator on `(x_i, i) -> exp(-gamma x0)` with `i`
/// uniform in `1..=T`, until `state.iteration` reaches `until` (capped at
/// `cfg.iterations`). Every iteration draws from its own random stream, so
/// stopping and resuming gives the same curve as an uninterrupted run.
pub fn train_estimator(
    est: &mut ScaleEstimator,
    corpus: &SyntheticCorpus,
    cfg: &TrainConfig,
    state: &mut TrainState,
    until: usize,
) -> Result<()> {
    cfg.validate()?;
    let sched_cfg = ScheduleConfig::new(est.config().gamma, est.config().total_steps)?;
    let train = corpus.train();
    let scheds = schedules(train, &sched_cfg)?;
    let total = sched_cfg.total_steps();
    while state.iteration < until.min(cfg.iterations) {
        let mut rng = RngStream::new(cfg.seed, ESTIMATOR_STREAM + state.iteration as u64);
        let batch: Vec<(Grid, usize, &Grid)> = (0..cfg.batch_size)
            .map(|_| {
                let k = rng.next_index(0, train.len());
                let step = rng.next_index(1, total + 1);
                let eps = sample_standard_normal(train[k].shape(), &mut rng);
                let x = forward_jump_with_noise(&train[k], &scheds[k], step, &eps)?;
                Ok((x, step, scheds[k].scale()))
            })
            .collect::<Result<_>>()?;
        let model = &*est;
        let parts = batch
            .par_iter()
            .map(|(x, step, target)| {
                let mut g = vec![0.0; model.params().len()];
                let l = model.loss_and_grad(x, *step, target, &mut g)?;
                Ok((l, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = reduce(parts, est.params().len(), state.iteration + 1)?;
        apply(est.params_mut().values_mut(), state, &grad, loss)?;
    }
    Ok(())
}

/// Draws a predictor batch for one iteration.
pub(crate) fn predictor_batch(
    images: &[crate::image::Image],
    scheds: &[PixelSchedule],
    estimator: &ScaleEstimator,
    size: usize,
    rng: &mut RngStream,
) -> Result<Vec<PredictorSample>> {
    let total = estimator.config().total_steps;
    (0..size)
        .map(|_| {
            let k = rng.next_index(0, images.len());
            let step = rng.next_index(1, total + 1);
            make_predictor_sample(&images[k], &scheds[k], estimator, step, rng)
        })
        .collect()
}

/// Trains the reverse predictor with the estimator frozen. The loss of a
/// sample at step `i` is the sum of the head losses `j <= i`.
pub fn train_predictor(
    pred: &mut ReversePredictor,
    estimator: &ScaleEstimator,
    corpus: &SyntheticCorpus,
    cfg: &TrainConfig,
    state: &mut TrainState,
    until: usize,
) -> Result<()> {
    cfg.validate()?;
    if pred.config().total_steps != estimator.config().total_steps {
        return Err(Error::InvalidConfig(format!(
            "predictor has {} heads but the estimator uses T = {}",
            pred.config().total_steps,
            estimator.config().total_steps
        )));
    }
    pred.shape().eq(&estimator.shape()).then_some(()).ok_or(Error::ShapeMismatch {
        expected: estimator.shape(),
        found: pred.shape(),
    })?;
    let sched_cfg = ScheduleConfig::new(estimator.config().gamma, estimator.config().total_steps)?;
    let train = corpus.train();
    let scheds = schedules(train, &sched_cfg)?;
    while state.iteration < until.min(cfg.iterations) {
        let mut rng = RngStream::new(cfg.seed, PREDICTOR_STREAM + state.iteration as u64);
        let batch = predictor_batch(train, &scheds, estimator, cfg.batch_size, &mut rng)?;
        let model = &*pred;
        let parts = batch
            .par_iter()
            .map(|s| {
                let mut g = vec![0.0; model.params().len()];
                let (l, _) = model.sample_loss(s, |_| true, Some(&mut g))?;
                Ok((l, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = reduce(parts, pred.params().len(), state.iteration + 1)?;
        apply(pred.params_mut().values_mut(), state, &grad, loss)?;
    }
    Ok(())
}
