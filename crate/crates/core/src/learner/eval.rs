use serde::Serialize;

use super::estimator::ScaleEstimator;
use super::invert_scale;
use super::predictor::{make_predictor_sample, ReversePredictor};
use crate::error::{Error, Result};
use crate::forward::{forward_jump, simulate_chain_to};
use crate::image::{Grid, Image};
use crate::metrics::{ssim, SsimConfig};
use crate::posterior::{
    oracle_reverse_trajectory, posterior_from_noise, run_sampling_algorithm, NoisePredictor, OracleNoise, OracleTruth,
    ScalePredictor,
};
use crate::rng::RngStream;
use crate::schedule::{build_schedule, check_step, schedule_from_scale, ScheduleConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleEvaluation {
    pub samples: usize,
    /// Mean SSIM between the estimated and the true scale.
    pub scale_ssim: f64,
    /// Mean SSIM between the inverted estimate and the clean image.
    pub inverted_ssim: f64,
}

/// Scores the estimator on every image at every step `1..=T`.
pub fn evaluate_estimator(est: &ScaleEstimator, images: &[Image], seed: u64) -> Result<ScaleEvaluation> {
    if images.is_empty() {
        return Err(Error::Empty("images"));
    }
    let cfg = ScheduleConfig::new(est.config().gamma, est.config().total_steps)?;
    let ssim_cfg = SsimConfig::for_shape(est.shape());
    let (mut scale_total, mut inv_total, mut n) = (0.0, 0.0, 0usize);
    for (k, x0) in images.iter().enumerate() {
        let sched = build_schedule(x0, &cfg)?;
        let mut rng = RngStream::new(seed, k as u64);
        for step in 1..=cfg.total_steps() {
            let (x_i, _) = forward_jump(x0, &sched, step, &mut rng)?;
            let s = est.estimate_scale(&x_i, step)?;
            scale_total += ssim(&s, sched.scale(), &ssim_cfg)?;
            inv_total += ssim(&invert_scale(&s, cfg.gamma())?, x0, &ssim_cfg)?;
            n += 1;
        }
    }
    Ok(ScaleEvaluation {
        samples: n,
        scale_ssim: scale_total / n as f64,
        inverted_ssim: inv_total / n as f64,
    })
}

/// Reverse run that only uses the estimated schedule: the clean image is
/// taken to be `invert_scale(x_hat_delta)` and every step uses the `x0`
/// form of the posterior mean.
pub fn schedule_only_reconstruction(
    x_i: &Grid,
    step: usize,
    estimator: &dyn ScalePredictor,
    gamma: f64,
    total_steps: usize,
    rng: &mut RngStream,
) -> Result<Grid> {
    check_step(step, 1, total_steps)?;
    let scale = estimator.estimate_scale(x_i, step)?;
    let x0_hat = invert_scale(&scale, gamma)?;
    let sched = schedule_from_scale(&scale, total_steps)?;
    let traj = oracle_reverse_trajectory(x_i, step, OracleTruth::Clean(&x0_hat), &sched, rng)?;
    Ok(traj.final_state().clone())
}

/// The sampler's update with `z` fixed at zero, so every step moves to
/// the posterior mean. Diagnostic only.
pub fn mean_path_reconstruction(
    x_i: &Grid,
    step: usize,
    estimator: &dyn ScalePredictor,
    predictor: &dyn NoisePredictor,
) -> Result<Grid> {
    let total = predictor.total_steps();
    check_step(step, 1, total)?;
    let scale = estimator.estimate_scale(x_i, step)?;
    let sched = schedule_from_scale(&scale, total)?;
    let noises = predictor.predict_noises(x_i, &scale, step)?;
    let mut x = x_i.clone();
    for j in (1..=step).rev() {
        x = posterior_from_noise(&x, &noises[j - 1], &sched, j)?.mu;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionEvaluation {
    pub step: usize,
    pub samples: usize,
    /// Full sampler with the trained predictor.
    pub algorithm_ssim: f64,
    /// Estimated schedule plus the inverted scale only.
    pub schedule_only_ssim: f64,
    /// Estimated schedule driven by the true composite noises.
    pub oracle_ssim: f64,
    /// Trained predictor with the sampler noise switched off.
    pub mean_path_ssim: f64,
    /// Predictor executions during the sampler runs (one per sample).
    pub predictor_calls: usize,
}

/// Reconstructs every image from its forward state at `step` three ways and
/// reports mean SSIM against the clean image.
pub fn evaluate_reconstruction(
    est: &ScaleEstimator,
    pred: &ReversePredictor,
    images: &[Image],
    step: usize,
    seed: u64,
) -> Result<ReconstructionEvaluation> {
    if images.is_empty() {
        return Err(Error::Empty("images"));
    }
    let cfg = ScheduleConfig::new(est.config().gamma, est.config().total_steps)?;
    check_step(step, 1, cfg.total_steps())?;
    let ssim_cfg = SsimConfig::for_shape(est.shape());
    let (mut alg, mut sched_only, mut oracle, mut mean_path) = (0.0, 0.0, 0.0, 0.0);
    let mut calls = 0;
    for (k, x0) in images.iter().enumerate() {
        let sched = build_schedule(x0, &cfg)?;
        let mut rng = RngStream::new(seed, k as u64);
        let traj = simulate_chain_to(x0, &sched, &mut rng, 1, step)?;
        let x_i = &traj.last().state;

        let mut r = rng.substream(1);
        let before = pred.invocations();
        let out = run_sampling_algorithm(x_i, step, est, pred, &mut r)?;
        calls += pred.invocations() - before;
        alg += ssim(out.x0_hat(), x0, &ssim_cfg)?;
        mean_path += ssim(&mean_path_reconstruction(x_i, step, est, pred)?, x0, &ssim_cfg)?;

        let mut r = rng.substream(2);
        let plain = schedule_only_reconstruction(x_i, step, est, cfg.gamma(), cfg.total_steps(), &mut r)?;
        sched_only += ssim(&plain, x0, &ssim_cfg)?;

        let mut noises: Vec<Grid> = traj.records[1..].iter().map(|r| r.composite_noise.clone()).collect();
        noises.resize(cfg.total_steps(), Grid::zeros(x0.shape()));
        let truth = OracleNoise::new(noises)?;
        let mut r = rng.substream(3);
        let out = run_sampling_algorithm(x_i, step, est, &truth, &mut r)?;
        oracle += ssim(out.x0_hat(), x0, &ssim_cfg)?;
    }
    let n = images.len() as f64;
    Ok(ReconstructionEvaluation {
        step,
        samples: images.len(),
        algorithm_ssim: alg / n,
        schedule_only_ssim: sched_only / n,
        oracle_ssim: oracle / n,
        mean_path_ssim: mean_path / n,
        predictor_calls: calls,
    })
}

/// Per-head MSE on held-out images. Every image is diffused to every step
/// `i`; head `j` is scored on the samples with `j <= i`.
pub fn head_validation_mse(
    pred: &ReversePredictor,
    est: &ScaleEstimator,
    images: &[Image],
    seed: u64,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Empty("images"));
    }
    let total = pred.config().total_steps;
    let cfg = ScheduleConfig::new(est.config().gamma, est.config().total_steps)?;
    let mut sums = vec![0.0; total];
    let mut counts = vec![0usize; total];
    for (k, x0) in images.iter().enumerate() {
        let sched = build_schedule(x0, &cfg)?;
        let mut rng = RngStream::new(seed, k as u64);
        for step in 1..=total {
            let sample = make_predictor_sample(x0, &sched, est, step, &mut rng)?;
            let (_, per_head) = pred.sample_loss(&sample, |_| true, None)?;
            for (j, l) in per_head.iter().enumerate().take(step) {
                sums[j] += l;
                counts[j] += 1;
            }
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::learner::{EstimatorConfig, PredictorConfig, SyntheticCorpus, CorpusConfig};
    use crate::posterior::OracleScale;

    #[test]
    fn untrained_pipeline_runs_and_counts_calls() {
        let corpus = SyntheticCorpus::generate(CorpusConfig { count: 4, validation: 2, ..Default::default() }).unwrap();
        let shape = Shape::gray(8, 8);
        let est = ScaleEstimator::new(shape, EstimatorConfig::default(), 1).unwrap();
        let pred = ReversePredictor::new(shape, PredictorConfig { hidden: 8, feature: 8, head_hidden: 4, ..Default::default() }, 2).unwrap();
        let e = evaluate_estimator(&est, corpus.validation(), 0).unwrap();
        assert_eq!(e.samples, 40);
        assert!(e.scale_ssim.is_finite() && e.inverted_ssim.is_finite());
        let r = evaluate_reconstruction(&est, &pred, corpus.validation(), 5, 0).unwrap();
        assert_eq!(r.predictor_calls, 2);
        let mse = head_validation_mse(&pred, &est, corpus.validation(), 0).unwrap();
        assert_eq!(mse.len(), 20);
        assert!(mse.iter().all(|m| m.is_finite() && *m > 0.0));
    }

    #[test]
    fn schedule_only_with_true_scale_is_exact_at_step_one() {
        let corpus = SyntheticCorpus::generate(CorpusConfig { count: 2, validation: 1, ..Default::default() }).unwrap();
        let x0 = &corpus.images()[0];
        let cfg = ScheduleConfig::new(10.0, 20).unwrap();
        let sched = build_schedule(x0, &cfg).unwrap();
        let oracle = OracleScale { scale: sched.scale().clone() };
        let mut rng = RngStream::new(3, 0);
        let (x1, _) = forward_jump(x0, &sched, 1, &mut rng).unwrap();
        let out = schedule_only_reconstruction(&x1, 1, &oracle, 10.0, 20, &mut rng).unwrap();
        assert!(out.max_abs_diff(x0) < 1e-12);
    }
}
