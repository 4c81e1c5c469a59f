//! Toy learned components: a denoising scale estimator and a multi-head
//! reverse-noise predictor, both small fully connected networks with
//! hand-written backpropagation.

mod checkpoint;
mod corpus;
mod estimator;
mod eval;
mod gradcheck;
mod params;
mod predictor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use corpus::{CorpusConfig, SyntheticCorpus};
pub use estimator::{EstimatorConfig, ScaleEstimator};
pub use eval::{
    evaluate_estimator, evaluate_reconstruction, head_validation_mse, mean_path_reconstruction, schedule_only_reconstruction,
    ReconstructionEvaluation, ScaleEvaluation,
};
pub use gradcheck::{BlockCheck, GradCheckReport, GRADCHECK_STEP};
pub use params::{Adam, Block, Owner, ParamStore};
pub use predictor::{head_loss, make_predictor_sample, PredictorConfig, PredictorSample, ReversePredictor};
pub use train::{
    train_estimator, train_predictor, LossCurve, TrainConfig, TrainState,
};

use crate::error::{Error, Result};
use crate::image::Grid;

/// Sinusoidal position code: entry `2k` is `sin(i / 10000^(2k / dim))`,
/// entry `2k + 1` the matching cosine.
pub fn time_embedding(step: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dimension must be even and positive, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let angle = step as f64 / 10000f64.powf(2.0 * k as f64 / dim as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// `-ln(scale) / gamma`, the clean image implied by a scale estimate.
pub fn invert_scale(scale: &Grid, gamma: f64) -> Result<Grid> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if let Some((index, &value)) = scale.data().iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
        return Err(Error::ScaleOutOfRange { index, value });
    }
    Ok(scale.map(|s| -s.ln() / gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image, Shape};
    use crate::schedule::image_scale;

    #[test]
    fn embedding_at_zero_alternates() {
        let e = time_embedding(0, 8).unwrap();
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(time_embedding(3, 7).is_err());
    }

    #[test]
    fn embeddings_are_distinct_and_bounded() {
        let all: Vec<Vec<f64>> = (1..=200).map(|i| time_embedding(i, 32).unwrap()).collect();
        let mut min = f64::INFINITY;
        for a in 0..all.len() {
            assert!(all[a].iter().all(|v| (-1.0..=1.0).contains(v)));
            for b in a + 1..all.len() {
                let d = all[a].iter().zip(&all[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                min = min.min(d);
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn inverse_of_image_scale() {
        let x0 = Image::new(Shape::gray(3, 1), vec![0.01, 0.5, 1.0]).unwrap();
        let back = invert_scale(&image_scale(&x0, 20.0).unwrap(), 20.0).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-12);
        assert!(invert_scale(&Grid::filled(Shape::gray(1, 1), 1.0), 20.0).is_err());
        assert!(invert_scale(&Grid::filled(Shape::gray(1, 1), 0.0), 20.0).is_err());
        let near_one = invert_scale(&Grid::filled(Shape::gray(1, 1), 1.0 - 1e-12), 20.0).unwrap();
        assert!(near_one.data()[0] > 0.0 && near_one.data()[0] < 1e-12);
    }

    #[test]
    fn inverse_amplifies_errors_at_bright_pixels() {
        // |d x0 / d scale| = 1 / (gamma scale) = 1101.3 at x0 = 0.5, gamma = 20
        let s = (-10.0f64).exp();
        let h = s * 1e-6;
        let g = |v: f64| invert_scale(&Grid::filled(Shape::gray(1, 1), v), 20.0).unwrap().data()[0];
        let fd = (g(s + h) - g(s - h)) / (2.0 * h);
        assert!((fd.abs() - 1_101.323_289_740_34).abs() / 1101.3 < 1e-6, "{fd}");
    }
}
