use serde::{Deserialize, Serialize};

use super::params::{sigmoid, tanh_backward, tanh_in_place, Dense, Owner, ParamStore};
use super::time_embedding;
use crate::error::{Error, Result};
use crate::image::{Grid, Shape};
use crate::posterior::ScalePredictor;
use crate::rng::RngStream;

/// Outputs handed to the sampler are kept this far from 0 and 1 so the
/// derived schedule stays finite.
const OUTPUT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub gamma: f64,
    pub total_steps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16, 32],
            embed_dim: 16,
            gamma: 10.0,
            total_steps: 20,
        }
    }
}

/// Fully connected encoder/decoder from `[x_i, embed(i)]` to a sigmoid
/// scale map of the same shape as `x_i`.
#[derive(Debug, Clone)]
pub struct ScaleEstimator {
    config: EstimatorConfig,
    shape: Shape,
    params: ParamStore,
    layers: Vec<Dense>,
}

impl ScaleEstimator {
    pub fn new(shape: Shape, config: EstimatorConfig, seed: u64) -> Result<Self> {
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(Error::InvalidConfig("estimator needs non-empty hidden widths".into()));
        }
        time_embedding(0, config.embed_dim)?;
        let mut rng = RngStream::new(seed, 0xE57);
        let mut params = ParamStore::new();
        let mut widths = vec![shape.len() + config.embed_dim];
        widths.extend(&config.hidden);
        widths.push(shape.len());
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Dense::new(&mut params, &format!("layer{k}"), Owner::Shared, w[0], w[1], true, &mut rng))
            .collect();
        Ok(Self {
            config,
            shape,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input(&self, x: &Grid, step: usize) -> Result<Vec<f64>> {
        x.ensure_shape(self.shape)?;
        let mut v = x.data().to_vec();
        v.extend(time_embedding(step, self.config.embed_dim)?);
        Ok(v)
    }

    /// Activations of every layer; the last one is the sigmoid output.
    fn activations(&self, x: &Grid, step: usize) -> Result<Vec<Vec<f64>>> {
        let mut acts = vec![self.input(x, step)?];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&self.params, acts.last().expect("input present"));
            if k == last {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                tanh_in_place(&mut y);
            }
            acts.push(y);
        }
        Ok(acts)
    }

    /// Raw network output in `(0, 1)`.
    pub fn predict(&self, x: &Grid, step: usize) -> Result<Grid> {
        let out = self.activations(x, step)?.pop().expect("output present");
        Grid::new(self.shape, out)
    }

    /// Per-pixel mean squared error against `target`.
    pub fn loss(&self, x: &Grid, step: usize, target: &Grid) -> Result<f64> {
        target.ensure_shape(self.shape)?;
        let out = self.predict(x, step)?;
        Ok(mse(out.data(), target.data()))
    }

    /// Adds the gradient of [`Self::loss`] to `grad` and returns the loss.
    pub fn loss_and_grad(&self, x: &Grid, step: usize, target: &Grid, grad: &mut [f64]) -> Result<f64> {
        target.ensure_shape(self.shape)?;
        let acts = self.activations(x, step)?;
        let out = acts.last().expect("output present");
        let d = out.len() as f64;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target.data())
            .map(|(s, t)| 2.0 * (s - t) / d * s * (1.0 - s))
            .collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            if k == 0 {
                layer.backward(&self.params, input, &delta, grad, None);
            } else {
                let mut dx = vec![0.0; layer.inputs];
                layer.backward(&self.params, input, &delta, grad, Some(&mut dx));
                delta = tanh_backward(input, &dx);
            }
        }
        Ok(mse(out, target.data()))
    }
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

impl ScalePredictor for ScaleEstimator {
    fn estimate_scale(&self, x_i: &Grid, step: usize) -> Result<Grid> {
        Ok(self.predict(x_i, step)?.map(|v| v.clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_standard_normal;

    #[test]
    fn untrained_output_is_in_range() {
        let est = ScaleEstimator::new(Shape::gray(8, 8), EstimatorConfig::default(), 1).unwrap();
        let x = sample_standard_normal(Shape::gray(8, 8), &mut RngStream::new(0, 0));
        let s = est.estimate_scale(&x, 5).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let flat = est.estimate_scale(&Grid::filled(Shape::gray(8, 8), 0.4), 20).unwrap();
        assert!(flat.data().iter().all(|v| v.is_finite()));
        assert!(est.predict(&Grid::zeros(Shape::gray(4, 4)), 1).is_err());
    }

    #[test]
    fn default_layer_widths() {
        let est = ScaleEstimator::new(Shape::gray(8, 8), EstimatorConfig::default(), 1).unwrap();
        let dims: Vec<(usize, usize)> = est.params().blocks().iter().filter(|b| b.cols > 1).map(|b| (b.cols, b.rows)).collect();
        assert_eq!(dims, vec![(80, 32), (32, 16), (16, 32), (32, 64)]);
    }
}
