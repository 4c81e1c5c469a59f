use serde::Serialize;

use super::estimator::ScaleEstimator;
use super::params::{Owner, ParamStore};
use super::predictor::{PredictorSample, ReversePredictor};
use crate::error::Result;
use crate::image::Grid;
use crate::rng::RngStream;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Relative error that 99% of coordinates must stay below.
pub const COORD_TOLERANCE: f64 = 1e-4;
/// Relative error no coordinate may exceed.
pub const WORST_TOLERANCE: f64 = 1e-2;
const REQUIRED_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub owner: Owner,
    pub coords: usize,
    pub within: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    /// Non-zero analytic entries in blocks of masked heads (predictor only).
    pub masked_nonzero: usize,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.coords).sum()
    }

    pub fn fraction_within(&self) -> f64 {
        self.blocks.iter().map(|b| b.within).sum::<usize>() as f64 / self.checked().max(1) as f64
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.failure().is_none()
    }

    /// Why the check failed, naming the offending block.
    pub fn failure(&self) -> Option<String> {
        let worst = self.worst()?;
        if worst.max_rel_error >= WORST_TOLERANCE {
            return Some(format!(
                "block {} has relative error {:.3e} (limit {WORST_TOLERANCE:e})",
                worst.name, worst.max_rel_error
            ));
        }
        if self.fraction_within() < REQUIRED_FRACTION {
            let bad = self
                .blocks
                .iter()
                .filter(|b| b.within < b.coords)
                .map(|b| b.name.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            return Some(format!(
                "only {:.2}% of coordinates within {COORD_TOLERANCE:e} (blocks: {bad})",
                100.0 * self.fraction_within()
            ));
        }
        if self.masked_nonzero > 0 {
            return Some(format!("{} masked-head gradient entries are non-zero", self.masked_nonzero));
        }
        None
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares `analytic` with central differences of `loss` on up to
/// `per_block` randomly chosen coordinates of every block.
fn check(
    params: &ParamStore,
    analytic: &[f64],
    per_block: usize,
    seed: u64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<BlockCheck>> {
    let mut rng = RngStream::new(seed, 0x6C);
    let mut values = params.values().to_vec();
    let mut out = Vec::new();
    for block in params.blocks() {
        let mut coords: Vec<usize> = block.range().collect();
        if coords.len() > per_block {
            for k in 0..per_block {
                let pick = rng.next_index(k, coords.len());
                coords.swap(k, pick);
            }
            coords.truncate(per_block);
        }
        let mut check = BlockCheck {
            name: block.name.clone(),
            owner: block.owner,
            coords: coords.len(),
            within: 0,
            max_rel_error: 0.0,
        };
        for &k in &coords {
            let orig = values[k];
            values[k] = orig + GRADCHECK_STEP;
            let up = loss(&values)?;
            values[k] = orig - GRADCHECK_STEP;
            let down = loss(&values)?;
            values[k] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let err = relative_error(analytic[k], numeric);
            if err < COORD_TOLERANCE {
                check.within += 1;
            }
            check.max_rel_error = check.max_rel_error.max(err);
        }
        out.push(check);
    }
    Ok(out)
}

impl ScaleEstimator {
    pub fn gradient_check(&self, x: &Grid, step: usize, target: &Grid, per_block: usize, seed: u64) -> Result<GradCheckReport> {
        let mut grad = vec![0.0; self.params().len()];
        self.loss_and_grad(x, step, target, &mut grad)?;
        let mut probe = self.clone();
        let blocks = check(self.params(), &grad, per_block, seed, |v| {
            probe.params_mut().values_mut().copy_from_slice(v);
            probe.loss(x, step, target)
        })?;
        Ok(GradCheckReport {
            blocks,
            masked_nonzero: 0,
        })
    }
}

impl ReversePredictor {
    pub fn gradient_check(&self, sample: &PredictorSample, per_block: usize, seed: u64) -> Result<GradCheckReport> {
        let mut grad = vec![0.0; self.params().len()];
        self.sample_loss(sample, |_| true, Some(&mut grad))?;
        let masked_nonzero = self
            .params()
            .blocks()
            .iter()
            .filter(|b| matches!(b.owner, Owner::Head(j) if j > sample.step))
            .flat_map(|b| grad[b.range()].iter())
            .filter(|&&g| g != 0.0)
            .count();
        let mut probe = self.clone();
        let blocks = check(self.params(), &grad, per_block, seed, |v| {
            probe.params_mut().values_mut().copy_from_slice(v);
            Ok(probe.sample_loss(sample, |_| true, None)?.0)
        })?;
        Ok(GradCheckReport { blocks, masked_nonzero })
    }
}
