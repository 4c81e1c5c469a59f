//! Structural similarity and convergence summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::TrajectoryReport;
use crate::image::{Grid, Shape};

/// SSIM with a uniform square window; local statistics are population
/// moments over the window and only fully contained windows are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            dynamic_range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    /// Window 11 for images at least 32 pixels on the short side, else 7
    /// (shrunk to the largest odd size that fits).
    pub fn for_shape(shape: Shape) -> Self {
        let short = shape.width.min(shape.height);
        let window = if short >= 32 { 11 } else { 7.min(short) };
        Self {
            window: if window % 2 == 0 { window - 1 } else { window }.max(1),
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn validate(&self, shape: Shape) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!("SSIM window must be odd, got {}", self.window)));
        }
        if self.window > shape.width.min(shape.height) {
            return Err(Error::InvalidConfig(format!(
                "SSIM window {} exceeds image {shape}",
                self.window
            )));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidConfig("SSIM dynamic range must be positive".into()));
        }
        Ok(())
    }
}

/// Mean local SSIM over all windows and channels.
pub fn ssim(a: &Grid, b: &Grid, cfg: &SsimConfig) -> Result<f64> {
    let shape = a.shape();
    b.ensure_shape(shape)?;
    cfg.validate(shape)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let w = cfg.window;
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut pa = Vec::with_capacity(w * w);
    let mut pb = Vec::with_capacity(w * w);
    for c in 0..shape.channels {
        for y0 in 0..=shape.height - w {
            for x0 in 0..=shape.width - w {
                pa.clear();
                pb.clear();
                for y in y0..y0 + w {
                    for x in x0..x0 + w {
                        pa.push(a.get(x, y, c));
                        pb.push(b.get(x, y, c));
                    }
                }
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for (u, v) in pa.iter().zip(&pb) {
                    let (du, dv) = (u - ma, v - mb);
                    va += du * du;
                    vb += dv * dv;
                    cov += du * dv;
                }
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM over paired images; each pair uses [`SsimConfig::for_shape`].
pub fn mean_ssim<'a>(pairs: impl IntoIterator<Item = (&'a Grid, &'a Grid)>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (a, b) in pairs {
        total += ssim(a, b, &SsimConfig::for_shape(a.shape()))?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("image pairs"));
    }
    Ok(total / n as f64)
}

/// First recorded step from which every later recorded step has
/// `|mean| < mean_tol` and `|var - 1| < var_tol` in every channel; returns
/// `T + 1` if no such step exists.
pub fn convergence_steps(report: &TrajectoryReport, mean_tol: f64, var_tol: f64) -> Result<usize> {
    if !(mean_tol > 0.0 && var_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerances must be positive, got {mean_tol} and {var_tol}"
        )));
    }
    let mut steps: Vec<usize> = report.rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let converged = |step: usize| {
        report
            .rows
            .iter()
            .filter(|r| r.step == step)
            .all(|r| r.empirical_mean.abs() < mean_tol && (r.empirical_var - 1.0).abs() < var_tol)
    };
    let mut answer = report.total_steps + 1;
    for &step in steps.iter().rev() {
        if converged(step) {
            answer = step;
        } else {
            break;
        }
    }
    Ok(answer)
}
