//! Textbook scalar DDPM driven by explicit `alpha`/`alpha_bar` tables, used
//! as an independent reference for constant images.

use pixdiff_core::RngStream;

pub struct ScalarDdpm {
    /// `alphas[t - 1]` for `t = 1..=T`.
    pub alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`.
    pub alpha_bars: Vec<f64>,
}

impl ScalarDdpm {
    /// Constant retention `exp(-gamma v / T)` with `alpha_bar_t = alpha^t`.
    pub fn for_constant_pixel(v: f64, gamma: f64, total: usize) -> Self {
        let alpha = (-gamma * v / total as f64).exp();
        Self {
            alphas: vec![alpha; total],
            alpha_bars: (0..=total).map(|t| alpha.powi(t as i32)).collect(),
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alphas[t - 1]
    }

    pub fn q_step(&self, x: &[f64], t: usize, rng: &mut RngStream) -> Vec<f64> {
        let a = self.alphas[t - 1];
        x.iter().map(|v| a.sqrt() * v + (1.0 - a).sqrt() * rng.next_normal()).collect()
    }

    pub fn q_sample(&self, x0: &[f64], t: usize, rng: &mut RngStream) -> Vec<f64> {
        let ab = self.alpha_bars[t];
        x0.iter().map(|v| ab.sqrt() * v + (1.0 - ab).sqrt() * rng.next_normal()).collect()
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.beta(t)
    }

    pub fn posterior_mean_x0(&self, xt: &[f64], x0: &[f64], t: usize) -> Vec<f64> {
        let (ab_prev, ab) = (self.alpha_bars[t - 1], self.alpha_bars[t]);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        xt.iter().zip(x0).map(|(x, y)| c0 * y + ct * x).collect()
    }

    pub fn posterior_mean_eps(&self, xt: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let a = self.alphas[t - 1];
        let c = (1.0 - a) / (1.0 - self.alpha_bars[t]).sqrt();
        xt.iter().zip(eps).map(|(x, e)| (x - c * e) / a.sqrt()).collect()
    }

    pub fn p_sample(&self, mean: &[f64], t: usize, rng: &mut RngStream) -> Vec<f64> {
        if t == 1 {
            return mean.to_vec();
        }
        let s = self.posterior_variance(t).sqrt();
        mean.iter().map(|m| m + s * rng.next_normal()).collect()
    }
}
