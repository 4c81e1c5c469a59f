//! Diffusion schedules.
//!
//! The pixel-wise schedule derives every coefficient from the image scale
//! `x_delta = exp(-gamma * x0)`: the per-pixel retention is
//! `alpha = x_delta^(1/T)`, constant in the step index, so the cumulative
//! retention telescopes to `alpha_bar_i = alpha^i = exp(-gamma * i * x0 / T)`.
//! The linear baseline is the usual scalar ramp of `beta_i`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::image::{Grid, Image, Shape};

/// Floor applied to `1 - alpha_bar` denominators.
pub const DENOMINATOR_FLOOR: f64 = 1e-15;

/// Per-step retention coefficients shared by the forward and reverse samplers.
///
/// Steps are indexed `1..=T` for `alpha`/`beta` and `0..=T` for `alpha_bar`.
/// `pixel` is a flat sample index; scalar schedules ignore it.
pub trait NoiseSchedule: Send + Sync {
    fn total_steps(&self) -> usize;

    /// Shape the schedule is bound to, `None` for scalar schedules.
    fn shape(&self) -> Option<Shape>;

    fn alpha(&self, step: usize, pixel: usize) -> f64;

    fn alpha_bar(&self, step: usize, pixel: usize) -> f64;

    fn beta(&self, step: usize, pixel: usize) -> f64 {
        1.0 - self.alpha(step, pixel)
    }

    /// Posterior variance for `step >= 1` and whether the denominator floor
    /// was hit.
    fn beta_tilde(&self, step: usize, pixel: usize) -> (f64, bool) {
        posterior_variance(
            self.alpha_bar(step - 1, pixel),
            self.alpha_bar(step, pixel),
            self.beta(step, pixel),
        )
    }

    /// Checks that `grid` can be driven by this schedule.
    fn check_shape(&self, shape: Shape) -> Result<()> {
        match self.shape() {
            Some(expected) if expected != shape => Err(Error::ShapeMismatch {
                expected,
                found: shape,
            }),
            _ => Ok(()),
        }
    }

    fn alpha_bar_grid(&self, step: usize, shape: Shape) -> Grid {
        Grid::from_fn(shape, |p| self.alpha_bar(step, p))
    }
}

/// `((1 - alpha_bar_prev) / (1 - alpha_bar)) * beta`, with the denominator
/// floored at [`DENOMINATOR_FLOOR`].
pub fn posterior_variance(alpha_bar_prev: f64, alpha_bar: f64, beta: f64) -> (f64, bool) {
    let denom = 1.0 - alpha_bar;
    let guarded = denom < DENOMINATOR_FLOOR;
    ((1.0 - alpha_bar_prev) / denom.max(DENOMINATOR_FLOOR) * beta, guarded)
}

pub(crate) fn check_step(step: usize, min: usize, max: usize) -> Result<()> {
    if step < min || step > max {
        return Err(Error::StepOutOfRange { step, min, max });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleConfig {
    gamma: f64,
    total_steps: usize,
}

impl ScheduleConfig {
    /// Requires `gamma > 0`, `T >= 2` and `gamma < T`.
    pub fn new(gamma: f64, total_steps: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        if total_steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "total steps must be at least 2, got {total_steps}"
            )));
        }
        if gamma >= total_steps as f64 {
            return Err(Error::GammaNotBelowSteps {
                gamma,
                steps: total_steps,
            });
        }
        Ok(Self { gamma, total_steps })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Checks `gamma >= 10 * max(x0)`.
    pub fn validate_for(&self, x0: &Image) -> Result<()> {
        check_gamma_dominates(self.gamma, x0)
    }
}

fn check_gamma_dominates(gamma: f64, x0: &Image) -> Result<()> {
    let max_pixel = x0.max();
    if !(gamma > 0.0) || gamma < 10.0 * max_pixel {
        return Err(Error::GammaTooSmall { gamma, max_pixel });
    }
    Ok(())
}

/// Element-wise `exp(-gamma * x0)`.
pub fn image_scale(x0: &Image, gamma: f64) -> Result<Grid> {
    check_gamma_dominates(gamma, x0)?;
    Ok(x0.map(|v| (-gamma * v).exp()))
}

#[derive(Debug, Clone)]
pub struct PixelSchedule {
    gamma: f64,
    total_steps: usize,
    x0: Grid,
    scale: Grid,
    alpha: Grid,
}

pub fn build_schedule(x0: &Image, cfg: &ScheduleConfig) -> Result<PixelSchedule> {
    cfg.validate_for(x0)?;
    let (gamma, t) = (cfg.gamma, cfg.total_steps as f64);
    Ok(PixelSchedule {
        gamma,
        total_steps: cfg.total_steps,
        x0: x0.as_grid().clone(),
        scale: image_scale(x0, gamma)?,
        alpha: x0.map(|v| (-gamma * v / t).exp()),
    })
}

impl PixelSchedule {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn x0(&self) -> &Grid {
        &self.x0
    }

    pub fn scale(&self) -> &Grid {
        &self.scale
    }

    pub fn alpha_grid(&self) -> &Grid {
        &self.alpha
    }

    pub fn beta_grid(&self) -> Grid {
        self.alpha.map(|a| 1.0 - a)
    }

    /// Cumulative retention `alpha^i` for `0 <= i <= T`.
    pub fn alpha_bar(&self, step: usize) -> Result<Grid> {
        check_step(step, 0, self.total_steps)?;
        Ok(self.alpha_bar_grid(step, self.x0.shape()))
    }

    pub fn beta_tilde(&self, step: usize) -> Result<Grid> {
        check_step(step, 1, self.total_steps)?;
        Ok(Grid::from_fn(self.x0.shape(), |p| {
            NoiseSchedule::beta_tilde(self, step, p).0
        }))
    }

    /// Writes `pixel_index,x0,scale,alpha[,alpha_bar_<i>...]`.
    pub fn write_csv<W: Write>(&self, writer: W, steps: &[usize]) -> Result<()> {
        for &s in steps {
            check_step(s, 0, self.total_steps)?;
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["pixel_index", "x0", "scale", "alpha"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(steps.iter().map(|s| format!("alpha_bar_{s}")));
        w.write_record(&header)?;
        for p in 0..self.x0.len() {
            let mut row = vec![
                p.to_string(),
                self.x0.data()[p].to_string(),
                self.scale.data()[p].to_string(),
                self.alpha.data()[p].to_string(),
            ];
            row.extend(steps.iter().map(|&s| self.alpha.data()[p].powi(s as i32).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl NoiseSchedule for PixelSchedule {
    fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn shape(&self) -> Option<Shape> {
        Some(self.x0.shape())
    }

    fn alpha(&self, _step: usize, pixel: usize) -> f64 {
        self.alpha.data()[pixel]
    }

    fn alpha_bar(&self, step: usize, pixel: usize) -> f64 {
        self.alpha.data()[pixel].powi(step as i32)
    }
}

/// Coefficient tables materialized from an (estimated) image scale, exactly
/// as the sampler consumes them.
#[derive(Debug, Clone)]
pub struct ScaleSchedule {
    total_steps: usize,
    alpha: Grid,
    alpha_bars: Vec<Grid>,
    beta_tildes: Vec<Grid>,
    guarded: bool,
}

/// `alpha = exp(log(s) / T)`, `alpha_bar_j = exp((j / T) log(s))` and
/// `beta_tilde_j = ((1 - alpha_bar_{j-1}) / (1 - alpha_bar_j)) (1 - alpha)`.
pub fn schedule_from_scale(scale: &Grid, total_steps: usize) -> Result<ScaleSchedule> {
    if total_steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "total steps must be at least 2, got {total_steps}"
        )));
    }
    if let Some((index, &value)) = scale
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v < 1.0))
    {
        return Err(Error::ScaleOutOfRange { index, value });
    }
    let t = total_steps as f64;
    let log_scale = scale.map(f64::ln);
    let alpha = log_scale.map(|l| (l / t).exp());
    let alpha_bars: Vec<Grid> = (0..=total_steps)
        .map(|j| log_scale.map(|l| (j as f64 / t * l).exp()))
        .collect();
    let mut guarded = false;
    let mut beta_tildes = Vec::with_capacity(total_steps + 1);
    beta_tildes.push(Grid::zeros(scale.shape()));
    for j in 1..=total_steps {
        beta_tildes.push(Grid::from_fn(scale.shape(), |p| {
            let (v, g) = posterior_variance(
                alpha_bars[j - 1].data()[p],
                alpha_bars[j].data()[p],
                1.0 - alpha.data()[p],
            );
            guarded |= g;
            v
        }));
    }
    Ok(ScaleSchedule {
        total_steps,
        alpha,
        alpha_bars,
        beta_tildes,
        guarded,
    })
}

impl ScaleSchedule {
    pub fn alpha_grid(&self) -> &Grid {
        &self.alpha
    }

    pub fn alpha_bar(&self, step: usize) -> Result<&Grid> {
        check_step(step, 0, self.total_steps)?;
        Ok(&self.alpha_bars[step])
    }

    pub fn beta_tilde(&self, step: usize) -> Result<&Grid> {
        check_step(step, 1, self.total_steps)?;
        Ok(&self.beta_tildes[step])
    }

    /// Whether any `1 - alpha_bar` denominator hit the floor.
    pub fn guarded(&self) -> bool {
        self.guarded
    }
}

impl NoiseSchedule for ScaleSchedule {
    fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn shape(&self) -> Option<Shape> {
        Some(self.alpha.shape())
    }

    fn alpha(&self, _step: usize, pixel: usize) -> f64 {
        self.alpha.data()[pixel]
    }

    fn alpha_bar(&self, step: usize, pixel: usize) -> f64 {
        self.alpha_bars[step].data()[pixel]
    }

    fn beta_tilde(&self, step: usize, pixel: usize) -> (f64, bool) {
        let v = self.beta_tildes[step].data()[pixel];
        let denom = 1.0 - self.alpha_bars[step].data()[pixel];
        (v, step > 0 && denom < DENOMINATOR_FLOOR)
    }
}

/// Scalar schedule applied identically to every pixel.
#[derive(Debug, Clone)]
pub struct BaselineSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// `beta_i = beta_min + (i - 1) (beta_max - beta_min) / (T - 1)`.
pub fn baseline_linear(beta_min: f64, beta_max: f64, total_steps: usize) -> Result<BaselineSchedule> {
    if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "baseline requires 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    if total_steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "total steps must be at least 2, got {total_steps}"
        )));
    }
    let span = (beta_max - beta_min) / (total_steps - 1) as f64;
    let betas = (1..=total_steps)
        .map(|i| beta_min + (i - 1) as f64 * span)
        .collect();
    BaselineSchedule::from_betas(betas)
}

impl BaselineSchedule {
    /// Arbitrary scalar schedule; every beta must lie in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::InvalidConfig("a schedule needs at least 2 steps".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Constant-beta schedule matching the pixel-wise retention of a pixel
    /// with value `pixel_value`.
    pub fn matched_constant(pixel_value: f64, cfg: &ScheduleConfig) -> Result<Self> {
        let alpha = (-cfg.gamma * pixel_value / cfg.total_steps as f64).exp();
        Self::from_betas(vec![1.0 - alpha; cfg.total_steps])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `beta_i` for `1 <= i <= T`.
    pub fn beta_at(&self, step: usize) -> Result<f64> {
        check_step(step, 1, self.betas.len())?;
        Ok(self.betas[step - 1])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

impl NoiseSchedule for BaselineSchedule {
    fn total_steps(&self) -> usize {
        self.betas.len()
    }

    fn shape(&self) -> Option<Shape> {
        None
    }

    fn alpha(&self, step: usize, _pixel: usize) -> f64 {
        1.0 - self.betas[step - 1]
    }

    fn alpha_bar(&self, step: usize, _pixel: usize) -> f64 {
        self.alpha_bars[step]
    }

    fn beta(&self, step: usize, _pixel: usize) -> f64 {
        self.betas[step - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_image() -> Image {
        Image::uniform(Shape::gray(2, 2), 0.5).unwrap()
    }

    #[test]
    fn scale_at_half_gamma_20() {
        let s = image_scale(&half_image(), 20.0).unwrap();
        // exp(-10) evaluated with mpmath
        assert!((s.data()[0] - 4.539_992_976_248_485e-5).abs() < 1e-18);
    }

    #[test]
    fn scale_near_zero_pixel_approaches_one() {
        let img = Image::uniform(Shape::gray(1, 1), 1e-9).unwrap();
        let s = image_scale(&img, 20.0).unwrap();
        assert!((1.0 - s.data()[0]) < 1e-7 && s.data()[0] < 1.0);
    }

    #[test]
    fn config_enforces_gamma_below_steps() {
        assert!(ScheduleConfig::new(20.0, 200).is_ok());
        assert!(matches!(
            ScheduleConfig::new(250.0, 200),
            Err(Error::GammaNotBelowSteps { .. })
        ));
        assert!(ScheduleConfig::new(1.0, 1).is_err());
        let cfg = ScheduleConfig::new(4.0, 200).unwrap();
        assert!(matches!(
            cfg.validate_for(&half_image()),
            Err(Error::GammaTooSmall { .. })
        ));
    }

    #[test]
    fn alpha_for_half_pixel() {
        let cfg = ScheduleConfig::new(20.0, 200).unwrap();
        let s = build_schedule(&half_image(), &cfg).unwrap();
        // exp(-0.05)
        assert!((s.alpha_grid().data()[0] - 0.951_229_424_500_714).abs() < 1e-15);
        assert!((s.beta_grid().data()[0] - (1.0 - 0.951_229_424_500_714)).abs() < 1e-15);
    }

    #[test]
    fn alpha_bar_endpoints_and_midpoint() {
        let cfg = ScheduleConfig::new(20.0, 200).unwrap();
        let s = build_schedule(&half_image(), &cfg).unwrap();
        assert!(s.alpha_bar(0).unwrap().data().iter().all(|&v| v == 1.0));
        let end = s.alpha_bar(200).unwrap().data()[0];
        assert!((end - 4.539_992_976_248_485e-5).abs() < 1e-15);
        let mid = s.alpha_bar(100).unwrap().data()[0];
        assert!((mid - 6.737_946_999_085_467e-3).abs() < 1e-15);
        assert!(matches!(s.alpha_bar(201), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn uniform_image_gives_uniform_alpha() {
        let cfg = ScheduleConfig::new(20.0, 200).unwrap();
        let s = build_schedule(&Image::uniform(Shape::gray(4, 4), 0.3).unwrap(), &cfg).unwrap();
        let a = s.alpha_grid().data();
        assert!(a.iter().all(|&v| v == a[0]));
    }

    #[test]
    fn alpha_order_reverses_pixel_order() {
        let img = Image::new(Shape::gray(3, 1), vec![0.1, 0.5, 0.9]).unwrap();
        let s = build_schedule(&img, &ScheduleConfig::new(20.0, 200).unwrap()).unwrap();
        let a = s.alpha_grid().data();
        assert!(a[0] > a[1] && a[1] > a[2]);
    }

    #[test]
    fn scale_schedule_first_posterior_variance_is_zero() {
        let sched = schedule_from_scale(&Grid::filled(Shape::gray(3, 3), (-10.0f64).exp()), 200).unwrap();
        assert!(sched.beta_tilde(1).unwrap().data().iter().all(|&v| v == 0.0));
        let ab = sched.alpha_bar(100).unwrap().data()[0];
        assert!((ab - 6.737_946_999_085_467e-3).abs() < 1e-15);
        assert!(!sched.guarded());
    }

    #[test]
    fn scale_schedule_rejects_out_of_range() {
        let bad = Grid::new(Shape::gray(2, 1), vec![0.5, 1.0]).unwrap();
        assert!(matches!(
            schedule_from_scale(&bad, 10),
            Err(Error::ScaleOutOfRange { index: 1, .. })
        ));
        let bad = Grid::new(Shape::gray(2, 1), vec![0.0, 0.5]).unwrap();
        assert!(schedule_from_scale(&bad, 10).is_err());
    }

    #[test]
    fn baseline_endpoints_and_midpoint() {
        let b = baseline_linear(1e-4, 0.02, 500).unwrap();
        assert_eq!(b.beta_at(1).unwrap(), 1e-4);
        assert!((b.beta_at(500).unwrap() - 0.02).abs() < 1e-17);
        // 1e-4 + 249 * 0.0199 / 499
        assert!((b.beta_at(250).unwrap() - 0.010_030_060_120_240_48).abs() < 1e-15);
        let two = baseline_linear(0.1, 0.2, 2).unwrap();
        assert_eq!(two.betas(), &[0.1, 0.2]);
        assert!(b.betas().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn baseline_rejects_bad_ordering() {
        assert!(baseline_linear(0.02, 1e-4, 10).is_err());
        assert!(baseline_linear(0.0, 0.02, 10).is_err());
        assert!(baseline_linear(1e-4, 1.0, 10).is_err());
    }

    #[test]
    fn csv_export_has_requested_columns() {
        let s = build_schedule(&half_image(), &ScheduleConfig::new(20.0, 200).unwrap()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &[0, 200]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "pixel_index,x0,scale,alpha,alpha_bar_0,alpha_bar_200");
        assert_eq!(lines.count(), 4);
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        proptest::collection::vec(1e-3f64..=1.0, 1..24)
            .prop_map(|v| Image::new(Shape::gray(v.len(), 1), v).unwrap())
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreases_and_respects_pixel_order(img in arb_image(), steps in 20usize..300) {
            let gamma = (steps as f64 / 2.0).max(10.0);
            let s = build_schedule(&img, &ScheduleConfig::new(gamma, steps).unwrap()).unwrap();
            for p in 0..img.len() {
                for i in 1..=steps {
                    prop_assert!(NoiseSchedule::alpha_bar(&s, i, p) < NoiseSchedule::alpha_bar(&s, i - 1, p));
                }
                for q in 0..img.len() {
                    if img.data()[p] < img.data()[q] {
                        prop_assert!(NoiseSchedule::alpha_bar(&s, steps, p) > NoiseSchedule::alpha_bar(&s, steps, q));
                    }
                }
            }
        }

        #[test]
        fn first_posterior_variance_is_zero_for_any_schedule(img in arb_image()) {
            let s = build_schedule(&img, &ScheduleConfig::new(20.0, 200).unwrap()).unwrap();
            prop_assert!(s.beta_tilde(1).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }
}
