//! Forward diffusion: single Markov steps, direct reparameterized jumps,
//! whole chains and their summary statistics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{Grid, NoiseField, Shape};
use crate::rng::{sample_standard_normal, RngStream};
use crate::schedule::{check_step, NoiseSchedule};

/// Retention `alpha_i` of one forward step, shared or per pixel.
#[derive(Debug, Clone, Copy)]
pub enum Retention<'a> {
    Scalar(f64),
    PerPixel(&'a [f64]),
}

impl Retention<'_> {
    fn validate(&self, len: usize) -> Result<()> {
        let ok = |a: f64| a > 0.0 && a <= 1.0;
        match *self {
            Retention::Scalar(a) if !ok(a) => Err(Error::InvalidRetention(a)),
            Retention::PerPixel(v) => {
                if v.len() != len {
                    return Err(Error::InvalidArgument(format!(
                        "retention has {} entries for {len} samples",
                        v.len()
                    )));
                }
                match v.iter().find(|&&a| !ok(a)) {
                    Some(&a) => Err(Error::InvalidRetention(a)),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    #[inline]
    fn at(&self, p: usize) -> f64 {
        match *self {
            Retention::Scalar(a) => a,
            Retention::PerPixel(v) => v[p],
        }
    }
}

/// `x_next = sqrt(alpha) * x + sqrt(1 - alpha) * eps` with the supplied noise.
pub fn forward_step_with_noise(x: &Grid, alpha: Retention<'_>, eps: &Grid) -> Result<Grid> {
    alpha.validate(x.len())?;
    eps.ensure_shape(x.shape())?;
    Ok(Grid::from_fn(x.shape(), |p| {
        let a = alpha.at(p);
        a.sqrt() * x.data()[p] + (1.0 - a).sqrt() * eps.data()[p]
    }))
}

pub fn forward_step(x: &Grid, alpha: Retention<'_>, rng: &mut RngStream) -> Result<Grid> {
    let eps = sample_standard_normal(x.shape(), rng);
    forward_step_with_noise(x, alpha, &eps)
}

/// `x_i = sqrt(alpha_bar_i) * x0 + sqrt(1 - alpha_bar_i) * eps`.
pub fn forward_jump_with_noise(
    x0: &Grid,
    sched: &dyn NoiseSchedule,
    step: usize,
    eps: &Grid,
) -> Result<Grid> {
    sched.check_shape(x0.shape())?;
    check_step(step, 0, sched.total_steps())?;
    eps.ensure_shape(x0.shape())?;
    Ok(Grid::from_fn(x0.shape(), |p| {
        let ab = sched.alpha_bar(step, p);
        ab.sqrt() * x0.data()[p] + (1.0 - ab).sqrt() * eps.data()[p]
    }))
}

/// Samples `x_i | x0` directly and returns the composite noise used.
pub fn forward_jump(
    x0: &Grid,
    sched: &dyn NoiseSchedule,
    step: usize,
    rng: &mut RngStream,
) -> Result<(Grid, NoiseField)> {
    let eps = sample_standard_normal(x0.shape(), rng);
    let x = forward_jump_with_noise(x0, sched, step, &eps)?;
    Ok((x, eps))
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub state: Grid,
    /// Per-step noise `eps_i` that produced this state from the previous one.
    pub step_noise: Option<NoiseField>,
    /// Composite noise `eps_tilde_i` with
    /// `x_i = sqrt(alpha_bar_i) x0 + sqrt(1 - alpha_bar_i) eps_tilde_i`.
    pub composite_noise: NoiseField,
}

#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub total_steps: usize,
    pub stride: usize,
    pub records: Vec<StepRecord>,
}

impl ForwardTrajectory {
    pub fn initial(&self) -> &Grid {
        &self.records[0].state
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectory always holds x0")
    }

    pub fn record(&self, step: usize) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.step == step)
    }
}

/// Runs the Markov chain for all `T` steps, keeping every `stride`-th state
/// (plus the last one).
pub fn simulate_chain(
    x0: &Grid,
    sched: &dyn NoiseSchedule,
    rng: &mut RngStream,
    stride: usize,
) -> Result<ForwardTrajectory> {
    simulate_chain_to(x0, sched, rng, stride, sched.total_steps())
}

/// Like [`simulate_chain`] but stops at `last_step`.
pub fn simulate_chain_to(
    x0: &Grid,
    sched: &dyn NoiseSchedule,
    rng: &mut RngStream,
    stride: usize,
    last_step: usize,
) -> Result<ForwardTrajectory> {
    sched.check_shape(x0.shape())?;
    check_step(last_step, 0, sched.total_steps())?;
    if stride == 0 {
        return Err(Error::InvalidArgument("record stride must be positive".into()));
    }
    let shape = x0.shape();
    let mut records = vec![StepRecord {
        step: 0,
        state: x0.clone(),
        step_noise: None,
        composite_noise: Grid::zeros(shape),
    }];
    let mut x = x0.clone();
    let mut composite = Grid::zeros(shape);
    let mut alpha = vec![0.0; shape.len()];
    for i in 1..=last_step {
        for (p, a) in alpha.iter_mut().enumerate() {
            *a = sched.alpha(i, p);
        }
        let eps = sample_standard_normal(shape, rng);
        x = forward_step_with_noise(&x, Retention::PerPixel(&alpha), &eps)?;
        // eps_tilde_i = (sqrt(a_i (1 - ab_{i-1})) eps_tilde_{i-1} + sqrt(1 - a_i) eps_i) / sqrt(1 - ab_i)
        for p in 0..shape.len() {
            let a = alpha[p];
            let ab_prev = sched.alpha_bar(i - 1, p);
            let ab = sched.alpha_bar(i, p);
            let c = &mut composite.data_mut()[p];
            *c = ((a * (1.0 - ab_prev)).sqrt() * *c + (1.0 - a).sqrt() * eps.data()[p])
                / (1.0 - ab).sqrt();
        }
        if i % stride == 0 || i == last_step {
            records.push(StepRecord {
                step: i,
                state: x.clone(),
                step_noise: Some(eps),
                composite_noise: composite.clone(),
            });
        }
    }
    Ok(ForwardTrajectory {
        total_steps: sched.total_steps(),
        stride,
        records,
    })
}

/// Per-pixel mean and (unbiased) variance across a set of equally shaped
/// samples.
pub fn ensemble_moments(samples: &[Grid]) -> Result<(Grid, Grid)> {
    let first = samples.first().ok_or(Error::Empty("ensemble"))?;
    let shape = first.shape();
    let n = samples.len() as f64;
    let mut mean = Grid::zeros(shape);
    for s in samples {
        s.ensure_shape(shape)?;
        for (m, v) in mean.data_mut().iter_mut().zip(s.data()) {
            *m += v / n;
        }
    }
    let mut var = Grid::zeros(shape);
    for s in samples {
        for ((acc, v), m) in var.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
            *acc += (v - m).powi(2) / (n - 1.0).max(1.0);
        }
    }
    Ok((mean, var))
}

/// One row of a [`TrajectoryReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub channel: usize,
    pub empirical_mean: f64,
    pub empirical_var: f64,
    pub theoretical_mean: f64,
    pub theoretical_var: f64,
    /// Mean over pixels of `(x_i - sqrt(alpha_bar_i) x0)^2`.
    pub residual_var: f64,
    /// Mean over pixels of `1 - alpha_bar_i`.
    pub theoretical_residual_var: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryReport {
    pub total_steps: usize,
    pub channels: usize,
    pub rows: Vec<StepStats>,
}

impl TrajectoryReport {
    pub fn rows_for_channel(&self, channel: usize) -> impl Iterator<Item = &StepStats> {
        self.rows.iter().filter(move |r| r.channel == channel)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Statistics over the pixels of a single trajectory, per recorded step and
/// channel.
///
/// `empirical_mean`/`empirical_var` are the sample mean and variance of
/// `x_i` over the pixels of a channel; the theoretical counterparts are the
/// exact expectations of those quantities under the marginal `q(x_i | x0)`,
/// i.e. the pixel average of `sqrt(alpha_bar_i) x0` and the pixel spread of
/// that drift plus the average noise variance `1 - alpha_bar_i`.
pub fn empirical_report(
    traj: &ForwardTrajectory,
    sched: &dyn NoiseSchedule,
) -> Result<TrajectoryReport> {
    let x0 = traj.initial();
    let shape = x0.shape();
    sched.check_shape(shape)?;
    let mut rows = Vec::new();
    for rec in &traj.records {
        for c in 0..shape.channels {
            rows.push(channel_stats(rec.step, c, shape, sched, |p| rec.state.data()[p], x0)?);
        }
    }
    Ok(TrajectoryReport {
        total_steps: traj.total_steps,
        channels: shape.channels,
        rows,
    })
}

fn channel_stats(
    step: usize,
    channel: usize,
    shape: Shape,
    sched: &dyn NoiseSchedule,
    value: impl Fn(usize) -> f64,
    x0: &Grid,
) -> Result<StepStats> {
    let idx: Vec<usize> = (0..shape.pixels()).map(|k| k * shape.channels + channel).collect();
    let n = idx.len() as f64;
    if idx.is_empty() {
        return Err(Error::Empty("image"));
    }
    let drift: Vec<f64> = idx
        .iter()
        .map(|&p| sched.alpha_bar(step, p).sqrt() * x0.data()[p])
        .collect();
    let emp_mean = idx.iter().map(|&p| value(p)).sum::<f64>() / n;
    let emp_var = idx.iter().map(|&p| (value(p) - emp_mean).powi(2)).sum::<f64>() / n;
    let th_mean = drift.iter().sum::<f64>() / n;
    let drift_spread = drift.iter().map(|d| (d - th_mean).powi(2)).sum::<f64>() / n;
    let th_resid = idx.iter().map(|&p| 1.0 - sched.alpha_bar(step, p)).sum::<f64>() / n;
    let resid = idx
        .iter()
        .zip(&drift)
        .map(|(&p, d)| (value(p) - d).powi(2))
        .sum::<f64>()
        / n;
    Ok(StepStats {
        step,
        channel,
        empirical_mean: emp_mean,
        empirical_var: emp_var,
        theoretical_mean: th_mean,
        theoretical_var: drift_spread + th_resid,
        residual_var: resid,
        theoretical_residual_var: th_resid,
    })
}

/// Statistics across an ensemble of chains started from the same `x0`:
/// per-pixel moments across chains, averaged over the pixels of a channel.
pub fn ensemble_report(
    trajs: &[ForwardTrajectory],
    sched: &dyn NoiseSchedule,
) -> Result<TrajectoryReport> {
    let first = trajs.first().ok_or(Error::Empty("ensemble"))?;
    let x0 = first.initial();
    let shape = x0.shape();
    sched.check_shape(shape)?;
    let mut rows = Vec::new();
    for (k, rec) in first.records.iter().enumerate() {
        let states: Vec<Grid> = trajs
            .iter()
            .map(|t| {
                t.records
                    .get(k)
                    .filter(|r| r.step == rec.step)
                    .map(|r| r.state.clone())
                    .ok_or_else(|| Error::InvalidArgument("trajectories use different strides".into()))
            })
            .collect::<Result<_>>()?;
        let (mean, var) = ensemble_moments(&states)?;
        for c in 0..shape.channels {
            let idx: Vec<usize> = (0..shape.pixels()).map(|q| q * shape.channels + c).collect();
            let n = idx.len() as f64;
            let avg = |f: &dyn Fn(usize) -> f64| idx.iter().map(|&p| f(p)).sum::<f64>() / n;
            let th_var = avg(&|p| 1.0 - sched.alpha_bar(rec.step, p));
            let emp_var = avg(&|p| var.data()[p]);
            rows.push(StepStats {
                step: rec.step,
                channel: c,
                empirical_mean: avg(&|p| mean.data()[p]),
                empirical_var: emp_var,
                theoretical_mean: avg(&|p| sched.alpha_bar(rec.step, p).sqrt() * x0.data()[p]),
                theoretical_var: th_var,
                residual_var: emp_var,
                theoretical_residual_var: th_var,
            });
        }
    }
    Ok(TrajectoryReport {
        total_steps: first.total_steps,
        channels: shape.channels,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::schedule::{baseline_linear, build_schedule, BaselineSchedule, ScheduleConfig};

    fn shape() -> Shape {
        Shape::gray(4, 4)
    }

    #[test]
    fn unit_retention_is_identity() {
        let x = Grid::from_fn(shape(), |p| p as f64 * 0.1);
        let mut rng = RngStream::new(1, 0);
        let y = forward_step(&x, Retention::Scalar(1.0), &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pinned_noise_step() {
        let x = Grid::filled(Shape::gray(1, 1), 1.0);
        let y = forward_step_with_noise(&x, Retention::Scalar(0.951229), &Grid::zeros(x.shape())).unwrap();
        // sqrt(0.951229)
        assert!((y.data()[0] - 0.975_309_694_404_808).abs() < 1e-12);
    }

    #[test]
    fn retention_outside_unit_interval_is_rejected() {
        let x = Grid::zeros(shape());
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            forward_step(&x, Retention::Scalar(0.0), &mut rng),
            Err(Error::InvalidRetention(_))
        ));
        assert!(forward_step(&x, Retention::Scalar(1.5), &mut rng).is_err());
        let bad = vec![0.5; 3];
        assert!(forward_step(&x, Retention::PerPixel(&bad), &mut rng).is_err());
    }

    #[test]
    fn step_variance_matches_one_minus_alpha() {
        let x = Grid::filled(Shape::gray(1, 1), 0.7);
        let alpha = 0.9;
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| forward_step(&x, Retention::Scalar(alpha), &mut rng).unwrap().data()[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 1.0 - alpha;
        // standard error of a normal sample variance: var * sqrt(2 / (n - 1))
        let se = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target}");
        assert!((mean - alpha.sqrt() * 0.7).abs() < 3.0 * (target / n as f64).sqrt());
    }

    fn half_schedule() -> (Image, crate::schedule::PixelSchedule) {
        let img = Image::uniform(Shape::gray(2, 2), 0.5).unwrap();
        let s = build_schedule(&img, &ScheduleConfig::new(20.0, 200).unwrap()).unwrap();
        (img, s)
    }

    #[test]
    fn jump_to_zero_returns_x0() {
        let (img, s) = half_schedule();
        let (x, _) = forward_jump(&img, &s, 0, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(&x, img.as_grid());
    }

    #[test]
    fn jump_to_end_with_pinned_noise() {
        let (img, s) = half_schedule();
        let x = forward_jump_with_noise(&img, &s, 200, &Grid::zeros(img.shape())).unwrap();
        // sqrt(exp(-10)) * 0.5
        assert!((x.data()[0] - 3.368_973_499_542_734e-3).abs() < 1e-15);
        assert!(forward_jump(&img, &s, 201, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn stride_equal_to_t_keeps_endpoints() {
        let (img, s) = half_schedule();
        let traj = simulate_chain(&img, &s, &mut RngStream::new(2, 0), 200).unwrap();
        let steps: Vec<_> = traj.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 200]);
        assert!(simulate_chain(&img, &s, &mut RngStream::new(2, 0), 0).is_err());
    }

    #[test]
    fn recorded_composite_noise_reproduces_states() {
        let img = Image::new(Shape::gray(3, 1), vec![0.05, 0.4, 0.95]).unwrap();
        let s = build_schedule(&img, &ScheduleConfig::new(20.0, 200).unwrap()).unwrap();
        let traj = simulate_chain(&img, &s, &mut RngStream::new(9, 1), 7).unwrap();
        for rec in &traj.records {
            let rebuilt = forward_jump_with_noise(&img, &s, rec.step, &rec.composite_noise).unwrap();
            assert!(rebuilt.max_abs_diff(&rec.state) < 1e-12, "step {}", rec.step);
        }
    }

    #[test]
    fn per_image_report_at_step_zero_has_no_noise() {
        let (img, s) = half_schedule();
        let traj = simulate_chain(&img, &s, &mut RngStream::new(2, 0), 50).unwrap();
        let report = empirical_report(&traj, &s).unwrap();
        let first = report.rows[0];
        assert_eq!(first.step, 0);
        assert_eq!(first.residual_var, 0.0);
        assert_eq!(report.rows.len(), 5);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert!(header.starts_with("step,channel,empirical_mean,empirical_var,theoretical_mean,theoretical_var"));
    }

    #[test]
    fn baseline_schedule_drives_chain_for_any_shape() {
        let b: BaselineSchedule = baseline_linear(1e-4, 0.02, 50).unwrap();
        let x0 = Grid::filled(Shape::new(3, 2, 3), 0.5);
        let traj = simulate_chain(&x0, &b, &mut RngStream::new(4, 0), 10).unwrap();
        assert_eq!(traj.records.len(), 6);
    }

    #[test]
    fn ensemble_moments_rejects_empty() {
        assert!(matches!(ensemble_moments(&[]), Err(Error::Empty(_))));
    }
}
