//! Closed-form signal-to-noise analysis of the pixel-wise schedule and the
//! expected (mean) trajectories of the conventional and pixel-wise drifts.
//!
//! In continuous time the pixel-wise cumulative retention is
//! `alpha_bar(t) = exp(-gamma * t * x)`, so a pixel's SNR is
//! `x^2 / (exp(gamma t x) - 1)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Grid;

/// Step used by the central finite-difference cross-checks.
pub const FD_STEP: f64 = 1e-6;

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t))
    }
}

fn check_pixel(x: f64, gamma: f64) -> Result<()> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::PixelOutOfRange { index: 0, value: x });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `x^2 / (exp(gamma t x) - 1)`.
pub fn snr(x: f64, gamma: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    check_pixel(x, gamma)?;
    Ok(x * x / (gamma * t * x).exp_m1())
}

/// `d snr / dt = -gamma x^3 exp(gamma t x) / (exp(gamma t x) - 1)^2`.
///
/// The numerator keeps the `exp(gamma t x)` factor produced by the quotient
/// rule; it tends to 1 as `gamma t x -> 0`.
pub fn snr_rate(x: f64, gamma: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    check_pixel(x, gamma)?;
    let u = gamma * t * x;
    Ok(-gamma * x.powi(3) * u.exp() / u.exp_m1().powi(2))
}

/// Strict two-sided bounds on the SNR and on `|d snr / dt|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrBounds {
    pub snr_lower: f64,
    pub snr_upper: f64,
    pub rate_lower: f64,
    pub rate_upper: f64,
}

impl SnrBounds {
    pub fn encloses(&self, snr: f64, rate: f64) -> bool {
        self.snr_lower < snr && snr < self.snr_upper && self.rate_lower < rate.abs() && rate.abs() < self.rate_upper
    }
}

/// With `u = gamma t x` and `u exp(u / 2) < exp(u) - 1 < u exp(u)`:
///
/// * `x / (gamma t exp(u)) < snr < x / (gamma t exp(u / 2))`
/// * `x / (gamma t^2 exp(u)) < |rate| < x / (gamma t^2)`, the upper side
///   from `|rate| = gamma x^3 / (4 sinh^2(u / 2))` and `sinh v > v`.
pub fn snr_bounds(x: f64, gamma: f64, t: f64) -> Result<SnrBounds> {
    check_time(t)?;
    check_pixel(x, gamma)?;
    let u = gamma * t * x;
    Ok(SnrBounds {
        snr_lower: x / (gamma * t * u.exp()),
        snr_upper: x / (gamma * t * (u / 2.0).exp()),
        rate_lower: x / (gamma * t * t * u.exp()),
        rate_upper: x / (gamma * t * t),
    })
}

/// Central difference of `f` at `t` with step [`FD_STEP`].
pub fn central_difference(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    (f(t + FD_STEP) - f(t - FD_STEP)) / (2.0 * FD_STEP)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(f64::MIN_POSITIVE)
}

/// `n` evenly spaced points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (end - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Default time grid for SNR work; `t = 0` is excluded because the SNR is
/// singular there.
pub fn default_time_grid(n: usize) -> Vec<f64> {
    linspace(1e-3, 1.0, n)
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Empty("time grid"));
    }
    if let Some(&t) = t_grid.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::NonPositiveTime(t));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrCurve {
    pub x0: f64,
    pub gamma: f64,
    pub times: Vec<f64>,
    pub snr: Vec<f64>,
    pub rate: Vec<f64>,
    pub bounds: Vec<SnrBounds>,
}

pub fn snr_curve(x0: f64, gamma: f64, times: &[f64]) -> Result<SnrCurve> {
    check_grid(times)?;
    let mut curve = SnrCurve {
        x0,
        gamma,
        times: times.to_vec(),
        snr: Vec::with_capacity(times.len()),
        rate: Vec::with_capacity(times.len()),
        bounds: Vec::with_capacity(times.len()),
    };
    for &t in times {
        curve.snr.push(snr(x0, gamma, t)?);
        curve.rate.push(snr_rate(x0, gamma, t)?);
        curve.bounds.push(snr_bounds(x0, gamma, t)?);
    }
    Ok(curve)
}

#[derive(Serialize)]
struct CurveRow {
    x0: f64,
    gamma: f64,
    t: f64,
    value: f64,
    rate: f64,
    lower_bound: f64,
    upper_bound: f64,
    abs_rate_lower_bound: f64,
    abs_rate_upper_bound: f64,
}

impl SnrCurve {
    /// Largest relative gap between the analytic rate and a central
    /// difference of the SNR.
    pub fn max_rate_fd_error(&self) -> f64 {
        self.times
            .iter()
            .zip(&self.rate)
            .map(|(&t, &r)| {
                let fd = central_difference(|s| self.x0 * self.x0 / (self.gamma * s * self.x0).exp_m1(), t);
                relative_error(r, fd)
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_curves(std::slice::from_ref(self), writer)
    }
}

/// Writes several curves into one CSV with columns
/// `x0,gamma,t,value,rate,lower_bound,upper_bound,abs_rate_lower_bound,abs_rate_upper_bound`;
/// the last two bracket `|rate|`.
pub fn write_curves<W: Write>(curves: &[SnrCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in curves {
        for k in 0..c.times.len() {
            let b = c.bounds[k];
            w.serialize(CurveRow {
                x0: c.x0,
                gamma: c.gamma,
                t: c.times[k],
                value: c.snr[k],
                rate: c.rate[k],
                lower_bound: b.snr_lower,
                upper_bound: b.snr_upper,
                abs_rate_lower_bound: b.rate_lower,
                abs_rate_upper_bound: b.rate_upper,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Outcome of checking `rate(large) < rate(small) < 0` along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Verdict {
    pub x0_small: f64,
    pub x0_large: f64,
    pub gamma: f64,
    pub points: usize,
    /// Last grid time of the leading run on which the ordering holds.
    pub t_delta: Option<f64>,
    /// First grid time at which the ordering breaks, if any.
    pub first_violation: Option<f64>,
    pub holds_everywhere: bool,
}

impl Prop1Verdict {
    /// The claim is existential: some initial interval of the grid must
    /// satisfy the ordering.
    pub fn passed(&self) -> bool {
        self.t_delta.is_some()
    }
}

/// Checks that the brighter pixel loses SNR faster near `t = 0`.
pub fn verify_prop1(x0_small: f64, x0_large: f64, gamma: f64, t_grid: &[f64]) -> Result<Prop1Verdict> {
    if !(0.0 < x0_small && x0_small < x0_large && x0_large <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < x0_small < x0_large <= 1, got {x0_small} and {x0_large}"
        )));
    }
    check_grid(t_grid)?;
    let mut t_delta = None;
    let mut first_violation = None;
    for &t in t_grid {
        let (small, large) = (snr_rate(x0_small, gamma, t)?, snr_rate(x0_large, gamma, t)?);
        if large < small && small < 0.0 {
            if first_violation.is_none() {
                t_delta = Some(t);
            }
        } else if first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    Ok(Prop1Verdict {
        x0_small,
        x0_large,
        gamma,
        points: t_grid.len(),
        t_delta,
        first_violation,
        holds_everywhere: first_violation.is_none(),
    })
}

/// Which mean-decay law an [`ExpectedTrajectory`] follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryFamily {
    /// `beta(t) = a t` shared by all pixels: `x0 exp(-a t^2 / 4)`.
    Conventional { a: f64 },
    /// `x0 exp(-gamma x0 t / 2)`.
    PixelWise { gamma: f64 },
    /// Drift `gamma (a t / 2) x0`: `x0 exp(-gamma a x0 t^2 / 2)`.
    Generalized { gamma: f64, a: f64 },
}

impl TrajectoryFamily {
    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            TrajectoryFamily::Conventional { a } => positive("a", a),
            TrajectoryFamily::PixelWise { gamma } => positive("gamma", gamma),
            TrajectoryFamily::Generalized { gamma, a } => {
                positive("gamma", gamma)?;
                positive("a", a)
            }
        }
    }

    /// Decay coefficient `k(x0, t)` with `d chi / dt = -k chi`.
    pub fn decay_coefficient(&self, x0: f64, t: f64) -> f64 {
        match *self {
            TrajectoryFamily::Conventional { a } => a * t / 2.0,
            TrajectoryFamily::PixelWise { gamma } => gamma * x0 / 2.0,
            TrajectoryFamily::Generalized { gamma, a } => gamma * a * x0 * t,
        }
    }

    /// `chi(t)` for a single pixel.
    pub fn value(&self, x0: f64, t: f64) -> f64 {
        let exponent = match *self {
            TrajectoryFamily::Conventional { a } => a * t * t / 4.0,
            TrajectoryFamily::PixelWise { gamma } => gamma * x0 * t / 2.0,
            TrajectoryFamily::Generalized { gamma, a } => gamma * a * x0 * t * t / 2.0,
        };
        x0 * (-exponent).exp()
    }

    /// `d chi / dt` for a single pixel.
    pub fn derivative(&self, x0: f64, t: f64) -> f64 {
        -self.decay_coefficient(x0, t) * self.value(x0, t)
    }
}

fn check_unit_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")))
    }
}

fn trajectory_grid(x0: &Grid, family: TrajectoryFamily, t: f64) -> Result<Grid> {
    family.validate()?;
    check_unit_time(t)?;
    Ok(x0.map(|v| family.value(v, t)))
}

pub fn expected_traj_conventional(x0: &Grid, a: f64, t: f64) -> Result<Grid> {
    trajectory_grid(x0, TrajectoryFamily::Conventional { a }, t)
}

pub fn expected_traj_pixelwise(x0: &Grid, gamma: f64, t: f64) -> Result<Grid> {
    trajectory_grid(x0, TrajectoryFamily::PixelWise { gamma }, t)
}

pub fn expected_traj_generalized(x0: &Grid, gamma: f64, a: f64, t: f64) -> Result<Grid> {
    trajectory_grid(x0, TrajectoryFamily::Generalized { gamma, a }, t)
}

/// Sampled expected trajectories of a set of pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedTrajectory {
    pub family: TrajectoryFamily,
    pub pixels: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[k][p]` is `chi(times[k])` of pixel `p`.
    pub values: Vec<Vec<f64>>,
}

pub fn expected_trajectory(family: TrajectoryFamily, pixels: &[f64], times: &[f64]) -> Result<ExpectedTrajectory> {
    family.validate()?;
    for &t in times {
        check_unit_time(t)?;
    }
    Ok(ExpectedTrajectory {
        family,
        pixels: pixels.to_vec(),
        times: times.to_vec(),
        values: times
            .iter()
            .map(|&t| pixels.iter().map(|&x| family.value(x, t)).collect())
            .collect(),
    })
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    family: &'a str,
    x0: f64,
    t: f64,
    value: f64,
    rate: f64,
    lower_bound: f64,
    upper_bound: f64,
}

impl ExpectedTrajectory {
    fn label(&self) -> &'static str {
        match self.family {
            TrajectoryFamily::Conventional { .. } => "conventional",
            TrajectoryFamily::PixelWise { .. } => "pixel-wise",
            TrajectoryFamily::Generalized { .. } => "generalized",
        }
    }

    /// Columns `family,x0,t,value,rate,lower_bound,upper_bound`; the bounds
    /// are the trivial envelope `[0, x0]` of a decaying mean.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_trajectories(std::slice::from_ref(self), writer)
    }
}

pub fn write_trajectories<W: Write>(trajs: &[ExpectedTrajectory], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for traj in trajs {
        for (k, &t) in traj.times.iter().enumerate() {
            for (p, &x) in traj.pixels.iter().enumerate() {
                w.serialize(TrajectoryRow {
                    family: traj.label(),
                    x0: x,
                    t,
                    value: traj.values[k][p],
                    rate: traj.family.derivative(x, t),
                    lower_bound: 0.0,
                    upper_bound: x,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Outcome of comparing the conventional and pixel-wise mean decay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Verdict {
    pub gamma: f64,
    pub a: f64,
    pub points: usize,
    /// Grid points where `gamma x0 > a t` fails; they are not compared.
    pub hypothesis_violations: usize,
    /// Points where `|d chi_C / dt| < |d chi_N / dt|` fails.
    pub absolute_failures: usize,
    /// First `(x0, t)` where the absolute comparison fails.
    pub first_absolute_failure: Option<(f64, f64)>,
    /// Points where the decay coefficient of the pixel-wise mean is not
    /// larger than the conventional one.
    pub coefficient_failures: usize,
    /// Worst relative gap between analytic derivatives and central
    /// differences over both families.
    pub max_fd_error: f64,
}

impl Prop2Verdict {
    pub fn hypothesis_satisfied(&self) -> bool {
        self.hypothesis_violations == 0
    }

    /// Derivative magnitudes ordered at every point that meets the hypothesis.
    pub fn absolute_holds(&self) -> bool {
        self.absolute_failures == 0
    }

    /// Decay coefficients ordered at every point that meets the hypothesis.
    pub fn coefficient_holds(&self) -> bool {
        self.coefficient_failures == 0
    }
}

/// Compares `|d chi_C / dt|` with `|d chi_N / dt|` and the corresponding
/// decay coefficients on every `(x0, t)` pair that satisfies `gamma x0 > a t`.
pub fn verify_prop2(x0: &[f64], gamma: f64, a: f64, t_grid: &[f64]) -> Result<Prop2Verdict> {
    check_grid(t_grid)?;
    if x0.is_empty() {
        return Err(Error::Empty("pixel values"));
    }
    let conv = TrajectoryFamily::Conventional { a };
    let pix = TrajectoryFamily::PixelWise { gamma };
    conv.validate()?;
    pix.validate()?;
    let mut verdict = Prop2Verdict {
        gamma,
        a,
        points: x0.len() * t_grid.len(),
        hypothesis_violations: 0,
        absolute_failures: 0,
        first_absolute_failure: None,
        coefficient_failures: 0,
        max_fd_error: 0.0,
    };
    for &x in x0 {
        for &t in t_grid {
            check_unit_time(t)?;
            if gamma * x <= a * t {
                verdict.hypothesis_violations += 1;
                continue;
            }
            let (dc, dn) = (conv.derivative(x, t), pix.derivative(x, t));
            for (family, d) in [(conv, dc), (pix, dn)] {
                let fd = central_difference(|s| family.value(x, s), t);
                verdict.max_fd_error = verdict.max_fd_error.max(relative_error(d, fd));
            }
            if dc.abs() >= dn.abs() {
                verdict.absolute_failures += 1;
                verdict.first_absolute_failure.get_or_insert((x, t));
            }
            if conv.decay_coefficient(x, t) >= pix.decay_coefficient(x, t) {
                verdict.coefficient_failures += 1;
            }
        }
    }
    Ok(verdict)
}
