use std::path::{Path, PathBuf};

use anyhow::Result;
use pixdiff_core::analytics::{
    expected_trajectory, linspace, snr_curve, verify_prop1, verify_prop2, write_curves, write_trajectories,
    TrajectoryFamily,
};
use serde::{Deserialize, Serialize};

use crate::common::{create, output_dir, overlay, reject, write_manifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub gamma: f64,
    /// Slope `a` of the conventional linear schedule `beta(t) = a t`.
    pub slope: f64,
    pub pixels: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    /// Upper end of the grid on which the SNR-rate ordering is checked.
    pub prop1_t_max: f64,
    /// Relative tolerance between analytic and finite-difference rates.
    pub fd_tol: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            gamma: 20.0,
            slope: 1.0,
            pixels: linspace(0.05, 1.0, 20),
            t_min: 1e-3,
            t_max: 1.0,
            points: 200,
            prop1_t_max: 0.1,
            fd_tol: 1e-5,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PIXDIFF_OUTPUT_ROOT/analyze).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    slope: Option<f64>,
    /// Comma-separated pixel values in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pixels: Option<Vec<f64>>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    prop1_t_max: Option<f64>,
    #[arg(long)]
    fd_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    HypothesisNotSatisfied,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    check: &'static str,
    status: Status,
    detail: String,
}

#[derive(Debug, Serialize)]
struct Prop1Row {
    x0_small: f64,
    x0_large: f64,
    points: usize,
    t_delta: Option<f64>,
    first_violation: Option<f64>,
    holds_everywhere: bool,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct Prop2Row {
    gamma: f64,
    slope: f64,
    points: usize,
    hypothesis_violations: usize,
    derivative_failures: usize,
    first_failure_x0: Option<f64>,
    first_failure_t: Option<f64>,
    coefficient_failures: usize,
    max_fd_error: f64,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: AnalyzeConfig = crate::common::load_config(args.config.as_deref())?;
    overlay!(cfg, args; gamma, slope, pixels, t_min, t_max, points, prop1_t_max, fd_tol);
    let out = output_dir(args.out.as_deref(), "analyze");
    execute(&cfg, &out)
}

fn pass_if(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn validate(cfg: &AnalyzeConfig) -> Result<Vec<f64>> {
    if cfg.points < 2 {
        return Err(reject(format!("need at least 2 grid points, got {}", cfg.points)));
    }
    if !(cfg.t_min > 0.0 && cfg.t_min < cfg.t_max && cfg.t_max <= 1.0) {
        return Err(reject(format!("need 0 < t_min < t_max <= 1, got {} and {}", cfg.t_min, cfg.t_max)));
    }
    if !(cfg.prop1_t_max > cfg.t_min && cfg.prop1_t_max <= cfg.t_max) {
        return Err(reject(format!(
            "need t_min < prop1_t_max <= t_max, got {}",
            cfg.prop1_t_max
        )));
    }
    if cfg.pixels.is_empty() || cfg.pixels.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(reject("pixel values must be non-empty and lie in (0, 1]"));
    }
    let mut pixels = cfg.pixels.clone();
    pixels.sort_by(f64::total_cmp);
    pixels.dedup();
    Ok(pixels)
}

pub fn execute(cfg: &AnalyzeConfig, out: &Path) -> Result<()> {
    let pixels = validate(cfg)?;
    let grid = linspace(cfg.t_min, cfg.t_max, cfg.points);
    let curves = pixels
        .iter()
        .map(|&x| snr_curve(x, cfg.gamma, &grid))
        .collect::<pixdiff_core::Result<Vec<_>>>()?;
    let families = [
        TrajectoryFamily::Conventional { a: cfg.slope },
        TrajectoryFamily::PixelWise { gamma: cfg.gamma },
        TrajectoryFamily::Generalized { gamma: cfg.gamma, a: cfg.slope },
    ];
    let trajs = families
        .iter()
        .map(|&f| expected_trajectory(f, &pixels, &grid))
        .collect::<pixdiff_core::Result<Vec<_>>>()?;

    write_manifest(out, "analyze", cfg)?;
    write_curves(&curves, create(&out.join("snr_curves.csv"))?)?;
    write_trajectories(&trajs, create(&out.join("expected_trajectories.csv"))?)?;

    let mut summary = Vec::new();
    let outside: usize = curves
        .iter()
        .map(|c| (0..c.times.len()).filter(|&k| !c.bounds[k].encloses(c.snr[k], c.rate[k])).count())
        .sum();
    summary.push(SummaryRow {
        check: "snr-bounds",
        status: pass_if(outside == 0),
        detail: format!("{outside} of {} points outside the bounds", curves.len() * grid.len()),
    });
    let fd = curves.iter().map(|c| c.max_rate_fd_error()).fold(0.0, f64::max);
    summary.push(SummaryRow {
        check: "snr-rate-fd",
        status: pass_if(fd < cfg.fd_tol),
        detail: format!("max relative error {fd:.3e} (tol {:e})", cfg.fd_tol),
    });

    let prop1_grid = linspace(cfg.t_min, cfg.prop1_t_max, cfg.points);
    let mut w = csv::Writer::from_writer(create(&out.join("prop1.csv"))?);
    let (mut pairs, mut failed) = (0, 0);
    for (k, &small) in pixels.iter().enumerate() {
        for &large in &pixels[k + 1..] {
            let v = verify_prop1(small, large, cfg.gamma, &prop1_grid)?;
            pairs += 1;
            failed += usize::from(!v.passed());
            w.serialize(Prop1Row {
                x0_small: small,
                x0_large: large,
                points: v.points,
                t_delta: v.t_delta,
                first_violation: v.first_violation,
                holds_everywhere: v.holds_everywhere,
                passed: v.passed(),
            })?;
        }
    }
    w.flush()?;
    summary.push(SummaryRow {
        check: "prop1-rate-ordering",
        status: if pairs == 0 { Status::HypothesisNotSatisfied } else { pass_if(failed == 0) },
        detail: format!("{failed} of {pairs} pixel pairs fail on t in [{}, {}]", cfg.t_min, cfg.prop1_t_max),
    });

    let v = verify_prop2(&pixels, cfg.gamma, cfg.slope, &grid)?;
    let mut w = csv::Writer::from_writer(create(&out.join("prop2.csv"))?);
    w.serialize(Prop2Row {
        gamma: v.gamma,
        slope: v.a,
        points: v.points,
        hypothesis_violations: v.hypothesis_violations,
        derivative_failures: v.absolute_failures,
        first_failure_x0: v.first_absolute_failure.map(|p| p.0),
        first_failure_t: v.first_absolute_failure.map(|p| p.1),
        coefficient_failures: v.coefficient_failures,
        max_fd_error: v.max_fd_error,
    })?;
    w.flush()?;
    let compared = v.points - v.hypothesis_violations;
    let gated = |ok: bool| if compared == 0 { Status::HypothesisNotSatisfied } else { pass_if(ok) };
    let skipped = if v.hypothesis_satisfied() {
        String::new()
    } else {
        format!("; hypothesis not satisfied at {} points", v.hypothesis_violations)
    };
    summary.push(SummaryRow {
        check: "prop2-derivative",
        status: gated(v.absolute_holds()),
        detail: format!("{} of {compared} points fail{skipped}", v.absolute_failures),
    });
    summary.push(SummaryRow {
        check: "prop2-coefficient",
        status: gated(v.coefficient_holds()),
        detail: format!("{} of {compared} points fail{skipped}", v.coefficient_failures),
    });
    summary.push(SummaryRow {
        check: "prop2-fd",
        status: gated(v.max_fd_error < cfg.fd_tol),
        detail: format!("max relative error {:.3e} (tol {:e})", v.max_fd_error, cfg.fd_tol),
    });

    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    for row in &summary {
        w.serialize(row)?;
        let tag = match row.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::HypothesisNotSatisfied => "SKIP",
        };
        println!("{tag} {}: {}", row.check, row.detail);
    }
    w.flush()?;

    let failures: Vec<&str> = summary.iter().filter(|r| r.status == Status::Fail).map(|r| r.check).collect();
    if !failures.is_empty() {
        anyhow::bail!("verdicts failed: {}", failures.join(", "));
    }
    Ok(())
}
