use pixdiff_core::analytics::{expected_traj_conventional, expected_traj_pixelwise};
use pixdiff_core::forward::{empirical_report, ensemble_moments};
use pixdiff_core::synthetic::portrait_like;
use pixdiff_core::*;

const N: usize = 100_000;

fn strip(values: &[f64]) -> Image {
    Image::new(Shape::gray(values.len(), 1), values.to_vec()).unwrap()
}

/// Mean and unbiased variance per pixel of `n` draws.
fn moments(n: usize, mut draw: impl FnMut(usize) -> Grid) -> (Vec<f64>, Vec<f64>) {
    let samples: Vec<Grid> = (0..n).map(&mut draw).collect();
    let (m, v) = ensemble_moments(&samples).unwrap();
    (m.into_data(), v.into_data())
}

fn assert_within_se(label: &str, mean: &[f64], var: &[f64], want_mean: &[f64], want_var: &[f64], n: usize) {
    for p in 0..mean.len() {
        let se_mean = (want_var[p] / n as f64).sqrt();
        let se_var = want_var[p] * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean[p] - want_mean[p]).abs() < 3.0 * se_mean,
            "{label} pixel {p}: mean {} vs {}",
            mean[p],
            want_mean[p]
        );
        assert!(
            (var[p] - want_var[p]).abs() < 3.0 * se_var,
            "{label} pixel {p}: var {} vs {}",
            var[p],
            want_var[p]
        );
    }
}

#[test]
fn forward_then_reverse_reproduces_the_marginal_one_step_earlier() {
    let x0 = strip(&[0.05, 0.3, 0.6, 1.0]);
    let cfg = ScheduleConfig::new(20.0, 200).unwrap();
    let sched = build_schedule(&x0, &cfg).unwrap();
    for step in [2, 40, 150] {
        let mut rng = RngStream::new(17, step as u64);
        let (mean, var) = moments(N, |_| {
            let (x_i, _) = forward_jump(&x0, &sched, step, &mut rng).unwrap();
            let post = posterior_from_x0(&x_i, &x0, &sched, step).unwrap();
            reverse_step(&post, &mut rng).unwrap()
        });
        let want_mean: Vec<f64> = (0..4).map(|p| sched.alpha_bar_grid(step - 1, x0.shape()).data()[p].sqrt() * x0.data()[p]).collect();
        let want_var: Vec<f64> = (0..4).map(|p| 1.0 - NoiseSchedule::alpha_bar(&sched, step - 1, p)).collect();
        assert_within_se(&format!("step {step}"), &mean, &var, &want_mean, &want_var, N);
    }
}

#[test]
fn markov_chain_and_direct_jump_share_the_marginal() {
    let x0 = strip(&[0.1, 0.5, 0.9]);
    let cfg = ScheduleConfig::new(12.0, 30).unwrap();
    let sched = build_schedule(&x0, &cfg).unwrap();
    let step = 12;
    let mut rng = RngStream::new(3, 0);
    let (mean, var) = moments(N / 4, |_| simulate_chain_to(&x0, &sched, &mut rng, step, step).unwrap().last().state.clone());
    let want_mean: Vec<f64> = (0..3).map(|p| NoiseSchedule::alpha_bar(&sched, step, p).sqrt() * x0.data()[p]).collect();
    let want_var: Vec<f64> = (0..3).map(|p| 1.0 - NoiseSchedule::alpha_bar(&sched, step, p)).collect();
    assert_within_se("chain", &mean, &var, &want_mean, &want_var, N / 4);
}

#[test]
fn composite_noise_is_standard_and_inverts_the_jump() {
    let x0 = strip(&[0.2, 0.8]);
    let sched = build_schedule(&x0, &ScheduleConfig::new(10.0, 20).unwrap()).unwrap();
    let mut rng = RngStream::new(9, 1);
    let trajs: Vec<_> = (0..N / 10).map(|_| simulate_chain(&x0, &sched, &mut rng, 1).unwrap()).collect();
    for step in [1, 7, 20] {
        let noises: Vec<Grid> = trajs.iter().map(|t| t.record(step).unwrap().composite_noise.clone()).collect();
        let (m, v) = ensemble_moments(&noises).unwrap();
        assert_within_se("composite", m.data(), v.data(), &[0.0; 2], &[1.0; 2], N / 10);
        let r = trajs[0].record(step).unwrap();
        let back = recover_x0(&r.state, &r.composite_noise, &sched, step).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-10);
    }
}

#[test]
fn pixelwise_chain_mean_follows_the_closed_form_trajectory() {
    let x0 = strip(&[0.1, 0.4, 0.7, 1.0]);
    let (gamma, total) = (20.0, 100);
    let sched = build_schedule(&x0, &ScheduleConfig::new(gamma, total).unwrap()).unwrap();
    let mut rng = RngStream::new(5, 5);
    for step in [10, 50, 100] {
        let (mean, _) = moments(N / 5, |_| forward_jump(&x0, &sched, step, &mut rng).unwrap().0);
        let want = expected_traj_pixelwise(&x0, gamma, step as f64 / total as f64).unwrap();
        for p in 0..4 {
            let se = (1.0 / (N / 5) as f64).sqrt();
            assert!((mean[p] - want.data()[p]).abs() < 3.0 * se, "step {step} pixel {p}");
        }
    }
}

#[test]
fn linear_baseline_chain_mean_follows_the_conventional_trajectory() {
    // beta_i = a i / T^2 discretizes beta(t) = a t, whose mean decays as
    // exp(-a t^2 / 4).
    let (a, total) = (4.0, 400);
    let betas: Vec<f64> = (1..=total).map(|i| a * i as f64 / (total * total) as f64).collect();
    let sched = BaselineSchedule::from_betas(betas).unwrap();
    let x0 = strip(&[0.3, 0.9]);
    let mut rng = RngStream::new(8, 2);
    let trajs: Vec<_> = (0..N / 20).map(|_| simulate_chain(&x0, &sched, &mut rng, 100).unwrap()).collect();
    for step in [100, 200, 400] {
        let states: Vec<Grid> = trajs.iter().map(|t| t.record(step).unwrap().state.clone()).collect();
        let (m, _) = ensemble_moments(&states).unwrap();
        let want = expected_traj_conventional(&x0, a, step as f64 / total as f64).unwrap();
        for p in 0..2 {
            let se = (1.0 / (N / 20) as f64).sqrt();
            // Discretization error of the product form is O(a / T).
            assert!((m.data()[p] - want.data()[p]).abs() < 3.0 * se + a / total as f64, "step {step} pixel {p}");
        }
    }
}

#[test]
fn pixelwise_schedule_reaches_isotropy_before_the_linear_baseline() {
    let x0 = portrait_like(32, 1, 1);
    let total = 200;
    let pixel = build_schedule(&x0, &ScheduleConfig::new(20.0, total).unwrap()).unwrap();
    let baseline = baseline_linear(1e-4, 0.02, total).unwrap();
    let steps = |s: &dyn NoiseSchedule| {
        let traj = simulate_chain(&x0, s, &mut RngStream::new(21, 0), 1).unwrap();
        convergence_steps(&empirical_report(&traj, s).unwrap(), 0.05, 0.05).unwrap()
    };
    let (p, b) = (steps(&pixel), steps(&baseline));
    assert!(p < b, "pixel-wise {p} vs baseline {b}");
    assert!(b <= total + 1);
}

#[test]
fn isotropic_start_converges_immediately() {
    let shape = Shape::gray(64, 64);
    let noise = sample_standard_normal_image(shape);
    let sched = baseline_linear(1e-4, 0.02, 50).unwrap();
    let traj = simulate_chain(&noise, &sched, &mut RngStream::new(2, 2), 1).unwrap();
    // The start is not an image, so statistics are taken directly.
    let report = empirical_report(&traj, &sched).unwrap();
    assert_eq!(convergence_steps(&report, 0.05, 0.05).unwrap(), 0);
}

fn sample_standard_normal_image(shape: Shape) -> Grid {
    pixdiff_core::rng::sample_standard_normal(shape, &mut RngStream::new(1, 1))
}
