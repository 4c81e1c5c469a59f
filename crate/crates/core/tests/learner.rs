use pixdiff_core::learner::*;
use pixdiff_core::rng::sample_standard_normal;
use pixdiff_core::*;

fn corpus() -> SyntheticCorpus {
    SyntheticCorpus::generate(CorpusConfig { count: 96, validation: 16, ..Default::default() }).unwrap()
}

fn small_predictor(total: usize) -> PredictorConfig {
    PredictorConfig { hidden: 24, feature: 16, head_hidden: 8, embed_dim: 8, total_steps: total }
}

fn small_estimator(total: usize) -> EstimatorConfig {
    EstimatorConfig { total_steps: total, gamma: 10.0, ..Default::default() }
}

#[test]
fn estimator_loss_decreases() {
    let corpus = corpus();
    let mut est = ScaleEstimator::new(Shape::gray(8, 8), small_estimator(20), 1).unwrap();
    let cfg = TrainConfig { iterations: 400, learning_rate: 3e-3, ..Default::default() };
    let mut state = TrainState::new(cfg.learning_rate, est.params().len());
    train_estimator(&mut est, &corpus, &cfg, &mut state, cfg.iterations).unwrap();
    assert_eq!(state.curve.losses.len(), 400);
    assert!(state.curve.decreased(), "{:?} -> {:?}", state.curve.initial_mean(), state.curve.final_mean());
    assert!(est.params().values().iter().all(|v| v.is_finite()));
}

#[test]
fn predictor_loss_decreases_with_frozen_estimator() {
    let corpus = corpus();
    let est = ScaleEstimator::new(Shape::gray(8, 8), small_estimator(12), 1).unwrap();
    let frozen = est.params().clone();
    let mut pred = ReversePredictor::new(Shape::gray(8, 8), small_predictor(12), 2).unwrap();
    let cfg = TrainConfig { iterations: 300, learning_rate: 3e-3, batch_size: 16, seed: 4 };
    let mut state = TrainState::new(cfg.learning_rate, pred.params().len());
    train_predictor(&mut pred, &est, &corpus, &cfg, &mut state, cfg.iterations).unwrap();
    assert!(state.curve.decreased(), "{:?} -> {:?}", state.curve.initial_mean(), state.curve.final_mean());
    assert_eq!(est.params(), &frozen);
}

#[test]
fn predictor_rejects_mismatched_estimator() {
    let est = ScaleEstimator::new(Shape::gray(8, 8), small_estimator(10), 1).unwrap();
    let mut pred = ReversePredictor::new(Shape::gray(8, 8), small_predictor(12), 2).unwrap();
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(cfg.learning_rate, pred.params().len());
    assert!(train_predictor(&mut pred, &est, &corpus(), &cfg, &mut state, 1).is_err());
}

#[test]
fn interrupted_training_resumes_bit_for_bit() {
    let corpus = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { iterations: 60, learning_rate: 2e-3, batch_size: 8, seed: 11 };

    let mut straight = ScaleEstimator::new(Shape::gray(8, 8), small_estimator(20), 3).unwrap();
    let mut s_state = TrainState::new(cfg.learning_rate, straight.params().len());
    train_estimator(&mut straight, &corpus, &cfg, &mut s_state, 60).unwrap();

    let mut first = ScaleEstimator::new(Shape::gray(8, 8), small_estimator(20), 3).unwrap();
    let mut f_state = TrainState::new(cfg.learning_rate, first.params().len());
    train_estimator(&mut first, &corpus, &cfg, &mut f_state, 25).unwrap();
    let path = dir.path().join("est.ckpt");
    first.to_checkpoint().with_training(&f_state, &cfg, corpus.config()).save(&path).unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    let mut resumed = ScaleEstimator::from_checkpoint(&ck).unwrap();
    let mut r_state = ck.train_state().unwrap();
    assert_eq!(r_state.iteration, 25);
    train_estimator(&mut resumed, &corpus, &cfg, &mut r_state, 60).unwrap();

    assert_eq!(resumed.params(), straight.params());
    assert_eq!(r_state, s_state);

    // Same for the predictor.
    let est = straight;
    let pcfg = TrainConfig { iterations: 20, ..cfg };
    let mut p1 = ReversePredictor::new(Shape::gray(8, 8), small_predictor(20), 5).unwrap();
    let mut p1s = TrainState::new(pcfg.learning_rate, p1.params().len());
    train_predictor(&mut p1, &est, &corpus, &pcfg, &mut p1s, 20).unwrap();
    let mut p2 = ReversePredictor::new(Shape::gray(8, 8), small_predictor(20), 5).unwrap();
    let mut p2s = TrainState::new(pcfg.learning_rate, p2.params().len());
    train_predictor(&mut p2, &est, &corpus, &pcfg, &mut p2s, 7).unwrap();
    let ck = Checkpoint::from_bytes(&p2.to_checkpoint().with_training(&p2s, &pcfg, corpus.config()).to_bytes().unwrap()).unwrap();
    let mut p3 = ReversePredictor::from_checkpoint(&ck).unwrap();
    let mut p3s = ck.train_state().unwrap();
    train_predictor(&mut p3, &est, &corpus, &pcfg, &mut p3s, 20).unwrap();
    assert_eq!(p3.params(), p1.params());
}

#[test]
fn shared_gradients_are_the_sum_of_per_head_gradients() {
    let shape = Shape::gray(8, 8);
    let pred = ReversePredictor::new(shape, small_predictor(10), 9).unwrap();
    let mut rng = RngStream::new(2, 0);
    let step = 6;
    let sample = PredictorSample {
        step,
        x_i: sample_standard_normal(shape, &mut rng),
        scale: Grid::from_fn(shape, |p| 0.1 + 0.8 * (p as f64 / 64.0)),
        targets: (0..step).map(|_| sample_standard_normal(shape, &mut rng)).collect(),
    };
    let n = pred.params().len();
    let mut total = vec![0.0; n];
    let (loss, per_head) = pred.sample_loss(&sample, |_| true, Some(&mut total)).unwrap();
    let mut summed = vec![0.0; n];
    let mut loss_sum = 0.0;
    for j in 1..=10 {
        let mut g = vec![0.0; n];
        let (l, _) = pred.sample_loss(&sample, |k| k == j, Some(&mut g)).unwrap();
        loss_sum += l;
        for block in pred.params().blocks() {
            let own = matches!(block.owner, Owner::Head(h) if h == j);
            let shared = block.owner == Owner::Shared;
            for k in block.range() {
                if !own && !shared {
                    assert_eq!(g[k], 0.0, "head {j} leaked into {}", block.name);
                }
            }
        }
        if j > step {
            assert!(g.iter().all(|v| *v == 0.0), "masked head {j}");
        }
        for (s, v) in summed.iter_mut().zip(&g) {
            *s += v;
        }
    }
    assert!((loss - loss_sum).abs() <= 1e-12 * loss);
    assert!((loss - per_head.iter().sum::<f64>()).abs() <= 1e-12 * loss);
    for block in pred.params().blocks() {
        for k in block.range() {
            let scale = total[k].abs().max(1e-12);
            assert!((total[k] - summed[k]).abs() <= 1e-9 * scale, "{}: {} vs {}", block.name, total[k], summed[k]);
        }
    }
}

#[test]
fn gradients_check_out_after_training() {
    let corpus = corpus();
    let shape = Shape::gray(8, 8);
    let mut est = ScaleEstimator::new(shape, small_estimator(12), 1).unwrap();
    let cfg = TrainConfig { iterations: 100, learning_rate: 3e-3, batch_size: 8, seed: 2 };
    let mut state = TrainState::new(cfg.learning_rate, est.params().len());
    train_estimator(&mut est, &corpus, &cfg, &mut state, 100).unwrap();
    let x0 = &corpus.validation()[0];
    let sched = build_schedule(x0, &ScheduleConfig::new(10.0, 12).unwrap()).unwrap();
    let (x, _) = forward_jump(x0, &sched, 5, &mut RngStream::new(1, 1)).unwrap();
    let report = est.gradient_check(&x, 5, sched.scale(), 40, 3).unwrap();
    assert!(report.passed(), "{:?}", report.failure());

    let mut pred = ReversePredictor::new(shape, small_predictor(12), 2).unwrap();
    let mut ps = TrainState::new(cfg.learning_rate, pred.params().len());
    train_predictor(&mut pred, &est, &corpus, &cfg, &mut ps, 30).unwrap();
    let sample = make_predictor_sample(x0, &sched, &est, 7, &mut RngStream::new(4, 4)).unwrap();
    let report = pred.gradient_check(&sample, 20, 5).unwrap();
    assert!(report.passed(), "{:?}", report.failure());
    assert_eq!(report.masked_nonzero, 0);
}

#[test]
fn zero_image_gives_finite_gradients() {
    let shape = Shape::gray(8, 8);
    let est = ScaleEstimator::new(shape, EstimatorConfig::default(), 1).unwrap();
    let mut g = vec![0.0; est.params().len()];
    est.loss_and_grad(&Grid::zeros(shape), 3, &Grid::filled(shape, 0.5), &mut g).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn loss_curve_exports_csv() {
    let curve = LossCurve { losses: vec![1.5, 0.25] };
    let mut out = Vec::new();
    curve.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "iteration,loss\n1,1.5e0\n2,2.5e-1\n");
}
