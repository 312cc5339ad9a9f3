use super::*;
use crate::distributions::{sample_labeled, GaussianMixtureSpec};
use crate::nn::MlpSpec;

fn small_gmm(n: usize, seed: u64) -> LabeledDataset {
    let spec = GaussianMixtureSpec::new(0.5, vec![1.0, -0.5, 0.2], vec![0.5, 1.0, 2.0]).unwrap();
    sample_labeled(&spec, n, &mut RngState::new(seed)).unwrap()
}

fn adversary(dim: usize, classes: usize, seed: u64) -> MlpModel {
    MlpModel::new(&MlpSpec::classifier(dim, &[6, 4], classes), &mut RngState::new(seed)).unwrap()
}

fn quick_config(budget: f64) -> TrainConfig {
    TrainConfig {
        budget,
        iterations: 60,
        adversary_steps: 2,
        batch_size: 50,
        ..TrainConfig::default()
    }
}

/// Central differences of the encoder objective over every encoder parameter.
fn check_objective_gradient(
    encoder: &EncoderModel,
    adv: &MlpModel,
    handler: &dyn ConstraintHandler,
    data: &LabeledDataset,
    budget: f64,
    target: Option<TargetTerm<'_>>,
    measure: DistortionMeasure,
) {
    let noise = encoder.sample_noise(data.len(), &mut RngState::new(99));
    let eval = |e: &EncoderModel| {
        encoder_objective(e, adv, handler, &data.x, &data.s, &noise, budget, 3, measure, target)
            .unwrap()
    };
    let analytic = eval(encoder).gradients;
    let h = 1e-5;
    let blocks = encoder.parameter_blocks().len();
    for b in 0..blocks {
        for i in 0..analytic[b].len() {
            let mut plus = encoder.clone();
            plus.parameter_blocks_mut()[b][i] += h;
            let mut minus = encoder.clone();
            minus.parameter_blocks_mut()[b][i] -= h;
            let num = (eval(&plus).loss - eval(&minus).loss) / (2.0 * h);
            let a = analytic[b][i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "block {b} index {i}: analytic {a} numeric {num}");
        }
    }
}

#[test]
fn affine_objective_gradient_matches_finite_differences() {
    let data = small_gmm(40, 1);
    let adv = adversary(3, 2, 2);
    let enc = EncoderModel::AffineGaussian {
        raw_beta: vec![0.3, -0.2, 0.1],
        raw_sigma: vec![0.5, -0.4, 1.2],
    };
    let sched = PenaltySchedule::default().resolved(20);
    // the budget is violated, so the penalty contributes to the gradient
    for name in constraint_registry().names() {
        let mut handler = constraint_registry().build(name, &sched).unwrap();
        handler.after_step(2.0, 0.5, 0);
        for estimate in [DistortionEstimate::Expected, DistortionEstimate::Sampled] {
            let measure = DistortionMeasure {
                norm: DistortionNorm::PerSample,
                estimate,
            };
            check_objective_gradient(&enc, &adv, handler.as_ref(), &data, 0.5, None, measure);
        }
    }
}

#[test]
fn task_term_and_network_encoder_gradients() {
    let mut rng = RngState::new(5);
    let base = small_gmm(30, 3);
    let y: Vec<usize> = base.s.iter().map(|&s| 1 - s).collect();
    let data = LabeledDataset::new(base.x.clone(), base.s.clone(), 2, Some((y.clone(), 2))).unwrap();
    let adv = adversary(3, 2, 6);
    let target = adversary(3, 2, 7);
    let handler = SquaredPenalty {
        schedule: PenaltySchedule::default().resolved(20),
    };
    let affine = EncoderModel::AffineGaussian {
        raw_beta: vec![0.1, 0.0, -0.3],
        raw_sigma: vec![0.2, 0.3, -0.1],
    };
    let term = TargetTerm {
        model: &target,
        labels: &y,
        weight: 0.7,
    };
    let per_feature = DistortionMeasure {
        norm: DistortionNorm::PerFeature,
        estimate: DistortionEstimate::Expected,
    };
    check_objective_gradient(&affine, &adv, &handler, &data, 0.1, Some(term), per_feature);
    let net = EncoderModel::feedforward(3, 2, 2, &[5], EncoderInput::SX, &mut rng).unwrap();
    check_objective_gradient(&net, &adv, &handler, &data, 0.1, Some(term), DistortionMeasure::default());
}

#[test]
fn distortion_value_and_gradient() {
    let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let xr = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap();
    let (d, g) = distortion(&xr, &x, DistortionNorm::PerSample).unwrap();
    assert_eq!(d, 3.0);
    assert_eq!(g.as_slice(), &[1.0, 2.0, 0.0, -1.0]);
    let (d, _) = distortion(&xr, &x, DistortionNorm::PerFeature).unwrap();
    assert_eq!(d, 1.5);
}

#[test]
fn identical_seeds_give_identical_histories() {
    let data = small_gmm(200, 4);
    let cfg = quick_config(1.0);
    let run = || train(&data, EncoderModel::affine_for_budget(3, 1.0), adversary(3, 2, 8), &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.encoder, b.encoder);
    let other = train(
        &data,
        EncoderModel::affine_for_budget(3, 1.0),
        adversary(3, 2, 8),
        &TrainConfig { seed: 1, ..cfg },
    )
    .unwrap();
    assert_ne!(a.history, other.history);
}

#[test]
fn final_refit_touches_only_the_adversary() {
    let data = small_gmm(200, 5);
    let cfg = quick_config(1.0);
    let run = |epochs| {
        let c = TrainConfig { final_adversary_epochs: epochs, ..cfg.clone() };
        train(&data, EncoderModel::affine_for_budget(3, 1.0), adversary(3, 2, 8), &c).unwrap()
    };
    let (last, refit) = (run(0), run(3));
    assert_eq!(last.encoder, refit.encoder);
    assert_eq!(last.history, refit.history);
    assert_ne!(last.adversary, refit.adversary);
}

#[test]
fn zero_task_weight_reproduces_representation_mode() {
    let base = small_gmm(200, 9);
    let y: Vec<usize> = (0..base.len()).map(|i| (i % 3 == 0) as usize).collect();
    let data = LabeledDataset::new(base.x.clone(), base.s.clone(), 2, Some((y, 2))).unwrap();
    let cfg = quick_config(0.8);
    let plain = train(&data, EncoderModel::affine_for_budget(3, 0.8), adversary(3, 2, 1), &cfg).unwrap();
    let aware = train_task_aware(
        &data,
        EncoderModel::affine_for_budget(3, 0.8),
        adversary(3, 2, 1),
        adversary(3, 2, 2),
        &TrainConfig {
            mode: TrainMode::TaskAware,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(plain.encoder, aware.encoder);
    assert_eq!(plain.history, aware.history);
    assert!(train_task_aware(&small_gmm(100, 1), EncoderModel::affine_identity(3), adversary(3, 2, 1), adversary(3, 2, 2), &cfg).is_err());
}

#[test]
fn zero_budget_keeps_the_identity() {
    let data = small_gmm(200, 10);
    let out = train(&data, EncoderModel::affine_for_budget(3, 1.0), adversary(3, 2, 3), &quick_config(0.0)).unwrap();
    assert_eq!(out.encoder, EncoderModel::affine_identity(3));
    assert_eq!(out.final_distortion, 0.0);
    assert!(out.feasible);
}

#[test]
fn configuration_errors() {
    let data = small_gmm(40, 11);
    let adv = adversary(3, 2, 3);
    let enc = EncoderModel::affine_identity(3);
    let big_batch = TrainConfig {
        batch_size: 41,
        ..quick_config(1.0)
    };
    assert!(train(&data, enc.clone(), adv.clone(), &big_batch).is_err());
    let unknown = TrainConfig {
        constraint: "barrier".into(),
        batch_size: 10,
        ..quick_config(1.0)
    };
    assert!(matches!(train(&data, enc.clone(), adv.clone(), &unknown), Err(Error::UnknownStrategy { .. })));
    let wrong = adversary(4, 2, 3);
    assert!(train(&data, enc, wrong, &TrainConfig { batch_size: 10, ..quick_config(1.0) }).is_err());
}

#[test]
fn divergence_reports_the_iteration() {
    let data = small_gmm(100, 12);
    let cfg = TrainConfig {
        encoder_lr: 1e300,
        adversary_lr: 1e300,
        ..quick_config(1.0)
    };
    match train(&data, EncoderModel::affine_for_budget(3, 1.0), adversary(3, 2, 3), &cfg) {
        Err(Error::Diverged { iteration, .. }) => assert!(iteration < cfg.iterations),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn history_csv_round_trip() {
    let data = small_gmm(100, 13);
    let out = train(&data, EncoderModel::affine_for_budget(3, 1.0), adversary(3, 2, 3), &quick_config(1.0)).unwrap();
    let text = out.history.to_csv_string().unwrap();
    assert_eq!(text.lines().next().unwrap(), "iteration,adversary_loss,encoder_loss,distortion,rho,lambda");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    out.history.write_csv(&p).unwrap();
    assert_eq!(TrainHistory::read_csv(&p).unwrap(), out.history);
}

#[test]
fn averaging_window_restores_mean_noise() {
    let enc = EncoderModel::affine(2, 1.0);
    let mut avg = WindowAverage::new(&enc);
    avg.add(&EncoderModel::affine(2, 1.0));
    avg.add(&EncoderModel::affine(2, 7.0f64.sqrt()));
    let mut out = enc.clone();
    avg.apply(&mut out);
    let mech = out.affine_mechanism().unwrap();
    for v in mech.sigma_p_sq {
        assert!((v - 4.0).abs() < 1e-12);
    }
}

#[test]
fn fair_classifier_runs_and_respects_shapes() {
    let base = small_gmm(300, 14);
    let y: Vec<usize> = base.s.clone();
    let data = LabeledDataset::new(base.x.clone(), base.s.clone(), 2, Some((y, 2))).unwrap();
    let cfg = TrainConfig {
        budget: 0.6,
        ..quick_config(0.6)
    };
    let pred = adversary(3, 2, 15);
    let out = train_fair_classifier_eo(&data, pred.clone(), adversary(4, 2, 16), &cfg).unwrap();
    assert_eq!(out.history.rows.len(), cfg.iterations);
    assert!(out.final_loss.is_finite());
    assert!(train_fair_classifier_eo(&data, pred, adversary(2, 2, 16), &cfg).is_err());
}
