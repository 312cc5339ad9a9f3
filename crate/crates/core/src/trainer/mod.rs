//! Alternating constrained minimax training.
//!
//! Every outer iteration draws a minibatch, encodes it once with fresh
//! noise, takes `j` cross-entropy steps on the adversary, and then takes one
//! step on the encoder objective
//!
//! `−CE_adv + penalty(d) [+ λ·CE_target]`,
//!
//! where `d` is the minibatch distortion and the penalty comes from a named
//! [`ConstraintHandler`]. Runs are deterministic in `(dataset, config)`.
//!
//! Training stops after a fixed number of iterations. The returned encoder
//! is the average over the final `average_window` fraction of iterations
//! (`β` and `σ_p²` for affine encoders, raw parameters for networks), which
//! damps the oscillation of the alternating updates. The last adversary
//! iterate answered the last encoder iterate, so it (and the target of
//! task-aware runs) is then refit for `final_adversary_epochs` epochs on the
//! training set encoded by the averaged encoder.

pub mod constraint;
pub mod encoder;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use constraint::{
    constraint_registry, encoder_objective_auglag, encoder_objective_penalty, optimal_slack, AugmentedLagrangian,
    ConstraintHandler, LinearPenalty, PenaltySchedule, SquaredPenalty,
};
pub use encoder::{EncoderInput, EncoderModel, EncoderPass, ZERO_NOISE_RAW_SIGMA};

use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{adam_step, cross_entropy_logits, fit_classifier, softmax_rows, AdamConfig, AdamState, FitConfig, Head, MlpModel};
use crate::numerics::{softplus_inverse, RngState};

/// A run is feasible when its final distortion is at most this multiple of the budget.
pub const FEASIBILITY_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Representation,
    TaskAware,
    /// Fair predictor; the adversary sees the soft prediction and one-hot `Y`.
    FairClassifierEo,
    /// Fair predictor; the adversary sees only the soft prediction.
    FairClassifierDp,
}

/// How per-sample squared distance is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionNorm {
    /// `‖x_r − x‖²`.
    #[default]
    PerSample,
    /// `‖x_r − x‖² / m`.
    PerFeature,
}

/// How the constrained distortion is measured on a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionEstimate {
    /// Closed-form expectation over the noise where the encoder has one
    /// (affine encoders); the minibatch average otherwise.
    #[default]
    Expected,
    /// Always the minibatch average of the sampled distortion.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistortionMeasure {
    pub norm: DistortionNorm,
    pub estimate: DistortionEstimate,
}

impl DistortionMeasure {
    fn scale(&self, dim: usize) -> f64 {
        match self.norm {
            DistortionNorm::PerSample => 1.0,
            DistortionNorm::PerFeature => 1.0 / dim as f64,
        }
    }

    /// Closed-form value and parameter gradient, when it applies.
    fn expected(&self, encoder: &EncoderModel) -> Option<(f64, Vec<Vec<f64>>)> {
        if self.estimate == DistortionEstimate::Sampled {
            return None;
        }
        let (v, mut g) = encoder.expected_distortion()?;
        let c = self.scale(encoder.dim());
        g.iter_mut().flatten().for_each(|x| *x *= c);
        Some((v * c, g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Distortion budget `D` (prediction-loss budget `L` for fair classifiers).
    pub budget: f64,
    pub iterations: usize,
    /// Adversary steps per outer iteration.
    pub adversary_steps: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub adversary_lr: f64,
    pub target_lr: f64,
    pub penalty: PenaltySchedule,
    /// Name in [`constraint_registry`].
    pub constraint: String,
    pub mode: TrainMode,
    /// Weight `λ` of the target loss in task-aware mode.
    pub task_weight: f64,
    pub encoder_input: EncoderInput,
    pub distortion: DistortionNorm,
    pub distortion_estimate: DistortionEstimate,
    /// Fraction of final iterations averaged into the returned encoder.
    pub average_window: f64,
    /// Epochs refitting the adversary against the averaged encoder.
    pub final_adversary_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lr = AdamConfig::default().lr;
        Self {
            budget: 1.0,
            iterations: 5000,
            adversary_steps: 5,
            batch_size: 1000,
            encoder_lr: lr,
            adversary_lr: lr,
            target_lr: lr,
            penalty: PenaltySchedule::default(),
            constraint: "penalty".into(),
            mode: TrainMode::Representation,
            task_weight: 0.0,
            encoder_input: EncoderInput::X,
            distortion: DistortionNorm::PerSample,
            distortion_estimate: DistortionEstimate::Expected,
            average_window: 0.1,
            final_adversary_epochs: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(invalid(format!("budget must be finite and non-negative, got {}", self.budget)));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.adversary_steps == 0 {
            return Err(invalid("adversary_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        for (name, lr) in [
            ("encoder_lr", self.encoder_lr),
            ("adversary_lr", self.adversary_lr),
            ("target_lr", self.target_lr),
        ] {
            AdamConfig::with_lr(lr)
                .validate()
                .map_err(|_| invalid(format!("{name} must be positive and finite, got {lr}")))?;
        }
        self.penalty.validate()?;
        constraint_registry().check(&self.constraint)?;
        if !(self.task_weight >= 0.0) || !self.task_weight.is_finite() {
            return Err(invalid(format!("task_weight must be non-negative, got {}", self.task_weight)));
        }
        if !(0.0..1.0).contains(&self.average_window) {
            return Err(invalid(format!("average_window must lie in [0, 1), got {}", self.average_window)));
        }
        Ok(())
    }

    fn handler(&self) -> Result<Box<dyn ConstraintHandler>> {
        constraint_registry().build(&self.constraint, &self.penalty.resolved(self.iterations))
    }

    pub fn measure(&self) -> DistortionMeasure {
        DistortionMeasure {
            norm: self.distortion,
            estimate: self.distortion_estimate,
        }
    }

    fn window_start(&self) -> usize {
        let w = (self.average_window * self.iterations as f64).ceil() as usize;
        self.iterations - w.min(self.iterations)
    }
}

/// Mean distortion of `x_r` against `x` and its gradient with respect to `x_r`.
pub fn distortion(x_r: &Matrix, x: &Matrix, norm: DistortionNorm) -> Result<(f64, Matrix)> {
    if x_r.shape() != x.shape() {
        return Err(Error::Dimension {
            context: "distortion",
            expected: x.rows() * x.cols(),
            got: x_r.rows() * x_r.cols(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("distortion batch"));
    }
    let scale = match norm {
        DistortionNorm::PerSample => 1.0,
        DistortionNorm::PerFeature => 1.0 / x.cols() as f64,
    } / x.rows() as f64;
    let mut grad = x_r.clone();
    let mut total = 0.0;
    for (g, &v) in grad.as_mut_slice().iter_mut().zip(x.as_slice()) {
        let diff = *g - v;
        total += diff * diff;
        *g = 2.0 * scale * diff;
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub adversary_loss: f64,
    pub encoder_loss: f64,
    /// Constrained quantity on the minibatch before the encoder step.
    pub distortion: f64,
    pub rho: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<HistoryRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: EncoderModel,
    pub adversary: MlpModel,
    /// Target classifier of a task-aware run.
    pub target: Option<MlpModel>,
    pub history: TrainHistory,
    /// Distortion of the returned encoder on the whole training set, fresh noise.
    pub final_distortion: f64,
    pub feasible: bool,
}

/// Target-loss term of the task-aware objective.
#[derive(Debug, Clone, Copy)]
pub struct TargetTerm<'a> {
    pub model: &'a MlpModel,
    pub labels: &'a [usize],
    pub weight: f64,
}

/// Value and encoder gradient of the encoder objective on one minibatch.
#[derive(Debug, Clone)]
pub struct EncoderObjective {
    pub loss: f64,
    pub adversary_loss: f64,
    pub distortion: f64,
    pub target_loss: Option<f64>,
    pub gradients: Vec<Vec<f64>>,
}

/// Evaluates `−CE_adv + penalty(d) [+ λ·CE_target]` for the encoder with the
/// adversary (and target) held fixed, plus its gradient with respect to
/// every encoder parameter. A zero task weight contributes nothing.
#[allow(clippy::too_many_arguments)]
pub fn encoder_objective(
    encoder: &EncoderModel,
    adversary: &MlpModel,
    handler: &dyn ConstraintHandler,
    x: &Matrix,
    s: &[usize],
    noise: &Matrix,
    budget: f64,
    t: usize,
    measure: DistortionMeasure,
    target: Option<TargetTerm<'_>>,
) -> Result<EncoderObjective> {
    let pass = encoder.forward(x, s, noise, true)?;
    let adv_cache = adversary.forward(&pass.output, true)?;
    let (adv_loss, adv_grad) = cross_entropy_logits(adv_cache.output(), s)?;
    let mut grad_out = adversary.backward(&adv_cache, &adv_grad)?.input_gradient;
    grad_out.scale(-1.0);
    let expected = measure.expected(encoder);
    let (d, sampled_grad) = match &expected {
        Some((v, _)) => (*v, None),
        None => {
            let (v, g) = distortion(&pass.output, x, measure.norm)?;
            (v, Some(g))
        }
    };
    let (pen, dpen) = handler.penalty(d, budget, t);
    let mut loss = -adv_loss + pen;
    if let (Some(dg), true) = (&sampled_grad, dpen != 0.0) {
        for (g, v) in grad_out.as_mut_slice().iter_mut().zip(dg.as_slice()) {
            *g += dpen * v;
        }
    }
    let mut target_loss = None;
    if let Some(term) = target {
        let cache = term.model.forward(&pass.output, true)?;
        let (tl, tg) = cross_entropy_logits(cache.output(), term.labels)?;
        target_loss = Some(tl);
        if term.weight != 0.0 {
            loss += term.weight * tl;
            let ig = term.model.backward(&cache, &tg)?.input_gradient;
            for (g, v) in grad_out.as_mut_slice().iter_mut().zip(ig.as_slice()) {
                *g += term.weight * v;
            }
        }
    }
    let mut gradients = encoder.backward(&pass, &grad_out)?;
    if let (Some((_, dg)), true) = (&expected, dpen != 0.0) {
        for (block, extra) in gradients.iter_mut().zip(dg) {
            for (g, v) in block.iter_mut().zip(extra) {
                *g += dpen * v;
            }
        }
    }
    Ok(EncoderObjective {
        loss,
        adversary_loss: adv_loss,
        distortion: d,
        target_loss,
        gradients,
    })
}

fn draw_batch(n: usize, batch: usize, rng: &mut RngState) -> Vec<usize> {
    (0..batch).map(|_| rng.below(n)).collect()
}

/// `steps` cross-entropy Adam steps on one fixed batch; returns the last loss.
fn classifier_steps(
    model: &mut MlpModel,
    state: &mut AdamState,
    x: &Matrix,
    labels: &[usize],
    steps: usize,
) -> Result<f64> {
    let mut last = f64::NAN;
    for _ in 0..steps {
        let cache = model.forward(x, true)?;
        let (loss, grad) = cross_entropy_logits(cache.output(), labels)?;
        if !loss.is_finite() {
            return Err(Error::Domain(format!("classifier loss is {loss}")));
        }
        let grads = model.parameter_gradients(&cache, &grad)?;
        model.commit_batch_statistics(&cache);
        adam_step(model, &grads, state)?;
        last = loss;
    }
    Ok(last)
}

fn diverged(iteration: usize, err: Error) -> Error {
    match err {
        Error::Domain(reason) => Error::Diverged { iteration, reason },
        Error::NonFiniteGradient { block, index } => Error::Diverged {
            iteration,
            reason: format!("non-finite gradient in block {block} at element {index}"),
        },
        other => other,
    }
}

/// Running mean of encoder parameters over the averaging window. Affine
/// encoders are averaged in `(β, σ_p²)`, networks in raw parameters.
struct WindowAverage {
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl WindowAverage {
    fn snapshot(encoder: &EncoderModel) -> Vec<Vec<f64>> {
        match encoder.affine_mechanism() {
            Some(m) => vec![m.beta, m.sigma_p_sq],
            None => encoder.parameter_blocks().iter().map(|b| b.to_vec()).collect(),
        }
    }

    fn new(encoder: &EncoderModel) -> Self {
        let sums = Self::snapshot(encoder).into_iter().map(|b| vec![0.0; b.len()]).collect();
        Self { sums, count: 0 }
    }

    fn add(&mut self, encoder: &EncoderModel) {
        for (s, b) in self.sums.iter_mut().zip(Self::snapshot(encoder)) {
            for (a, v) in s.iter_mut().zip(b) {
                *a += v;
            }
        }
        self.count += 1;
    }

    fn apply(&self, encoder: &mut EncoderModel) {
        if self.count == 0 {
            return;
        }
        let c = self.count as f64;
        let mut means: Vec<Vec<f64>> = self.sums.iter().map(|s| s.iter().map(|v| v / c).collect()).collect();
        if encoder.is_affine() {
            for v in means[1].iter_mut() {
                *v = if *v > 0.0 {
                    softplus_inverse(v.sqrt())
                } else {
                    ZERO_NOISE_RAW_SIGMA
                };
            }
        }
        for (p, m) in encoder.parameter_blocks_mut().into_iter().zip(means) {
            p.copy_from_slice(&m);
        }
    }
}

fn check_classifier(model: &MlpModel, input: usize, classes: usize, what: &'static str) -> Result<()> {
    if model.head != Head::SoftmaxLogits {
        return Err(invalid(format!("{what} needs a softmax-logits head")));
    }
    if model.input_dim() != input {
        return Err(Error::Dimension {
            context: what,
            expected: input,
            got: model.input_dim(),
        });
    }
    if model.output_dim() != classes {
        return Err(Error::Dimension {
            context: what,
            expected: classes,
            got: model.output_dim(),
        });
    }
    Ok(())
}

fn check_common(dataset: &LabeledDataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if config.batch_size > dataset.len() {
        return Err(invalid(format!(
            "batch_size {} exceeds the {} training samples",
            config.batch_size,
            dataset.len()
        )));
    }
    Ok(())
}

/// Representation-mode training: the encoder censors `S` under the budget.
pub fn train(
    dataset: &LabeledDataset,
    encoder: EncoderModel,
    adversary: MlpModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    run_minimax(dataset, encoder, adversary, None, config)
}

/// Task-aware training: the encoder also keeps `Y` predictable by a target
/// classifier trained alongside the adversary, with weight `task_weight`.
pub fn train_task_aware(
    dataset: &LabeledDataset,
    encoder: EncoderModel,
    adversary: MlpModel,
    target: MlpModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    dataset.require_y()?;
    run_minimax(dataset, encoder, adversary, Some(target), config)
}

fn run_minimax(
    dataset: &LabeledDataset,
    mut encoder: EncoderModel,
    mut adversary: MlpModel,
    mut target: Option<MlpModel>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    check_common(dataset, config)?;
    if encoder.dim() != dataset.dim() {
        return Err(Error::Dimension {
            context: "encoder width",
            expected: dataset.dim(),
            got: encoder.dim(),
        });
    }
    if let EncoderModel::Feedforward { input, s_classes, .. } = &encoder {
        if *input == EncoderInput::SX && *s_classes != dataset.s_classes {
            return Err(invalid("(S, X) encoder was built for a different sensitive alphabet"));
        }
    }
    check_classifier(&adversary, dataset.dim(), dataset.s_classes, "adversary")?;
    let y_all = if let Some(t) = &target {
        check_classifier(t, dataset.dim(), dataset.y_classes, "target classifier")?;
        Some(dataset.require_y()?)
    } else {
        None
    };

    // a zero budget admits only the identity, which a softplus noise scale reaches exactly only when fixed
    let frozen = config.budget == 0.0 && encoder.is_affine();
    if frozen {
        encoder = EncoderModel::affine_identity(dataset.dim());
    }

    let mut rng = RngState::new(config.seed);
    let mut handler = config.handler()?;
    let mut enc_state = AdamState::new(
        AdamConfig::with_lr(config.encoder_lr),
        &encoder.parameter_blocks().iter().map(|b| b.len()).collect::<Vec<_>>(),
    );
    let mut adv_state = AdamState::for_model(AdamConfig::with_lr(config.adversary_lr), &adversary);
    let mut target_state = target
        .as_ref()
        .map(|t| AdamState::for_model(AdamConfig::with_lr(config.target_lr), t));
    let window_start = config.window_start();
    let mut average = WindowAverage::new(&encoder);
    let mut history = TrainHistory::default();

    for t in 0..config.iterations {
        let step = (|| -> Result<HistoryRow> {
            let idx = draw_batch(dataset.len(), config.batch_size, &mut rng);
            let xb = dataset.x.select_rows(&idx);
            let sb: Vec<usize> = idx.iter().map(|&i| dataset.s[i]).collect();
            let yb: Option<Vec<usize>> = y_all.map(|y| idx.iter().map(|&i| y[i]).collect());
            let noise = encoder.sample_noise(xb.rows(), &mut rng);
            let pass = encoder.forward(&xb, &sb, &noise, true)?;
            let adv_loss = classifier_steps(&mut adversary, &mut adv_state, &pass.output, &sb, config.adversary_steps)?;
            if let (Some(tm), Some(ts), Some(yb)) = (target.as_mut(), target_state.as_mut(), yb.as_ref()) {
                classifier_steps(tm, ts, &pass.output, yb, config.adversary_steps)?;
            }
            let rho = handler.rho(t);
            if frozen {
                return Ok(HistoryRow {
                    iteration: t,
                    adversary_loss: adv_loss,
                    encoder_loss: -adv_loss,
                    distortion: 0.0,
                    rho,
                    lambda: handler.multiplier(),
                });
            }
            let term = match (&target, &yb) {
                (Some(model), Some(labels)) => Some(TargetTerm {
                    model,
                    labels,
                    weight: config.task_weight,
                }),
                _ => None,
            };
            let obj = encoder_objective(
                &encoder,
                &adversary,
                handler.as_ref(),
                &xb,
                &sb,
                &noise,
                config.budget,
                t,
                config.measure(),
                term,
            )?;
            if !obj.loss.is_finite() {
                return Err(Error::Domain(format!("encoder loss is {}", obj.loss)));
            }
            encoder.commit_batch_statistics(&pass);
            enc_state.update(encoder.parameter_blocks_mut(), &obj.gradients)?;
            if handler.wants_post_step() {
                let d_post = match config.measure().expected(&encoder) {
                    Some((v, _)) => v,
                    None => distortion(&encoder.forward(&xb, &sb, &noise, true)?.output, &xb, config.distortion)?.0,
                };
                handler.after_step(d_post, config.budget, t);
            }
            Ok(HistoryRow {
                iteration: t,
                adversary_loss: adv_loss,
                encoder_loss: obj.loss,
                distortion: obj.distortion,
                rho,
                lambda: handler.multiplier(),
            })
        })()
        .map_err(|e| diverged(t, e))?;
        history.rows.push(step);
        if t >= window_start && !frozen {
            average.add(&encoder);
        }
    }
    average.apply(&mut encoder);

    if config.final_adversary_epochs > 0 {
        let mut refit_rng = rng.derive(u64::MAX - 1);
        let encoded = encoder.encode(&dataset.x, &dataset.s, &mut refit_rng)?;
        let fit = |lr: f64| FitConfig {
            epochs: config.final_adversary_epochs,
            batch_size: config.batch_size,
            adam: AdamConfig::with_lr(lr),
        };
        fit_classifier(&mut adversary, &encoded, &dataset.s, &fit(config.adversary_lr), &mut refit_rng)?;
        if let (Some(tm), Some(y)) = (target.as_mut(), y_all) {
            fit_classifier(tm, &encoded, y, &fit(config.target_lr), &mut refit_rng)?;
        }
    }

    let mut eval_rng = rng.derive(u64::MAX);
    let encoded = encoder.encode(&dataset.x, &dataset.s, &mut eval_rng)?;
    let (final_distortion, _) = distortion(&encoded, &dataset.x, config.distortion)?;
    Ok(TrainOutcome {
        encoder,
        adversary,
        target,
        history,
        final_distortion,
        feasible: final_distortion <= FEASIBILITY_FACTOR * config.budget,
    })
}

/// Which independence the fair-classifier adversary probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessCriterion {
    /// Prediction independent of `S` given `Y`; the adversary also sees `Y`.
    EqualizedOdds,
    /// Prediction independent of `S`.
    DemographicParity,
}

#[derive(Debug, Clone)]
pub struct FairOutcome {
    pub predictor: MlpModel,
    pub adversary: MlpModel,
    pub history: TrainHistory,
    /// Cross-entropy of the returned predictor on the whole training set.
    pub final_loss: f64,
    pub feasible: bool,
}

/// Predictor input for the configured policy: `X` or `onehot(S) ‖ X`.
pub fn predictor_input(x: &Matrix, s: &[usize], s_classes: usize, policy: EncoderInput) -> Result<Matrix> {
    match policy {
        EncoderInput::X => Ok(x.clone()),
        EncoderInput::SX => Matrix::hconcat(&[&Matrix::one_hot(s, s_classes)?, x]),
    }
}

fn adversary_input(probs: &Matrix, y: &[usize], classes: usize, criterion: FairnessCriterion) -> Result<Matrix> {
    match criterion {
        FairnessCriterion::EqualizedOdds => Matrix::hconcat(&[probs, &Matrix::one_hot(y, classes)?]),
        FairnessCriterion::DemographicParity => Ok(probs.clone()),
    }
}

/// Fair predictor for equalized odds.
pub fn train_fair_classifier_eo(
    dataset: &LabeledDataset,
    predictor: MlpModel,
    adversary: MlpModel,
    config: &TrainConfig,
) -> Result<FairOutcome> {
    train_fair_classifier(dataset, predictor, adversary, config, FairnessCriterion::EqualizedOdds)
}

/// Trains a predictor of `Y` that minimizes the adversary's cross-entropy
/// on `S` subject to its own cross-entropy on `Y` staying within `budget`.
pub fn train_fair_classifier(
    dataset: &LabeledDataset,
    mut predictor: MlpModel,
    mut adversary: MlpModel,
    config: &TrainConfig,
    criterion: FairnessCriterion,
) -> Result<FairOutcome> {
    check_common(dataset, config)?;
    let y_all = dataset.require_y()?;
    let k = dataset.y_classes;
    let in_dim = dataset.dim() + if config.encoder_input == EncoderInput::SX { dataset.s_classes } else { 0 };
    check_classifier(&predictor, in_dim, k, "predictor")?;
    let adv_in = match criterion {
        FairnessCriterion::EqualizedOdds => 2 * k,
        FairnessCriterion::DemographicParity => k,
    };
    check_classifier(&adversary, adv_in, dataset.s_classes, "adversary")?;

    let mut rng = RngState::new(config.seed);
    let mut handler = config.handler()?;
    let mut pred_state = AdamState::for_model(AdamConfig::with_lr(config.encoder_lr), &predictor);
    let mut adv_state = AdamState::for_model(AdamConfig::with_lr(config.adversary_lr), &adversary);
    let window_start = config.window_start();
    let mut sums: Vec<Vec<f64>> = predictor.parameter_blocks().iter().map(|b| vec![0.0; b.len()]).collect();
    let mut count = 0usize;
    let mut history = TrainHistory::default();

    for t in 0..config.iterations {
        let row = (|| -> Result<HistoryRow> {
            let idx = draw_batch(dataset.len(), config.batch_size, &mut rng);
            let xb = dataset.x.select_rows(&idx);
            let sb: Vec<usize> = idx.iter().map(|&i| dataset.s[i]).collect();
            let yb: Vec<usize> = idx.iter().map(|&i| y_all[i]).collect();
            let inp = predictor_input(&xb, &sb, dataset.s_classes, config.encoder_input)?;
            let p_cache = predictor.forward(&inp, true)?;
            let probs = softmax_rows(p_cache.output());
            let a_in = adversary_input(&probs, &yb, k, criterion)?;
            let adv_loss = classifier_steps(&mut adversary, &mut adv_state, &a_in, &sb, config.adversary_steps)?;

            let a_cache = adversary.forward(&a_in, true)?;
            let (adv_loss_now, a_grad) = cross_entropy_logits(a_cache.output(), &sb)?;
            let g_in = adversary.backward(&a_cache, &a_grad)?.input_gradient;
            let (pred_loss, pred_grad) = cross_entropy_logits(p_cache.output(), &yb)?;
            let (pen, dpen) = handler.penalty(pred_loss, config.budget, t);
            let loss = -adv_loss_now + pen;
            if !loss.is_finite() {
                return Err(Error::Domain(format!("predictor loss is {loss}")));
            }
            // ∂(−CE_adv)/∂logits through the softmax, plus the penalty term
            let mut grad = Matrix::zeros(probs.rows(), k);
            for r in 0..probs.rows() {
                let p = probs.row(r);
                let g = &g_in.row(r)[..k];
                let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                let pg = pred_grad.row(r);
                for (c, out) in grad.row_mut(r).iter_mut().enumerate() {
                    *out = -p[c] * (g[c] - dot) + dpen * pg[c];
                }
            }
            let bw = predictor.backward(&p_cache, &grad)?;
            predictor.commit_batch_statistics(&p_cache);
            adam_step(&mut predictor, &bw.gradients, &mut pred_state)?;
            if handler.wants_post_step() {
                let after = predictor.forward(&inp, true)?;
                let (l_post, _) = cross_entropy_logits(after.output(), &yb)?;
                handler.after_step(l_post, config.budget, t);
            }
            Ok(HistoryRow {
                iteration: t,
                adversary_loss: adv_loss,
                encoder_loss: loss,
                distortion: pred_loss,
                rho: handler.rho(t),
                lambda: handler.multiplier(),
            })
        })()
        .map_err(|e| diverged(t, e))?;
        history.rows.push(row);
        if t >= window_start {
            for (s, b) in sums.iter_mut().zip(predictor.parameter_blocks()) {
                for (a, v) in s.iter_mut().zip(b) {
                    *a += v;
                }
            }
            count += 1;
        }
    }
    if count > 0 {
        for (p, s) in predictor.parameter_blocks_mut().into_iter().zip(&sums) {
            for (a, v) in p.iter_mut().zip(s) {
                *a = v / count as f64;
            }
        }
    }
    let inp = predictor_input(&dataset.x, &dataset.s, dataset.s_classes, config.encoder_input)?;
    let (final_loss, _) = cross_entropy_logits(&predictor.predict(&inp)?, y_all)?;
    Ok(FairOutcome {
        predictor,
        adversary,
        history,
        final_loss,
        feasible: final_loss <= FEASIBILITY_FACTOR * config.budget,
    })
}

#[cfg(test)]
mod tests;
