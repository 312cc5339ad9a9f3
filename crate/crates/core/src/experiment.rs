//! End-to-end distortion sweeps.
//!
//! [`gmm_sweep`] trains an affine encoder against a neural adversary on the
//! Gaussian-mixture model at each budget and compares it with the optimal
//! mechanism. [`fair_sweep`] does the same on a synthetic population where
//! the target label is correlated with the sensitive one, and reports how
//! fair a downstream classifier trained on the representation is.
//!
//! Every budget gets its own derived random stream, so points are
//! independent of each other and of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{CurveRow, TradeoffCurve};
use crate::data::LabeledDataset;
use crate::distributions::{map_accuracy_closed_form, sample_labeled, AffineMechanism, GaussianMixtureSpec};
use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::metrics::{adversary_accuracy, train_and_eval_downstream};
use crate::mi::{embedding_mi, mi_with_discrete_label, SampleCloud};
use crate::nn::{AdamConfig, FitConfig, MlpModel, MlpSpec};
use crate::numerics::RngState;
use crate::theory::solve_water_filling;
use crate::trainer::{train, EncoderModel, TrainConfig, TrainOutcome};

/// Stream offsets inside a point's generator.
pub const ADVERSARY_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;
pub const DOWNSTREAM_STREAM: u64 = 4;
pub const TARGET_STREAM: u64 = 5;
pub const ENCODER_STREAM: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSweepConfig {
    pub q: f64,
    pub budgets: Vec<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub adversary_hidden: Vec<usize>,
    /// `budget` and `seed` are replaced per point.
    pub train: TrainConfig,
    /// Neighbour order of the MI estimate; `None` skips it.
    pub mi_neighbors: Option<usize>,
    pub mi_features: MiFeatures,
    /// PCA components applied to the adversary embedding before estimating MI.
    pub mi_components: Option<usize>,
    pub seed: u64,
}

impl Default for GmmSweepConfig {
    fn default() -> Self {
        Self {
            q: 0.5,
            budgets: vec![1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 32768.0],
            train_size: 20_000,
            test_size: 2_000,
            adversary_hidden: vec![16, 8],
            train: TrainConfig {
                iterations: 4000,
                ..TrainConfig::default()
            },
            mi_neighbors: Some(crate::mi::DEFAULT_NEIGHBORS),
            mi_features: MiFeatures::default(),
            mi_components: Some(2),
            seed: 0,
        }
    }
}

/// What the Gaussian-mixture sweep estimates `I(·; S)` on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiFeatures {
    /// The log-likelihood-ratio projection `Σ μ_i x_i / (σ_i² + σ_p,i²)`,
    /// a sufficient statistic for `S` under an affine mechanism, so the
    /// one-dimensional estimate targets `I(X_r; S)` itself.
    #[default]
    Sufficient,
    /// Penultimate layer of the trained adversary, optionally PCA-reduced.
    AdversaryEmbedding,
}

/// Projects each row onto the log-likelihood-ratio direction of `mech`.
pub fn sufficient_statistic(spec: &GaussianMixtureSpec, mech: &AffineMechanism, x: &Matrix) -> Result<Matrix> {
    let w: Vec<f64> = (0..spec.dim())
        .map(|i| spec.mu[i] / (spec.sigma_sq[i] + mech.sigma_p_sq[i]))
        .collect();
    x.matmul(&Matrix::column_vector(&w))
}

impl GmmSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(invalid("sweep needs at least one budget"));
        }
        if self.budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(invalid("budgets must be finite and non-negative"));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(invalid("train and test sizes must be positive"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct GmmPoint {
    pub row: CurveRow,
    pub learned: AffineMechanism,
    pub optimal: AffineMechanism,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct GmmSweep {
    pub spec: GaussianMixtureSpec,
    pub curve: TradeoffCurve,
    pub points: Vec<GmmPoint>,
}

/// Private copies of `data` under `encoder`, with fresh noise.
pub fn encode_dataset(encoder: &EncoderModel, data: &LabeledDataset, rng: &mut RngState) -> Result<LabeledDataset> {
    data.with_features(encoder.encode(&data.x, &data.s, rng)?)
}

/// Generator of sweep point `index`. A single run uses index 0, so it
/// reproduces the first point of a sweep with the same seed.
pub fn point_rng(seed: u64, index: usize) -> RngState {
    RngState::new(seed).derive(100 + index as u64)
}

/// Generators for the training and test samples of a synthetic run.
pub fn sample_rngs(seed: u64) -> (RngState, RngState) {
    let root = RngState::new(seed);
    (root.derive(0), root.derive(1))
}

/// Generator for fresh evaluation noise of a point.
pub fn eval_rng(point: &RngState) -> RngState {
    point.derive(EVAL_STREAM)
}

/// Trains `encoder` at `budget` against a freshly initialized adversary,
/// with everything seeded from the point generator.
pub fn train_representation(
    train_set: &LabeledDataset,
    encoder: EncoderModel,
    adversary_hidden: &[usize],
    base: &TrainConfig,
    budget: f64,
    rng: &RngState,
) -> Result<TrainOutcome> {
    let adversary = MlpModel::new(
        &MlpSpec::classifier(encoder.dim(), adversary_hidden, train_set.s_classes),
        &mut rng.derive(ADVERSARY_STREAM),
    )?;
    let cfg = TrainConfig {
        budget,
        seed: rng.derive(TRAIN_STREAM).next_u64(),
        ..base.clone()
    };
    train(train_set, encoder, adversary, &cfg)
}

/// Runs one budget of the Gaussian-mixture sweep.
pub fn gmm_point(
    spec: &GaussianMixtureSpec,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    budget: f64,
    config: &GmmSweepConfig,
    rng: &RngState,
) -> Result<GmmPoint> {
    let encoder = EncoderModel::affine_for_budget(spec.dim(), budget);
    let outcome = train_representation(train_set, encoder, &config.adversary_hidden, &config.train, budget, rng)?;
    let learned = outcome.encoder.affine_mechanism().expect("affine encoder");
    let optimal = solve_water_filling(spec, budget)?.mech;
    let encoded = encode_dataset(&outcome.encoder, test_set, &mut eval_rng(rng))?;
    let mut row = CurveRow::new(budget);
    row.distortion = Some(outcome.final_distortion);
    row.adversary_accuracy = Some(adversary_accuracy(&outcome.adversary, &encoded.x, &encoded.s)?);
    row.map_oracle_accuracy = Some(map_accuracy_closed_form(spec, &learned)?);
    row.theory_accuracy = Some(map_accuracy_closed_form(spec, &optimal)?);
    if let Some(k) = config.mi_neighbors {
        let est = match config.mi_features {
            MiFeatures::Sufficient => {
                let cloud = SampleCloud::new(sufficient_statistic(spec, &learned, &encoded.x)?)?;
                mi_with_discrete_label(&cloud, &encoded.s, k)?
            }
            MiFeatures::AdversaryEmbedding => {
                embedding_mi(&outcome.adversary, &encoded.x, &encoded.s, k, config.mi_components)?
            }
        };
        row.estimated_mi = Some(est.nats);
    }
    Ok(GmmPoint {
        row,
        learned,
        optimal,
        outcome,
    })
}

/// Trains one encoder per budget on the benchmark mixture with prior `q`.
pub fn gmm_sweep(config: &GmmSweepConfig) -> Result<GmmSweep> {
    gmm_sweep_with(&GaussianMixtureSpec::benchmark(config.q), config)
}

pub fn gmm_sweep_with(spec: &GaussianMixtureSpec, config: &GmmSweepConfig) -> Result<GmmSweep> {
    config.validate()?;
    spec.validate_strict()?;
    let (mut a, mut b) = sample_rngs(config.seed);
    let train_set = sample_labeled(spec, config.train_size, &mut a)?;
    let test_set = sample_labeled(spec, config.test_size, &mut b)?;
    let points: Vec<GmmPoint> = config
        .budgets
        .par_iter()
        .enumerate()
        .map(|(i, &b)| gmm_point(spec, &train_set, &test_set, b, config, &point_rng(config.seed, i)))
        .collect::<Result<_>>()?;
    let curve = TradeoffCurve::new(points.iter().map(|p| p.row.clone()).collect());
    Ok(GmmSweep {
        spec: spec.clone(),
        curve,
        points,
    })
}

/// A population where `Y` depends on `S`, and `X` carries both.
///
/// `S ~ Bernoulli(p_s)`, `Y | S ~ Bernoulli(p_y[S])`, and
/// `X = y_signal·(2Y−1)·a + s_signal·(2S−1)·b + N(0, I)` for fixed unit
/// directions `a`, `b` in `dim ≥ 2` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelatedSpec {
    pub dim: usize,
    pub p_s: f64,
    pub p_y: [f64; 2],
    pub y_signal: f64,
    pub s_signal: f64,
}

impl Default for CorrelatedSpec {
    fn default() -> Self {
        Self {
            dim: 4,
            p_s: 0.5,
            p_y: [0.25, 0.75],
            y_signal: 1.5,
            s_signal: 1.5,
        }
    }
}

impl CorrelatedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("correlated population needs at least two features"));
        }
        let probs = [self.p_s, self.p_y[0], self.p_y[1]];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probabilities must lie in [0, 1]"));
        }
        if !(self.y_signal.is_finite() && self.s_signal.is_finite()) {
            return Err(invalid("signal strengths must be finite"));
        }
        Ok(())
    }

    /// `(a, b)`: `a` is the first axis, `b` splits the second and third.
    fn directions(&self) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.dim];
        let mut b = vec![0.0; self.dim];
        a[0] = 1.0;
        if self.dim >= 3 {
            b[1] = std::f64::consts::FRAC_1_SQRT_2;
            b[2] = std::f64::consts::FRAC_1_SQRT_2;
        } else {
            b[1] = 1.0;
        }
        (a, b)
    }

    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<LabeledDataset> {
        self.validate()?;
        let (a, b) = self.directions();
        let mut x = Matrix::zeros(n, self.dim);
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for r in 0..n {
            let si = rng.bernoulli(self.p_s) as usize;
            let yi = rng.bernoulli(self.p_y[si]) as usize;
            let (ys, ss) = (2.0 * yi as f64 - 1.0, 2.0 * si as f64 - 1.0);
            for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = self.y_signal * ys * a[c] + self.s_signal * ss * b[c] + rng.standard_normal();
            }
            s.push(si);
            y.push(yi);
        }
        LabeledDataset::new(x, s, 2, Some((y, 2)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairSweepConfig {
    pub population: CorrelatedSpec,
    pub budgets: Vec<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub adversary_hidden: Vec<usize>,
    pub downstream_hidden: Vec<usize>,
    pub downstream_epochs: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for FairSweepConfig {
    fn default() -> Self {
        Self {
            population: CorrelatedSpec::default(),
            budgets: vec![0.0, 4.0, 16.0, 64.0, 256.0],
            train_size: 8000,
            test_size: 4000,
            adversary_hidden: vec![8],
            downstream_hidden: vec![8],
            downstream_epochs: 20,
            train: TrainConfig {
                iterations: 1000,
                batch_size: 500,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// Representation-mode sweep on the synthetic population.
pub fn fair_sweep(config: &FairSweepConfig) -> Result<TradeoffCurve> {
    let (mut a, mut b) = sample_rngs(config.seed);
    let train_set = config.population.sample(config.train_size, &mut a)?;
    let test_set = config.population.sample(config.test_size, &mut b)?;
    fair_sweep_on(&train_set, &test_set, config)
}

/// Representation-mode sweep on given data, with downstream accuracy and
/// fairness columns. `population` and the sample sizes are ignored.
pub fn fair_sweep_on(train_set: &LabeledDataset, test_set: &LabeledDataset, config: &FairSweepConfig) -> Result<TradeoffCurve> {
    if config.budgets.is_empty() {
        return Err(invalid("sweep needs at least one budget"));
    }
    config.train.validate()?;
    let rows: Vec<CurveRow> = config
        .budgets
        .par_iter()
        .enumerate()
        .map(|(i, &budget)| fair_point(train_set, test_set, budget, config, &point_rng(config.seed, i)))
        .collect::<Result<_>>()?;
    Ok(TradeoffCurve::new(rows))
}

/// Downstream evaluation of a trained encoder: a fresh classifier of `Y`
/// is fit on the encoded training set and scored on the encoded test set.
pub fn evaluate_downstream(
    budget: f64,
    outcome: &TrainOutcome,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    rng: &RngState,
) -> Result<CurveRow> {
    let fit = FitConfig {
        epochs,
        batch_size,
        adam: AdamConfig::default(),
    };
    let mut eval = eval_rng(rng);
    let enc_train = encode_dataset(&outcome.encoder, train_set, &mut eval)?;
    let enc_test = encode_dataset(&outcome.encoder, test_set, &mut eval)?;
    let report = train_and_eval_downstream(&enc_train, &enc_test, hidden, &fit, &mut rng.derive(DOWNSTREAM_STREAM))?;
    let mut row = CurveRow::new(budget);
    row.distortion = Some(outcome.final_distortion);
    row.adversary_accuracy = Some(adversary_accuracy(&outcome.adversary, &enc_test.x, &enc_test.s)?);
    row.downstream_accuracy = Some(report.accuracy);
    row.max_demp = Some(report.fairness.max_demp);
    row.eo_gaps = report.fairness.eo_gap.clone();
    Ok(row)
}

fn fair_point(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    budget: f64,
    config: &FairSweepConfig,
    rng: &RngState,
) -> Result<CurveRow> {
    let encoder = EncoderModel::affine_for_budget(train_set.dim(), budget);
    let out = train_representation(train_set, encoder, &config.adversary_hidden, &config.train, budget, rng)?;
    evaluate_downstream(
        budget,
        &out,
        train_set,
        test_set,
        &config.downstream_hidden,
        config.downstream_epochs,
        config.train.batch_size,
        rng,
    )
}
