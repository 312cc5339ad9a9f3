use serde::{Deserialize, Serialize};

use super::{adam_step, cross_entropy_logits, AdamConfig, AdamState, Head, MlpModel};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::numerics::RngState;

/// Plain supervised minibatch training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 1000,
            adam: AdamConfig::default(),
        }
    }
}

/// Fits a softmax classifier by minibatch cross-entropy with Adam.
/// Returns the mean training loss of the last epoch.
pub fn fit_classifier(
    model: &mut MlpModel,
    x: &Matrix,
    labels: &[usize],
    config: &FitConfig,
    rng: &mut RngState,
) -> Result<f64> {
    if model.head != Head::SoftmaxLogits {
        return Err(invalid("fit_classifier needs a softmax-logits head"));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(invalid("epochs and batch size must be positive"));
    }
    config.adam.validate()?;
    let n = x.rows();
    let batch = config.batch_size.min(n);
    let mut state = AdamState::for_model(config.adam, model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = f64::NAN;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = model.forward(&xb, true)?;
            let (loss, grad) = cross_entropy_logits(cache.output(), &yb)?;
            let grads = model.parameter_gradients(&cache, &grad)?;
            model.commit_batch_statistics(&cache);
            adam_step(model, &grads, &mut state)?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        last = total / seen as f64;
    }
    Ok(last)
}

/// Top-1 accuracy of `model` against `labels`.
pub fn accuracy(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    if labels.len() != x.rows() {
        return Err(Error::Dimension {
            context: "accuracy labels",
            expected: x.rows(),
            got: labels.len(),
        });
    }
    let pred = model.predict_labels(x)?;
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}
