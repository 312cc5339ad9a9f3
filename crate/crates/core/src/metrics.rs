//! Censoring, utility and fairness measurements.
//!
//! For predictions `Ŷ`, sensitive groups `S` and outcomes `Y`:
//!
//! * `Δ_DemP(y) = max_{s,s'} |P(Ŷ=y | S=s) − P(Ŷ=y | S=s')|`
//! * `Δ_EO(y)   = max_{s,s'} |P(Ŷ=y | S=s, Y=y) − P(Ŷ=y | S=s', Y=y)|`
//!
//! Groups (or group-outcome cells) with too few samples are left out of the
//! maximum and listed in the report instead.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{accuracy, fit_classifier, FitConfig, MlpModel, MlpSpec};
use crate::numerics::RngState;

/// Smallest `(S, Y)` cell that takes part in `Δ_EO`.
pub const MIN_EO_CELL_COUNT: usize = 5;
/// Smallest sensitive group that takes part in `Δ_DemP`.
pub const MIN_GROUP_COUNT: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// `Δ_DemP(y)` for every outcome `y`.
    pub demp_gap: Vec<f64>,
    pub max_demp: f64,
    /// `Δ_EO(y)`; `None` for outcomes with fewer than two usable groups.
    pub eo_gap: Option<Vec<Option<f64>>>,
    /// `P(Ŷ = y | S = s)` indexed `[s][y]`; `None` for excluded groups.
    pub group_rates: Vec<Option<Vec<f64>>>,
    pub excluded_groups: Vec<usize>,
    /// `(s, y)` cells left out of `Δ_EO`.
    pub excluded_eo_cells: Vec<(usize, usize)>,
}

impl FairnessReport {
    /// Human-readable notes about excluded groups and cells.
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .excluded_groups
            .iter()
            .map(|s| format!("sensitive group {s} has too few samples and was excluded"))
            .collect();
        out.extend(self.excluded_eo_cells.iter().map(|(s, y)| {
            format!("cell (group {s}, outcome {y}) has fewer than {MIN_EO_CELL_COUNT} samples and was excluded")
        }));
        out
    }
}

fn check_labels(values: &[usize], classes: usize, what: &str) -> Result<()> {
    if classes == 0 {
        return Err(invalid(format!("{what} needs at least one class")));
    }
    match values.iter().find(|&&v| v >= classes) {
        Some(v) => Err(invalid(format!("{what} label {v} outside 0..{classes}"))),
        None => Ok(()),
    }
}

fn spread<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        count += 1;
    }
    (count >= 2).then_some(hi - lo)
}

/// Demographic-parity gaps of `predictions` across sensitive groups.
/// Groups with fewer than `min_group` samples are excluded; at least two
/// groups must remain.
pub fn demographic_parity_gap(
    predictions: &[usize],
    sensitive: &[usize],
    outcomes: usize,
    groups: usize,
    min_group: usize,
) -> Result<FairnessReport> {
    if predictions.len() != sensitive.len() {
        return Err(Error::Dimension {
            context: "demographic parity labels",
            expected: predictions.len(),
            got: sensitive.len(),
        });
    }
    check_labels(predictions, outcomes, "prediction")?;
    check_labels(sensitive, groups, "sensitive")?;
    let mut counts = vec![vec![0usize; outcomes]; groups];
    for (&p, &s) in predictions.iter().zip(sensitive) {
        counts[s][p] += 1;
    }
    let min_group = min_group.max(1);
    let mut excluded = Vec::new();
    let rates: Vec<Option<Vec<f64>>> = counts
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let n: usize = row.iter().sum();
            if n < min_group {
                excluded.push(s);
                None
            } else {
                Some(row.iter().map(|&c| c as f64 / n as f64).collect())
            }
        })
        .collect();
    let used: Vec<&Vec<f64>> = rates.iter().flatten().collect();
    if used.len() < 2 {
        return Err(invalid("demographic parity needs at least two non-empty sensitive groups"));
    }
    let demp_gap: Vec<f64> = (0..outcomes)
        .map(|y| spread(used.iter().map(|r| &r[y])).unwrap_or(0.0))
        .collect();
    let max_demp = demp_gap.iter().copied().fold(0.0, f64::max);
    Ok(FairnessReport {
        demp_gap,
        max_demp,
        eo_gap: None,
        group_rates: rates,
        excluded_groups: excluded,
        excluded_eo_cells: Vec::new(),
    })
}

/// Equalized-odds gaps of `predictions` against `truth`, per outcome.
/// Returns the gaps and the `(s, y)` cells below `min_cell`.
pub fn equalized_odds_gap(
    predictions: &[usize],
    truth: &[usize],
    sensitive: &[usize],
    outcomes: usize,
    groups: usize,
    min_cell: usize,
) -> Result<(Vec<Option<f64>>, Vec<(usize, usize)>)> {
    if predictions.len() != truth.len() || truth.len() != sensitive.len() {
        return Err(Error::Dimension {
            context: "equalized odds labels",
            expected: predictions.len(),
            got: truth.len().min(sensitive.len()),
        });
    }
    check_labels(predictions, outcomes, "prediction")?;
    check_labels(truth, outcomes, "target")?;
    check_labels(sensitive, groups, "sensitive")?;
    // [s][y] -> (cell size, correct predictions)
    let mut cells = vec![vec![(0usize, 0usize); outcomes]; groups];
    for ((&p, &y), &s) in predictions.iter().zip(truth).zip(sensitive) {
        cells[s][y].0 += 1;
        if p == y {
            cells[s][y].1 += 1;
        }
    }
    let min_cell = min_cell.max(1);
    let mut excluded = Vec::new();
    let mut gaps = Vec::with_capacity(outcomes);
    for y in 0..outcomes {
        let mut rates = Vec::new();
        for (s, row) in cells.iter().enumerate() {
            let (n, correct) = row[y];
            if n < min_cell {
                excluded.push((s, y));
            } else {
                rates.push(correct as f64 / n as f64);
            }
        }
        gaps.push(spread(rates.iter()));
    }
    excluded.sort_unstable();
    Ok((gaps, excluded))
}

/// Demographic-parity report, extended with equalized odds when `truth` is given.
pub fn fairness_report(
    predictions: &[usize],
    sensitive: &[usize],
    truth: Option<&[usize]>,
    outcomes: usize,
    groups: usize,
) -> Result<FairnessReport> {
    let mut report = demographic_parity_gap(predictions, sensitive, outcomes, groups, MIN_GROUP_COUNT)?;
    if let Some(y) = truth {
        let (gaps, excluded) = equalized_odds_gap(predictions, y, sensitive, outcomes, groups, MIN_EO_CELL_COUNT)?;
        report.eo_gap = Some(gaps);
        report.excluded_eo_cells = excluded;
    }
    Ok(report)
}

/// Top-1 accuracy of `classifier` at recovering `s` from encoded features.
pub fn adversary_accuracy(classifier: &MlpModel, encoded: &Matrix, s: &[usize]) -> Result<f64> {
    accuracy(classifier, encoded, s)
}

/// Frequency of the most common label.
pub fn majority_rate(labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    check_labels(labels, classes, "label")?;
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(*counts.iter().max().expect("classes > 0") as f64 / labels.len() as f64)
}

#[derive(Debug, Clone)]
pub struct DownstreamReport {
    pub accuracy: f64,
    pub fairness: FairnessReport,
    pub model: MlpModel,
}

/// Fits a fresh classifier of `Y` on encoded training data and evaluates
/// accuracy and fairness on encoded test data.
pub fn train_and_eval_downstream(
    train: &LabeledDataset,
    test: &LabeledDataset,
    hidden: &[usize],
    fit: &FitConfig,
    rng: &mut RngState,
) -> Result<DownstreamReport> {
    let y_train = train.require_y()?;
    let y_test = test.require_y()?;
    if test.is_empty() {
        return Err(Error::Empty("downstream test set"));
    }
    if train.dim() != test.dim() || train.y_classes != test.y_classes || train.s_classes != test.s_classes {
        return Err(invalid("downstream train and test sets disagree on shape or alphabets"));
    }
    let spec = MlpSpec::classifier(train.dim(), hidden, train.y_classes);
    let mut model = MlpModel::new(&spec, rng)?;
    fit_classifier(&mut model, &train.x, y_train, fit, rng)?;
    let pred = model.predict_labels(&test.x)?;
    let correct = pred.iter().zip(y_test).filter(|(a, b)| a == b).count();
    let fairness = fairness_report(&pred, &test.s, Some(y_test), test.y_classes, test.s_classes)?;
    Ok(DownstreamReport {
        accuracy: correct as f64 / test.len() as f64,
        fairness,
        model,
    })
}
