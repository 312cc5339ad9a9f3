//! Labeled datasets `(S, X, Y)`, stratified splits, and the CSV-plus-sidecar
//! storage format.
//!
//! A dataset file `data.csv` holds the feature columns followed by `s` and,
//! when present, `y`. Its metadata lives next to it in `data.csv.meta.json`.

mod tabular;

pub use tabular::{load_tabular_csv, load_tabular_split, ColumnRole, RawTable, TabularEncoder, TabularSchema};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::numerics::RngState;

pub const DATASET_FORMAT_TAG: &str = "cfur-dataset";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotGroup {
    pub column: String,
    /// First feature index of the group.
    pub start: usize,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousColumn {
    pub column: String,
    pub index: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub one_hot_groups: Vec<OneHotGroup>,
    #[serde(default)]
    pub continuous: Vec<ContinuousColumn>,
    #[serde(default)]
    pub sensitive_columns: Vec<String>,
    /// Name of every sensitive label value, indexed by label.
    #[serde(default)]
    pub sensitive_levels: Vec<String>,
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default)]
    pub target_levels: Vec<String>,
    /// Test-time values that fell outside the training range and were clamped.
    #[serde(default)]
    pub clamped_values: usize,
}

impl DatasetMetadata {
    /// Generic names `x0, x1, ...` for unnamed numeric features.
    pub fn numeric(dim: usize) -> Self {
        Self {
            feature_names: (0..dim).map(|i| format!("x{i}")).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub s: Vec<usize>,
    pub s_classes: usize,
    pub y: Option<Vec<usize>>,
    pub y_classes: usize,
    pub metadata: DatasetMetadata,
}

fn check_labels(labels: &[usize], classes: usize, what: &str) -> Result<()> {
    if classes == 0 {
        return Err(invalid(format!("{what} alphabet must be non-empty")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("{what} label {bad} outside alphabet of size {classes}")));
    }
    Ok(())
}

impl LabeledDataset {
    pub fn new(x: Matrix, s: Vec<usize>, s_classes: usize, y: Option<(Vec<usize>, usize)>) -> Result<Self> {
        let metadata = DatasetMetadata::numeric(x.cols());
        Self::with_metadata(x, s, s_classes, y, metadata)
    }

    pub fn with_metadata(
        x: Matrix,
        s: Vec<usize>,
        s_classes: usize,
        y: Option<(Vec<usize>, usize)>,
        metadata: DatasetMetadata,
    ) -> Result<Self> {
        if s.len() != x.rows() {
            return Err(Error::Dimension {
                context: "sensitive labels",
                expected: x.rows(),
                got: s.len(),
            });
        }
        check_labels(&s, s_classes, "sensitive")?;
        let (y, y_classes) = match y {
            Some((y, k)) => {
                if y.len() != x.rows() {
                    return Err(Error::Dimension {
                        context: "target labels",
                        expected: x.rows(),
                        got: y.len(),
                    });
                }
                check_labels(&y, k, "target")?;
                (Some(y), k)
            }
            None => (None, 0),
        };
        if metadata.feature_names.len() != x.cols() {
            return Err(Error::Dimension {
                context: "feature names",
                expected: x.cols(),
                got: metadata.feature_names.len(),
            });
        }
        if !x.is_finite() {
            return Err(Error::Domain("dataset features must be finite".into()));
        }
        Ok(Self {
            x,
            s,
            s_classes,
            y,
            y_classes,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn require_y(&self) -> Result<&[usize]> {
        self.y
            .as_deref()
            .ok_or_else(|| invalid("this operation needs target labels Y, but the dataset has none"))
    }

    /// Rows `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select_rows(indices),
            s: indices.iter().map(|&i| self.s[i]).collect(),
            s_classes: self.s_classes,
            y: self.y.as_ref().map(|y| indices.iter().map(|&i| y[i]).collect()),
            y_classes: self.y_classes,
            metadata: self.metadata.clone(),
        }
    }

    /// Same labels with replacement features (e.g. an encoded representation).
    pub fn with_features(&self, x: Matrix) -> Result<LabeledDataset> {
        if x.rows() != self.len() {
            return Err(Error::Dimension {
                context: "replacement features",
                expected: self.len(),
                got: x.rows(),
            });
        }
        let mut metadata = self.metadata.clone();
        if x.cols() != self.dim() {
            metadata = DatasetMetadata {
                sensitive_columns: metadata.sensitive_columns,
                sensitive_levels: metadata.sensitive_levels,
                target_column: metadata.target_column,
                target_levels: metadata.target_levels,
                ..DatasetMetadata::numeric(x.cols())
            };
        }
        Self::with_metadata(x, self.s.clone(), self.s_classes, self.y.clone().map(|y| (y, self.y_classes)), metadata)
    }

    /// Empirical `P(S = s)`.
    pub fn s_prior(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.s_classes];
        for &s in &self.s {
            counts[s] += 1.0;
        }
        let n = self.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

/// Stratified train/test split.
///
/// Each sensitive group contributes `n_g · fraction` test rows, rounded by
/// largest remainder so the total is `round(n · fraction)`. Both sides keep
/// the original row order.
pub fn split(dataset: &LabeledDataset, test_fraction: f64, rng: &mut RngState) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = stratified_indices(&dataset.s, dataset.s_classes, test_fraction, rng)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}

pub(crate) fn stratified_indices(
    labels: &[usize],
    classes: usize,
    test_fraction: f64,
    rng: &mut RngState,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = labels.len();
    let target = (n as f64 * test_fraction).round() as usize;
    if target == 0 || target == n {
        return Err(invalid(format!(
            "test fraction {test_fraction} on {n} rows leaves one side empty"
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &s) in labels.iter().enumerate() {
        groups[s].push(i);
    }
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * test_fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = target.saturating_sub(take.iter().sum());
    let mut order: Vec<usize> = (0..classes).collect();
    // largest fractional part first; ties by group index
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &g in &order {
        if remaining == 0 {
            break;
        }
        if take[g] < groups[g].len() {
            take[g] += 1;
            remaining -= 1;
        }
    }
    let mut test = Vec::with_capacity(target);
    let mut train = Vec::with_capacity(n - target);
    for (g, members) in groups.iter_mut().enumerate() {
        rng.shuffle(members);
        test.extend_from_slice(&members[..take[g]]);
        train.extend_from_slice(&members[take[g]..]);
    }
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    rows: usize,
    s_classes: usize,
    y_classes: Option<usize>,
    metadata: DatasetMetadata,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = dataset.metadata.feature_names.clone();
    header.push("s".into());
    if dataset.y.is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for r in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.x.row(r).iter().map(|v| format!("{v:e}")).collect();
        rec.push(dataset.s[r].to_string());
        if let Some(y) = &dataset.y {
            rec.push(y[r].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        format: DATASET_FORMAT_TAG.into(),
        version: DATASET_FORMAT_VERSION,
        rows: dataset.len(),
        s_classes: dataset.s_classes,
        y_classes: dataset.y.as_ref().map(|_| dataset.y_classes),
        metadata: dataset.metadata.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::Format(format!("cannot read metadata sidecar {}: {e}", meta_path.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.format != DATASET_FORMAT_TAG {
        return Err(Error::Format(format!("sidecar format {:?} is not {DATASET_FORMAT_TAG}", sidecar.format)));
    }
    if sidecar.version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: sidecar.version.to_string(),
            expected: DATASET_FORMAT_VERSION.to_string(),
        });
    }
    let dim = sidecar.metadata.feature_names.len();
    let has_y = sidecar.y_classes.is_some();
    let mut reader = csv::Reader::from_path(path)?;
    let expected_cols = dim + 1 + usize::from(has_y);
    let headers = reader.headers()?.clone();
    if headers.len() != expected_cols {
        return Err(Error::Dimension {
            context: "dataset csv columns",
            expected: expected_cols,
            got: headers.len(),
        });
    }
    let mut data = Vec::with_capacity(sidecar.rows * dim);
    let mut s = Vec::with_capacity(sidecar.rows);
    let mut y = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<&str> { rec.get(c).ok_or_else(|| Error::Format(format!("row {row} is short"))) };
        for c in 0..dim {
            let v = cell(c)?;
            data.push(v.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: headers[c].to_string(),
                value: v.to_string(),
            })?);
        }
        let parse_label = |c: usize| -> Result<usize> {
            let v = cell(c)?;
            v.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[c].to_string(),
                value: v.to_string(),
            })
        };
        s.push(parse_label(dim)?);
        if has_y {
            y.push(parse_label(dim + 1)?);
        }
    }
    if s.len() != sidecar.rows {
        return Err(Error::Format(format!("sidecar says {} rows, csv has {}", sidecar.rows, s.len())));
    }
    let x = Matrix::from_vec(s.len(), dim, data)?;
    let y = sidecar.y_classes.map(|k| (y, k));
    LabeledDataset::with_metadata(x, s, sidecar.s_classes, y, sidecar.metadata)
}
