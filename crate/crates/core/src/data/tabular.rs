//! Tabular CSV ingestion: one-hot categorical columns, min-max continuous
//! columns, and product-alphabet sensitive labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{stratified_indices, ContinuousColumn, DatasetMetadata, LabeledDataset, OneHotGroup};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::numerics::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnRole {
    Sensitive,
    Target,
    Categorical,
    Continuous,
    Drop,
}

/// Role of every CSV column, keyed by header name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabularSchema {
    pub columns: BTreeMap<String, ColumnRole>,
}

impl TabularSchema {
    pub fn new<'a>(roles: impl IntoIterator<Item = (&'a str, ColumnRole)>) -> Self {
        Self {
            columns: roles.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Header plus trimmed string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("column {name:?} missing from csv")))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FeaturePlan {
    OneHot { column: String, levels: Vec<String> },
    Continuous { column: String, min: f64, max: f64 },
}

/// Category maps and normalization ranges fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEncoder {
    features: Vec<FeaturePlan>,
    sensitive: Vec<(String, Vec<String>)>,
    target: Option<(String, Vec<String>)>,
}

fn parse_number(v: &str, row: usize, column: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::NonNumeric {
            row,
            column: column.to_string(),
            value: v.to_string(),
        })
}

fn sorted_levels(table: &RawTable, col: usize, rows: &[usize]) -> Vec<String> {
    let mut levels: Vec<String> = rows.iter().map(|&r| table.rows[r][col].clone()).collect();
    levels.sort();
    levels.dedup();
    levels
}

fn level_index(levels: &[String], column: &str, value: &str) -> Result<usize> {
    levels
        .binary_search_by(|l| l.as_str().cmp(value))
        .map_err(|_| Error::UnknownCategory {
            column: column.to_string(),
            value: value.to_string(),
        })
}

impl TabularEncoder {
    /// Fits category levels on all rows of `table` and continuous ranges on
    /// `training_rows`.
    pub fn fit(table: &RawTable, schema: &TabularSchema, training_rows: &[usize]) -> Result<Self> {
        for h in &table.headers {
            if !schema.columns.contains_key(h) {
                return Err(invalid(format!("schema has no role for column {h:?}")));
            }
        }
        for name in schema.columns.keys() {
            table.column(name)?;
        }
        if training_rows.is_empty() {
            return Err(Error::Empty("tabular training rows"));
        }
        let all_rows: Vec<usize> = (0..table.rows.len()).collect();
        let mut features = Vec::new();
        let mut sensitive = Vec::new();
        let mut target = None;
        for (c, name) in table.headers.iter().enumerate() {
            match schema.columns[name] {
                ColumnRole::Drop => {}
                ColumnRole::Categorical => features.push(FeaturePlan::OneHot {
                    column: name.clone(),
                    levels: sorted_levels(table, c, &all_rows),
                }),
                ColumnRole::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for &r in training_rows {
                        let v = parse_number(&table.rows[r][c], r, name)?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    features.push(FeaturePlan::Continuous {
                        column: name.clone(),
                        min,
                        max,
                    });
                }
                ColumnRole::Sensitive => sensitive.push((name.clone(), sorted_levels(table, c, &all_rows))),
                ColumnRole::Target => {
                    if target.is_some() {
                        return Err(invalid("schema names more than one target column"));
                    }
                    target = Some((name.clone(), sorted_levels(table, c, &all_rows)));
                }
            }
        }
        if sensitive.is_empty() {
            return Err(invalid("schema needs at least one sensitive column"));
        }
        if features.is_empty() {
            return Err(invalid("schema has no feature columns"));
        }
        Ok(Self {
            features,
            sensitive,
            target,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                FeaturePlan::OneHot { levels, .. } => levels.len(),
                FeaturePlan::Continuous { .. } => 1,
            })
            .sum()
    }

    /// Size of the product sensitive alphabet.
    pub fn sensitive_classes(&self) -> usize {
        self.sensitive.iter().map(|(_, l)| l.len()).product()
    }

    fn sensitive_level_names(&self) -> Vec<String> {
        let mut names = vec![String::new()];
        for (_, levels) in &self.sensitive {
            names = names
                .iter()
                .flat_map(|prefix| {
                    levels.iter().map(move |l| if prefix.is_empty() { l.clone() } else { format!("{prefix}|{l}") })
                })
                .collect();
        }
        names
    }

    /// Product sensitive label of one row (first sensitive column most significant).
    fn sensitive_label(&self, table: &RawTable, row: usize) -> Result<usize> {
        let mut label = 0;
        for (name, levels) in &self.sensitive {
            let c = table.column(name)?;
            label = label * levels.len() + level_index(levels, name, &table.rows[row][c])?;
        }
        Ok(label)
    }

    fn metadata(&self) -> DatasetMetadata {
        let mut meta = DatasetMetadata::default();
        for f in &self.features {
            match f {
                FeaturePlan::OneHot { column, levels } => {
                    meta.one_hot_groups.push(OneHotGroup {
                        column: column.clone(),
                        start: meta.feature_names.len(),
                        levels: levels.clone(),
                    });
                    meta.feature_names.extend(levels.iter().map(|l| format!("{column}={l}")));
                }
                FeaturePlan::Continuous { column, min, max } => {
                    meta.continuous.push(ContinuousColumn {
                        column: column.clone(),
                        index: meta.feature_names.len(),
                        min: *min,
                        max: *max,
                    });
                    meta.feature_names.push(column.clone());
                }
            }
        }
        meta.sensitive_columns = self.sensitive.iter().map(|(n, _)| n.clone()).collect();
        meta.sensitive_levels = self.sensitive_level_names();
        if let Some((name, levels)) = &self.target {
            meta.target_column = Some(name.clone());
            meta.target_levels = levels.clone();
        }
        meta
    }

    /// Encodes `rows` of `table`. Continuous values outside the fitted range
    /// are clamped to `[0, 1]` and counted in the metadata.
    pub fn transform_rows(&self, table: &RawTable, rows: &[usize]) -> Result<LabeledDataset> {
        let dim = self.feature_dim();
        let mut meta = self.metadata();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut s = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        let mut clamped = 0;
        let feature_cols: Vec<usize> = self
            .features
            .iter()
            .map(|f| match f {
                FeaturePlan::OneHot { column, .. } | FeaturePlan::Continuous { column, .. } => table.column(column),
            })
            .collect::<Result<_>>()?;
        let target_col = match &self.target {
            Some((name, _)) => Some(table.column(name)?),
            None => None,
        };
        for &r in rows {
            let cells = &table.rows[r];
            for (f, &c) in self.features.iter().zip(&feature_cols) {
                match f {
                    FeaturePlan::OneHot { column, levels } => {
                        let k = level_index(levels, column, &cells[c])?;
                        data.extend((0..levels.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
                    }
                    FeaturePlan::Continuous { column, min, max } => {
                        let v = parse_number(&cells[c], r, column)?;
                        let range = max - min;
                        let mut z = if range > 0.0 { (v - min) / range } else { 0.0 };
                        if !(0.0..=1.0).contains(&z) {
                            clamped += 1;
                            z = z.clamp(0.0, 1.0);
                        }
                        data.push(z);
                    }
                }
            }
            s.push(self.sensitive_label(table, r)?);
            if let (Some(c), Some((name, levels))) = (target_col, &self.target) {
                y.push(level_index(levels, name, &cells[c])?);
            }
        }
        meta.clamped_values = clamped;
        let x = Matrix::from_vec(rows.len(), dim, data)?;
        let y = self.target.as_ref().map(|(_, levels)| (y, levels.len()));
        LabeledDataset::with_metadata(x, s, self.sensitive_classes(), y, meta)
    }

    pub fn transform(&self, table: &RawTable) -> Result<LabeledDataset> {
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        self.transform_rows(table, &rows)
    }
}

/// Reads and encodes a CSV, fitting every statistic on the whole file.
pub fn load_tabular_csv(path: &Path, schema: &TabularSchema) -> Result<(LabeledDataset, TabularEncoder)> {
    let table = RawTable::read(path)?;
    let rows: Vec<usize> = (0..table.rows.len()).collect();
    let encoder = TabularEncoder::fit(&table, schema, &rows)?;
    let dataset = encoder.transform(&table)?;
    Ok((dataset, encoder))
}

/// Reads a CSV, splits it stratified by the sensitive label, and encodes both
/// sides with normalization ranges taken from the training side only.
pub fn load_tabular_split(
    path: &Path,
    schema: &TabularSchema,
    test_fraction: f64,
    rng: &mut RngState,
) -> Result<(LabeledDataset, LabeledDataset, TabularEncoder)> {
    let table = RawTable::read(path)?;
    let all: Vec<usize> = (0..table.rows.len()).collect();
    // category levels do not depend on the split, so a provisional fit gives the labels
    let provisional = TabularEncoder::fit(&table, schema, &all)?;
    let labels = all
        .iter()
        .map(|&r| provisional.sensitive_label(&table, r))
        .collect::<Result<Vec<_>>>()?;
    let (train_rows, test_rows) = stratified_indices(&labels, provisional.sensitive_classes(), test_fraction, rng)?;
    let encoder = TabularEncoder::fit(&table, schema, &train_rows)?;
    let train = encoder.transform_rows(&table, &train_rows)?;
    let test = encoder.transform_rows(&table, &test_rows)?;
    Ok((train, test, encoder))
}
