//! Tradeoff curves: one row per distortion budget, written as CSV.
//!
//! Columns (optional ones appear only when some row carries them):
//!
//! | column | meaning |
//! |---|---|
//! | `d` | distortion budget |
//! | `distortion` | distortion actually spent (training set or theory) |
//! | `adversary_accuracy` | held-out accuracy of the learned adversary |
//! | `map_oracle_accuracy` | closed-form MAP accuracy of the learned mechanism |
//! | `theory_accuracy` | MAP accuracy of the optimal mechanism |
//! | `downstream_accuracy` | held-out accuracy of a fresh target classifier |
//! | `max_demp` | largest demographic-parity gap over outcomes |
//! | `eo_gap_<y>` | equalized-odds gap of outcome `y` (empty when excluded) |
//! | `estimated_mi` | k-NN estimate of `I(X_r; S)` in nats |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub d: f64,
    pub distortion: Option<f64>,
    pub adversary_accuracy: Option<f64>,
    pub map_oracle_accuracy: Option<f64>,
    pub theory_accuracy: Option<f64>,
    pub downstream_accuracy: Option<f64>,
    pub max_demp: Option<f64>,
    pub eo_gaps: Option<Vec<Option<f64>>>,
    pub estimated_mi: Option<f64>,
}

impl CurveRow {
    pub fn new(d: f64) -> Self {
        Self {
            d,
            distortion: None,
            adversary_accuracy: None,
            map_oracle_accuracy: None,
            theory_accuracy: None,
            downstream_accuracy: None,
            max_demp: None,
            eo_gaps: None,
            estimated_mi: None,
        }
    }

    fn scalars(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("distortion", self.distortion),
            ("adversary_accuracy", self.adversary_accuracy),
            ("map_oracle_accuracy", self.map_oracle_accuracy),
            ("theory_accuracy", self.theory_accuracy),
            ("downstream_accuracy", self.downstream_accuracy),
            ("max_demp", self.max_demp),
            ("estimated_mi", self.estimated_mi),
        ]
    }

    fn set_scalar(&mut self, name: &str, v: Option<f64>) -> bool {
        let slot = match name {
            "distortion" => &mut self.distortion,
            "adversary_accuracy" => &mut self.adversary_accuracy,
            "map_oracle_accuracy" => &mut self.map_oracle_accuracy,
            "theory_accuracy" => &mut self.theory_accuracy,
            "downstream_accuracy" => &mut self.downstream_accuracy,
            "max_demp" => &mut self.max_demp,
            "estimated_mi" => &mut self.estimated_mi,
            _ => return false,
        };
        *slot = v;
        true
    }
}

/// Rows kept sorted by ascending `d` (stable for equal budgets).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    rows: Vec<CurveRow>,
}

impl TradeoffCurve {
    pub fn new(mut rows: Vec<CurveRow>) -> Self {
        rows.sort_by(|a, b| a.d.total_cmp(&b.d));
        Self { rows }
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [CurveRow] {
        &mut self.rows
    }

    pub fn push(&mut self, row: CurveRow) {
        let at = self.rows.partition_point(|r| r.d.total_cmp(&row.d).is_le());
        self.rows.insert(at, row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column values, `None` where a row lacks the column.
    pub fn column(&self, name: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| {
                if name == "d" {
                    return Some(r.d);
                }
                r.scalars().iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v)
            })
            .collect()
    }

    fn header(&self) -> (Vec<&'static str>, usize) {
        let mut names = vec!["d"];
        let template = CurveRow::new(0.0);
        for (i, (name, _)) in template.scalars().iter().enumerate() {
            if self.rows.iter().any(|r| r.scalars()[i].1.is_some()) {
                names.push(name);
            }
        }
        let eo = self.rows.iter().filter_map(|r| r.eo_gaps.as_ref().map(Vec::len)).max().unwrap_or(0);
        (names, eo)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_into(&mut w)?;
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    fn write_into<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let (names, eo) = self.header();
        let mut header: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        header.extend((0..eo).map(|y| format!("eo_gap_{y}")));
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.d.to_string()];
            for name in &names[1..] {
                rec.push(fmt(r.scalars().iter().find(|(n, _)| n == name).and_then(|(_, v)| *v)));
            }
            for y in 0..eo {
                rec.push(fmt(r.eo_gaps.as_ref().and_then(|g| g.get(y).copied().flatten())));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_into(&mut w)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers.first().map(String::as_str) != Some("d") {
            return Err(Error::Format("tradeoff curve csv must start with a `d` column".into()));
        }
        let eo_count = headers.iter().filter(|h| h.starts_with("eo_gap_")).count();
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<Option<f64>> {
                let cell = rec.get(c).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| Error::NonNumeric {
                    row: line,
                    column: headers[c].clone(),
                    value: cell.to_string(),
                })
            };
            let d = parse(0)?.ok_or_else(|| Error::Format(format!("row {line} has no budget")))?;
            let mut row = CurveRow::new(d);
            let mut eo = vec![None; eo_count];
            for (c, name) in headers.iter().enumerate().skip(1) {
                let v = parse(c)?;
                if let Some(y) = name.strip_prefix("eo_gap_") {
                    let y: usize = y.parse().map_err(|_| Error::Format(format!("bad column {name:?}")))?;
                    if y < eo_count {
                        eo[y] = v;
                    }
                } else if !row.set_scalar(name, v) {
                    return Err(Error::Format(format!("unknown curve column {name:?}")));
                }
            }
            if eo_count > 0 {
                row.eo_gaps = Some(eo);
            }
            rows.push(row);
        }
        Ok(Self::new(rows))
    }
}
