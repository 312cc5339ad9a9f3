//! Nonparametric entropy and mutual-information estimates.
//!
//! The Kozachenko–Leonenko estimator
//!
//! `Ĥ = ψ(N) − ψ(k) + ln c_d + (d/N) Σ ln r_i`
//!
//! uses the Euclidean distance `r_i` from each sample to its `k`-th nearest
//! neighbour and the volume `c_d` of the unit `d`-ball. Mutual information
//! with a discrete label is `Ĥ(X) − Σ_s p̂(s) Ĥ(X | S = s)`.
//!
//! Neighbour search is exact: points are sorted on their first coordinate
//! and each query scans outward until that coordinate alone rules out any
//! closer point. Queries run in parallel; results are summed in a fixed
//! order, so estimates do not depend on the worker count.
//!
//! For learned classifiers, estimate on a low-dimensional embedding: take
//! [`MlpModel::penultimate_features`], optionally reduce with
//! [`pca_project`], then call [`mi_with_discrete_label`]
//! ([`embedding_mi`] does exactly this).

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::MlpModel;
use crate::numerics::{digamma, log_unit_ball_volume, RngState};

pub const DEFAULT_NEIGHBORS: usize = 4;

/// Relative size of the perturbation that separates duplicate points.
pub const DUPLICATE_JITTER: f64 = 1e-10;

/// `n` points in `d` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    points: Matrix,
}

impl SampleCloud {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.cols() == 0 {
            return Err(invalid("sample cloud needs at least one dimension"));
        }
        if !points.is_finite() {
            return Err(Error::Domain("sample cloud contains non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(Matrix::column_vector(values))
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    fn subset(&self, rows: &[usize]) -> SampleCloud {
        SampleCloud {
            points: self.points.select_rows(rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub nats: f64,
    /// Points perturbed because they coincided with an earlier point.
    pub jittered: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance to the `k`-th nearest other point, for every point.
/// `order` sorts the points by first coordinate.
fn kth_neighbor_sq_distances(points: &Matrix, k: usize) -> Vec<f64> {
    let n = points.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points.get(a, 0).total_cmp(&points.get(b, 0)).then(a.cmp(&b)));
    let first: Vec<f64> = order.iter().map(|&i| points.get(i, 0)).collect();
    let mut out = vec![0.0; n];
    let found: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|pos| {
            let q = points.row(order[pos]);
            // k smallest squared distances, kept sorted ascending
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let push = |d: f64, best: &mut Vec<f64>| {
                if best.len() < k || d < best[k - 1] {
                    let at = best.partition_point(|&v| v <= d);
                    best.insert(at, d);
                    best.truncate(k);
                }
            };
            let (mut lo, mut hi) = (pos, pos + 1);
            let x0 = first[pos];
            loop {
                let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
                let left = (lo > 0).then(|| (x0 - first[lo - 1]).powi(2)).filter(|&g| g <= bound);
                let right = (hi < n).then(|| (first[hi] - x0).powi(2)).filter(|&g| g <= bound);
                match (left, right) {
                    (None, None) => break,
                    (Some(l), Some(r)) if l <= r => {
                        lo -= 1;
                        push(sq_dist(q, points.row(order[lo])), &mut best);
                    }
                    (Some(_), None) => {
                        lo -= 1;
                        push(sq_dist(q, points.row(order[lo])), &mut best);
                    }
                    _ => {
                        push(sq_dist(q, points.row(order[hi])), &mut best);
                        hi += 1;
                    }
                }
            }
            (order[pos], best[k - 1])
        })
        .collect();
    for (i, d) in found {
        out[i] = d;
    }
    out
}

/// Perturbs every point that exactly repeats an earlier one. The shift is a
/// fixed pseudo-random direction scaled to `DUPLICATE_JITTER` times the
/// coordinate magnitude, so the result is deterministic.
fn separate_duplicates(points: &Matrix) -> (Matrix, usize) {
    let n = points.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| {
        for (x, y) in points.row(*a).iter().zip(points.row(*b)) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        a.cmp(b)
    };
    order.sort_by(cmp);
    let mut out = points.clone();
    let mut jittered = 0;
    let mut rng = RngState::new(0x6a17_7e4d);
    for w in 1..n {
        if points.row(order[w]) == points.row(order[w - 1]) {
            jittered += 1;
            let row = out.row_mut(order[w]);
            for v in row.iter_mut() {
                let scale = DUPLICATE_JITTER * v.abs().max(1.0);
                *v += scale * (2.0 * rng.uniform() - 1.0) * (jittered as f64).sqrt();
            }
        }
    }
    (out, jittered)
}

/// Kozachenko–Leonenko differential entropy in nats, with duplicate count.
pub fn knn_entropy_report(cloud: &SampleCloud, k: usize) -> Result<EntropyEstimate> {
    if k == 0 {
        return Err(invalid("neighbour order k must be at least 1"));
    }
    let n = cloud.n();
    if n <= k {
        return Err(invalid(format!("k-NN entropy with k = {k} needs more than {k} points, got {n}")));
    }
    let (points, jittered) = separate_duplicates(&cloud.points);
    let d = cloud.d();
    let r2 = kth_neighbor_sq_distances(&points, k);
    let sum_log_r: f64 = r2.iter().map(|v| 0.5 * v.ln()).sum();
    let nats = digamma(n as f64)? - digamma(k as f64)? + log_unit_ball_volume(d)? + d as f64 * sum_log_r / n as f64;
    if !nats.is_finite() {
        return Err(Error::Domain("entropy estimate is not finite".into()));
    }
    Ok(EntropyEstimate { nats, jittered })
}

pub fn knn_entropy(cloud: &SampleCloud, k: usize) -> Result<f64> {
    Ok(knn_entropy_report(cloud, k)?.nats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// `Ĥ(X) − Σ p̂(s) Ĥ(X | s)`, possibly slightly negative.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub nats: f64,
    pub jittered: usize,
}

/// Mutual information between a cloud and a discrete label.
pub fn mi_with_discrete_label(cloud: &SampleCloud, labels: &[usize], k: usize) -> Result<MiEstimate> {
    if labels.len() != cloud.n() {
        return Err(Error::Dimension {
            context: "mutual information labels",
            expected: cloud.n(),
            got: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let whole = knn_entropy_report(cloud, k)?;
    let mut conditional = 0.0;
    let mut jittered = whole.jittered;
    for (s, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() <= k {
            return Err(invalid(format!(
                "class {s} has {} samples; k-NN estimation with k = {k} needs more than {k}",
                rows.len()
            )));
        }
        let part = knn_entropy_report(&cloud.subset(rows), k)?;
        conditional += rows.len() as f64 / cloud.n() as f64 * part.nats;
        jittered += part.jittered;
    }
    let raw = whole.nats - conditional;
    Ok(MiEstimate {
        raw,
        nats: raw.max(0.0),
        jittered,
    })
}

#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub projected: SampleCloud,
    /// `d × components`, unit columns.
    pub components: Matrix,
    /// Every eigenvalue of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaProjection {
    /// Share of total variance along each kept component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let k = self.components.cols();
        self.eigenvalues[..k].iter().map(|v| v.max(0.0) / total).collect()
    }
}

/// Centers the cloud and projects it onto the top `components` eigenvectors
/// of its sample covariance. Each eigenvector is signed so that its
/// largest-magnitude coordinate is positive.
pub fn pca_project(cloud: &SampleCloud, components: usize) -> Result<PcaProjection> {
    let (n, d) = (cloud.n(), cloud.d());
    if components == 0 || components > d {
        return Err(invalid(format!("PCA components must lie in 1..={d}, got {components}")));
    }
    if n < 2 {
        return Err(invalid("PCA needs at least two points"));
    }
    let x = &cloud.points;
    let mut mean = x.sum_rows();
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.transpose_matmul(&centered)?;
    cov.scale(1.0 / (n - 1) as f64);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comp = Matrix::zeros(d, components);
    for (c, &j) in idx.iter().take(components).enumerate() {
        let col = eig.eigenvectors.column(j);
        let lead = (0..d).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            comp.set(i, c, sign * col[i]);
        }
    }
    let projected = centered.matmul(&comp)?;
    Ok(PcaProjection {
        projected: SampleCloud::new(projected)?,
        components: comp,
        eigenvalues: idx.iter().map(|&j| eig.eigenvalues[j]).collect(),
        mean,
    })
}

/// MI between `S` and a classifier's penultimate-layer embedding of `x`,
/// optionally reduced to `pca` principal components first.
pub fn embedding_mi(model: &MlpModel, x: &Matrix, s: &[usize], k: usize, pca: Option<usize>) -> Result<MiEstimate> {
    let mut cloud = SampleCloud::new(model.penultimate_features(x)?)?;
    if let Some(c) = pca {
        cloud = pca_project(&cloud, c)?.projected;
    }
    mi_with_discrete_label(&cloud, s, k)
}
