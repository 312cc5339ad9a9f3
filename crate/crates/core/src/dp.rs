//! Context-free noise baselines and their local differential-privacy risk.
//!
//! Each mechanism adds i.i.d. zero-mean noise with variance `D / d` to every
//! feature, so the expected squared distortion per sample is `D`. Mechanisms
//! are looked up by name through [`noise_registry`].
//!
//! The privacy levels are
//!
//! * Laplace: `ε = d √(2d / D)`
//! * Gaussian: `ε = (2d / √D) √(ln(1.25 / δ))`
//!
//! for features normalized to the unit interval. The derivation of the
//! Gaussian scale these formulas come from mixes up a standard deviation and
//! a variance; the `ε` expressions themselves are used as given.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::numerics::RngState;
use crate::registry::Registry;

/// Distortions tabulated by [`epsilon_table`] by default.
pub const TABLE_DISTORTIONS: [f64; 7] = [1.0, 2.0, 3.0, 4.0, 5.0, 100.0, 1000.0];
pub const TABLE_DIMENSION: usize = 256;
pub const TABLE_DELTA: f64 = 1e-6;

pub trait NoiseMechanism: Send + Sync {
    fn name(&self) -> &'static str;

    /// One draw with zero mean and unit variance.
    fn unit_sample(&self, rng: &mut RngState) -> f64;

    /// Privacy level at per-sample distortion `budget` over `dim` features,
    /// or `None` when the mechanism carries no finite guarantee.
    fn epsilon(&self, dim: usize, budget: f64, delta: f64) -> Result<Option<f64>>;

    /// Adds noise of per-feature variance `budget / d` to every entry.
    fn perturb(&self, x: &Matrix, budget: f64, rng: &mut RngState) -> Result<Matrix> {
        check_budget(budget)?;
        if budget == 0.0 {
            return Ok(x.clone());
        }
        let sd = (budget / x.cols() as f64).sqrt();
        let mut out = x.clone();
        for v in out.as_mut_slice() {
            *v += sd * self.unit_sample(rng);
        }
        Ok(out)
    }
}

fn check_budget(budget: f64) -> Result<()> {
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(invalid(format!("distortion budget must be finite and non-negative, got {budget}")));
    }
    Ok(())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok(())
}

pub struct Laplace;
pub struct Gaussian;
pub struct Uniform;

impl NoiseMechanism for Laplace {
    fn name(&self) -> &'static str {
        "laplace"
    }

    fn unit_sample(&self, rng: &mut RngState) -> f64 {
        // scale b = 1/√2 gives variance 2b² = 1
        loop {
            let u = rng.uniform() - 0.5;
            let tail = 1.0 - 2.0 * u.abs();
            if tail > 0.0 {
                return -u.signum() * tail.ln() / std::f64::consts::SQRT_2;
            }
        }
    }

    fn epsilon(&self, dim: usize, budget: f64, _delta: f64) -> Result<Option<f64>> {
        laplace_epsilon(dim, budget).map(Some)
    }
}

impl NoiseMechanism for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn unit_sample(&self, rng: &mut RngState) -> f64 {
        rng.standard_normal()
    }

    fn epsilon(&self, dim: usize, budget: f64, delta: f64) -> Result<Option<f64>> {
        gaussian_epsilon(dim, budget, delta).map(Some)
    }
}

impl NoiseMechanism for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn unit_sample(&self, rng: &mut RngState) -> f64 {
        3f64.sqrt() * (2.0 * rng.uniform() - 1.0)
    }

    fn epsilon(&self, dim: usize, budget: f64, _delta: f64) -> Result<Option<f64>> {
        check_dim(dim)?;
        check_budget(budget)?;
        Ok(None)
    }
}

/// Laplace scale `b` giving per-feature variance `budget / dim`.
pub fn laplace_scale(dim: usize, budget: f64) -> f64 {
    (budget / (2.0 * dim as f64)).sqrt()
}

/// Half-width of the uniform interval with per-feature variance `budget / dim`.
pub fn uniform_half_width(dim: usize, budget: f64) -> f64 {
    (3.0 * budget / dim as f64).sqrt()
}

pub fn noise_registry() -> Registry<(), dyn NoiseMechanism> {
    let mut r: Registry<(), dyn NoiseMechanism> = Registry::new("noise mechanism");
    r.register("laplace", |_| Box::new(Laplace));
    r.register("gaussian", |_| Box::new(Gaussian));
    r.register("uniform", |_| Box::new(Uniform));
    r
}

/// `d √(2d / D)`; infinite when `D = 0`.
pub fn laplace_epsilon(dim: usize, budget: f64) -> Result<f64> {
    check_dim(dim)?;
    check_budget(budget)?;
    if budget == 0.0 {
        return Ok(f64::INFINITY);
    }
    let d = dim as f64;
    Ok(d * (2.0 * d / budget).sqrt())
}

/// `(2d / √D) √(ln(1.25 / δ))`; infinite when `D = 0`.
pub fn gaussian_epsilon(dim: usize, budget: f64, delta: f64) -> Result<f64> {
    check_dim(dim)?;
    check_budget(budget)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if budget == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * dim as f64 / budget.sqrt() * (1.25 / delta).ln().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonTable {
    pub dim: usize,
    pub delta: f64,
    pub distortions: Vec<f64>,
    pub laplace: Vec<f64>,
    pub gaussian: Vec<f64>,
}

pub fn epsilon_table(dim: usize, delta: f64, distortions: &[f64]) -> Result<EpsilonTable> {
    Ok(EpsilonTable {
        dim,
        delta,
        distortions: distortions.to_vec(),
        laplace: distortions.iter().map(|&b| laplace_epsilon(dim, b)).collect::<Result<_>>()?,
        gaussian: distortions.iter().map(|&b| gaussian_epsilon(dim, b, delta)).collect::<Result<_>>()?,
    })
}

impl EpsilonTable {
    /// One row per mechanism, one column per distortion, two decimals.
    pub fn write_csv_to(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["mechanism".to_string()];
        header.extend(self.distortions.iter().map(|d| format!("D={d}")));
        w.write_record(&header)?;
        for (name, values) in [("laplace", &self.laplace), ("gaussian", &self.gaussian)] {
            let mut row = vec![name.to_string()];
            row.extend(values.iter().map(|v| format!("{v:.2}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_csv_to(&mut f)
    }
}

/// Mean squared distance between `x` and its perturbation.
pub fn empirical_distortion(x: &Matrix, perturbed: &Matrix) -> f64 {
    let total: f64 = x.as_slice().iter().zip(perturbed.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    total / x.rows() as f64
}
