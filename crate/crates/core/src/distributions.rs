//! The two-component Gaussian mixture `X | S=1 ~ N(μ, Σ)`, `X | S=0 ~ N(-μ, Σ)`
//! with diagonal `Σ`, and the affine Gaussian mechanism
//! `X_r = X + β + Z`, `Z ~ N(0, Σ_p)`.
//!
//! Under the mechanism `X_r | S` is Gaussian with covariance `Σ + Σ_p`, so
//! the exact posterior and the MAP detection probability have closed forms.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetMetadata, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{q_function, sigmoid, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    /// `P(S = 1)`.
    pub q: f64,
    pub mu: Vec<f64>,
    /// Diagonal of `Σ`.
    pub sigma_sq: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn new(q: f64, mu: Vec<f64>, sigma_sq: Vec<f64>) -> Result<Self> {
        let spec = Self { q, mu, sigma_sq };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks shapes and positivity. The endpoints `q ∈ {0, 1}` are accepted
    /// (they give single-class data); use [`Self::validate_strict`] to demand
    /// a non-degenerate prior.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(invalid(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if self.mu.is_empty() {
            return Err(invalid("mixture dimension must be at least 1"));
        }
        if self.mu.len() != self.sigma_sq.len() {
            return Err(Error::Dimension {
                context: "mixture mu vs sigma_sq",
                expected: self.mu.len(),
                got: self.sigma_sq.len(),
            });
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mu entries must be finite"));
        }
        if self.sigma_sq.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("sigma_sq entries must be positive and finite"));
        }
        Ok(())
    }

    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid(format!("q must lie strictly inside (0, 1), got {}", self.q)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn prior_accuracy(&self) -> f64 {
        self.q.max(1.0 - self.q)
    }

    /// The 32-dimensional benchmark mixture used by the sweep defaults:
    /// `|μ_i| = 0.12` with alternating signs and graded variances
    /// `σ_i² = 0.2 · 1.09^i`.
    pub fn benchmark(q: f64) -> Self {
        let m = 32;
        Self {
            q,
            mu: (0..m).map(|i| if i % 2 == 0 { 0.12 } else { -0.12 }).collect(),
            sigma_sq: (0..m).map(|i| 0.2 * 1.09f64.powi(i)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMechanism {
    pub beta: Vec<f64>,
    /// Diagonal of `Σ_p`.
    pub sigma_p_sq: Vec<f64>,
}

impl AffineMechanism {
    pub fn new(beta: Vec<f64>, sigma_p_sq: Vec<f64>) -> Result<Self> {
        let mech = Self { beta, sigma_p_sq };
        mech.validate()?;
        Ok(mech)
    }

    pub fn identity(m: usize) -> Self {
        Self {
            beta: vec![0.0; m],
            sigma_p_sq: vec![0.0; m],
        }
    }

    pub fn noise_only(sigma_p_sq: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; sigma_p_sq.len()], sigma_p_sq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.sigma_p_sq.len() {
            return Err(Error::Dimension {
                context: "mechanism beta vs sigma_p_sq",
                expected: self.beta.len(),
                got: self.sigma_p_sq.len(),
            });
        }
        if self.sigma_p_sq.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("sigma_p_sq entries must be non-negative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `E‖X_r − X‖² = ‖β‖² + tr Σ_p`.
    pub fn expected_distortion(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>() + self.sigma_p_sq.iter().sum::<f64>()
    }
}

fn check_pair(spec: &GaussianMixtureSpec, mech: &AffineMechanism) -> Result<()> {
    if spec.dim() != mech.dim() {
        return Err(Error::Dimension {
            context: "mixture vs mechanism",
            expected: spec.dim(),
            got: mech.dim(),
        });
    }
    Ok(())
}

/// `n` rows with `S ~ Bernoulli(q)` and `X | S` from the matching component.
pub fn sample_labeled(spec: &GaussianMixtureSpec, n: usize, rng: &mut RngState) -> Result<LabeledDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let m = spec.dim();
    let sd: Vec<f64> = spec.sigma_sq.iter().map(|v| v.sqrt()).collect();
    let mut data = Vec::with_capacity(n * m);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.bernoulli(spec.q);
        let sign = if label { 1.0 } else { -1.0 };
        for k in 0..m {
            data.push(sign * spec.mu[k] + sd[k] * rng.standard_normal());
        }
        s.push(usize::from(label));
    }
    let x = Matrix::from_vec(n, m, data)?;
    LabeledDataset::with_metadata(x, s, 2, None, DatasetMetadata::numeric(m))
}

/// Applies the mechanism to every row of `x`: `x + β + σ_p ⊙ z`.
pub fn privatize(x: &Matrix, mech: &AffineMechanism, rng: &mut RngState) -> Result<Matrix> {
    mech.validate()?;
    if x.cols() != mech.dim() {
        return Err(Error::Dimension {
            context: "privatize input",
            expected: mech.dim(),
            got: x.cols(),
        });
    }
    let sd: Vec<f64> = mech.sigma_p_sq.iter().map(|v| v.sqrt()).collect();
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (k, v) in out.row_mut(r).iter_mut().enumerate() {
            *v += mech.beta[k] + sd[k] * rng.standard_normal();
        }
    }
    Ok(out)
}

/// Log-likelihood ratio `ln p(x_r | S=1) / p(x_r | S=0)`.
fn log_likelihood_ratio(spec: &GaussianMixtureSpec, mech: &AffineMechanism, x_r: &[f64]) -> f64 {
    let mut llr = 0.0;
    for k in 0..spec.dim() {
        let v = spec.sigma_sq[k] + mech.sigma_p_sq[k];
        llr += 2.0 * spec.mu[k] * (x_r[k] - mech.beta[k]) / v;
    }
    llr
}

/// Exact `P(S = 1 | X_r = x_r)` under the mixture and the mechanism.
pub fn posterior_s1(spec: &GaussianMixtureSpec, mech: &AffineMechanism, x_r: &[f64]) -> Result<f64> {
    check_pair(spec, mech)?;
    if x_r.len() != spec.dim() {
        return Err(Error::Dimension {
            context: "posterior input",
            expected: spec.dim(),
            got: x_r.len(),
        });
    }
    if spec.q == 0.0 || spec.q == 1.0 {
        return Ok(spec.q);
    }
    let prior_logit = (spec.q / (1.0 - spec.q)).ln();
    Ok(sigmoid(log_likelihood_ratio(spec, mech, x_r) + prior_logit))
}

/// Separation `α = 2 √(Σ μ_i² / (σ_i² + σ_{p,i}²))` of the privatized classes.
pub fn separation(spec: &GaussianMixtureSpec, mech: &AffineMechanism) -> Result<f64> {
    check_pair(spec, mech)?;
    let s: f64 = (0..spec.dim())
        .map(|k| spec.mu[k] * spec.mu[k] / (spec.sigma_sq[k] + mech.sigma_p_sq[k]))
        .sum();
    Ok(2.0 * s.sqrt())
}

/// Closed-form detection probability of the MAP adversary,
/// `q Q(−α/2 + ln((1−q)/q)/α) + (1−q) Q(−α/2 − ln((1−q)/q)/α)`.
///
/// Returns `max(q, 1−q)` when `α = 0`, where the formula is singular.
pub fn map_accuracy_closed_form(spec: &GaussianMixtureSpec, mech: &AffineMechanism) -> Result<f64> {
    spec.validate()?;
    mech.validate()?;
    let alpha = separation(spec, mech)?;
    let q = spec.q;
    if alpha == 0.0 || q == 0.0 || q == 1.0 {
        return Ok(spec.prior_accuracy());
    }
    let l = ((1.0 - q) / q).ln();
    let pd = q * q_function(-alpha / 2.0 + l / alpha)? + (1.0 - q) * q_function(-alpha / 2.0 - l / alpha)?;
    // guard the last ulp so the MAP-beats-prior bound holds exactly
    Ok(pd.max(spec.prior_accuracy()))
}

/// Empirical accuracy of the exact MAP rule on privatized samples; ties
/// (posterior exactly 1/2) are broken by a fair coin drawn from `rng`.
pub fn map_accuracy_monte_carlo(
    spec: &GaussianMixtureSpec,
    mech: &AffineMechanism,
    samples: &Matrix,
    labels: &[usize],
    rng: &mut RngState,
) -> Result<f64> {
    check_pair(spec, mech)?;
    if samples.rows() == 0 {
        return Err(Error::Empty("map accuracy samples"));
    }
    if labels.len() != samples.rows() {
        return Err(Error::Dimension {
            context: "map accuracy labels",
            expected: samples.rows(),
            got: labels.len(),
        });
    }
    let prior_logit = if spec.q > 0.0 && spec.q < 1.0 {
        (spec.q / (1.0 - spec.q)).ln()
    } else if spec.q == 1.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let logit = log_likelihood_ratio(spec, mech, samples.row(r)) + prior_logit;
        let decision = if logit > 0.0 {
            1
        } else if logit < 0.0 {
            0
        } else {
            usize::from(rng.bernoulli(0.5))
        };
        hits += usize::from(decision == label);
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Draws `n` labeled samples, privatizes them, and scores the MAP rule.
pub fn simulate_map_accuracy(
    spec: &GaussianMixtureSpec,
    mech: &AffineMechanism,
    n: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let data = sample_labeled(spec, n, rng)?;
    let xr = privatize(&data.x, mech, rng)?;
    map_accuracy_monte_carlo(spec, mech, &xr, &data.s, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_density(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn sample_sizes_and_prior() {
        let spec = GaussianMixtureSpec::benchmark(0.75);
        let mut rng = RngState::new(1);
        assert_eq!(sample_labeled(&spec, 20_000, &mut rng).unwrap().len(), 20_000);
        assert_eq!(sample_labeled(&spec, 2_000, &mut rng).unwrap().dim(), 32);

        let d = sample_labeled(&spec, 100_000, &mut RngState::new(2)).unwrap();
        let mean = d.s.iter().sum::<usize>() as f64 / d.len() as f64;
        assert!((mean - 0.75).abs() < 0.005);

        let ones = GaussianMixtureSpec::new(1.0, vec![1.0], vec![1.0]).unwrap();
        assert!(sample_labeled(&ones, 500, &mut rng).unwrap().s.iter().all(|&s| s == 1));
        assert!(sample_labeled(&ones, 0, &mut rng).is_err());
    }

    #[test]
    fn posterior_at_midpoint_is_prior() {
        let spec = GaussianMixtureSpec::new(0.3, vec![1.0, -2.0], vec![0.5, 2.0]).unwrap();
        let mech = AffineMechanism::new(vec![0.4, -0.1], vec![1.0, 0.0]).unwrap();
        let p = posterior_s1(&spec, &mech, &mech.beta).unwrap();
        assert!((p - 0.3).abs() < 1e-15);
        let sym = GaussianMixtureSpec::new(0.5, vec![1.0], vec![1.0]).unwrap();
        let far = posterior_s1(&sym, &AffineMechanism::identity(1), &[40.0]).unwrap();
        assert!(far > 1.0 - 1e-12);
        assert!(posterior_s1(&spec, &mech, &[0.0]).is_err());
    }

    #[test]
    fn posterior_matches_density_ratio() {
        let mut rng = RngState::new(3);
        for _ in 0..20 {
            let m = 3;
            let q = 0.1 + 0.8 * rng.uniform();
            let mu: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
            let s2: Vec<f64> = (0..m).map(|_| 0.2 + rng.uniform()).collect();
            let spec = GaussianMixtureSpec::new(q, mu.clone(), s2.clone()).unwrap();
            let beta: Vec<f64> = (0..m).map(|_| rng.standard_normal() * 0.3).collect();
            let sp: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
            let mech = AffineMechanism::new(beta.clone(), sp.clone()).unwrap();
            let x: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
            let (mut l1, mut l0) = (q, 1.0 - q);
            for k in 0..m {
                let v = s2[k] + sp[k];
                l1 *= gaussian_density(x[k], mu[k] + beta[k], v);
                l0 *= gaussian_density(x[k], -mu[k] + beta[k], v);
            }
            let oracle = l1 / (l1 + l0);
            assert!((posterior_s1(&spec, &mech, &x).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_examples() {
        let spec = GaussianMixtureSpec::new(0.5, vec![1.0], vec![1.0]).unwrap();
        let mech = AffineMechanism::noise_only(vec![2.0]).unwrap();
        let expected = q_function(-1.0 / 3f64.sqrt()).unwrap();
        assert!((map_accuracy_closed_form(&spec, &mech).unwrap() - expected).abs() < 1e-15);

        let spec = GaussianMixtureSpec::new(0.75, vec![1.0, 0.5], vec![1.0, 1.0]).unwrap();
        let huge = AffineMechanism::noise_only(vec![1e9, 1e9]).unwrap();
        assert!((map_accuracy_closed_form(&spec, &huge).unwrap() - 0.75).abs() < 1e-3);

        let zero = GaussianMixtureSpec::new(0.2, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(map_accuracy_closed_form(&zero, &AffineMechanism::identity(2)).unwrap(), 0.8);
    }

    #[test]
    fn monte_carlo_edge_cases() {
        let spec = GaussianMixtureSpec::new(0.5, vec![50.0], vec![1.0]).unwrap();
        let mut rng = RngState::new(4);
        assert_eq!(simulate_map_accuracy(&spec, &AffineMechanism::identity(1), 10_000, &mut rng).unwrap(), 1.0);

        // features carry no label information once labels are shuffled
        let spec = GaussianMixtureSpec::new(0.7, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let mech = AffineMechanism::identity(2);
        let n = 20_000;
        let d = sample_labeled(&spec, n, &mut rng).unwrap();
        let mut labels = d.s.clone();
        rng.shuffle(&mut labels);
        let acc = map_accuracy_monte_carlo(&spec, &mech, &d.x, &labels, &mut rng).unwrap();
        // E[acc] = q·P(decide 1) + (1−q)·P(decide 0) for independent labels
        let p1 = map_accuracy_monte_carlo(&spec, &mech, &d.x, &vec![1; n], &mut rng).unwrap();
        let expected = 0.7 * p1 + 0.3 * (1.0 - p1);
        assert!(expected <= 0.7 + 1e-12);
        assert!((acc - expected).abs() < 3.0 * (0.25 / n as f64).sqrt() + 1e-3, "{acc} vs {expected}");

        assert!(map_accuracy_monte_carlo(&spec, &mech, &Matrix::zeros(0, 2), &[], &mut rng).is_err());
    }

    #[test]
    fn benchmark_matches_closed_form_by_simulation() {
        let spec = GaussianMixtureSpec::benchmark(0.75);
        let mech = AffineMechanism::noise_only(vec![0.5; 32]).unwrap();
        let mc = simulate_map_accuracy(&spec, &mech, 1_000_000, &mut RngState::new(8)).unwrap();
        let cf = map_accuracy_closed_form(&spec, &mech).unwrap();
        assert!((mc - cf).abs() < 0.002, "{mc} vs {cf}");
    }

    fn instance() -> impl Strategy<Value = (GaussianMixtureSpec, AffineMechanism)> {
        (1usize..6).prop_flat_map(|m| {
            (
                0.05f64..0.95,
                prop::collection::vec(-2.0f64..2.0, m),
                prop::collection::vec(0.1f64..3.0, m),
                prop::collection::vec(-1.0f64..1.0, m),
                prop::collection::vec(0.0f64..4.0, m),
            )
                .prop_map(|(q, mu, s2, beta, sp)| {
                    (
                        GaussianMixtureSpec::new(q, mu, s2).unwrap(),
                        AffineMechanism::new(beta, sp).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn map_accuracy_beats_prior((spec, mech) in instance()) {
            let pd = map_accuracy_closed_form(&spec, &mech).unwrap();
            prop_assert!(pd >= spec.prior_accuracy());
            prop_assert!(pd <= 1.0);
        }

        #[test]
        fn more_noise_never_helps((spec, mech) in instance(), k in 0usize..6, extra in 0.0f64..5.0) {
            let k = k % spec.dim();
            let mut noisier = mech.clone();
            noisier.sigma_p_sq[k] += extra;
            let a = map_accuracy_closed_form(&spec, &mech).unwrap();
            let b = map_accuracy_closed_form(&spec, &noisier).unwrap();
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn shift_does_not_change_accuracy((spec, mech) in instance(), shift in -3.0f64..3.0) {
            let mut shifted = mech.clone();
            shifted.beta.iter_mut().for_each(|b| *b += shift);
            prop_assert_eq!(
                map_accuracy_closed_form(&spec, &mech).unwrap(),
                map_accuracy_closed_form(&spec, &shifted).unwrap()
            );
        }
    }
}
