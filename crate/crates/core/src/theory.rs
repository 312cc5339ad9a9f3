//! Game-theoretic optimum for the Gaussian mixture under an affine mechanism.
//!
//! Minimizing the adversary's separation `Σ μ_i² / (σ_i² + σ_{p,i}²)` subject
//! to `Σ σ_{p,i}² = D` gives a water-filling allocation
//!
//! `σ_{p,i}² = (|μ_i| / √λ₀ − σ_i²)^+`,
//!
//! with `β = 0` and `λ₀` chosen so the allocation spends the whole budget.
//! Coordinates whose variance already exceeds the water level `|μ_i|/√λ₀`
//! receive no noise.

use serde::{Deserialize, Serialize};

use crate::curve::{CurveRow, TradeoffCurve};
use crate::distributions::{map_accuracy_closed_form, AffineMechanism, GaussianMixtureSpec};
use crate::error::{invalid, Result};

/// Relative tolerance of the budget equation.
pub const BUDGET_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalMechanism {
    pub mech: AffineMechanism,
    /// Multiplier of the budget constraint. `+∞` for degenerate instances.
    pub lambda0: f64,
    pub distortion_used: f64,
    /// Set when every `μ_i = 0`, so any allocation is optimal.
    pub degenerate: bool,
}

impl OptimalMechanism {
    /// The factor `1/√λ₀`; coordinate `i` is active when `|μ_i|/√λ₀ > σ_i²`.
    pub fn water_level(&self) -> f64 {
        1.0 / self.lambda0.sqrt()
    }
}

/// `Σ μ_i² / (σ_i² + σ_{p,i}²)`, the quantity the adversary's accuracy grows with.
pub fn objective(spec: &GaussianMixtureSpec, sigma_p_sq: &[f64]) -> f64 {
    spec.mu
        .iter()
        .zip(&spec.sigma_sq)
        .zip(sigma_p_sq)
        .map(|((m, s), p)| m * m / (s + p))
        .sum()
}

fn allocation(spec: &GaussianMixtureSpec, level: f64) -> Vec<f64> {
    spec.mu
        .iter()
        .zip(&spec.sigma_sq)
        .map(|(m, s)| (m.abs() * level - s).max(0.0))
        .collect()
}

/// Solves for the optimal allocation by bisection on `λ` (geometric
/// midpoints, since the bracket can span many decades), then recomputes the
/// water level exactly on the identified active set.
pub fn solve_water_filling(spec: &GaussianMixtureSpec, budget: f64) -> Result<OptimalMechanism> {
    spec.validate()?;
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(invalid(format!("distortion budget must be finite and non-negative, got {budget}")));
    }
    let m = spec.dim();
    if spec.mu.iter().all(|&v| v == 0.0) {
        return Ok(OptimalMechanism {
            mech: AffineMechanism::identity(m),
            lambda0: f64::INFINITY,
            distortion_used: 0.0,
            degenerate: true,
        });
    }
    // at λ_hi every coordinate is at or below the threshold
    let lambda_hi = spec
        .mu
        .iter()
        .zip(&spec.sigma_sq)
        .map(|(mu, s)| (mu.abs() / s).powi(2))
        .fold(0.0, f64::max);
    if budget == 0.0 {
        return Ok(OptimalMechanism {
            mech: AffineMechanism::identity(m),
            lambda0: lambda_hi,
            distortion_used: 0.0,
            degenerate: false,
        });
    }
    // at λ_lo the unclipped sum already reaches the budget
    let sum_mu: f64 = spec.mu.iter().map(|v| v.abs()).sum();
    let sum_s: f64 = spec.sigma_sq.iter().sum();
    let lambda_lo = (sum_mu / (budget + sum_s)).powi(2);

    let spent = |lambda: f64| allocation(spec, 1.0 / lambda.sqrt()).iter().sum::<f64>();
    let tol = BUDGET_TOLERANCE * budget.max(1.0);
    let (mut lo, mut hi) = (lambda_lo, lambda_hi);
    let mut lambda = lo;
    for _ in 0..400 {
        lambda = (lo * hi).sqrt();
        let f = spent(lambda);
        if (f - budget).abs() <= tol {
            break;
        }
        if f > budget {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    // exact level on the active set, kept when it reproduces the same set
    let active: Vec<usize> = allocation(spec, 1.0 / lambda.sqrt())
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect();
    if !active.is_empty() {
        let a_mu: f64 = active.iter().map(|&i| spec.mu[i].abs()).sum();
        let a_s: f64 = active.iter().map(|&i| spec.sigma_sq[i]).sum();
        let level = (budget + a_s) / a_mu;
        let consistent = (0..m).all(|i| {
            let above = spec.mu[i].abs() * level > spec.sigma_sq[i];
            above == active.contains(&i)
        });
        if consistent {
            lambda = 1.0 / (level * level);
        }
    }
    let level = 1.0 / lambda.sqrt();
    let sigma_p_sq = allocation(spec, level);
    let distortion_used = sigma_p_sq.iter().sum();
    Ok(OptimalMechanism {
        mech: AffineMechanism::noise_only(sigma_p_sq)?,
        lambda0: lambda,
        distortion_used,
        degenerate: false,
    })
}

/// KKT stationarity residuals `|μ_i|/√λ₀ − (σ_i² + σ_{p,i}²)` on active coordinates.
pub fn kkt_residuals(spec: &GaussianMixtureSpec, opt: &OptimalMechanism) -> Vec<f64> {
    let level = opt.water_level();
    (0..spec.dim())
        .filter(|&i| opt.mech.sigma_p_sq[i] > 0.0)
        .map(|i| spec.mu[i].abs() * level - (spec.sigma_sq[i] + opt.mech.sigma_p_sq[i]))
        .collect()
}

/// Closed-form MAP accuracy of the optimal mechanism at every budget in
/// `budgets`.
pub fn frontier(spec: &GaussianMixtureSpec, budgets: &[f64]) -> Result<TradeoffCurve> {
    if budgets.is_empty() {
        return Err(invalid("frontier needs at least one distortion budget"));
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for &d in budgets {
        let opt = solve_water_filling(spec, d)?;
        let acc = map_accuracy_closed_form(spec, &opt.mech)?;
        rows.push(CurveRow {
            distortion: Some(opt.distortion_used),
            theory_accuracy: Some(acc),
            ..CurveRow::new(d)
        });
    }
    Ok(TradeoffCurve::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use proptest::prelude::*;

    #[test]
    fn single_coordinate_takes_whole_budget() {
        let spec = GaussianMixtureSpec::new(0.5, vec![1.0], vec![1.0]).unwrap();
        let opt = solve_water_filling(&spec, 2.0).unwrap();
        assert!((opt.mech.sigma_p_sq[0] - 2.0).abs() < 1e-12);
        assert!((opt.lambda0 - 1.0 / 9.0).abs() < 1e-12);
        assert!(opt.mech.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn symmetric_split() {
        let spec = GaussianMixtureSpec::new(0.5, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let opt = solve_water_filling(&spec, 2.0).unwrap();
        for v in &opt.mech.sigma_p_sq {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_budget_and_degenerate() {
        let spec = GaussianMixtureSpec::benchmark(0.5);
        let opt = solve_water_filling(&spec, 0.0).unwrap();
        assert_eq!(opt.mech, AffineMechanism::identity(32));
        let zero = GaussianMixtureSpec::new(0.3, vec![0.0; 3], vec![1.0; 3]).unwrap();
        let opt = solve_water_filling(&zero, 5.0).unwrap();
        assert!(opt.degenerate);
        assert_eq!(opt.mech.sigma_p_sq, vec![0.0; 3]);
        assert!(solve_water_filling(&spec, -1.0).is_err());
    }

    #[test]
    fn threshold_coordinates_get_no_noise() {
        // the large-variance coordinate stays below the water level for small D
        let spec = GaussianMixtureSpec::new(0.5, vec![1.0, 1.0, 0.1], vec![0.5, 4.0, 1.0]).unwrap();
        let opt = solve_water_filling(&spec, 1.0).unwrap();
        assert!((opt.mech.sigma_p_sq[0] - 1.0).abs() < 1e-10);
        assert_eq!(opt.mech.sigma_p_sq[1], 0.0);
        assert_eq!(opt.mech.sigma_p_sq[2], 0.0);
        let level = opt.water_level();
        assert!(spec.sigma_sq[1] >= spec.mu[1].abs() * level);
    }

    #[test]
    fn frontier_is_monotone_and_reaches_prior() {
        for q in [0.5, 0.75] {
            let spec = GaussianMixtureSpec::benchmark(q);
            let ds: Vec<f64> = (0..=32).map(f64::from).chain([1e3, 1e5, 1e8]).collect();
            let curve = frontier(&spec, &ds).unwrap();
            let acc: Vec<f64> = curve.rows().iter().map(|r| r.theory_accuracy.unwrap()).collect();
            assert!(acc.windows(2).all(|w| w[1] <= w[0]));
            assert!(acc.iter().all(|&a| a >= spec.prior_accuracy()));
            assert!((acc.last().unwrap() - spec.prior_accuracy()).abs() < 1e-3);
            let noiseless = map_accuracy_closed_form(&spec, &AffineMechanism::identity(32)).unwrap();
            assert_eq!(acc[0], noiseless);
        }
    }

    fn random_spec(rng: &mut RngState, m: usize) -> GaussianMixtureSpec {
        let mu = (0..m).map(|_| rng.standard_normal()).collect();
        let s2 = (0..m).map(|_| 0.1 + 2.0 * rng.uniform()).collect();
        GaussianMixtureSpec::new(0.5, mu, s2).unwrap()
    }

    #[test]
    fn kkt_residuals_vanish() {
        let mut rng = RngState::new(17);
        for _ in 0..200 {
            let spec = random_spec(&mut rng, 6);
            let d = 10f64.powf(-2.0 + 5.0 * rng.uniform());
            let opt = solve_water_filling(&spec, d).unwrap();
            assert!((opt.distortion_used - d).abs() <= BUDGET_TOLERANCE * d.max(1.0));
            for r in kkt_residuals(&spec, &opt) {
                assert!(r.abs() < 1e-8, "residual {r}");
            }
        }
    }

    proptest! {
        #[test]
        fn moving_budget_between_active_coordinates_never_helps(
            mu in prop::collection::vec(0.1f64..2.0, 2..6),
            seed in 0u64..1000,
            d in 0.5f64..20.0,
        ) {
            let mut rng = RngState::new(seed);
            let s2: Vec<f64> = mu.iter().map(|_| 0.1 + rng.uniform()).collect();
            let spec = GaussianMixtureSpec::new(0.5, mu, s2).unwrap();
            let opt = solve_water_filling(&spec, d).unwrap();
            let base = objective(&spec, &opt.mech.sigma_p_sq);
            let active: Vec<usize> = (0..spec.dim()).filter(|&i| opt.mech.sigma_p_sq[i] > 1e-4 * d).collect();
            let eps = 1e-4 * d;
            for &i in &active {
                for &j in &active {
                    if i == j { continue; }
                    let mut moved = opt.mech.sigma_p_sq.clone();
                    moved[i] -= eps;
                    moved[j] += eps;
                    prop_assert!(objective(&spec, &moved) >= base - 1e-15 * base.max(1.0));
                }
            }
        }
    }
}
