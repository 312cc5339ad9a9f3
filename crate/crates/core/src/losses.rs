//! The α-loss family, α-tilted posteriors, and Arimoto conditional entropy.
//!
//! For `α ∈ [1, ∞]` the loss of assigning probability `p` to the true label is
//!
//! * `α = 1`: `−ln p` (log-loss),
//! * `1 < α < ∞`: `α/(α−1) · (1 − p^{(α−1)/α})`,
//! * `α = ∞`: `1 − p` (soft 0-1 loss).
//!
//! The adversary minimizing expected α-loss plays the tilted posterior
//! `P(s|u)^α / Σ_s' P(s'|u)^α`, and its minimum loss is a monotone function
//! of the Arimoto conditional entropy. All entropies are in nats.
//!
//! The squared-loss (MMSE) adversary `E[(Ŝ − S)²]`, minimized by the
//! conditional mean, is not implemented as a training loss.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Floor applied to probabilities inside logarithms and powers.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a pmf.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaParam {
    Finite(f64),
    Infinite,
}

impl AlphaParam {
    /// `f64::INFINITY` maps to [`AlphaParam::Infinite`].
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha == f64::INFINITY {
            return Ok(AlphaParam::Infinite);
        }
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must lie in [1, ∞], got {alpha}")));
        }
        Ok(AlphaParam::Finite(alpha))
    }

    pub const LOG_LOSS: AlphaParam = AlphaParam::Finite(1.0);

    fn is_log_loss(self) -> bool {
        self == AlphaParam::Finite(1.0)
    }
}

/// α-loss of a decision that puts probability `p_true` on the true label.
pub fn alpha_loss(p_true: f64, alpha: AlphaParam) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_true) {
        return Err(invalid(format!("p_true must lie in [0, 1], got {p_true}")));
    }
    let p = p_true.max(PROBABILITY_FLOOR);
    Ok(match alpha {
        AlphaParam::Infinite => 1.0 - p_true,
        AlphaParam::Finite(1.0) => -p.ln(),
        AlphaParam::Finite(a) => {
            // (1 − p^r)/r with r = (α−1)/α, written to stay exact as r → 0
            let r = (a - 1.0) / a;
            -(r * p.ln()).exp_m1() / r
        }
    })
}

fn check_pmf(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("pmf"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid("pmf entries must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return Err(invalid("pmf is identically zero"));
    }
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(invalid(format!("pmf sums to {total}, not 1")));
    }
    Ok(())
}

/// `p_s^α / Σ_s' p_s'^α`, computed in the log domain. At `α = ∞` the mass is
/// spread uniformly over the argmax set.
pub fn tilted_posterior(p: &[f64], alpha: AlphaParam) -> Result<Vec<f64>> {
    check_pmf(p)?;
    match alpha {
        AlphaParam::Infinite => {
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ties = p.iter().filter(|&&v| v == max).count() as f64;
            Ok(p.iter().map(|&v| if v == max { 1.0 / ties } else { 0.0 }).collect())
        }
        a if a.is_log_loss() => Ok(p.to_vec()),
        AlphaParam::Finite(a) => {
            let logs: Vec<f64> = p
                .iter()
                .map(|&v| if v > 0.0 { a * v.ln() } else { f64::NEG_INFINITY })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            Ok(w.iter().map(|v| v / total).collect())
        }
    }
}

/// Joint pmf `P(s, u)` over finite alphabets; rows index `S`, columns `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    s_size: usize,
    u_size: usize,
    data: Vec<f64>,
}

impl JointPmf {
    pub fn new(s_size: usize, u_size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != s_size * u_size {
            return Err(Error::Dimension {
                context: "joint pmf",
                expected: s_size * u_size,
                got: data.len(),
            });
        }
        check_pmf(&data)?;
        Ok(Self { s_size, u_size, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let u = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != u) {
            return Err(invalid("ragged joint pmf rows"));
        }
        Self::new(rows.len(), u, rows.concat())
    }

    /// Product pmf `p_s ⊗ p_u`.
    pub fn independent(p_s: &[f64], p_u: &[f64]) -> Result<Self> {
        let data = p_s.iter().flat_map(|a| p_u.iter().map(move |b| a * b)).collect();
        Self::new(p_s.len(), p_u.len(), data)
    }

    pub fn s_size(&self) -> usize {
        self.s_size
    }

    pub fn u_size(&self) -> usize {
        self.u_size
    }

    pub fn get(&self, s: usize, u: usize) -> f64 {
        self.data[s * self.u_size + u]
    }

    pub fn column(&self, u: usize) -> Vec<f64> {
        (0..self.s_size).map(|s| self.get(s, u)).collect()
    }

    pub fn marginal_s(&self) -> Vec<f64> {
        (0..self.s_size).map(|s| (0..self.u_size).map(|u| self.get(s, u)).sum()).collect()
    }

    pub fn marginal_u(&self) -> Vec<f64> {
        (0..self.u_size).map(|u| self.column(u).iter().sum()).collect()
    }
}

/// `(Σ_s p_s^α)^{1/α}` scaled by the column maximum to avoid underflow.
fn alpha_norm(col: &[f64], alpha: f64) -> f64 {
    let max = col.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let s: f64 = col.iter().map(|&v| (v / max).powf(alpha)).sum();
    max * s.powf(1.0 / alpha)
}

/// Arimoto conditional entropy `H_α(S | U)` in nats.
pub fn arimoto_conditional_entropy(joint: &JointPmf, alpha: AlphaParam) -> f64 {
    match alpha {
        AlphaParam::Infinite => {
            let total: f64 = (0..joint.u_size)
                .map(|u| joint.column(u).into_iter().fold(0.0, f64::max))
                .sum();
            -total.ln()
        }
        a if a.is_log_loss() => {
            let pu = joint.marginal_u();
            let mut h = 0.0;
            for s in 0..joint.s_size {
                for (u, &pu_u) in pu.iter().enumerate() {
                    let p = joint.get(s, u);
                    if p > 0.0 {
                        h -= p * (p / pu_u).ln();
                    }
                }
            }
            h.max(0.0)
        }
        AlphaParam::Finite(a) => {
            let total: f64 = (0..joint.u_size).map(|u| alpha_norm(&joint.column(u), a)).sum();
            (a / (1.0 - a) * total.ln()).max(0.0)
        }
    }
}

/// Arimoto (Rényi) entropy `H_α(S)` of a pmf.
pub fn arimoto_entropy(p: &[f64], alpha: AlphaParam) -> Result<f64> {
    let joint = JointPmf::new(p.len(), 1, p.to_vec())?;
    Ok(arimoto_conditional_entropy(&joint, alpha))
}

/// Minimum over decision rules of the expected α-loss,
/// `α/(α−1) · (1 − exp((1−α)/α · H_α(S|U)))`, with the limits `H(S|U)` at
/// `α = 1` and `1 − Σ_u max_s P(s, u)` at `α = ∞`.
pub fn min_expected_alpha_loss(joint: &JointPmf, alpha: AlphaParam) -> f64 {
    match alpha {
        AlphaParam::Infinite => {
            let hit: f64 = (0..joint.u_size)
                .map(|u| joint.column(u).into_iter().fold(0.0, f64::max))
                .sum();
            (1.0 - hit).max(0.0)
        }
        a if a.is_log_loss() => arimoto_conditional_entropy(joint, a),
        AlphaParam::Finite(a) => {
            let h = arimoto_conditional_entropy(joint, alpha);
            let r = (a - 1.0) / a;
            -(-r * h).exp_m1() / r
        }
    }
}

/// Expected α-loss of a soft decision rule `decision[u][s] = P̂(s | u)`.
pub fn expected_alpha_loss(joint: &JointPmf, decision: &[Vec<f64>], alpha: AlphaParam) -> Result<f64> {
    if decision.len() != joint.u_size {
        return Err(Error::Dimension {
            context: "decision rule columns",
            expected: joint.u_size,
            got: decision.len(),
        });
    }
    let mut total = 0.0;
    for (u, rule) in decision.iter().enumerate() {
        if rule.len() != joint.s_size {
            return Err(Error::Dimension {
                context: "decision rule support",
                expected: joint.s_size,
                got: rule.len(),
            });
        }
        for (s, &ph) in rule.iter().enumerate() {
            let p = joint.get(s, u);
            if p > 0.0 {
                total += p * alpha_loss(ph, alpha)?;
            }
        }
    }
    Ok(total)
}

/// The tilted-posterior decision rule for every column of `joint`.
pub fn optimal_decision_rule(joint: &JointPmf, alpha: AlphaParam) -> Result<Vec<Vec<f64>>> {
    (0..joint.u_size)
        .map(|u| {
            let col = joint.column(u);
            let total: f64 = col.iter().sum();
            if total == 0.0 {
                return Ok(vec![1.0 / joint.s_size as f64; joint.s_size]);
            }
            let post: Vec<f64> = col.iter().map(|v| v / total).collect();
            tilted_posterior(&post, alpha)
        })
        .collect()
}
