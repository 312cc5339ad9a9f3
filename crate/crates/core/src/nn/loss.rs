use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// Floor applied to probabilities inside logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn check_labels(rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
    if rows == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if labels.len() != rows {
        return Err(Error::Dimension {
            context: "cross-entropy labels",
            expected: rows,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(invalid(format!("label {bad} out of range for {cols} classes")));
    }
    Ok(())
}

/// Mean negative log-likelihood from logits and its gradient
/// `(softmax − onehot) / n` with respect to the logits.
pub fn cross_entropy_logits(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(logits.rows(), logits.cols(), labels)?;
    let n = logits.rows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, grad))
}

/// Mean negative log-likelihood from probability rows (floored at
/// [`PROBABILITY_FLOOR`]) and its gradient with respect to the probabilities.
pub fn cross_entropy_probabilities(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(probs.rows(), probs.cols(), labels)?;
    let n = probs.rows() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.get(r, y);
        let pf = p.max(PROBABILITY_FLOOR);
        loss -= pf.ln();
        if p > PROBABILITY_FLOOR {
            grad.set(r, y, -1.0 / (n * p));
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn certain_predictions_have_zero_loss() {
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (loss, _) = cross_entropy_probabilities(&p, &[0, 1]).unwrap();
        assert_eq!(loss, 0.0);
        let logits = Matrix::from_rows(&[vec![800.0, 0.0]]).unwrap();
        assert!(cross_entropy_logits(&logits, &[0]).unwrap().0.abs() < 1e-300);
    }

    #[test]
    fn uniform_predictions_give_log_k() {
        for k in 2..6 {
            let logits = Matrix::filled(3, k, 0.7);
            let (loss, _) = cross_entropy_logits(&logits, &[0, k - 1, 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
            let p = Matrix::filled(3, k, 1.0 / k as f64);
            let (loss, _) = cross_entropy_probabilities(&p, &[0, 1, 0]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let mut rng = RngState::new(3);
        let mut logits = Matrix::from_vec(4, 3, (0..12).map(|_| rng.standard_normal()).collect()).unwrap();
        let labels = [2, 0, 1, 1];
        let (_, grad) = cross_entropy_logits(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            let orig = logits.as_slice()[i];
            logits.as_mut_slice()[i] = orig + h;
            let up = cross_entropy_logits(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[i] = orig - h;
            let down = cross_entropy_logits(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grad.as_slice()[i];
            assert!((fd - an).abs() / an.abs().max(1e-8) < 1e-6, "{fd} vs {an}");
        }
    }

    #[test]
    fn probability_gradient_matches_finite_difference() {
        let mut p = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let labels = [1, 0];
        let (_, grad) = cross_entropy_probabilities(&p, &labels).unwrap();
        let h = 1e-7;
        for i in 0..4 {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let up = cross_entropy_probabilities(&p, &labels).unwrap().0;
            p.as_mut_slice()[i] = orig - h;
            let down = cross_entropy_probabilities(&p, &labels).unwrap().0;
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad.as_slice()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngState::new(5);
        let logits = Matrix::from_vec(50, 7, (0..350).map(|_| 30.0 * rng.standard_normal()).collect()).unwrap();
        for row in softmax_rows(&logits).iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_and_bad_labels_rejected() {
        assert!(cross_entropy_logits(&Matrix::zeros(0, 2), &[]).is_err());
        assert!(cross_entropy_logits(&Matrix::zeros(1, 2), &[2]).is_err());
        assert!(cross_entropy_probabilities(&Matrix::zeros(2, 2), &[0]).is_err());
    }
}
