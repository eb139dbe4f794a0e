use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

/// Weights of the four back-projection errors in the total loss.
pub const ERROR_LOSS_WEIGHTS: [f64; 4] = [0.1, 0.01, 0.01, 0.01];

/// Mean softmax cross-entropy over rows; returns the loss and `∂loss/∂logits`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let (rows, c) = (logits.rows(), logits.cols());
    if targets.len() != rows {
        return Err(Error::Shape(format!("{rows} logit rows but {} targets", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::InvalidArgument(format!("target {t} out of range 0..{c}")));
    }
    let inv = T::one() / T::lit(rows as f64);
    let mut grad = Tensor::zeros(&[rows, c]);
    let mut total = T::zero();
    for (i, &t) in targets.iter().enumerate() {
        let z = logits.row(i);
        let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + sum.ln();
        total += lse - z[t];
        for (g, &v) in grad.row_mut(i).iter_mut().zip(z) {
            *g = (v - lse).exp() * inv;
        }
        grad.row_mut(i)[t] -= inv;
    }
    Ok((total * inv, grad))
}

/// Loss terms of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub ce: T,
    pub error_losses: Vec<T>,
}

/// `CE + Σ wᵢ·L_erᵢ`.
pub fn combine_losses<T: Real>(ce: T, error_losses: &[T], weights: &[f64]) -> Result<T> {
    if error_losses.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} error losses but {} weights",
            error_losses.len(),
            weights.len()
        )));
    }
    Ok(error_losses
        .iter()
        .zip(weights)
        .fold(ce, |acc, (&l, &w)| acc + T::lit(w) * l))
}

/// Total loss with the default weights; also returns the CE gradient.
pub fn total_loss<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    error_losses: &[T],
) -> Result<(LossBreakdown<T>, Tensor<T>)> {
    weighted_total_loss(logits, targets, error_losses, &ERROR_LOSS_WEIGHTS)
}

pub fn weighted_total_loss<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    error_losses: &[T],
    weights: &[f64],
) -> Result<(LossBreakdown<T>, Tensor<T>)> {
    let (ce, grad) = cross_entropy(logits, targets)?;
    let total = combine_losses(ce, error_losses, weights)?;
    Ok((
        LossBreakdown {
            total,
            ce,
            error_losses: error_losses.to_vec(),
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::<f64>::full(&[3, 5], 0.7);
        let (l, _) = cross_entropy(&logits, &[0, 4, 2]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_error_losses_give_ce() {
        let logits = Tensor::from_rows(&[[1.0, -0.5, 2.0], [0.1, 0.2, 0.3]]).unwrap();
        let (b, _) = total_loss(&logits, &[2, 0], &[0.0; 4]).unwrap();
        assert_eq!(b.total, b.ce);
    }

    #[test]
    fn weights_are_applied() {
        let logits = Tensor::from_rows(&[[1.0, -0.5]]).unwrap();
        let (b, _) = total_loss(&logits, &[1], &[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert!((b.total - b.ce - (0.1 + 0.01 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(cross_entropy(&logits, &[3]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradient_matches_differences() {
        let logits = Tensor::from_rows(&[[1.0, -0.5, 2.0], [0.1, 0.2, -3.0]]).unwrap();
        let t = [1, 2];
        let (_, g) = cross_entropy(&logits, &t).unwrap();
        let fd = finite_difference_gradient(|x| Ok(cross_entropy(x, &t)?.0), &logits, 1e-6).unwrap();
        assert!(g.max_abs_diff(&fd) < 1e-8);
    }
}
