//! Categorical cross-entropy over probability targets (one-hot or soft).

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied inside the log to keep the loss finite.
pub const LOSS_EPS: f64 = 1e-12;

/// Mean over rows of `-sum_l target[l] * ln(max(score[l], eps))`.
///
/// Targets must be probability rows (sum 1 within 1e-6); both one-hot and
/// soft targets are accepted.
pub fn cross_entropy(scores: &Matrix, targets: &Matrix) -> Result<f64> {
    if scores.rows() != targets.rows() || scores.cols() != targets.cols() {
        return Err(Error::Shape(format!(
            "scores {}x{} vs targets {}x{}",
            scores.rows(),
            scores.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if scores.rows() == 0 {
        return Err(Error::InvalidInput("cross entropy over zero rows".into()));
    }
    let mut total = 0.0;
    for r in 0..scores.rows() {
        debug_assert!(
            (targets.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6,
            "target row {r} is not a probability vector"
        );
        let mut row_loss = 0.0;
        for (&s, &t) in scores.row(r).iter().zip(targets.row(r)) {
            if t != 0.0 {
                row_loss -= t * s.max(LOSS_EPS).ln();
            }
        }
        total += row_loss;
    }
    Ok(total / scores.rows() as f64)
}
