//! Scoring functions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {truth} observed vs {pred} predicted")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no observations")]
    Empty,
    #[error("R² is undefined when the observed values have zero variance")]
    ZeroVariance,
}

fn check_lengths(truth: usize, pred: usize) -> Result<(), MetricError> {
    if truth != pred {
        return Err(MetricError::LengthMismatch { truth, pred });
    }
    if truth == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y_true.len(), y_pred.len())?;
    // Constant truth is tested exactly: summation rounding would otherwise
    // leave a tiny positive SS_tot and an arbitrary score.
    if y_true.iter().all(|y| *y == y_true[0]) {
        return Err(MetricError::ZeroVariance);
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(truth: &[T], pred: &[T]) -> Result<f64, MetricError> {
    check_lengths(truth.len(), pred.len())?;
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_reference_values() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert!(r2_score(&[1.0, 2.0], &[4.0, -3.0]).unwrap() < 0.0);
    }

    #[test]
    fn r2_errors() {
        assert_eq!(r2_score(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(r2_score(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(
            r2_score(&[1.0, 2.0], &[1.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 0, 0]).unwrap(), 0.5);
    }
}
