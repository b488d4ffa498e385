use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
    /// Mean and population std of `prediction - truth`.
    pub residual_mean: f64,
    pub residual_std: f64,
    pub n: usize,
}

/// R² is `1 - SSE/SST` and is undefined when the observed targets are constant.
pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len();
    if n == 0 {
        return Err(Error::InvalidInput("no rows to score".into()));
    }
    let mean = y_true.iter().sum::<f64>() / n as f64;
    let sst: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if sst <= 0.0 {
        return Err(Error::UndefinedR2);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum();
    if !sse.is_finite() {
        return Err(Error::InvalidInput("non-finite predictions".into()));
    }
    let mae = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let residual_mean = y_true.iter().zip(y_pred).map(|(a, b)| b - a).sum::<f64>() / n as f64;
    let residual_var = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (b - a - residual_mean).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(Metrics {
        r2: 1.0 - sse / sst,
        mae,
        mse: sse / n as f64,
        residual_mean,
        residual_std: residual_var.sqrt(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean() {
        let y = [1.0, 2.0, 4.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.r2, m.mae, m.mse), (1.0, 0.0, 0.0));
        let mean = [7.0 / 3.0; 3];
        assert!(regression_metrics(&y, &mean).unwrap().r2.abs() < 1e-15);
    }

    #[test]
    fn hand_values() {
        let m = regression_metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.r2, 0.0);
        assert_eq!((m.residual_mean, m.residual_std), (0.0, 1.0));
    }

    #[test]
    fn constant_truth_is_undefined() {
        assert!(matches!(
            regression_metrics(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedR2)
        ));
    }
}
