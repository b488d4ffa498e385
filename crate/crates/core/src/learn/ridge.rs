use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column standardizer with population standard deviation.
/// Constant columns keep a scale of 1 so they map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("cannot standardize zero rows".into()));
        }
        let p = rows[0].len();
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeParams {
    pub alpha: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// L2-penalised least squares on standardized inputs; the intercept is not penalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub alpha: f64,
    pub standardizer: Standardizer,
    /// Coefficients in standardized units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

pub fn fit_ridge(rows: &[&[f64]], y: &[f64], params: &RidgeParams) -> Result<RidgeModel> {
    if !(params.alpha >= 0.0 && params.alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be >= 0, got {}", params.alpha)));
    }
    if rows.len() != y.len() {
        return Err(Error::InvalidInput("row/target count mismatch".into()));
    }
    if y.iter().chain(rows.iter().flat_map(|r| r.iter())).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite ridge input".into()));
    }
    let standardizer = Standardizer::fit(rows)?;
    let n = rows.len();
    let p = standardizer.mean.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let z = DMatrix::from_fn(n, p, |i, j| {
        (rows[i][j] - standardizer.mean[j]) / standardizer.scale[j]
    });
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * &z;
    for j in 0..p {
        gram[(j, j)] += params.alpha;
    }
    let rhs = z.transpose() * yc;
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        let max_diag = (0..p).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
        let chol = gram.cholesky().ok_or(Error::DegenerateMatrix)?;
        let l = chol.l_dirty();
        if (0..p).any(|j| l[(j, j)].powi(2) <= 1e-12 * max_diag) {
            return Err(Error::DegenerateMatrix);
        }
        chol.solve(&rhs).iter().copied().collect()
    };
    Ok(RidgeModel {
        alpha: params.alpha,
        standardizer,
        coefficients,
        intercept: y_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_scale_one() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![2.0, i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let s = Standardizer::fit(&refs).unwrap();
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.transform(&[2.0, 2.0]), vec![0.0, 0.0]);
        assert!((s.scale[1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_line_with_zero_alpha() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.5 + 2.0 * r[0] - 0.25 * r[1]).collect();
        let m = fit_ridge(&refs, &y, &RidgeParams { alpha: 0.0 }).unwrap();
        for (r, yi) in rows.iter().zip(&y) {
            assert!((m.predict(r) - yi).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_without_penalty() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert!(fit_ridge(&refs, &y, &RidgeParams { alpha: 0.0 }).is_err());
        assert!(fit_ridge(&refs, &y, &RidgeParams { alpha: 1.0 }).is_ok());
    }
}
