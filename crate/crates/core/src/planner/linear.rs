use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge damping added to the standardised normal equations.
pub const RIDGE: f64 = 1e-6;

/// `latency = intercept + Σ coef_j · x_j`, in original feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

/// Solve `A x = b` for symmetric positive-definite `A` (row-major, `n×n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::arg("normal equations are not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

/// Least squares on standardised features with ridge damping; constant features get
/// zero weight instead of making the system singular.
pub fn fit_linear(xs: &[Vec<f64>], ys: &[f64]) -> Result<LinearModel> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::arg("linear fit needs matching, non-empty features and targets"));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::arg("ragged feature rows"));
    }
    let m = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / m).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / m;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let y_mean = ys.iter().sum::<f64>() / m;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut z = vec![0.0; d];
    for (x, &y) in xs.iter().zip(ys) {
        for j in 0..d {
            z[j] = (x[j] - mean[j]) / scale[j];
        }
        for i in 0..d {
            b[i] += z[i] * (y - y_mean);
            for j in 0..d {
                a[i * d + j] += z[i] * z[j];
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += RIDGE;
    }
    let w = if d == 0 { Vec::new() } else { cholesky_solve(&a, &b, d)? };
    let coef: Vec<f64> = w.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let intercept = y_mean - coef.iter().zip(&mean).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel { intercept, coef })
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(Error::arg(format!("linear model expects {} features, got {}", self.coef.len(), x.len())));
        }
        Ok(self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
    }
}

pub fn predict_linear(model: &LinearModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn recovers_exact_line_with_noise_features() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let mut v = vec![(10 + 10 * (i % 10)) as f64];
                v.extend((0..20).map(|_| rng.random_range(0.0..100.0)));
                v
            })
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x[0] + 2.0).collect();
        let m = fit_linear(&xs, &ys).unwrap();
        assert!((m.coef[0] - 0.5).abs() < 1e-6, "{}", m.coef[0]);
        assert!((m.intercept - 2.0).abs() < 1e-6, "{}", m.intercept);
        assert!(m.coef[1..].iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn constant_targets_and_constant_features() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 7.0]).collect();
        let m = fit_linear(&xs, &vec![4.0; 30]).unwrap();
        assert!((m.intercept - 4.0).abs() < 1e-9);
        assert!(m.coef.iter().all(|c| c.abs() < 1e-9));
        assert!(m.predict(&[1.0]).is_err());
    }
}
