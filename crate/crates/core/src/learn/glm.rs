//! Gaussian elastic-net GLM fitted by cyclic coordinate descent.

use serde::{Deserialize, Serialize};

use super::{column_moments, Dataset, LearnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmParams {
    pub lambda: f64,
    pub alpha: f64,
    pub standardize: bool,
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Sweeps stop once the largest coefficient change falls below this.
    pub tol: f64,
}

impl Default for GlmParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            alpha: 0.5,
            standardize: true,
            max_iter: 1000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub intercept: f64,
    /// Coefficients on the original feature scale.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub standardized: bool,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub iterations: usize,
    /// Objective value after each sweep, starting at the all-zero point.
    pub loss_trace: Vec<f64>,
}

impl GlmModel {
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Linear prediction clamped to `[0, 1]`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let s = self.linear(x);
        if s.is_nan() {
            0.5
        } else {
            s.clamp(0.0, 1.0)
        }
    }
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

fn objective(resid: &[f64], beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let n = resid.len() as f64;
    let rss = resid.iter().map(|r| r * r).sum::<f64>();
    let l1 = beta.iter().map(|b| b.abs()).sum::<f64>();
    let l2 = beta.iter().map(|b| b * b).sum::<f64>();
    0.5 * rss / n + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Minimises `½·mean((y − b0 − x·β)²) + λ(α‖β‖₁ + (1−α)/2·‖β‖₂²)` with the
/// penalty applied to the (optionally standardised) working coefficients.
pub fn train_glm_elastic(data: &Dataset, params: &GlmParams) -> Result<GlmModel, LearnError> {
    let (lambda, alpha) = (params.lambda, params.alpha);
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LearnError::InvalidParam(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LearnError::InvalidParam(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = data.n_samples();
    let d = data.n_features();
    let (means, moment_scales) = column_moments(data);
    let scales = if params.standardize { moment_scales } else { vec![1.0; d] };

    // Column-major centred (and scaled) working matrix.
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| data.rows().iter().map(|r| (r[j] - means[j]) / scales[j]).collect())
        .collect();
    let sq_means: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64).collect();
    let y: Vec<f64> = data.targets().iter().map(|&t| f64::from(t)).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut beta = vec![0.0; d];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut loss_trace = vec![objective(&resid, &beta, lambda, alpha)];
    let mut iterations = 0;
    let ridge = lambda * (1.0 - alpha);
    let l1 = lambda * alpha;
    while iterations < params.max_iter {
        iterations += 1;
        let mut max_delta = 0.0f64;
        for j in 0..d {
            let denom = sq_means[j] + ridge;
            let new = if denom > 0.0 {
                let rho = cols[j].iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n as f64
                    + sq_means[j] * beta[j];
                soft_threshold(rho, l1) / denom
            } else {
                0.0
            };
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(&cols[j]) {
                    *r -= delta * x;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        loss_trace.push(objective(&resid, &beta, lambda, alpha));
        if max_delta < params.tol {
            break;
        }
    }

    let beta_orig: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = y_mean - beta_orig.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(GlmModel {
        intercept,
        beta: beta_orig,
        lambda,
        alpha,
        standardized: params.standardize,
        means,
        scales,
        iterations,
        loss_trace,
    })
}
