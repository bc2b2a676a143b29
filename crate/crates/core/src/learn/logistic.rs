//! Logistic regression fitted by Newton/IRLS with step-halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{column_moments, sigmoid, softplus, Dataset, LearnError};

const MAX_HALVINGS: usize = 20;
const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub max_iter: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub b0: f64,
    pub b: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Mean negative log-likelihood after each accepted step, starting with
    /// the initial point.
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.b0 + self.b.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }
}

/// Mean negative log-likelihood and its gradient with respect to
/// `[b0, b1, .., bd]`.
pub fn nll_and_grad(rows: &[Vec<f64>], y: &[u8], b0: f64, b: &[f64]) -> (f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b.len() + 1];
    for (r, &t) in rows.iter().zip(y) {
        let z = b0 + b.iter().zip(r).map(|(c, v)| c * v).sum::<f64>();
        let t = f64::from(t);
        loss += softplus(z) - t * z;
        let e = sigmoid(z) - t;
        grad[0] += e;
        for (g, v) in grad[1..].iter_mut().zip(r) {
            *g += e * v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

fn nll(design: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let z = design * w;
    z.iter().zip(y.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / y.len() as f64
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, LearnError> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    let jittered = h + DMatrix::identity(h.nrows(), h.ncols()) * RIDGE_JITTER;
    jittered
        .cholesky()
        .map(|ch| ch.solve(g))
        .ok_or(LearnError::SingularHessian)
}

/// Fits on internally standardised columns and reports coefficients on the
/// original scale. Stops early when no step-halving yields a decrease, which
/// happens on separable data once the likelihood is numerically flat.
pub fn train_logistic(data: &Dataset, params: &LogisticParams) -> Result<LogisticModel, LearnError> {
    data.require_both_classes()?;
    if params.max_iter < 1 || !(params.tol > 0.0) {
        return Err(LearnError::InvalidParam("max_iter must be >= 1 and tol > 0".into()));
    }
    let n = data.n_samples();
    let d = data.n_features();
    let (mean, scale) = column_moments(data);
    let design = DMatrix::from_fn(n, d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (data.row(i)[j - 1] - mean[j - 1]) / scale[j - 1]
        }
    });
    let y = DVector::from_iterator(n, data.targets().iter().map(|&t| f64::from(t)));

    let mut w = DVector::zeros(d + 1);
    let mut loss = nll(&design, &y, &w);
    let mut loss_trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        let p = (&design * &w).map(sigmoid);
        let g = design.transpose() * (&p - &y) / n as f64;
        if g.amax() < params.tol {
            converged = true;
            break;
        }
        let weights = p.map(|v| v * (1.0 - v));
        let weighted = DMatrix::from_fn(n, d + 1, |i, j| design[(i, j)] * weights[i]);
        let h = design.transpose() * weighted / n as f64;
        let step = newton_direction(&h, &g)?;
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &w - &step * t;
            let l = nll(&design, &y, &cand);
            if l.is_finite() && l <= loss {
                accepted = Some((cand, l));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, l)) => {
                w = cand;
                loss = l;
                loss_trace.push(l);
            }
            None => break,
        }
    }
    if !converged {
        let p = (&design * &w).map(sigmoid);
        let g = design.transpose() * (&p - &y) / n as f64;
        converged = g.amax() < params.tol;
    }

    let b: Vec<f64> = (0..d).map(|j| w[j + 1] / scale[j]).collect();
    let b0 = w[0] - (0..d).map(|j| b[j] * mean[j]).sum::<f64>();
    Ok(LogisticModel {
        b0,
        b,
        converged,
        iterations,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(x: &[f64], y: &[u8]) -> Dataset {
        Dataset::from_rows(x.iter().map(|&v| vec![v]).collect(), y.to_vec()).unwrap()
    }

    #[test]
    fn separable_pair_orders_predictions() {
        let m = train_logistic(&data(&[-1.0, 1.0], &[0, 1]), &LogisticParams::default()).unwrap();
        assert!(m.score(&[1.0]) > 0.5 && 0.5 > m.score(&[-1.0]));
        assert!(m.b[0] > 0.0);
        assert!(m.b0.is_finite() && m.b[0].is_finite());
    }

    #[test]
    fn single_class_is_rejected() {
        let r = train_logistic(&data(&[1.0, 2.0, 3.0], &[1, 1, 1]), &LogisticParams::default());
        assert!(matches!(r, Err(LearnError::SingleClass)));
    }

    // Plain gradient descent on the unstandardised likelihood, independent
    // of the Newton solver.
    fn brute_force_fit(rows: &[Vec<f64>], y: &[u8]) -> (f64, Vec<f64>) {
        let mut b0 = 0.0;
        let mut b = vec![0.0; rows[0].len()];
        for _ in 0..200_000 {
            let (_, g) = nll_and_grad(rows, y, b0, &b);
            b0 -= 0.5 * g[0];
            for (c, gj) in b.iter_mut().zip(&g[1..]) {
                *c -= 0.5 * gj;
            }
        }
        (b0, b)
    }

    #[test]
    fn symmetric_data_has_zero_intercept() {
        let x = [1.0, 2.0, 3.0, -1.0, -2.0, -3.0];
        let y = [1, 0, 1, 0, 1, 0];
        let d = data(&x, &y);
        let m = train_logistic(&d, &LogisticParams::default()).unwrap();
        assert!(m.converged);
        assert!(m.b0.abs() < 1e-6, "b0 = {}", m.b0);
        let (ob0, ob) = brute_force_fit(d.rows(), d.targets());
        assert!(ob0.abs() < 1e-6);
        assert!((ob[0] - m.b[0]).abs() < 1e-5, "{} vs {}", ob[0], m.b[0]);
    }

    #[test]
    fn matches_brute_force_on_overlapping_data() {
        let rows = vec![
            vec![0.5, 1.0],
            vec![1.5, -1.0],
            vec![2.0, 0.3],
            vec![-0.5, 0.2],
            vec![-1.0, 2.0],
            vec![0.1, -0.4],
            vec![1.1, 0.9],
        ];
        let y = vec![1, 0, 1, 0, 1, 0, 0];
        let d = Dataset::from_rows(rows.clone(), y.clone()).unwrap();
        let m = train_logistic(&d, &LogisticParams::default()).unwrap();
        let (ob0, ob) = brute_force_fit(&rows, &y);
        assert!((ob0 - m.b0).abs() < 1e-5);
        for (a, b) in ob.iter().zip(&m.b) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let d = data(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[0, 0, 1, 0, 1, 1]);
        let m = train_logistic(&d, &LogisticParams::default()).unwrap();
        assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let m = LogisticModel {
            b0: 0.0,
            b: vec![0.0; 3],
            converged: true,
            iterations: 0,
            loss_trace: vec![],
        };
        assert_eq!(m.score(&[5.0, -2.0, 1e6]), 0.5);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            xs in proptest::collection::vec(-2.0f64..2.0, 15),
            ys in proptest::collection::vec(0u8..2, 5),
            w in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let rows: Vec<Vec<f64>> = xs.chunks(3).map(<[f64]>::to_vec).collect();
            let (_, g) = nll_and_grad(&rows, &ys, w[0], &w[1..]);
            let eps = 1e-5;
            for k in 0..4 {
                let mut hi = w.clone();
                let mut lo = w.clone();
                hi[k] += eps;
                lo[k] -= eps;
                let fd = (nll_and_grad(&rows, &ys, hi[0], &hi[1..]).0
                    - nll_and_grad(&rows, &ys, lo[0], &lo[1..]).0) / (2.0 * eps);
                let rel = (fd - g[k]).abs() / g[k].abs().max(fd.abs()).max(1e-6);
                prop_assert!(rel < 1e-5, "component {k}: {fd} vs {}", g[k]);
            }
        }
    }
}
