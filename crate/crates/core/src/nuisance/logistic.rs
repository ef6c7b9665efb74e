//! Binomial logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-8;

/// Covariate expansion used by the logistic models. An intercept is always
/// prepended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Linear,
    /// Linear terms plus all products `x_a * x_b` with `a <= b`.
    Quadratic,
}

impl FeatureMap {
    pub fn width(self, p: usize) -> usize {
        match self {
            FeatureMap::Linear => 1 + p,
            FeatureMap::Quadratic => 1 + p + p * (p + 1) / 2,
        }
    }

    pub fn expand_into(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend_from_slice(x);
        if self == FeatureMap::Quadratic {
            for a in 0..x.len() {
                for b in a..x.len() {
                    out.push(x[a] * x[b]);
                }
            }
        }
    }

    pub fn expand(self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width(x.len()));
        self.expand_into(x, &mut out);
        out
    }

    /// Design matrix for `n` row-major points of dimension `p`.
    pub(crate) fn design(self, x: &[f64], n: usize, p: usize) -> DMatrix<f64> {
        let k = self.width(p);
        let mut data = Vec::with_capacity(n * k);
        let mut row = Vec::with_capacity(k);
        for i in 0..n {
            self.expand_into(&x[i * p..(i + 1) * p], &mut row);
            data.extend_from_slice(&row);
        }
        DMatrix::from_row_slice(n, k, &data)
    }
}

pub fn expit(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn log1pexp(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn objective(x: &DMatrix<f64>, beta: &DVector<f64>, s: &[f64], m: &[f64]) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(s.iter().zip(m))
        .map(|(&e, (&si, &mi))| si * e - mi * log1pexp(e))
        .sum();
    ll - 0.5 * RIDGE * beta.rows(1, beta.len() - 1).norm_squared()
}

/// Maximize the binomial log-likelihood of `successes` out of `trials` on the
/// design `x` (first column the intercept), with a negligible ridge on the
/// non-intercept coefficients. Stops when the gradient norm divided by the
/// total number of trials falls below `1e-8`, or after 100 iterations.
pub(crate) fn fit_binomial(x: &DMatrix<f64>, successes: &[f64], trials: &[f64]) -> Result<LogisticFit> {
    let (n, k) = x.shape();
    if n == 0 || successes.len() != n || trials.len() != n {
        return invalid("logistic fit needs matching, non-empty design and responses");
    }
    let total: f64 = trials.iter().sum();
    let mut beta = DVector::<f64>::zeros(k);
    // Start the intercept at the pooled log-odds.
    let rate = (successes.iter().sum::<f64>() / total).clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut obj = objective(x, &beta, successes, trials);
    for iter in 0..MAX_ITER {
        let eta = x * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid = DVector::from_iterator(n, (0..n).map(|i| successes[i] - trials[i] * p[i]));
        let mut grad = x.transpose() * resid;
        for j in 1..k {
            grad[j] -= RIDGE * beta[j];
        }
        if grad.norm() / total < GRAD_TOL {
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                converged: true,
                iterations: iter,
            });
        }
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= trials[i] * p[i] * (1.0 - p[i]);
        }
        let mut hess = x.transpose() * xw;
        let jitter = RIDGE.max(1e-12 * hess.diagonal().max());
        for j in 0..k {
            hess[(j, j)] += if j == 0 { 1e-12 * hess.diagonal().max() } else { jitter };
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| hess.lu().solve(&grad))
            .ok_or_else(|| Error::Numerical("singular logistic Hessian".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_obj = objective(x, &cand, successes, trials);
            if cand_obj.is_finite() && cand_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        converged: false,
        iterations: MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_expansion_layout() {
        assert_eq!(FeatureMap::Quadratic.expand(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(FeatureMap::Quadratic.width(2), 6);
        assert_eq!(FeatureMap::Linear.expand(&[2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(800.0) == 1.0 && expit(-800.0) >= 0.0);
        assert!((expit(1.0) + expit(-1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_matches_log_odds() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = fit_binomial(&x, &[1.0, 0.0, 1.0, 1.0], &[1.0; 4]).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn binomial_counts_equal_expanded_bernoulli() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 300;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let counts: Vec<f64> = xs
            .iter()
            .map(|&x| (0..3).filter(|_| rng.random::<f64>() < expit(0.5 + x)).count() as f64)
            .collect();
        let design = FeatureMap::Linear.design(&xs, n, 1);
        let pooled = fit_binomial(&design, &counts, &[3.0; 300]).unwrap();
        // Oracle: one Bernoulli row per trial.
        let mut rows = Vec::new();
        let mut s = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            for k in 0..3 {
                rows.push(x);
                s.push(if (k as f64) < counts[i] { 1.0 } else { 0.0 });
            }
        }
        let expanded = fit_binomial(&FeatureMap::Linear.design(&rows, 3 * n, 1), &s, &vec![1.0; 3 * n]).unwrap();
        for (a, b) in pooled.coefficients.iter().zip(&expanded.coefficients) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn separation_stays_finite() {
        let xs = [-2.0, -1.0, 1.0, 2.0];
        let design = FeatureMap::Linear.design(&xs, 4, 1);
        let fit = fit_binomial(&design, &[0.0, 0.0, 1.0, 1.0], &[1.0; 4]).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        assert!(fit.coefficients[1] > 5.0);
    }
}
