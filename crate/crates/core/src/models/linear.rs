//! L1-penalized logistic regression by proximal coordinate descent.
//!
//! Each outer step forms the weighted least-squares (IRLS) approximation of
//! the mean log-loss at the current fit and solves its lasso problem by
//! cyclic soft-thresholding; the intercept is unpenalized. Outer steps are
//! halved back toward the previous fit if the objective would increase.

use super::{logloss, sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
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

fn objective(x: &[Vec<f64>], y: &[f64], w: &[f64], wsum: f64, b0: f64, beta: &[f64], penalty: f64) -> f64 {
    let loss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((r, &yi), &wi)| wi * logloss(yi, b0 + r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()))
        .sum();
    loss / wsum + penalty * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Minimizes `mean_w(logloss) + penalty * |β|₁`.
pub fn fit_logistic_lasso(x: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>, penalty: f64, max_iter: usize, tol: f64) -> LassoFit {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let wsum: f64 = w.iter().sum();
    let mut beta = vec![0.0; d];
    let mut b0 = {
        let p = (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum).clamp(1e-9, 1.0 - 1e-9);
        (p / (1.0 - p)).ln()
    };
    let mut obj = objective(x, y, w, wsum, b0, &beta, penalty);
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        // working weights and response at the current fit
        let eta: Vec<f64> = x.iter().map(|r| b0 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
        let mut v = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let h = (p * (1.0 - p)).max(1e-10);
            v.push(w[i] * h / wsum);
            z.push(eta[i] + (y[i] - p) / h);
        }
        let (mut nb0, mut nbeta) = (b0, beta.clone());
        let mut resid: Vec<f64> = (0..n).map(|i| z[i] - eta[i]).collect();
        let colsq: Vec<f64> = (0..d).map(|j| (0..n).map(|i| v[i] * x[i][j] * x[i][j]).sum()).collect();
        let vsum: f64 = v.iter().sum();
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            let shift = (0..n).map(|i| v[i] * resid[i]).sum::<f64>() / vsum;
            nb0 += shift;
            resid.iter_mut().for_each(|r| *r -= shift);
            delta = delta.max(shift.abs());
            for j in 0..d {
                if colsq[j] <= 0.0 {
                    continue;
                }
                let rho: f64 = (0..n).map(|i| v[i] * x[i][j] * resid[i]).sum::<f64>() + colsq[j] * nbeta[j];
                let new = soft_threshold(rho, penalty) / colsq[j];
                let step = new - nbeta[j];
                if step != 0.0 {
                    for i in 0..n {
                        resid[i] -= step * x[i][j];
                    }
                    nbeta[j] = new;
                    delta = delta.max(step.abs());
                }
            }
            if delta < tol * 0.1 {
                break;
            }
        }
        // damped step toward the IRLS solution
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cb0 = b0 + t * (nb0 - b0);
            let cbeta: Vec<f64> = beta.iter().zip(&nbeta).map(|(a, b)| a + t * (b - a)).collect();
            let cobj = objective(x, y, w, wsum, cb0, &cbeta, penalty);
            if cobj <= obj + 1e-15 * obj.abs() {
                let change = (cb0 - b0).abs().max(cbeta.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                b0 = cb0;
                beta = cbeta;
                obj = cobj;
                accepted = true;
                if change < tol {
                    return LassoFit { coef: beta, intercept: b0, iterations };
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    LassoFit { coef: beta, intercept: b0, iterations }
}
