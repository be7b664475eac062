//! L1-regularized logistic regression: warm-started coordinate descent over
//! a descending lambda grid (IRLS quadratic approximation, soft-thresholding)
//! with 10-fold cross-validated lambda selection by binomial deviance.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_N_LAMBDA: usize = 100;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-4;
pub const DEFAULT_FOLDS: usize = 10;
const COEF_TOL: f64 = 1e-7;
const MAX_OUTER: usize = 100;
const MAX_INNER: usize = 1000;
const KKT_TOL: f64 = 1e-6;
const MIN_WEIGHT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("outcome has no variance (all labels identical)")]
    NoVariance,
    #[error("need at least {folds} rows for {folds}-fold CV, got {n}")]
    TooFewRows { folds: usize, n: usize },
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(f64),
}

/// One penalized fit. Coefficients are reported on the original predictor
/// scale; `converged` means the KKT conditions held on the internally
/// standardized problem.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub n_iter: usize,
}

#[derive(Debug, Clone)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<LassoFit>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub mean_deviance: Vec<f64>,
    pub se_deviance: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub folds: Vec<Vec<usize>>,
}

/// Rule for picking lambda from the CV deviance curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    /// Deviance-minimizing lambda.
    Min,
    /// Largest lambda within one standard error of the minimum.
    OneSe,
}

fn log1p_exp(x: f64) -> f64 {
    // log(1 + e^x) without overflow.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood (1/n) sum[log(1+exp(eta)) - y*eta].
pub fn logistic_loss(intercept: f64, beta: &[f64], x: &ArrayView2<f64>, y: &[f64]) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let eta = intercept
            + x.row(i)
                .iter()
                .zip(beta)
                .map(|(&xij, &bj)| xij * bj)
                .sum::<f64>();
        total += log1p_exp(eta) - y[i] * eta;
    }
    total / n as f64
}

/// Gradient of `logistic_loss` with respect to (intercept, beta).
pub fn logistic_grad(
    intercept: f64,
    beta: &[f64],
    x: &ArrayView2<f64>,
    y: &[f64],
) -> (f64, Vec<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let mut g0 = 0.0;
    let mut g = vec![0.0; p];
    for i in 0..n {
        let eta = intercept
            + x.row(i)
                .iter()
                .zip(beta)
                .map(|(&xij, &bj)| xij * bj)
                .sum::<f64>();
        let resid = sigmoid(eta) - y[i];
        g0 += resid;
        for (gj, &xij) in g.iter_mut().zip(x.row(i)) {
            *gj += xij * resid;
        }
    }
    g0 /= n as f64;
    for gj in &mut g {
        *gj /= n as f64;
    }
    (g0, g)
}

/// sign(z) * max(|z| - gamma, 0).
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Probabilities sigmoid(intercept + X beta) on original-scale predictors.
pub fn predict_proba(fit: &LassoFit, x: &ArrayView2<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let eta = fit.intercept
                + x.row(i)
                    .iter()
                    .zip(&fit.coefficients)
                    .map(|(&xij, &bj)| xij * bj)
                    .sum::<f64>();
            sigmoid(eta)
        })
        .collect()
}

struct StandardizedProblem {
    z: Array2<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

fn standardize_internal(x: &ArrayView2<f64>) -> StandardizedProblem {
    let n = x.nrows();
    let p = x.ncols();
    let mut z = x.to_owned();
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|&v| (v - mean) * (v - mean)).sum();
        let var = if n > 1 { ss / (n as f64 - 1.0) } else { 0.0 };
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        z.column_mut(j).mapv_inplace(|v| (v - mean) / scale);
        means.push(mean);
        scales.push(scale);
    }
    StandardizedProblem { z, means, scales }
}

/// Max KKT violation of the L1-penalized mean-NLL at (b0, b) on data (z, y).
fn kkt_violation(b0: f64, b: &[f64], z: &ArrayView2<f64>, y: &[f64], lambda: f64) -> f64 {
    let (g0, g) = logistic_grad(b0, b, z, y);
    let mut worst = g0.abs(); // intercept is unpenalized: gradient must vanish
    for (gj, &bj) in g.iter().zip(b) {
        let v = if bj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj + lambda * bj.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// One IRLS + coordinate-descent solve at a fixed lambda, warm-started from
/// (b0, b) on standardized data. Returns outer iterations used.
fn solve_at_lambda(
    z: &ArrayView2<f64>,
    y: &[f64],
    lambda: f64,
    b0: &mut f64,
    b: &mut [f64],
) -> usize {
    let n = z.nrows();
    let p = z.ncols();
    let nf = n as f64;
    let mut eta: Vec<f64> = (0..n)
        .map(|i| {
            *b0 + z
                .row(i)
                .iter()
                .zip(b.iter())
                .map(|(&zij, &bj)| zij * bj)
                .sum::<f64>()
        })
        .collect();
    let mut outer = 0;
    for _ in 0..MAX_OUTER {
        outer += 1;
        // Quadratic approximation at the current eta.
        let mut w = vec![0.0; n];
        let mut r = vec![0.0; n]; // working residual w_i * (z_i - eta_i) form
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let wi = (pi * (1.0 - pi)).max(MIN_WEIGHT);
            w[i] = wi;
            // working response minus current eta: (y - p) / w
            r[i] = y[i] - pi;
        }
        let wsum: f64 = w.iter().sum();
        // Per-coordinate curvature on this quadratic.
        let curv: Vec<f64> = (0..p)
            .map(|j| {
                z.column(j)
                    .iter()
                    .zip(&w)
                    .map(|(&zij, &wi)| wi * zij * zij)
                    .sum::<f64>()
                    / nf
            })
            .collect();

        let mut active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
        let mut outer_change: f64 = 0.0;
        let mut first_pass = true;
        for _ in 0..MAX_INNER {
            // Full pass first (and whenever the active set stabilizes),
            // then cheap passes over the active set only.
            let scan: Vec<usize> = if first_pass {
                (0..p).collect()
            } else {
                active.clone()
            };
            let mut max_change: f64 = 0.0;
            // Intercept update (unpenalized).
            let delta0: f64 = r.iter().sum::<f64>() / wsum;
            if delta0 != 0.0 {
                *b0 += delta0;
                for i in 0..n {
                    r[i] -= w[i] * delta0;
                }
                max_change = max_change.max(delta0.abs());
            }
            for &j in &scan {
                if curv[j] <= 0.0 {
                    continue;
                }
                let zj = z.column(j);
                let grad_j: f64 = zj.iter().zip(&r).map(|(&zij, &ri)| zij * ri).sum::<f64>() / nf;
                let u = grad_j + curv[j] * b[j];
                let new = soft_threshold(u, lambda) / curv[j];
                let delta = new - b[j];
                if delta != 0.0 {
                    b[j] = new;
                    for (i, &zij) in zj.iter().enumerate() {
                        r[i] -= w[i] * zij * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            outer_change = outer_change.max(max_change);
            if first_pass {
                active = (0..p).filter(|&j| b[j] != 0.0).collect();
                first_pass = false;
                continue;
            }
            if max_change < COEF_TOL {
                // Converged on the active set; confirm with one full pass.
                let mut full_change: f64 = 0.0;
                let delta0: f64 = r.iter().sum::<f64>() / wsum;
                if delta0 != 0.0 {
                    *b0 += delta0;
                    for i in 0..n {
                        r[i] -= w[i] * delta0;
                    }
                    full_change = full_change.max(delta0.abs());
                }
                for j in 0..p {
                    if curv[j] <= 0.0 {
                        continue;
                    }
                    let zj = z.column(j);
                    let grad_j: f64 =
                        zj.iter().zip(&r).map(|(&zij, &ri)| zij * ri).sum::<f64>() / nf;
                    let u = grad_j + curv[j] * b[j];
                    let new = soft_threshold(u, lambda) / curv[j];
                    let delta = new - b[j];
                    if delta != 0.0 {
                        b[j] = new;
                        for (i, &zij) in zj.iter().enumerate() {
                            r[i] -= w[i] * zij * delta;
                        }
                        full_change = full_change.max(delta.abs());
                    }
                }
                if full_change < COEF_TOL {
                    break;
                }
                // A new coordinate entered; refresh the active set and go on.
                active = (0..p).filter(|&j| b[j] != 0.0).collect();
                outer_change = outer_change.max(full_change);
            }
        }
        // Refresh eta from scratch to avoid drift.
        for i in 0..n {
            eta[i] = *b0
                + z.row(i)
                    .iter()
                    .zip(b.iter())
                    .map(|(&zij, &bj)| zij * bj)
                    .sum::<f64>();
        }
        if outer_change < COEF_TOL {
            break;
        }
    }
    // At lambda = lambda_max the soft-threshold comparison sits exactly on
    // the boundary; rounding can leave coefficients at the 1e-13 level that
    // are zero analytically. Snap them.
    for bj in b.iter_mut() {
        if bj.abs() < 1e-12 {
            *bj = 0.0;
        }
    }
    outer
}

/// Log-spaced descending grid from lambda_max down to
/// lambda_max * lambda_min_ratio.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, lambda_min_ratio: f64) -> Vec<f64> {
    assert!(n_lambda >= 1);
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    let log_max = lambda_max.ln();
    let log_min = (lambda_max * lambda_min_ratio).ln();
    (0..n_lambda)
        .map(|i| (log_max + (log_min - log_max) * i as f64 / (n_lambda - 1) as f64).exp())
        .collect()
}

/// Smallest penalty at which all slopes are zero, on internally standardized
/// predictors: max_j |<z_j, y - ybar>| / n.
pub fn compute_lambda_max(z: &ArrayView2<f64>, y: &[f64]) -> f64 {
    let n = z.nrows() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..z.ncols())
        .map(|j| {
            z.column(j)
                .iter()
                .zip(y)
                .map(|(&zij, &yi)| zij * (yi - ybar))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max)
}

fn check_labels(y: &[f64]) -> Result<(), LassoError> {
    for &v in y {
        if v != 0.0 && v != 1.0 {
            return Err(LassoError::BadLabel(v));
        }
    }
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    if ybar == 0.0 || ybar == 1.0 {
        return Err(LassoError::NoVariance);
    }
    Ok(())
}

/// Warm-started path over a caller-supplied descending grid (used by CV so
/// every fold shares one grid).
pub fn fit_lasso_path_with_grid(
    x: &ArrayView2<f64>,
    y: &[f64],
    lambdas: &[f64],
) -> Result<LassoPath, LassoError> {
    check_labels(y)?;
    let sp = standardize_internal(x);
    let zv = sp.z.view();
    let p = x.ncols();
    let mut b0 = {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        (ybar / (1.0 - ybar)).ln()
    };
    let mut b = vec![0.0; p];
    let mut fits = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let n_iter = solve_at_lambda(&zv, y, lambda, &mut b0, &mut b);
        let converged = kkt_violation(b0, &b, &zv, y, lambda) <= KKT_TOL;
        // Back-transform to the original predictor scale.
        let coefficients: Vec<f64> = b.iter().zip(&sp.scales).map(|(&bj, &s)| bj / s).collect();
        let intercept = b0
            - coefficients
                .iter()
                .zip(&sp.means)
                .map(|(&cj, &m)| cj * m)
                .sum::<f64>();
        fits.push(LassoFit {
            intercept,
            coefficients,
            lambda,
            converged,
            n_iter,
        });
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        fits,
    })
}

/// Warm-started path over a fresh grid computed from this data.
pub fn fit_lasso_path(
    x: &ArrayView2<f64>,
    y: &[f64],
    n_lambda: usize,
    lambda_min_ratio: f64,
) -> Result<LassoPath, LassoError> {
    check_labels(y)?;
    let sp = standardize_internal(x);
    let lambda_max = compute_lambda_max(&sp.z.view(), y);
    let grid = lambda_grid(lambda_max, n_lambda, lambda_min_ratio);
    fit_lasso_path_with_grid(x, y, &grid)
}

/// Mean binomial deviance -2/n sum[y ln p + (1-y) ln(1-p)], probability
/// clamped away from 0/1.
pub fn binomial_deviance(probs: &[f64], y: &[f64]) -> f64 {
    let eps = 1e-12;
    let total: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &yi)| {
            let p = p.clamp(eps, 1.0 - eps);
            -2.0 * (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        })
        .sum();
    total / y.len() as f64
}

/// Deals shuffled rows into `folds` near-equal disjoint groups.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, &i) in idx.iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Fits the path per fold-complement on a shared grid and selects lambda
/// from the across-fold mean validation deviance.
pub fn cross_validate_lambda(
    x: &ArrayView2<f64>,
    y: &[f64],
    n_lambda: usize,
    lambda_min_ratio: f64,
    folds: usize,
    seed: u64,
    rule: LambdaRule,
) -> Result<CvResult, LassoError> {
    let n = x.nrows();
    if n < folds || folds < 2 {
        return Err(LassoError::TooFewRows { folds, n });
    }
    check_labels(y)?;
    // Shared grid from the full training data.
    let sp = standardize_internal(x);
    let lambda_max = compute_lambda_max(&sp.z.view(), y);
    let grid = lambda_grid(lambda_max, n_lambda, lambda_min_ratio);
    drop(sp);

    let fold_sets = make_folds(n, folds, seed);
    let per_fold: Result<Vec<Vec<f64>>, LassoError> = fold_sets
        .par_iter()
        .map(|held_out| {
            let mut in_fold = vec![false; n];
            for &i in held_out {
                in_fold[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let x_train = select_rows(x, &train);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let x_val = select_rows(x, held_out);
            let y_val: Vec<f64> = held_out.iter().map(|&i| y[i]).collect();
            let path = fit_lasso_path_with_grid(&x_train.view(), &y_train, &grid)?;
            Ok(path
                .fits
                .iter()
                .map(|fit| binomial_deviance(&predict_proba(fit, &x_val.view()), &y_val))
                .collect())
        })
        .collect();
    let per_fold = per_fold?;

    let kf = folds as f64;
    let mut mean_deviance = Vec::with_capacity(grid.len());
    let mut se_deviance = Vec::with_capacity(grid.len());
    for li in 0..grid.len() {
        let vals: Vec<f64> = per_fold.iter().map(|f| f[li]).collect();
        let mean = vals.iter().sum::<f64>() / kf;
        let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (kf - 1.0);
        mean_deviance.push(mean);
        se_deviance.push((var / kf).sqrt());
    }
    // Grid is descending, so ties prefer the larger (more parsimonious) lambda.
    let min_index = mean_deviance
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let selected_index = match rule {
        LambdaRule::Min => min_index,
        LambdaRule::OneSe => {
            let bound = mean_deviance[min_index] + se_deviance[min_index];
            (0..=min_index)
                .find(|&i| mean_deviance[i] <= bound)
                .unwrap_or(min_index)
        }
    };
    Ok(CvResult {
        selected_lambda: grid[selected_index],
        selected_index,
        lambdas: grid,
        mean_deviance,
        se_deviance,
        folds: fold_sets,
    })
}

fn select_rows(x: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}
