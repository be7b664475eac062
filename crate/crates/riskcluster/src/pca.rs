//! Principal component analysis of standardized predictors via Jacobi
//! eigendecomposition of the covariance matrix, with Kaiser selection.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::preprocess::DesignMatrix;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("column {column} has mean {mean:.3e}; standardize before fitting")]
    NotStandardized { column: String, mean: f64 },
    #[error("Jacobi eigensolver did not converge in {0} sweeps")]
    ConvergenceFailure(usize),
    #[error("matrix has {actual} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need more rows than columns (n={n}, p={p})")]
    TooFewRows { n: usize, p: usize },
}

/// Eigendecomposition of the covariance of standardized data. Loadings are
/// stored column-wise and match `eigenvalues` in (descending) order.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub eigenvalues: Vec<f64>,
    pub loadings: Array2<f64>,
    pub n_selected: usize,
    pub columns: Vec<String>,
}

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues and
/// the accumulated rotation matrix (eigenvectors in columns), unsorted.
fn jacobi_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), PcaError> {
    let p = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(p);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= JACOBI_TOL {
            return Ok((m.diag().to_owned(), v));
        }
        for i in 0..p - 1 {
            for j in i + 1..p {
                let apq = m[(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let vki = v[(k, i)];
                    let vkj = v[(k, j)];
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    Err(PcaError::ConvergenceFailure(JACOBI_MAX_SWEEPS))
}

/// Decomposes C = X'X/(n-1) of an already-standardized matrix. Loading signs
/// are fixed so the largest-magnitude entry of each component is positive.
pub fn fit_pca(m: &DesignMatrix) -> Result<PcaModel, PcaError> {
    let n = m.n_rows();
    let p = m.n_cols();
    if n <= p {
        return Err(PcaError::TooFewRows { n, p });
    }
    for (j, name) in m.column_names.iter().enumerate() {
        let mean = m.data.column(j).sum() / n as f64;
        if mean.abs() > 1e-6 {
            return Err(PcaError::NotStandardized {
                column: name.clone(),
                mean,
            });
        }
    }
    let cov = m.data.t().dot(&m.data) / (n as f64 - 1.0);
    let (vals, vecs) = jacobi_eigen(&cov)?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| vals[i].max(0.0)).collect();
    let mut loadings = Array2::zeros((p, p));
    for (dst, &src) in order.iter().enumerate() {
        let col = vecs.column(src);
        let (_, &extreme) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        let sign = if extreme < 0.0 { -1.0 } else { 1.0 };
        for k in 0..p {
            loadings[(k, dst)] = sign * col[k];
        }
    }

    let mut model = PcaModel {
        eigenvalues,
        loadings,
        n_selected: 0,
        columns: m.column_names.clone(),
    };
    model.n_selected = select_components_kaiser(&model);
    Ok(model)
}

/// Count of eigenvalues strictly greater than 1.
pub fn select_components_kaiser(model: &PcaModel) -> usize {
    model.eigenvalues.iter().filter(|&&l| l > 1.0).count()
}

/// Scores = X · loadings[:, ..k] for a matrix standardized the same way as
/// the fitting data.
pub fn project(model: &PcaModel, m: &DesignMatrix, k: usize) -> Result<Array2<f64>, PcaError> {
    let p = model.loadings.nrows();
    if m.n_cols() != p || k > p {
        return Err(PcaError::DimensionMismatch {
            expected: p,
            actual: if k > p { k } else { m.n_cols() },
        });
    }
    Ok(m.data.dot(&model.loadings.slice(ndarray::s![.., ..k])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{apply_standardizer, fit_standardizer};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn matrix(data: Array2<f64>) -> DesignMatrix {
        let names = (0..data.ncols()).map(|j| format!("x{}", j)).collect();
        let n = data.nrows();
        DesignMatrix {
            data,
            column_names: names,
            row_map: (0..n).collect(),
        }
    }

    fn standardized(m: &DesignMatrix) -> DesignMatrix {
        let cols: Vec<&str> = m.column_names.iter().map(|s| s.as_str()).collect();
        let s = fit_standardizer(m, &cols).unwrap();
        apply_standardizer(&s, m).unwrap()
    }

    fn random_standardized(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Array2::zeros((n, p));
        // Mix a couple of shared factors in so the spectrum is not flat.
        for i in 0..n {
            let f1: f64 = rng.sample(rand_distr::StandardNormal);
            let f2: f64 = rng.sample(rand_distr::StandardNormal);
            for j in 0..p {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let w = (j % 3) as f64 * 0.4;
                data[(i, j)] = w * f1 + 0.3 * f2 + e;
            }
        }
        standardized(&matrix(data))
    }

    #[test]
    fn perfectly_correlated_columns_give_eigenvalues_two_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let mut data = Array2::zeros((n, 2));
        for i in 0..n {
            let x: f64 = rng.sample(rand_distr::StandardNormal);
            data[(i, 0)] = x;
            data[(i, 1)] = 3.0 * x - 1.0;
        }
        let m = standardized(&matrix(data));
        let model = fit_pca(&m).unwrap();
        assert!((model.eigenvalues[0] - 2.0).abs() <= 1e-10);
        assert!(model.eigenvalues[1].abs() <= 1e-10);
    }

    #[test]
    fn independent_columns_give_near_unit_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20000;
        let p = 5;
        let mut data = Array2::zeros((n, p));
        for v in data.iter_mut() {
            *v = rng.sample(rand_distr::StandardNormal);
        }
        let m = standardized(&matrix(data));
        let model = fit_pca(&m).unwrap();
        for &l in &model.eigenvalues {
            assert!((l - 1.0).abs() < 0.1, "eigenvalue {}", l);
        }
    }

    #[test]
    fn trace_is_preserved() {
        let m = random_standardized(500, 7, 3);
        let model = fit_pca(&m).unwrap();
        let total: f64 = model.eigenvalues.iter().sum();
        assert!((total - 7.0).abs() <= 1e-8, "sum {}", total);
    }

    #[test]
    fn loadings_are_orthonormal() {
        let m = random_standardized(400, 6, 4);
        let model = fit_pca(&m).unwrap();
        let gram = model.loadings.t().dot(&model.loadings);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eigenpair_residuals_small() {
        let m = random_standardized(400, 6, 5);
        let model = fit_pca(&m).unwrap();
        let n = m.n_rows() as f64;
        let cov = m.data.t().dot(&m.data) / (n - 1.0);
        for i in 0..6 {
            let v = model.loadings.column(i);
            let cv = cov.dot(&v);
            let resid: f64 = cv
                .iter()
                .zip(v.iter())
                .map(|(&a, &b)| (a - model.eigenvalues[i] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-8, "residual {} for pair {}", resid, i);
        }
    }

    #[test]
    fn kaiser_counts_strictly_above_one() {
        let base = random_standardized(100, 3, 6);
        let mk = |vals: Vec<f64>| PcaModel {
            eigenvalues: vals,
            loadings: Array2::eye(3),
            n_selected: 0,
            columns: base.column_names.clone(),
        };
        assert_eq!(
            select_components_kaiser(&mk(vec![2.4, 1.6, 1.2])) ,
            3
        );
        assert_eq!(select_components_kaiser(&mk(vec![1.0, 0.9, 0.1])), 0);
        assert_eq!(select_components_kaiser(&mk(vec![2.0, 1.0, 0.5])), 1);
    }

    #[test]
    fn full_projection_reconstructs() {
        let m = random_standardized(300, 5, 7);
        let model = fit_pca(&m).unwrap();
        let scores = project(&model, &m, 5).unwrap();
        let recon = scores.dot(&model.loadings.t());
        let err: f64 = (&recon - &m.data).iter().map(|&e| e * e).sum::<f64>().sqrt();
        assert!(err <= 1e-8, "reconstruction error {}", err);
    }

    #[test]
    fn score_variance_matches_eigenvalue() {
        let m = random_standardized(5000, 6, 8);
        let model = fit_pca(&m).unwrap();
        let scores = project(&model, &m, 6).unwrap();
        let n = scores.nrows() as f64;
        for i in 0..6 {
            let col = scores.column(i);
            let mean = col.sum() / n;
            let var: f64 = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            assert!(
                (var - model.eigenvalues[i]).abs() <= 1e-6,
                "var {} vs eigenvalue {}",
                var,
                model.eigenvalues[i]
            );
        }
    }

    #[test]
    fn variance_ordering_holds() {
        let m = random_standardized(1000, 7, 9);
        let model = fit_pca(&m).unwrap();
        for w in model.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] - 1e-10);
        }
    }

    #[test]
    fn unstandardized_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut data = Array2::zeros((50, 2));
        for v in data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal) + 5.0;
        }
        assert!(matches!(
            fit_pca(&matrix(data)),
            Err(PcaError::NotStandardized { .. })
        ));
    }

    #[test]
    fn determinism() {
        let m = random_standardized(300, 5, 11);
        let a = fit_pca(&m).unwrap();
        let b = fit_pca(&m).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.loadings, b.loadings);
    }

    #[test]
    fn sign_convention_positive_extreme() {
        let m = random_standardized(300, 5, 12);
        let model = fit_pca(&m).unwrap();
        for j in 0..5 {
            let col = model.loadings.column(j);
            let extreme = col
                .iter()
                .cloned()
                .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap();
            assert!(extreme > 0.0);
        }
    }
}
