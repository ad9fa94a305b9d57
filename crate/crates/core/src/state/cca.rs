//! Canonical correlation analysis via SVD of the whitened cross-covariance.
//!
//! Both blocks are z-scored, `ridge * I` is added to each covariance block,
//! and the X-side directions are `Sxx^{-1/2} U` where `U` holds the leading
//! left singular vectors of `Sxx^{-1/2} Sxy Syy^{-1/2}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

pub const STD_FLOOR: f64 = 1e-12;
pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_K_CCA: usize = 5;

/// Column means and (population) standard deviations.
pub fn column_stats(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mut mean = Vec::with_capacity(m.ncols());
    let mut std = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt().max(STD_FLOOR));
    }
    (mean, std)
}

pub fn standardize(m: &DMatrix<f64>, mean: &[f64], std: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] - mean[j]) / std[j])
}

fn inv_sqrt(cov: &DMatrix<f64>, ridge: f64, block: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max().max(1.0);
    let min = eig.eigenvalues.min();
    if min <= 1e-12 * max {
        let hint = if ridge == 0.0 { " (ridge is 0)" } else { "" };
        return Err(Error::Numerical(format!(
            "{block} covariance is rank deficient: smallest eigenvalue {min:e}{hint}"
        )));
    }
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    /// `(d + 6) x k_cca`: standardized input to canonical correlates.
    pub projection: RowMatrix,
    /// Canonical correlations, descending, in `[0, 1]`.
    pub correlations: Vec<f64>,
    pub ridge: f64,
}

impl CcaModel {
    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn k(&self) -> usize {
        self.projection.cols
    }

    /// `standardize(x) . projection`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.len(), "CCA projection input"));
        }
        let k = self.k();
        let mut out = vec![0.0; k];
        for (i, &v) in x.iter().enumerate() {
            let z = (v - self.x_mean[i]) / self.x_std[i];
            let row = self.projection.row(i);
            for (o, w) in out.iter_mut().zip(row) {
                *o += z * w;
            }
        }
        Ok(out)
    }
}

/// Fits CCA between `x` (n x p) and `y` (n x q), keeping `k` X-side directions.
pub fn fit_cca(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, ridge: f64) -> Result<CcaModel> {
    let (n, p) = x.shape();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::dim(n, y.nrows(), "CCA target rows"));
    }
    if n <= p + q {
        return Err(Error::InvalidData(format!(
            "CCA needs more than {} rows, got {n}",
            p + q
        )));
    }
    if k == 0 || k > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "k_cca = {k} must lie in [1, {}]",
            p.min(q)
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }

    let (x_mean, x_std) = column_stats(x);
    let (y_mean, y_std) = column_stats(y);
    let xs = standardize(x, &x_mean, &x_std);
    let ys = standardize(y, &y_mean, &y_std);
    let nf = n as f64;
    let sxx = xs.transpose() * &xs / nf + DMatrix::identity(p, p) * ridge;
    let syy = ys.transpose() * &ys / nf + DMatrix::identity(q, q) * ridge;
    let sxy = xs.transpose() * &ys / nf;

    let wx = inv_sqrt(&sxx, ridge, "X")?;
    let wy = inv_sqrt(&syy, ridge, "Y")?;
    let m = &wx * sxy * wy;
    let svd = m.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut proj = DMatrix::zeros(p, k);
    let mut correlations = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut w = &wx * u.column(idx);
        // Fix the sign: largest-magnitude coefficient positive.
        let pivot = w.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            w.neg_mut();
        }
        proj.set_column(c, &w);
        correlations.push(svd.singular_values[idx].clamp(0.0, 1.0));
    }
    Ok(CcaModel {
        x_mean,
        x_std,
        projection: RowMatrix::from(&proj),
        correlations,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn perfect_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(2000, 8, &mut rng);
        let noise = gaussian(2000, 5, &mut rng);
        let mut y = DMatrix::zeros(2000, 6);
        y.set_column(0, &x.column(2));
        for j in 0..5 {
            y.set_column(j + 1, &noise.column(j));
        }
        let m = fit_cca(&x, &y, 5, 0.0).unwrap();
        assert!((m.correlations[0] - 1.0).abs() < 1e-8, "{:?}", m.correlations);
        // First direction picks out column 2 only.
        let w: Vec<f64> = (0..8).map(|i| m.projection.get(i, 0)).collect();
        for (i, v) in w.iter().enumerate() {
            if i != 2 {
                assert!(v.abs() < 1e-6 * w[2].abs(), "{w:?}");
            }
        }
    }

    #[test]
    fn independent_blocks_have_small_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(10_000, 10, &mut rng);
        let y = gaussian(10_000, 6, &mut rng);
        let m = fit_cca(&x, &y, 5, DEFAULT_RIDGE).unwrap();
        assert!(m.correlations.iter().all(|&c| c < 0.1), "{:?}", m.correlations);
        assert!(m.correlations.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn correlates_are_centered_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(3000, 7, &mut rng) * 3.0;
        let w = gaussian(7, 6, &mut rng);
        let y = &x * w + gaussian(3000, 6, &mut rng) * 4.0;
        let m = fit_cca(&x, &y, 5, DEFAULT_RIDGE).unwrap();
        let rows: Vec<Vec<f64>> = (0..3000)
            .map(|i| m.project(&x.row(i).iter().copied().collect::<Vec<_>>()).unwrap())
            .collect();
        for c in 0..5 {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / 3000.0;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / 3000.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        let at_mean = m.project(&m.x_mean.clone()).unwrap();
        assert!(at_mean.iter().all(|v| v.abs() < 1e-12));
        assert!(m.project(&[0.0; 3]).is_err());
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = gaussian(500, 4, &mut rng);
        let c0 = x.column(0).clone_owned();
        x.set_column(3, &(c0 * 2.0));
        let y = gaussian(500, 3, &mut rng);
        assert!(matches!(fit_cca(&x, &y, 2, 0.0), Err(Error::Numerical(_))));
        assert!(fit_cca(&x, &y, 2, 1e-6).is_ok());
        assert!(fit_cca(&x, &y, 4, 1e-6).is_err());
        let small = gaussian(6, 4, &mut rng);
        assert!(fit_cca(&small, &gaussian(6, 3, &mut rng), 2, 1e-6).is_err());
    }
}
