//! RBF Gram matrices, centering, and the biased HSIC estimator.

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    lengthscale: f64,
    variance: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {variance}")));
        }
        Ok(KernelParams {
            lengthscale,
            variance,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Pairwise squared Euclidean distances between rows of `xa` and rows of `xb`.
pub fn sq_dists(xa: &Matrix, xb: &Matrix) -> Result<Matrix> {
    if xa.cols() != xb.cols() {
        return Err(Error::shape("sq_dists", xa.cols(), xb.cols()));
    }
    Ok(Matrix::from_fn(xa.rows(), xb.rows(), |i, j| {
        xa.row(i)
            .iter()
            .zip(xb.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }))
}

/// `variance · exp(−‖xa_i − xb_j‖² / (2·lengthscale²))`.
pub fn rbf_gram(xa: &Matrix, xb: &Matrix, kp: KernelParams) -> Result<Matrix> {
    let d = sq_dists(xa, xb)?;
    Ok(rbf_from_sq_dists(&d, kp))
}

pub fn rbf_from_sq_dists(d: &Matrix, kp: KernelParams) -> Matrix {
    let inv = 1.0 / (2.0 * kp.lengthscale * kp.lengthscale);
    d.map(|v| kp.variance * (-v * inv).exp())
}

/// `H = I − (1/N)·11ᵀ`.
pub fn centering_matrix(n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("centering matrix needs N >= 1"));
    }
    let c = 1.0 / n as f64;
    Ok(Matrix::from_fn(n, n, |i, j| if i == j { 1.0 - c } else { -c }))
}

/// `H·K·H` computed in O(N²) by removing row, column and grand means.
pub fn double_center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k[(i, j)]).sum::<f64>() / nf)
        .collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Biased HSIC estimate `(1/N²)·Tr(K·H·L·H)`.
pub fn hsic_biased(k: &Matrix, l: &Matrix) -> Result<f64> {
    if !k.is_square() || k.shape() != l.shape() {
        return Err(Error::shape(
            "hsic_biased",
            format!("two equal square matrices, K is {:?}", k.shape()),
            format!("{:?}", l.shape()),
        ));
    }
    let n = k.rows();
    if n == 0 {
        return Err(Error::invalid("hsic_biased needs N >= 1"));
    }
    // Tr(K H L H) = Σ_ij (HKH)_ij L_ji
    let kc = double_center(k);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += kc[(i, j)] * l[(j, i)];
        }
    }
    Ok(s / (n * n) as f64)
}

/// The median pairwise distance and the pair(s) that realize it.
///
/// With an even number of pairs the median is the mean of the two middle
/// distances, each carrying weight one half.
#[derive(Debug, Clone)]
pub struct MedianPairwise {
    pub value: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

pub fn median_pairwise(x: &Matrix) -> Result<MedianPairwise> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least 2 rows"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dists.push((d, i, j));
        }
    }
    // total order with index tie-break keeps the selection deterministic
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let m = dists.len();
    if m % 2 == 1 {
        let (d, i, j) = dists[m / 2];
        Ok(MedianPairwise {
            value: d,
            pairs: vec![(i, j, 1.0)],
        })
    } else {
        let (d1, i1, j1) = dists[m / 2 - 1];
        let (d2, i2, j2) = dists[m / 2];
        Ok(MedianPairwise {
            value: 0.5 * (d1 + d2),
            pairs: vec![(i1, j1, 0.5), (i2, j2, 0.5)],
        })
    }
}

/// Median pairwise Euclidean distance between distinct rows; `1.0` when it is
/// zero (all rows identical).
pub fn median_heuristic(x: &Matrix) -> Result<f64> {
    let m = median_pairwise(x)?;
    Ok(if m.value > 0.0 { m.value } else { 1.0 })
}

/// RBF Gram of `x` with itself, unit variance, median-heuristic bandwidth.
pub fn median_rbf_gram(x: &Matrix) -> Result<Matrix> {
    let kp = KernelParams::new(median_heuristic(x)?, 1.0)?;
    rbf_gram(x, x, kp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::linalg::symmetric_eigenvalues;

    fn pts(n: usize, d: usize, seed: f64) -> Matrix {
        Matrix::from_fn(n, d, |i, j| ((i * 13 + j * 7) as f64 * seed).sin() * 2.0)
    }

    #[test]
    fn single_point_gram() {
        let x = Matrix::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let g = rbf_gram(&x, &x, KernelParams::new(0.7, 1.0).unwrap()).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
    }

    #[test]
    fn rbf_decays_with_distance() {
        let kp = KernelParams::new(1.0, 1.0).unwrap();
        let a = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let mut last = 1.0;
        for k in 1..40 {
            let b = Matrix::from_rows(&[vec![k as f64 * 0.5]]).unwrap();
            let v = rbf_gram(&a, &b, kp).unwrap()[(0, 0)];
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn rbf_matches_scalar_loop() {
        let x = pts(3, 2, 0.37);
        let kp = KernelParams::new(1.0, 1.0).unwrap();
        let g = rbf_gram(&x, &x, kp).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dx = x[(i, 0)] - x[(j, 0)];
                let dy = x[(i, 1)] - x[(j, 1)];
                let want = (-(dx * dx + dy * dy) / 2.0).exp();
                assert!((g[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let x = pts(7, 3, 0.91);
        let g = rbf_gram(&x, &x, KernelParams::new(1.3, 2.0).unwrap()).unwrap();
        assert!(g.max_abs_diff(&g.transpose()) < 1e-12);
        for i in 0..7 {
            assert!((g[(i, i)] - 2.0).abs() < 1e-15);
        }
        let ev = symmetric_eigenvalues(&g).unwrap();
        assert!(ev[0] >= -1e-8);
    }

    #[test]
    fn bad_kernel_params() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
        assert!(rbf_gram(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3), KernelParams::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn centering_small_cases() {
        assert_eq!(centering_matrix(1).unwrap().as_slice(), &[0.0]);
        assert_eq!(centering_matrix(2).unwrap().as_slice(), &[0.5, -0.5, -0.5, 0.5]);
        let h = centering_matrix(5).unwrap();
        let ones = Matrix::filled(5, 1, 1.0);
        assert!(h.matmul(&ones).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));
        let hh = h.matmul(&h).unwrap();
        assert!(hh.max_abs_diff(&h) < 1e-15);
        assert!(centering_matrix(0).is_err());
    }

    #[test]
    fn hsic_constant_kernel_is_zero() {
        let k = Matrix::filled(4, 4, 1.0);
        let l = rbf_gram(&pts(4, 1, 0.5), &pts(4, 1, 0.5), KernelParams::new(1.0, 1.0).unwrap()).unwrap();
        assert!(hsic_biased(&k, &l).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hsic_identity_two() {
        let i2 = Matrix::identity(2);
        assert!((hsic_biased(&i2, &i2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hsic_size_mismatch() {
        assert!(hsic_biased(&Matrix::identity(2), &Matrix::identity(3)).is_err());
    }

    #[test]
    fn median_cases() {
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(median_heuristic(&two).unwrap(), 3.0);
        assert_eq!(median_heuristic(&Matrix::filled(4, 2, 1.5)).unwrap(), 1.0);
        let line = Matrix::column(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(median_heuristic(&line).unwrap(), 2.0);
        assert!(median_heuristic(&Matrix::zeros(1, 2)).is_err());
    }
}
