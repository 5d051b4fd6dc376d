use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
    /// Diagonal jitter that had to be added before the factorization succeeded.
    pub jitter: f64,
}

/// First and last rung of the jitter ladder; each retry multiplies by ten.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

impl Cholesky {
    /// Plain factorization, no jitter.
    pub fn new(a: &Matrix) -> Result<Self> {
        factor(a).map(|l| Cholesky { l, jitter: 0.0 })
    }

    /// Factorizes `a`, retrying with `a + jitter·I` for jitter on the ladder
    /// 1e-8, 1e-7, …, 1e-4 before giving up.
    pub fn with_jitter(a: &Matrix) -> Result<Self> {
        if let Ok(l) = factor(a) {
            return Ok(Cholesky { l, jitter: 0.0 });
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let mut aj = a.clone();
            aj.add_diagonal(jitter);
            if let Ok(l) = factor(&aj) {
                return Ok(Cholesky { l, jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: JITTER_MAX })
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.rows()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `A·X = B` for `X`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(Error::shape("Cholesky::solve", n, b.rows()));
        }
        let mut x = b.clone();
        let m = b.cols();
        // forward: L·Z = B
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= lik * x[(k, j)];
                    }
                }
            }
            let d = self.l[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        // backward: Lᵀ·X = Z
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.l[(k, i)];
                if lki != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= lki * x[(k, j)];
                    }
                }
            }
            let d = self.l[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.l.rows();
        self.solve(&Matrix::identity(n))
            .expect("identity has matching rows")
    }
}

fn factor(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape("cholesky", "square matrix", format!("{:?}", a.shape())));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Symmetric eigenvalues by cyclic Jacobi rotations. Intended for small
/// matrices (spectrum checks in tests and diagnostics).
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::shape("symmetric_eigenvalues", "square", format!("{:?}", a.shape())));
    }
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix {
        let b = Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let mut a = b.matmul_t(&b).unwrap();
        a.add_diagonal(0.5);
        a
    }

    #[test]
    fn solve_and_inverse() {
        let a = spd();
        let ch = Cholesky::new(&a).unwrap();
        let recon = ch.factor().matmul_t(ch.factor()).unwrap();
        assert!(recon.max_abs_diff(&a) < 1e-10);
        let prod = a.matmul(&ch.inverse()).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(4)) < 1e-10);
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let a = spd();
        let ld = Cholesky::new(&a).unwrap().log_det();
        let ev = symmetric_eigenvalues(&a).unwrap();
        let ld2: f64 = ev.iter().map(|v| v.ln()).sum();
        assert!((ld - ld2).abs() < 1e-9);
    }

    #[test]
    fn jitter_ladder_rescues_singular_psd() {
        // rank one
        let a = Matrix::filled(3, 3, 1.0);
        assert!(Cholesky::new(&a).is_err());
        let ch = Cholesky::with_jitter(&a).unwrap();
        assert!(ch.jitter >= JITTER_START && ch.jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(
            Cholesky::with_jitter(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
