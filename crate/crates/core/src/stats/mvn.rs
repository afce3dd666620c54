//! Multivariate normal density, Schur-complement conditioning and the
//! Normal–inverse-Wishart draws used by the outcome mixture.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normal::LN_SQRT_2PI;
use super::sample;
use crate::error::{Error, Result};

/// Diagonal jitter added on the single Cholesky retry.
pub const CHOLESKY_JITTER: f64 = 1e-12;

/// Conditioning blocks with a larger condition number are rejected.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let q = mean.len();
        if cov.nrows() != q || cov.ncols() != q {
            return Err(Error::invalid(format!("covariance is {}x{}, mean has length {q}", cov.nrows(), cov.ncols())));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..q {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::numeric("covariance is not symmetric"));
                }
            }
        }
        cholesky_with_jitter(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Cholesky factor, retrying once with `CHOLESKY_JITTER` on the diagonal.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c);
    }
    let n = cov.nrows();
    let jittered = cov + DMatrix::<f64>::identity(n, n) * CHOLESKY_JITTER;
    Cholesky::new(jittered).ok_or_else(|| Error::numeric("covariance is not positive definite"))
}

/// Exact Gaussian log density.
pub fn mvn_logpdf(z: &[f64], p: &MvnParams) -> Result<f64> {
    if z.len() != p.dim() {
        return Err(Error::invalid(format!("point has dimension {}, distribution {}", z.len(), p.dim())));
    }
    let kernel = GaussianKernel::new(p.mean.as_slice(), &p.cov)?;
    Ok(kernel.ln_pdf(z))
}

/// Conditional distribution of the coordinates not in `idx`, given
/// `x[idx] = z`. Remaining coordinates keep their original order.
pub fn mvn_condition(p: &MvnParams, idx: &[usize], z: &[f64]) -> Result<MvnParams> {
    let q = p.dim();
    if idx.len() != z.len() {
        return Err(Error::invalid("index set and values differ in length"));
    }
    if idx.is_empty() || idx.len() >= q || idx.iter().any(|&i| i >= q) {
        return Err(Error::invalid("conditioning set must be a non-empty strict subset"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("conditioning values must be finite"));
    }
    let rest: Vec<usize> = (0..q).filter(|i| !idx.contains(i)).collect();
    let s_cc = p.cov.select_rows(idx).select_columns(idx);
    let eig = s_cc.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(lo > 0.0) || hi / lo > MAX_CONDITION_NUMBER {
        return Err(Error::numeric("conditioning block is singular or ill-conditioned"));
    }
    let chol = cholesky_with_jitter(&s_cc)?;
    let s_rc = p.cov.select_rows(&rest).select_columns(idx);
    let s_rr = p.cov.select_rows(&rest).select_columns(&rest);
    let mu_r = p.mean.select_rows(&rest);
    let mu_c = p.mean.select_rows(idx);
    let dz = DVector::from_column_slice(z) - mu_c;
    let mean = mu_r + &s_rc * chol.solve(&dz);
    let mut cov = s_rr - &s_rc * chol.solve(&s_rc.transpose());
    symmetrize(&mut cov);
    Ok(MvnParams { mean, cov })
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Gaussian with a pre-factored covariance for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major lower-triangular Cholesky factor.
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianKernel {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        let c = cholesky_with_jitter(cov)?;
        let l = c.l();
        let mut chol = vec![0.0; dim * dim];
        let mut log_det_half = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                chol[i * dim + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        Ok(Self { dim, mean: mean.to_vec(), chol, log_norm: -(dim as f64) * LN_SQRT_2PI - log_det_half })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mahalanobis quadratic form via forward substitution.
    #[inline]
    pub fn mahalanobis(&self, z: &[f64]) -> f64 {
        let d = self.dim;
        let mut buf = [0.0f64; 16];
        let mut heap;
        let w: &mut [f64] = if d <= 16 {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let mut s = z[i] - self.mean[i];
            for j in 0..i {
                s -= row[j] * w[j];
            }
            let v = s / row[i];
            w[i] = v;
            q += v * v;
        }
        q
    }

    #[inline]
    pub fn ln_pdf(&self, z: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis(z)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let e: Vec<f64> = (0..d).map(|_| sample::std_normal(rng)).collect();
        (0..d).map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * e[j]).sum::<f64>()).collect()
    }
}

/// Draws Σ ~ inverse-Wishart(ν, Ψ) through the Bartlett decomposition of
/// Σ⁻¹ ~ Wishart(ν, Ψ⁻¹).
pub fn sample_inverse_wishart<R: Rng + ?Sized>(nu: f64, psi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let q = psi.nrows();
    if nu <= q as f64 - 1.0 {
        return Err(Error::invalid(format!("inverse-Wishart needs nu > q - 1 (nu={nu}, q={q})")));
    }
    let psi_inv = cholesky_with_jitter(psi)?.inverse();
    let l = cholesky_with_jitter(&psi_inv)?.l();
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = sample::chi_squared(nu - i as f64, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = sample::std_normal(rng);
        }
    }
    let la = l * a;
    let precision = &la * la.transpose();
    let mut sigma = cholesky_with_jitter(&precision)?.inverse();
    symmetrize(&mut sigma);
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng::RngStream;
    use nalgebra::dmatrix;

    fn params(mean: &[f64], cov: DMatrix<f64>) -> MvnParams {
        MvnParams::new(DVector::from_column_slice(mean), cov).unwrap()
    }

    #[test]
    fn logpdf_at_mean_with_identity() {
        for q in 1..6 {
            let p = params(&vec![0.3; q], DMatrix::identity(q, q));
            let v = mvn_logpdf(&vec![0.3; q], &p).unwrap();
            assert!((v + q as f64 * LN_SQRT_2PI).abs() < 1e-14);
        }
        let p = params(&[0.0], dmatrix![1.0]);
        assert!((mvn_logpdf(&[1.0], &p).unwrap() - (-0.5 - LN_SQRT_2PI)).abs() < 1e-15);
    }

    #[test]
    fn bivariate_conditioning_closed_form() {
        let p = params(&[0.0, 0.0], dmatrix![1.0, 0.2; 0.2, 1.0]);
        let c = mvn_condition(&p, &[1], &[1.0]).unwrap();
        assert!((c.mean[0] - 0.2).abs() < 1e-15);
        assert!((c.cov[(0, 0)] - 0.96).abs() < 1e-15);
    }

    #[test]
    fn independent_coordinates_condition_to_marginal() {
        let p = params(&[1.0, -2.0, 0.5], DMatrix::identity(3, 3) * 2.0);
        let c = mvn_condition(&p, &[0, 2], &[4.0, -1.0]).unwrap();
        assert_eq!(c.mean[0], -2.0);
        assert_eq!(c.cov[(0, 0)], 2.0);
    }

    #[test]
    fn singular_block_is_reported() {
        let p = MvnParams { mean: DVector::zeros(3), cov: dmatrix![1.0, 1.0, 0.0; 1.0, 1.0, 0.0; 0.0, 0.0, 1.0] };
        assert!(mvn_condition(&p, &[0, 1], &[0.0, 0.0]).is_err());
        assert!(mvn_condition(&p, &[], &[]).is_err());
    }

    #[test]
    fn jitter_rescues_borderline_matrix() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(cholesky_with_jitter(&m).is_ok());
        let bad = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(cholesky_with_jitter(&bad).is_err());
    }

    #[test]
    fn inverse_wishart_mean() {
        let psi = dmatrix![2.0, 0.5; 0.5, 1.0];
        let nu = 10.0;
        let mut rng = RngStream::new(9, 0);
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        let draws = 20000;
        for _ in 0..draws {
            acc += sample_inverse_wishart(nu, &psi, &mut rng).unwrap();
        }
        acc /= draws as f64;
        let expect = &psi / (nu - 2.0 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((acc[(i, j)] - expect[(i, j)]).abs() < 0.02, "{acc} vs {expect}");
            }
        }
    }
}
