//! Gaussian copula over the four potential compliances.
//!
//! Each subject contributes only the coordinates active for its sequence,
//! so three patterns occur: {D1,D2}, {D1,D2,D3} and {D1,D2,D4}. The D3/D4
//! correlation never meets data and moves under the prior and the
//! positive-definiteness constraint alone.

use nalgebra::{DMatrix, Matrix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sequence, Slot};
use crate::error::{Error, Result};
use crate::stats::{normal, sample};

/// Marginal CDF values are clamped to [SCORE_CLAMP, 1 − SCORE_CLAMP]
/// before the normal quantile.
pub const SCORE_CLAMP: f64 = 1e-6;

/// Smallest eigenvalue tolerated after any update of R.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Gaussian score Φ⁻¹(u) of a marginal CDF value, clamped at the boundaries.
#[inline]
pub fn h_transform(u: f64) -> f64 {
    normal::quantile(u.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP))
}

/// Active coordinate pattern of a sequence.
pub fn pattern_of(k: Sequence) -> usize {
    match k.number() {
        1 | 4 => 0,
        2 | 3 => 1,
        _ => 2,
    }
}

pub const PATTERNS: [&[usize]; 3] = [&[0, 1], &[0, 1, 2], &[0, 1, 3]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaState {
    pub r: Matrix4<f64>,
    /// Gaussian scores per subject; inert coordinates hold 0.
    pub h: Vec<[f64; 4]>,
}

impl CopulaState {
    pub fn independent(n: usize) -> Self {
        Self { r: Matrix4::identity(), h: vec![[0.0; 4]; n] }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.r[(i, i)] != 1.0 {
                return Err(Error::numeric("correlation diagonal must be 1"));
            }
            for j in 0..i {
                let v = self.r[(i, j)];
                if v != self.r[(j, i)] || !(v > -1.0 && v < 1.0) {
                    return Err(Error::numeric(format!("invalid correlation at ({i},{j}): {v}")));
                }
            }
        }
        if min_eigenvalue(&self.r) <= MIN_EIGENVALUE {
            return Err(Error::numeric("correlation matrix is not positive definite"));
        }
        Ok(())
    }
}

pub fn min_eigenvalue(r: &Matrix4<f64>) -> f64 {
    r.symmetric_eigenvalues().min()
}

fn submatrix(r: &Matrix4<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| r[(idx[a], idx[b])])
}

/// Inverse of each sequence's active submatrix, embedded in a 4×4 array
/// with zeros on inert rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrecisions([[[f64; 4]; 4]; 6]);

impl SequencePrecisions {
    pub fn new(r: &Matrix4<f64>) -> Result<Self> {
        let mut per_pattern = [[[0.0; 4]; 4]; 3];
        for (p, idx) in PATTERNS.iter().enumerate() {
            let inv = submatrix(r, idx)
                .cholesky()
                .ok_or_else(|| Error::numeric("copula submatrix is not positive definite"))?
                .inverse();
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    per_pattern[p][i][j] = inv[(a, b)];
                }
            }
        }
        let mut out = [[[0.0; 4]; 4]; 6];
        for k in Sequence::ALL {
            out[k.index()] = per_pattern[pattern_of(k)];
        }
        Ok(Self(out))
    }

    pub fn get(&self, k: Sequence) -> &[[f64; 4]; 4] {
        &self.0[k.index()]
    }

    /// Coefficients (a, c) of the copula terms involving coordinate `j`:
    /// −½·a·h_j² − h_j·c, with a = P_jj − 1 and c = Σ_{k≠j} P_jk h_k.
    #[inline]
    pub fn row_terms(&self, k: Sequence, j: Slot, h: &[f64; 4]) -> (f64, f64) {
        let p = &self.0[k.index()];
        let j = j.index();
        let mut c = 0.0;
        for (l, &hl) in h.iter().enumerate() {
            if l != j {
                c += p[j][l] * hl;
            }
        }
        (p[j][j] - 1.0, c)
    }
}

/// Copula log-likelihood of complete score rows under a full correlation matrix:
/// Σ_i [−½ ln|R| − ½ h_i'(R⁻¹ − I)h_i].
pub fn copula_loglik(rows: &[Vec<f64>], r: &DMatrix<f64>) -> Result<f64> {
    let q = r.nrows();
    let chol = r.clone().cholesky().ok_or_else(|| Error::numeric("correlation matrix is singular"))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let mut total = 0.0;
    for h in rows {
        if h.len() != q {
            return Err(Error::invalid("score row length differs from correlation dimension"));
        }
        let mut quad = 0.0;
        for a in 0..q {
            for b in 0..q {
                let m = inv[(a, b)] - if a == b { 1.0 } else { 0.0 };
                quad += h[a] * m * h[b];
            }
        }
        total += -0.5 * log_det - 0.5 * quad;
    }
    Ok(total)
}

/// Per-pattern counts and score scatter matrices, the sufficient statistics
/// for R.
#[derive(Debug, Clone, Default)]
pub struct PatternStats {
    pub count: [usize; 3],
    pub scatter: [[[f64; 4]; 4]; 3],
}

impl PatternStats {
    pub fn from_scores(h: &[[f64; 4]], seqs: &[Sequence]) -> Self {
        let mut s = PatternStats::default();
        for (row, &k) in h.iter().zip(seqs) {
            let p = pattern_of(k);
            s.count[p] += 1;
            for &a in PATTERNS[p] {
                for &b in PATTERNS[p] {
                    s.scatter[p][a][b] += row[a] * row[b];
                }
            }
        }
        s
    }

    /// Σ_p −½ n_p ln|R_p| − ½ tr((R_p⁻¹ − I) S_p); −∞ when a submatrix is not PD.
    pub fn loglik(&self, r: &Matrix4<f64>) -> f64 {
        let mut total = 0.0;
        for (p, idx) in PATTERNS.iter().enumerate() {
            if self.count[p] == 0 {
                continue;
            }
            let Some(chol) = submatrix(r, idx).cholesky() else {
                return f64::NEG_INFINITY;
            };
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let inv = chol.inverse();
            let mut tr = 0.0;
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    let m = inv[(a, b)] - if a == b { 1.0 } else { 0.0 };
                    tr += m * self.scatter[p][j][i];
                }
            }
            total += -0.5 * self.count[p] as f64 * log_det - 0.5 * tr;
        }
        total
    }
}

fn with_entry(r: &DMatrix<f64>, i: usize, j: usize, v: f64) -> DMatrix<f64> {
    let mut m = r.clone();
    m[(i, j)] = v;
    m[(j, i)] = v;
    m
}

/// Open interval of values for entry (i, j) keeping R positive definite.
///
/// det R(r) is quadratic in r, so it is fitted exactly from r ∈ {−1, 0, 1}
/// and solved; a flat quadratic falls back to bisection on the determinant.
pub fn pd_interval(r: &DMatrix<f64>, i: usize, j: usize) -> Result<(f64, f64)> {
    let q = r.nrows();
    if i == j || i >= q || j >= q {
        return Err(Error::invalid(format!("entry ({i},{j}) is not an off-diagonal of a {q}x{q} matrix")));
    }
    let det = |v: f64| with_entry(r, i, j, v).determinant();
    let cur = r[(i, j)];
    if !(det(cur) > 0.0) {
        return Err(Error::numeric("current correlation matrix is not positive definite"));
    }
    let (fm, f0, fp) = (det(-1.0), det(0.0), det(1.0));
    let a = 0.5 * (fp + fm) - f0;
    let b = 0.5 * (fp - fm);
    let scale = fm.abs().max(f0.abs()).max(fp.abs()).max(f64::MIN_POSITIVE);
    if a < -1e-12 * scale {
        let disc = (b * b - 4.0 * a * f0).max(0.0).sqrt();
        let r1 = (-b + disc) / (2.0 * a);
        let r2 = (-b - disc) / (2.0 * a);
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        return Ok((lo.max(-1.0), hi.min(1.0)));
    }
    let bisect = |mut inside: f64, mut outside: f64| {
        if det(outside) > 0.0 {
            return outside;
        }
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if det(mid) > 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    Ok((bisect(cur, -1.0), bisect(cur, 1.0)))
}

/// Acceptance bookkeeping for one MH block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub proposed: u64,
    pub accepted: u64,
}

impl Acceptance {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: Acceptance) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

/// Log acceptance ratio for moving entry (i, j) to `proposed`, including the
/// interval-length proposal correction.
pub fn correlation_log_ratio(stats: &PatternStats, r: &Matrix4<f64>, i: usize, j: usize, proposed: f64) -> Result<f64> {
    let full = DMatrix::from_iterator(4, 4, r.iter().copied());
    let (lo, hi) = pd_interval(&full, i, j)?;
    let mut next = *r;
    next[(i, j)] = proposed;
    next[(j, i)] = proposed;
    let next_full = DMatrix::from_iterator(4, 4, next.iter().copied());
    let (lo_rev, hi_rev) = match pd_interval(&next_full, i, j) {
        Ok(iv) => iv,
        Err(_) => return Ok(f64::NEG_INFINITY),
    };
    let ll = stats.loglik(&next) - stats.loglik(r);
    Ok(ll + (hi - lo).ln() - (hi_rev - lo_rev).ln())
}

/// One Metropolis sweep over the six off-diagonal entries of R.
/// Returns the smallest eigenvalue seen after any step.
pub fn mh_update_r<R: Rng + ?Sized>(
    state: &mut CopulaState,
    seqs: &[Sequence],
    rng: &mut R,
    acc: &mut Acceptance,
) -> Result<f64> {
    let stats = PatternStats::from_scores(&state.h, seqs);
    let mut min_eig = f64::INFINITY;
    for i in 0..4 {
        for j in (i + 1)..4 {
            let full = DMatrix::from_iterator(4, 4, state.r.iter().copied());
            let (lo, hi) = pd_interval(&full, i, j)?;
            let proposed = lo + (hi - lo) * rng.random::<f64>();
            let log_ratio = if proposed > -1.0 && proposed < 1.0 {
                correlation_log_ratio(&stats, &state.r, i, j, proposed)?
            } else {
                f64::NEG_INFINITY
            };
            let ok = sample::accept(log_ratio, rng);
            if ok {
                let mut next = state.r;
                next[(i, j)] = proposed;
                next[(j, i)] = proposed;
                if min_eigenvalue(&next) > MIN_EIGENVALUE {
                    state.r = next;
                }
            }
            acc.record(ok);
            min_eig = min_eig.min(min_eigenvalue(&state.r));
        }
    }
    if min_eig <= MIN_EIGENVALUE {
        return Err(Error::numeric(format!(
            "correlation matrix lost positive definiteness (min eigenvalue {min_eig})"
        )));
    }
    Ok(min_eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng::RngStream;
    use nalgebra::dmatrix;

    #[test]
    fn score_transform_reference_points() {
        assert_eq!(h_transform(0.5), 0.0);
        assert!((h_transform(normal::cdf(1.0)) - 1.0).abs() < 1e-12);
        assert!((h_transform(0.0) + 4.753_424_308_822_899).abs() < 1e-9);
        assert!((h_transform(1.0) - 4.753_424_308_822_899).abs() < 1e-9);
    }

    #[test]
    fn independence_gives_zero() {
        let rows = vec![vec![0.3, -1.2, 2.0], vec![1.0, 1.0, 1.0]];
        assert_eq!(copula_loglik(&rows, &DMatrix::identity(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn bivariate_value_by_direct_arithmetic() {
        let r = dmatrix![1.0, 0.2; 0.2, 1.0];
        let v = copula_loglik(&[vec![1.0, 1.0]], &r).unwrap();
        // R⁻¹ = [[1, −0.2], [−0.2, 1]] / 0.96, so h'R⁻¹h = 1.6/0.96.
        let expect = -0.5 * 0.96f64.ln() - 0.5 * (1.6 / 0.96 - 2.0);
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn relabelling_invariance() {
        let r = dmatrix![1.0, 0.3, -0.1; 0.3, 1.0, 0.25; -0.1, 0.25, 1.0];
        let h = vec![vec![0.4, -0.7, 1.3]];
        let perm = [2, 0, 1];
        let rp = DMatrix::from_fn(3, 3, |a, b| r[(perm[a], perm[b])]);
        let hp = vec![perm.iter().map(|&p| h[0][p]).collect::<Vec<_>>()];
        let a = copula_loglik(&h, &r).unwrap();
        let b = copula_loglik(&hp, &rp).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn intervals() {
        let (lo, hi) = pd_interval(&dmatrix![1.0, 0.3; 0.3, 1.0], 0, 1).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let r = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.2; 0.0, 0.2, 1.0];
        let (lo, hi) = pd_interval(&r, 0, 2).unwrap();
        let root = 0.96f64.sqrt();
        assert!((lo + root).abs() < 1e-12 && (hi - root).abs() < 1e-12, "{lo} {hi}");
        for v in [lo, hi] {
            assert!(with_entry(&r, 0, 2, v).determinant().abs() < 1e-10);
        }
    }

    #[test]
    fn interval_endpoints_are_roots_on_random_matrices() {
        let mut rng = RngStream::new(31, 0);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 6, |_, _| sample::std_normal(&mut rng));
            let cov = &a * a.transpose();
            let d = cov.diagonal().map(|v| 1.0 / v.sqrt());
            let r = DMatrix::from_fn(4, 4, |i, j| cov[(i, j)] * d[i] * d[j]);
            let (lo, hi) = pd_interval(&r, 1, 3).unwrap();
            assert!(lo < r[(1, 3)] && r[(1, 3)] < hi);
            for v in [lo, hi] {
                if v.abs() < 1.0 {
                    assert!(with_entry(&r, 1, 3, v).determinant().abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn prior_only_ratio_is_the_length_ratio() {
        // No data: the likelihood is flat, and the interval for (0, 2) does not
        // depend on the entry itself, so the ratio is exactly zero on the log scale.
        let mut r = Matrix4::identity();
        r[(0, 1)] = 0.5;
        r[(1, 0)] = 0.5;
        r[(1, 2)] = 0.3;
        r[(2, 1)] = 0.3;
        let stats = PatternStats::default();
        let lr = correlation_log_ratio(&stats, &r, 0, 2, 0.6).unwrap();
        assert!(lr.abs() < 1e-12);
    }

    #[test]
    fn pattern_statistics_match_row_sums() {
        let seqs: Vec<Sequence> = [1u8, 2, 5, 3].iter().map(|&k| Sequence::new(k).unwrap()).collect();
        let h = vec![[0.2, -0.4, 0.0, 0.0], [1.1, 0.3, -0.6, 0.0], [-0.5, 0.9, 0.0, 0.4], [0.1, 0.2, 0.3, 0.0]];
        let mut r = Matrix4::identity();
        for (i, j, v) in [(0, 1, 0.1), (0, 2, 0.25), (1, 2, -0.2), (0, 3, 0.3), (1, 3, 0.15), (2, 3, 0.05)] {
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
        let stats = PatternStats::from_scores(&h, &seqs);
        let mut direct = 0.0;
        for (row, k) in h.iter().zip(&seqs) {
            let idx = PATTERNS[pattern_of(*k)];
            let sub = submatrix(&r, idx);
            direct += copula_loglik(&[idx.iter().map(|&i| row[i]).collect()], &sub).unwrap();
        }
        assert!((stats.loglik(&r) - direct).abs() < 1e-12);
    }

    #[test]
    fn stress_chain_keeps_r_positive_definite() {
        let mut rng = RngStream::new(5, 0);
        let seqs: Vec<Sequence> = (0..60).map(|i| Sequence::new((i % 6) as u8 + 1).unwrap()).collect();
        let mut st = CopulaState::independent(60);
        for (i, row) in st.h.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = sample::std_normal(&mut rng) * if i % 2 == 0 { 1.0 } else { 0.5 };
            }
        }
        let mut acc = Acceptance::default();
        for _ in 0..1000 {
            let eig = mh_update_r(&mut st, &seqs, &mut rng, &mut acc).unwrap();
            assert!(eig > MIN_EIGENVALUE);
            st.validate().unwrap();
        }
        assert!(acc.rate() > 0.05);
    }
}
