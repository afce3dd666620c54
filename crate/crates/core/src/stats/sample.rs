//! Variate generators used by the Gibbs and Metropolis steps.

use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};

/// Gamma(shape, rate).
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("gamma parameters must be positive").sample(rng)
}

/// Inverse-gamma(shape, scale): 1 / Gamma(shape, rate = scale).
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / gamma(shape, scale, rng)
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    Beta::new(a, b).expect("beta parameters must be positive").sample(rng)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn chi_squared<R: Rng + ?Sized>(dof: f64, rng: &mut R) -> f64 {
    ChiSquared::new(dof).expect("positive degrees of freedom").sample(rng)
}

/// ln of the Gamma(shape, rate) density; −∞ off the support.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// ln Σ exp(x), ignoring −∞ entries. Returns −∞ when every entry is −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalises log-weights in place into probabilities. Returns `false`
/// (and leaves a uniform vector) when all weights are −∞ or NaN.
pub fn normalize_log_weights(logw: &mut [f64]) -> bool {
    let lse = log_sum_exp(logw);
    if !lse.is_finite() {
        let u = 1.0 / logw.len() as f64;
        logw.iter_mut().for_each(|x| *x = u);
        return false;
    }
    logw.iter_mut().for_each(|x| *x = (*x - lse).exp());
    true
}

/// Draws an index with probability proportional to `exp(logw)`.
pub fn categorical_log<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return rng.random_range(0..logw.len());
    }
    let total: f64 = logw.iter().map(|&x| (x - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in logw.iter().enumerate() {
        u -= (x - m).exp();
        if u <= 0.0 {
            return i;
        }
    }
    // Rounding can leave a sliver; fall back to the last index with mass.
    logw.iter().rposition(|&x| x > f64::NEG_INFINITY).unwrap_or(logw.len() - 1)
}

/// Metropolis accept/reject on a log acceptance ratio.
pub fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        // Still consume a uniform so the stream position does not depend on the branch.
        let _: f64 = rng.random();
        return true;
    }
    rng.random::<f64>().ln() < log_ratio
}
