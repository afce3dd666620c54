//! Normal distribution truncated to a finite interval.
//!
//! Every quantity is formed on the side of the distribution where the
//! bounds sit in the tail (lower-tail `Φ` differences when the interval is
//! below the mean, upper-tail `1 − Φ` differences when it is above), so the
//! kernels stay accurate when the location drifts far outside [lo, hi].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normal;
use crate::error::{Error, Result};

/// Smallest admissible normalising mass.
pub const MIN_NORMALIZER: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    /// Standardised bounds.
    alpha: f64,
    beta: f64,
    /// True when the bounds are evaluated through the upper tail.
    upper: bool,
    /// Tail mass at `alpha` on the evaluation side.
    tail_lo: f64,
    z: f64,
}

impl TruncNormal {
    pub fn new(mu: f64, sigma2: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::numeric(format!("truncated normal variance must be positive, got {sigma2}")));
        }
        if !(lo < hi) || !mu.is_finite() {
            return Err(Error::numeric(format!("invalid truncation [{lo}, {hi}] or location {mu}")));
        }
        let sigma = sigma2.sqrt();
        let alpha = (lo - mu) / sigma;
        let beta = (hi - mu) / sigma;
        let upper = alpha > 0.0;
        let (tail_lo, z) = if upper {
            let t = normal::sf(alpha);
            (t, t - normal::sf(beta))
        } else {
            let t = normal::cdf(alpha);
            (t, normal::cdf(beta) - t)
        };
        if !(z >= MIN_NORMALIZER) {
            return Err(Error::numeric(format!(
                "truncated normal normaliser underflow (mu={mu}, sigma2={sigma2}, [{lo}, {hi}])"
            )));
        }
        Ok(Self { mu, sigma, lo, hi, alpha, beta, upper, tail_lo, z })
    }

    /// Kernel on the unit interval, the only support used by the compliance models.
    pub fn unit(mu: f64, sigma2: f64) -> Result<Self> {
        Self::new(mu, sigma2, 0.0, 1.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn normalizer(&self) -> f64 {
        self.z
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        let s = (x - self.mu) / self.sigma;
        normal::ln_pdf(s) - self.sigma.ln() - self.z.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let s = (x - self.mu) / self.sigma;
        normal::pdf(s) / (self.sigma * self.z)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let s = (x - self.mu) / self.sigma;
        let v =
            if self.upper { (self.tail_lo - normal::sf(s)) / self.z } else { (normal::cdf(s) - self.tail_lo) / self.z };
        v.clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.lo;
        }
        if p >= 1.0 {
            return self.hi;
        }
        let s = if self.upper {
            normal::quantile_upper(self.tail_lo - p * self.z)
        } else {
            normal::quantile(self.tail_lo + p * self.z)
        };
        let s = s.clamp(self.alpha, self.beta);
        (self.mu + self.sigma * s).clamp(self.lo, self.hi)
    }

    /// Inverse-CDF draw; one uniform per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

/// Density and distribution function of the unit-interval kernel at `d`.
///
/// A kernel whose normaliser underflows is replaced by its limit, a point
/// mass at the nearer bound: zero density inside the interval and a step CDF.
#[inline]
pub fn unit_pdf_cdf(d: f64, mu: f64, sigma2: f64) -> (f64, f64) {
    match TruncNormal::unit(mu, sigma2) {
        Ok(tn) => (tn.pdf(d), tn.cdf(d)),
        Err(_) => {
            let cdf = if mu < 0.5 {
                if d > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else if d >= 1.0 {
                1.0
            } else {
                0.0
            };
            (0.0, cdf)
        }
    }
}
