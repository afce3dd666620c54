//! Truncated stick-breaking weights for the blocked Gibbs sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample;
use crate::error::{Error, Result};

/// Upper clamp for stick fractions that enter `ln(1 − v)`.
const V_MAX: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickWeights {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl StickWeights {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Draws all sticks from the prior Beta(1, conc).
    pub fn from_prior<R: Rng + ?Sized>(len: usize, conc: f64, rng: &mut R) -> Self {
        let counts = vec![0usize; len];
        Self::posterior_draw(&counts, conc, rng)
    }

    /// Blocked Gibbs update: v_b ~ Beta(1 + m_b, conc + Σ_{q>b} m_q) for b < B,
    /// with the last weight closing the stick.
    pub fn posterior_draw<R: Rng + ?Sized>(counts: &[usize], conc: f64, rng: &mut R) -> Self {
        let b_len = counts.len();
        let mut tail: usize = counts.iter().sum();
        let mut v = Vec::with_capacity(b_len);
        for (b, &m) in counts.iter().enumerate() {
            tail -= m;
            if b + 1 == b_len {
                v.push(1.0);
            } else {
                let draw = sample::beta(1.0 + m as f64, conc + tail as f64, rng);
                v.push(draw.clamp(f64::MIN_POSITIVE, V_MAX));
            }
        }
        stick_break(&v).expect("posterior sticks are valid by construction")
    }

    /// Σ_{b<B} ln(1 − v_b), the sufficient statistic for the concentration.
    pub fn log_remainder(&self) -> f64 {
        let n = self.v.len();
        self.v[..n.saturating_sub(1)].iter().map(|&v| (1.0 - v.min(V_MAX)).ln()).sum()
    }
}

/// w_b = v_b ∏_{h<b} (1 − v_h) for b < B and w_B = 1 − Σ_{b<B} w_b.
pub fn stick_break(v: &[f64]) -> Result<StickWeights> {
    if v.is_empty() {
        return Err(Error::invalid("stick-breaking needs at least one fraction"));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::invalid(format!("stick fraction {bad} outside (0, 1]")));
    }
    let n = v.len();
    let mut w = Vec::with_capacity(n);
    let mut rest = 1.0;
    let mut acc = 0.0;
    for &vb in &v[..n - 1] {
        let wb = vb * rest;
        rest *= 1.0 - vb;
        acc += wb;
        w.push(wb);
    }
    w.push((1.0 - acc).max(0.0));
    Ok(StickWeights { v: v.to_vec(), w })
}

/// Concentration update with a Gamma(shape, rate) prior:
/// conc ~ Gamma(shape + B − 1, rate − Σ_{b<B} ln(1 − v_b)).
pub fn update_concentration<R: Rng + ?Sized>(
    sticks: &StickWeights,
    prior_shape: f64,
    prior_rate: f64,
    rng: &mut R,
) -> f64 {
    let b = sticks.len() as f64;
    let shape = prior_shape + b - 1.0;
    let rate = prior_rate - sticks.log_remainder();
    sample::gamma(shape, rate, rng).max(1e-10)
}
