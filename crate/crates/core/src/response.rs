//! Arm-specific Dirichlet-process mixtures of logistic kernels for the
//! Stage-1 response probability P(S = 1 | A1, D1, D2, X0).
//!
//! The sampler is blocked Gibbs for labels, sticks and concentration, with
//! coordinate-wise random-walk Metropolis updates of every atom's
//! coefficients against its cluster's Bernoulli likelihood.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::Acceptance;
use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::stats::stick::{update_concentration, StickWeights};
use crate::stats::{normal, sample};

pub const DEFAULT_TRUNCATION: usize = 10;

/// Random-walk scale of every coefficient update.
pub const DEFAULT_STEP: f64 = 0.1;

/// One logistic kernel: logit p = alpha + beta1·d1 + beta2·d2 + x0'gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticAtom {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: Vec<f64>,
}

impl LogisticAtom {
    pub fn linear_predictor(&self, d1: f64, d2: f64, x0: &[f64]) -> f64 {
        self.alpha + self.beta1 * d1 + self.beta2 * d2 + x0.iter().zip(&self.gamma).map(|(x, g)| x * g).sum::<f64>()
    }

    fn coefficient_count(&self) -> usize {
        3 + self.gamma.len()
    }

    fn get(&self, c: usize) -> f64 {
        match c {
            0 => self.alpha,
            1 => self.beta1,
            2 => self.beta2,
            _ => self.gamma[c - 3],
        }
    }

    fn set(&mut self, c: usize, v: f64) {
        match c {
            0 => self.alpha = v,
            1 => self.beta1 = v,
            2 => self.beta2 = v,
            _ => self.gamma[c - 3] = v,
        }
    }

    /// Every coefficient has a N(1, 1) prior.
    fn ln_prior(&self) -> f64 {
        (0..self.coefficient_count()).map(|c| normal::ln_density(self.get(c), 1.0, 1.0)).sum()
    }

    fn from_prior<R: Rng + ?Sized>(m1: usize, rng: &mut R) -> Self {
        let mut draw = || 1.0 + sample::std_normal(rng);
        LogisticAtom { alpha: draw(), beta1: draw(), beta2: draw(), gamma: (0..m1).map(|_| draw()).collect() }
    }
}

/// Logistic function, evaluated without overflow.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln P(S = s) under a logistic kernel with linear predictor `eta`.
#[inline]
fn bernoulli_ln(s: bool, eta: f64) -> f64 {
    // ln σ(η) = −ln(1 + e^{−η}); ln(1 − σ(η)) = −ln(1 + e^{η}).
    let t = if s { -eta } else { eta };
    -softplus(t)
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDpmParams {
    pub arm: Arm,
    pub weights: StickWeights,
    pub conc: f64,
    pub atoms: Vec<LogisticAtom>,
}

impl ResponseDpmParams {
    /// Σ_j ω_j logistic(η_j).
    pub fn response_prob(&self, d1: f64, d2: f64, x0: &[f64]) -> f64 {
        let p: f64 =
            self.weights.w.iter().zip(&self.atoms).map(|(w, a)| w * logistic(a.linear_predictor(d1, d2, x0))).sum();
        p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.w.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.atoms.len() != self.weights.len() {
            return Err(Error::numeric("response weights are not a simplex"));
        }
        if self.atoms.iter().any(|a| (0..a.coefficient_count()).any(|c| !a.get(c).is_finite())) {
            return Err(Error::numeric("response coefficients are not finite"));
        }
        Ok(())
    }
}

/// One subject's inputs to the response model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    pub d1: f64,
    pub d2: f64,
    pub x0: Vec<f64>,
    pub responded: bool,
}

/// Sampler state for one arm.
#[derive(Debug, Clone)]
pub struct ResponseModel {
    pub params: ResponseDpmParams,
    pub step: f64,
    pub acceptance: Acceptance,
    members: Vec<usize>,
    rows: Vec<ResponseRow>,
    labels: Vec<usize>,
}

impl ResponseModel {
    /// Model over the subjects randomised to `arm`, with compliance values
    /// taken from `values` (observed or imputed).
    pub fn new<R: Rng + ?Sized>(
        arm: Arm,
        data: &Dataset,
        values: &[[f64; 4]],
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let members: Vec<usize> = (0..data.n()).filter(|&i| data.trajectories[i].a1 == arm).collect();
        if members.is_empty() {
            return Err(Error::Validation(format!("no subject was randomised to arm {}", arm.code())));
        }
        let rows = members
            .iter()
            .map(|&i| {
                let t = &data.trajectories[i];
                ResponseRow { d1: values[i][0], d2: values[i][1], x0: t.x0.clone(), responded: t.responder }
            })
            .collect();
        Self::from_rows(arm, members, rows, data.m1, truncation, rng)
    }

    pub fn from_rows<R: Rng + ?Sized>(
        arm: Arm,
        members: Vec<usize>,
        rows: Vec<ResponseRow>,
        m1: usize,
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::invalid("truncation level must be at least 1"));
        }
        if rows.is_empty() {
            return Err(Error::Validation(format!("no subject was randomised to arm {}", arm.code())));
        }
        let atoms = (0..truncation).map(|_| LogisticAtom::from_prior(m1, rng)).collect();
        let n = rows.len();
        Ok(Self {
            params: ResponseDpmParams {
                arm,
                weights: StickWeights::from_prior(truncation, 1.0, rng),
                conc: 1.0,
                atoms,
            },
            step: DEFAULT_STEP,
            acceptance: Acceptance::default(),
            members,
            rows,
            labels: vec![0; n],
        })
    }

    pub fn arm(&self) -> Arm {
        self.params.arm
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Refreshes the compliance inputs from a retained draw of the main chain.
    pub fn set_compliances(&mut self, values: &[[f64; 4]]) {
        for (row, &i) in self.rows.iter_mut().zip(&self.members) {
            row.d1 = values[i][0];
            row.d2 = values[i][1];
        }
    }

    fn cluster_ll(&self, atom: &LogisticAtom, members: &[usize]) -> f64 {
        members
            .iter()
            .map(|&m| {
                let r = &self.rows[m];
                bernoulli_ln(r.responded, atom.linear_predictor(r.d1, r.d2, &r.x0))
            })
            .sum()
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let b = self.params.atoms.len();
        let lnw: Vec<f64> = self.params.weights.w.iter().map(|w| w.ln()).collect();
        let mut lp = vec![0.0; b];
        for m in 0..self.rows.len() {
            let r = &self.rows[m];
            for (j, a) in self.params.atoms.iter().enumerate() {
                lp[j] = lnw[j] + bernoulli_ln(r.responded, a.linear_predictor(r.d1, r.d2, &r.x0));
            }
            self.labels[m] = sample::categorical_log(&lp, rng);
        }
        let mut groups = vec![Vec::new(); b];
        for (m, &z) in self.labels.iter().enumerate() {
            groups[z].push(m);
        }
        let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
        self.params.weights = StickWeights::posterior_draw(&counts, self.params.conc, rng);
        self.params.conc = update_concentration(&self.params.weights, 1.0, 1.0, rng);

        let m1 = self.params.atoms[0].gamma.len();
        for (j, g) in groups.iter().enumerate() {
            if g.is_empty() {
                self.params.atoms[j] = LogisticAtom::from_prior(m1, rng);
                continue;
            }
            let mut atom = self.params.atoms[j].clone();
            let mut cur = self.cluster_ll(&atom, g) + atom.ln_prior();
            for c in 0..atom.coefficient_count() {
                let old = atom.get(c);
                atom.set(c, old + self.step * sample::std_normal(rng));
                let new = self.cluster_ll(&atom, g) + atom.ln_prior();
                let ok = sample::accept(new - cur, rng);
                if ok {
                    cur = new;
                } else {
                    atom.set(c, old);
                }
                self.acceptance.record(ok);
            }
            self.params.atoms[j] = atom;
        }
    }
}
