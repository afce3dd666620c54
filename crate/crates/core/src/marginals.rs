//! Dirichlet-process mixtures of truncated-normal regressions, one per
//! potential compliance.
//!
//! Mixing is over the (intercept, variance) atoms only; the regression
//! coefficients are shared across clusters. Stage-2 marginals regress on the
//! parent Stage-1 compliance and the intermediate covariates as well.
//!
//! Each sweep draws labels, sticks and the concentration by blocked Gibbs,
//! then updates the atoms, the base-measure hyperparameters and the shared
//! coefficients by Metropolis steps whose target is the label-free mixture
//! likelihood times the copula terms that involve this coordinate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{h_transform, Acceptance, SequencePrecisions};
use crate::data::{Dataset, Sequence, Slot, SlotRole};
use crate::error::{Error, Result};
use crate::stats::stick::{update_concentration, StickWeights};
use crate::stats::truncnorm::unit_pdf_cdf;
use crate::stats::{normal, sample};

pub const DEFAULT_TRUNCATION: usize = 8;

/// Proposed variances below this floor are rejected.
pub const SIGMA2_FLOOR: f64 = 1e-6;

/// Hyperprior constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPrior {
    /// Gamma(shape, rate) prior on the DP concentration.
    pub conc_shape: f64,
    pub conc_rate: f64,
    /// Prior variance of the base-measure mean around the observed mean.
    pub mu_var: f64,
    /// Inverse-gamma(shape, scale) on atom variances.
    pub variance_shape: f64,
    pub variance_scale: f64,
    /// Uniform range of the base-variance shape and the rate multiplier.
    pub astar_lo: f64,
    pub astar_hi: f64,
    pub bstar_ratio: f64,
    /// Prior variance of every shared coefficient (mean 0).
    pub coef_var: f64,
}

impl Default for MarginalPrior {
    fn default() -> Self {
        Self {
            conc_shape: 1.0,
            conc_rate: 1.0,
            mu_var: 1.0,
            variance_shape: 1.0,
            variance_scale: 1.0,
            astar_lo: 1.0,
            astar_hi: 5.0,
            bstar_ratio: 100.0,
            coef_var: 100.0,
        }
    }
}

/// Random-walk and independence proposal scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalProposal {
    pub intercept_var: f64,
    /// Shape of the Gamma proposal for an atom precision (its mean is the current precision).
    pub precision_shape: f64,
    pub mu_sd: f64,
    pub s_halfwidth: f64,
}

impl Default for MarginalProposal {
    fn default() -> Self {
        Self { intercept_var: 0.1, precision_shape: 15.0, mu_sd: 1.0, s_halfwidth: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDpmParams {
    pub slot: Slot,
    pub weights: StickWeights,
    pub conc: f64,
    pub intercepts: Vec<f64>,
    pub variances: Vec<f64>,
    /// Shared coefficients in covariate order: x0, then (Stage 2) the parent
    /// compliance and x1.
    pub coeffs: Vec<f64>,
    pub base_mu: f64,
    pub base_s: f64,
    pub base_astar: f64,
}

/// Number of covariates entering the marginal of `slot`.
pub fn covariate_len(slot: Slot, m1: usize, m2: usize) -> usize {
    if slot.is_stage2() {
        m1 + 1 + m2
    } else {
        m1
    }
}

/// Covariate row (x0) or (x0, parent compliance, x1).
pub fn covariates(slot: Slot, x0: &[f64], parent: f64, x1: &[f64]) -> Vec<f64> {
    let mut v = x0.to_vec();
    if slot.is_stage2() {
        v.push(parent);
        v.extend_from_slice(x1);
    }
    v
}

impl MarginalDpmParams {
    pub fn truncation(&self) -> usize {
        self.intercepts.len()
    }

    fn check_arity(&self, covs: &[f64]) -> Result<()> {
        if covs.len() != self.coeffs.len() {
            return Err(Error::invalid(format!(
                "{} marginal expects {} covariates, got {}",
                self.slot,
                self.coeffs.len(),
                covs.len()
            )));
        }
        Ok(())
    }

    pub fn linear_predictor(&self, covs: &[f64]) -> f64 {
        covs.iter().zip(&self.coeffs).map(|(x, b)| x * b).sum()
    }

    /// Mixture density and CDF at `d` for a given linear predictor.
    pub fn eval_with_predictor(&self, d: f64, lp: f64) -> (f64, f64) {
        let mut f = 0.0;
        let mut cdf = 0.0;
        for b in 0..self.truncation() {
            let w = self.weights.w[b];
            if w == 0.0 {
                continue;
            }
            let (p, c) = unit_pdf_cdf(d, self.intercepts[b] + lp, self.variances[b]);
            f += w * p;
            cdf += w * c;
        }
        (f, cdf.clamp(0.0, 1.0))
    }

    pub fn density(&self, d: f64, covs: &[f64]) -> Result<f64> {
        self.check_arity(covs)?;
        Ok(self.eval_with_predictor(d, self.linear_predictor(covs)).0)
    }

    pub fn cdf(&self, d: f64, covs: &[f64]) -> Result<f64> {
        self.check_arity(covs)?;
        Ok(self.eval_with_predictor(d, self.linear_predictor(covs)).1)
    }

    /// Gaussian score of `d` under this marginal.
    pub fn score(&self, d: f64, covs: &[f64]) -> Result<f64> {
        Ok(h_transform(self.cdf(d, covs)?))
    }

    pub fn validate(&self, prior: &MarginalPrior) -> Result<()> {
        let sum: f64 = self.weights.w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.w.iter().any(|&w| w < 0.0) {
            return Err(Error::numeric(format!("{} weights are not a simplex", self.slot)));
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::numeric(format!("{} has a non-positive atom variance", self.slot)));
        }
        if !(prior.astar_lo..=prior.astar_hi).contains(&self.base_astar) || !(self.base_s > 0.0) {
            return Err(Error::numeric(format!("{} base-measure hyperparameters out of range", self.slot)));
        }
        Ok(())
    }
}

/// Per-member copula coefficients for the coordinate being updated.
#[derive(Debug, Clone)]
pub struct CopulaContext {
    a: Vec<f64>,
    c: Vec<f64>,
}

impl CopulaContext {
    /// Per-member copula coefficients: the term for member `m` at score `h`
    /// is `-a[m] h^2 / 2 - c[m] h`.
    pub fn new(a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.len() != c.len() {
            return Err(Error::invalid("copula coefficient vectors differ in length"));
        }
        Ok(Self { a, c })
    }

    /// Independence copula: no copula terms.
    pub fn independent(members: usize) -> Self {
        Self { a: vec![0.0; members], c: vec![0.0; members] }
    }

    #[inline]
    fn term(&self, m: usize, h: f64) -> f64 {
        -0.5 * self.a[m] * h * h - h * self.c[m]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginalAcceptance {
    pub hyper: Acceptance,
    pub intercept: Acceptance,
    pub variance: Acceptance,
    pub coeffs: Acceptance,
}

/// Marginal model with its members, design and cached kernel columns.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    pub params: MarginalDpmParams,
    pub prior: MarginalPrior,
    pub proposal: MarginalProposal,
    pub acceptance: MarginalAcceptance,
    /// μ*: centre of the base-mean prior (mean of the observed values).
    center: f64,
    members: Vec<usize>,
    position: Vec<Option<usize>>,
    p: usize,
    design: Vec<f64>,
    d: Vec<f64>,
    lp: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    labels: Vec<usize>,
    coef_chol: Vec<f64>,
}

struct Candidate {
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    ll: Vec<f64>,
    delta: f64,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    let k = x.ncols();
    if n <= k {
        return None;
    }
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    let s2 = resid.norm_squared() / (n - k) as f64;
    Some((beta, chol.inverse() * s2))
}

impl MarginalModel {
    /// Builds the model for `slot` over every subject whose slot is observed
    /// or latent, with `values[i]` the current compliance vector of subject i.
    pub fn new<R: Rng + ?Sized>(
        slot: Slot,
        data: &Dataset,
        values: &[[f64; 4]],
        truncation: usize,
        prior: MarginalPrior,
        proposal: MarginalProposal,
        rng: &mut R,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::invalid("truncation level must be at least 1"));
        }
        let p = covariate_len(slot, data.m1, data.m2);
        let mut members = Vec::new();
        let mut position = vec![None; data.n()];
        let mut design = Vec::new();
        let mut d = Vec::new();
        let mut obs_rows = Vec::new();
        for (i, t) in data.trajectories.iter().enumerate() {
            let k = data.sequence(i);
            let role = k.role(slot);
            if role == SlotRole::Inert {
                continue;
            }
            position[i] = Some(members.len());
            let parent = slot.parent().map(|s| values[i][s.index()]).unwrap_or(0.0);
            design.extend(covariates(slot, &t.x0, parent, t.x1_or_empty()));
            d.push(values[i][slot.index()]);
            if role == SlotRole::Observed {
                obs_rows.push(members.len());
            }
            members.push(i);
        }
        if obs_rows.is_empty() {
            return Err(Error::Validation(format!("no subject has {slot} observed")));
        }

        let obs: Vec<f64> = obs_rows.iter().map(|&m| d[m]).collect();
        let center = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - center).powi(2)).sum::<f64>() / obs.len().max(2).saturating_sub(1) as f64;

        let x =
            DMatrix::from_fn(obs_rows.len(), p + 1, |r, c| if c == 0 { 1.0 } else { design[obs_rows[r] * p + c - 1] });
        let y = DVector::from_iterator(obs.len(), obs.iter().copied());
        let (intercept, coeffs, cov) = match ols(&x, &y) {
            Some((beta, cov)) => (beta[0], beta.as_slice()[1..].to_vec(), cov.view((1, 1), (p, p)).into_owned()),
            None => (center, vec![0.0; p], DMatrix::zeros(p, p)),
        };
        let prop_cov = cov + DMatrix::<f64>::identity(p, p);
        let l = prop_cov.cholesky().ok_or_else(|| Error::numeric("coefficient proposal covariance is not PD"))?.l();
        let mut coef_chol = vec![0.0; p * p];
        for r in 0..p {
            for c in 0..=r {
                coef_chol[r * p + c] = l[(r, c)];
            }
        }

        let intercepts = (0..truncation).map(|_| intercept + 0.1 * sample::std_normal(rng)).collect();
        let params = MarginalDpmParams {
            slot,
            weights: StickWeights::from_prior(truncation, 1.0, rng),
            conc: 1.0,
            intercepts,
            variances: vec![var.max(1e-4); truncation],
            coeffs,
            base_mu: center,
            base_s: 1.0 / prior.bstar_ratio,
            base_astar: 0.5 * (prior.astar_lo + prior.astar_hi),
        };
        let n = members.len();
        let mut model = Self {
            params,
            prior,
            proposal,
            acceptance: MarginalAcceptance::default(),
            center,
            members,
            position,
            p,
            design,
            d,
            lp: vec![0.0; n],
            pdf: vec![0.0; n * truncation],
            cdf: vec![0.0; n * truncation],
            labels: vec![0; n],
            coef_chol,
        };
        model.refresh();
        Ok(model)
    }

    pub fn slot(&self) -> Slot {
        self.params.slot
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    fn b(&self) -> usize {
        self.params.truncation()
    }

    fn row(&self, m: usize) -> &[f64] {
        &self.design[m * self.p..(m + 1) * self.p]
    }

    /// Recomputes every cached predictor and kernel value.
    pub fn refresh(&mut self) {
        for m in 0..self.members.len() {
            self.lp[m] = self.params.linear_predictor(self.row(m));
            self.refresh_member(m);
        }
    }

    fn refresh_member(&mut self, m: usize) {
        let b = self.b();
        for j in 0..b {
            let (p, c) = unit_pdf_cdf(self.d[m], self.params.intercepts[j] + self.lp[m], self.params.variances[j]);
            self.pdf[m * b + j] = p;
            self.cdf[m * b + j] = c;
        }
    }

    #[inline]
    fn mixture(&self, m: usize) -> (f64, f64) {
        let b = self.b();
        let w = &self.params.weights.w;
        let mut f = 0.0;
        let mut c = 0.0;
        for j in 0..b {
            f += w[j] * self.pdf[m * b + j];
            c += w[j] * self.cdf[m * b + j];
        }
        (f, c.clamp(0.0, 1.0))
    }

    /// Density and CDF of subject `i` at a hypothetical value `d`.
    pub fn eval_subject(&self, i: usize, d: f64) -> (f64, f64) {
        let m = self.position[i].expect("subject is a member");
        self.params.eval_with_predictor(d, self.lp[m])
    }

    pub fn is_member(&self, i: usize) -> bool {
        self.position[i].is_some()
    }

    /// Records an accepted imputation for subject `i`.
    pub fn set_value(&mut self, i: usize, d: f64) {
        let m = self.position[i].expect("subject is a member");
        self.d[m] = d;
        self.refresh_member(m);
    }

    pub fn value(&self, i: usize) -> Option<f64> {
        self.position[i].map(|m| self.d[m])
    }

    /// Current score of every member written into column `slot` of `h`.
    pub fn write_scores(&self, h: &mut [[f64; 4]]) {
        let j = self.slot().index();
        for (m, &i) in self.members.iter().enumerate() {
            h[i][j] = h_transform(self.mixture(m).1);
        }
    }

    pub fn copula_context(&self, h: &[[f64; 4]], prec: &SequencePrecisions, seqs: &[Sequence]) -> CopulaContext {
        let n = self.members.len();
        let mut a = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for &i in &self.members {
            let (ai, ci) = prec.row_terms(seqs[i], self.slot(), &h[i]);
            a.push(ai);
            c.push(ci);
        }
        CopulaContext { a, c }
    }

    #[inline]
    fn member_ll(&self, ctx: &CopulaContext, m: usize, f: f64, cdf: f64) -> f64 {
        if !(f > 0.0) {
            return f64::NEG_INFINITY;
        }
        f.ln() + ctx.term(m, h_transform(cdf))
    }

    fn member_logliks(&self, ctx: &CopulaContext) -> Vec<f64> {
        (0..self.members.len())
            .map(|m| {
                let (f, c) = self.mixture(m);
                self.member_ll(ctx, m, f, c)
            })
            .collect()
    }

    fn ln_atom_prior(&self, intercept: f64, variance: f64) -> f64 {
        normal::ln_density(intercept, self.params.base_mu, self.params.base_s)
            + sample::ln_gamma_pdf(1.0 / variance, self.prior.variance_shape, self.prior.variance_scale)
    }

    fn ln_coef_prior(&self, coeffs: &[f64]) -> f64 {
        coeffs.iter().map(|&c| normal::ln_density(c, 0.0, self.prior.coef_var)).sum()
    }

    fn ln_hyper_prior(&self, astar: f64, mu: f64, s: f64) -> f64 {
        if !(astar >= self.prior.astar_lo && astar <= self.prior.astar_hi) || !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        let atoms: f64 = self.params.intercepts.iter().map(|&b| normal::ln_density(b, mu, s)).sum();
        atoms
            + normal::ln_density(mu, self.center, self.prior.mu_var)
            + sample::ln_gamma_pdf(s, astar, self.prior.bstar_ratio * astar)
    }

    /// Σ_i [ln f(d_i) + copula terms of this coordinate] + ln prior(θ).
    pub fn conditional_loglik(&self, ctx: &CopulaContext) -> f64 {
        let ll: f64 = self.member_logliks(ctx).iter().sum();
        ll + self.log_prior()
    }

    pub fn log_prior(&self) -> f64 {
        let atoms: f64 =
            (0..self.b()).map(|j| self.ln_atom_prior(self.params.intercepts[j], self.params.variances[j])).sum();
        atoms + self.ln_coef_prior(&self.params.coeffs)
            - self
                .params
                .intercepts
                .iter()
                .map(|&b| normal::ln_density(b, self.params.base_mu, self.params.base_s))
                .sum::<f64>()
            + self.ln_hyper_prior(self.params.base_astar, self.params.base_mu, self.params.base_s)
    }

    /// Candidate column for atom `j` moved to (intercept, variance).
    fn atom_candidate(&self, ctx: &CopulaContext, ll: &[f64], j: usize, intercept: f64, variance: f64) -> Candidate {
        let b = self.b();
        let w = &self.params.weights.w;
        let n = self.members.len();
        let mut cand =
            Candidate { pdf: Vec::with_capacity(n), cdf: Vec::with_capacity(n), ll: Vec::with_capacity(n), delta: 0.0 };
        for m in 0..n {
            let (p, c) = unit_pdf_cdf(self.d[m], intercept + self.lp[m], variance);
            let mut f = w[j] * p;
            let mut cdf = w[j] * c;
            for q in 0..b {
                if q != j {
                    f += w[q] * self.pdf[m * b + q];
                    cdf += w[q] * self.cdf[m * b + q];
                }
            }
            let new = self.member_ll(ctx, m, f, cdf.clamp(0.0, 1.0));
            cand.delta += new - ll[m];
            cand.pdf.push(p);
            cand.cdf.push(c);
            cand.ll.push(new);
        }
        if cand.delta.is_nan() {
            cand.delta = f64::NEG_INFINITY;
        }
        cand
    }

    fn commit_atom(&mut self, j: usize, cand: Candidate, ll: &mut Vec<f64>) {
        let b = self.b();
        for m in 0..self.members.len() {
            self.pdf[m * b + j] = cand.pdf[m];
            self.cdf[m * b + j] = cand.cdf[m];
        }
        *ll = cand.ll;
    }

    /// Log acceptance ratio for moving intercept `j` to `proposed` (symmetric proposal).
    pub fn intercept_log_ratio(&self, ctx: &CopulaContext, j: usize, proposed: f64) -> f64 {
        let ll = self.member_logliks(ctx);
        let var = self.params.variances[j];
        self.atom_candidate(ctx, &ll, j, proposed, var).delta + self.ln_atom_prior(proposed, var)
            - self.ln_atom_prior(self.params.intercepts[j], var)
    }

    /// Log acceptance ratio for moving the precision of atom `j` to
    /// `proposed`, including the Gamma proposal correction.
    pub fn precision_log_ratio(&self, ctx: &CopulaContext, j: usize, proposed: f64) -> f64 {
        let ll = self.member_logliks(ctx);
        self.precision_ratio_with(ctx, &ll, j, proposed).0
    }

    fn precision_ratio_with(
        &self,
        ctx: &CopulaContext,
        ll: &[f64],
        j: usize,
        tau_new: f64,
    ) -> (f64, Option<Candidate>) {
        let var_new = 1.0 / tau_new;
        if !(var_new >= SIGMA2_FLOOR) || !var_new.is_finite() {
            return (f64::NEG_INFINITY, None);
        }
        let tau = 1.0 / self.params.variances[j];
        let c = self.proposal.precision_shape;
        let intercept = self.params.intercepts[j];
        let cand = self.atom_candidate(ctx, ll, j, intercept, var_new);
        let q_back = sample::ln_gamma_pdf(tau, c, c / tau_new);
        let q_fwd = sample::ln_gamma_pdf(tau_new, c, c / tau);
        let ratio = cand.delta + self.ln_atom_prior(intercept, var_new) - self.ln_atom_prior(intercept, 1.0 / tau)
            + q_back
            - q_fwd;
        (ratio, Some(cand))
    }

    /// Log acceptance ratio for a new shared-coefficient vector (symmetric proposal).
    pub fn coeff_log_ratio(&self, ctx: &CopulaContext, proposed: &[f64]) -> f64 {
        let ll = self.member_logliks(ctx);
        self.coeff_candidate(ctx, &ll, proposed).3 + self.ln_coef_prior(proposed)
            - self.ln_coef_prior(&self.params.coeffs)
    }

    fn coeff_candidate(
        &self,
        ctx: &CopulaContext,
        ll: &[f64],
        coeffs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, Vec<f64>) {
        let b = self.b();
        let n = self.members.len();
        let w = &self.params.weights.w;
        let mut lp = Vec::with_capacity(n);
        let mut pdf = vec![0.0; n * b];
        let mut cdf = vec![0.0; n * b];
        let mut new_ll = Vec::with_capacity(n);
        let mut delta = 0.0;
        for m in 0..n {
            let l: f64 = self.row(m).iter().zip(coeffs).map(|(x, c)| x * c).sum();
            let mut f = 0.0;
            let mut c = 0.0;
            for j in 0..b {
                let (pj, cj) = unit_pdf_cdf(self.d[m], self.params.intercepts[j] + l, self.params.variances[j]);
                pdf[m * b + j] = pj;
                cdf[m * b + j] = cj;
                f += w[j] * pj;
                c += w[j] * cj;
            }
            let v = self.member_ll(ctx, m, f, c.clamp(0.0, 1.0));
            delta += v - ll[m];
            new_ll.push(v);
            lp.push(l);
        }
        if delta.is_nan() {
            delta = f64::NEG_INFINITY;
        }
        (lp, pdf, cdf, delta, new_ll)
    }

    /// Labels given kernels and weights.
    pub fn update_labels<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let b = self.b();
        let mut logw = vec![0.0; b];
        for m in 0..self.members.len() {
            for j in 0..b {
                logw[j] = self.params.weights.w[j].ln() + self.pdf[m * b + j].ln();
            }
            self.labels[m] = sample::categorical_log(&logw, rng);
        }
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.b()];
        for &z in &self.labels {
            counts[z] += 1;
        }
        counts
    }

    /// One full sweep: labels, sticks, concentration, hyperparameters,
    /// intercepts, variances, shared coefficients. Scores of the members are
    /// written back into `h`.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        h: &mut [[f64; 4]],
        prec: &SequencePrecisions,
        seqs: &[Sequence],
        rng: &mut R,
    ) -> Result<()> {
        self.update_labels(rng);
        let counts = self.cluster_counts();
        self.params.weights = StickWeights::posterior_draw(&counts, self.params.conc, rng);
        self.params.conc = update_concentration(&self.params.weights, self.prior.conc_shape, self.prior.conc_rate, rng);

        let ctx = self.copula_context(h, prec, seqs);
        self.mh_steps(&ctx, rng);
        if self.member_logliks(&ctx).iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{} marginal likelihood is not finite after update", self.slot())));
        }
        self.write_scores(h);
        Ok(())
    }

    /// Metropolis updates for the hyperparameters, each atom and the coefficients.
    pub fn mh_steps<R: Rng + ?Sized>(&mut self, ctx: &CopulaContext, rng: &mut R) {
        let mut ll = self.member_logliks(ctx);

        let astar = self.prior.astar_lo + (self.prior.astar_hi - self.prior.astar_lo) * rng.random::<f64>();
        let mu = self.params.base_mu + self.proposal.mu_sd * sample::std_normal(rng);
        let s = self.params.base_s + self.proposal.s_halfwidth * (2.0 * rng.random::<f64>() - 1.0);
        let ratio = self.ln_hyper_prior(astar, mu, s)
            - self.ln_hyper_prior(self.params.base_astar, self.params.base_mu, self.params.base_s);
        let ok = sample::accept(ratio, rng);
        if ok {
            self.params.base_astar = astar;
            self.params.base_mu = mu;
            self.params.base_s = s;
        }
        self.acceptance.hyper.record(ok);

        let sd = self.proposal.intercept_var.sqrt();
        for j in 0..self.b() {
            let cur = self.params.intercepts[j];
            let var = self.params.variances[j];
            let prop = cur + sd * sample::std_normal(rng);
            let cand = self.atom_candidate(ctx, &ll, j, prop, var);
            let ratio = cand.delta + self.ln_atom_prior(prop, var) - self.ln_atom_prior(cur, var);
            let ok = sample::accept(ratio, rng);
            if ok {
                self.params.intercepts[j] = prop;
                self.commit_atom(j, cand, &mut ll);
            }
            self.acceptance.intercept.record(ok);
        }

        let c = self.proposal.precision_shape;
        for j in 0..self.b() {
            let tau = 1.0 / self.params.variances[j];
            let tau_new = sample::gamma(c, c / tau, rng);
            let (ratio, cand) = self.precision_ratio_with(ctx, &ll, j, tau_new);
            let ok = sample::accept(ratio, rng);
            if let (true, Some(cand)) = (ok, cand) {
                self.params.variances[j] = 1.0 / tau_new;
                self.commit_atom(j, cand, &mut ll);
            }
            self.acceptance.variance.record(ok);
        }

        if self.p > 0 {
            let p = self.p;
            let z: Vec<f64> = (0..p).map(|_| sample::std_normal(rng)).collect();
            let prop: Vec<f64> = (0..p)
                .map(|r| self.params.coeffs[r] + (0..=r).map(|c| self.coef_chol[r * p + c] * z[c]).sum::<f64>())
                .collect();
            let (lp, pdf, cdf, delta, new_ll) = self.coeff_candidate(ctx, &ll, &prop);
            let ratio = delta + self.ln_coef_prior(&prop) - self.ln_coef_prior(&self.params.coeffs);
            let ok = sample::accept(ratio, rng);
            if ok {
                self.params.coeffs = prop;
                self.lp = lp;
                self.pdf = pdf;
                self.cdf = cdf;
                ll = new_ll;
            }
            self.acceptance.coeffs.record(ok);
        }
        debug_assert!(ll.iter().all(|v| !v.is_nan()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, Trajectory};
    use crate::stats::rng::RngStream;
    use crate::stats::truncnorm::TruncNormal;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * f(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0
    }

    fn params(intercepts: Vec<f64>, variances: Vec<f64>, v: Vec<f64>, coeffs: Vec<f64>) -> MarginalDpmParams {
        MarginalDpmParams {
            slot: Slot::D1,
            weights: crate::stats::stick::stick_break(&v).unwrap(),
            conc: 1.0,
            intercepts,
            variances,
            coeffs,
            base_mu: 0.5,
            base_s: 0.01,
            base_astar: 3.0,
        }
    }

    #[test]
    fn single_atom_density_normalizer() {
        let p = params(vec![0.0], vec![1.0], vec![1.0], vec![0.0]);
        let f = p.density(0.5, &[0.7]).unwrap();
        let expect = normal::pdf(0.5) / (normal::cdf(1.0) - 0.5);
        assert!((f - expect).abs() < 1e-14);
        assert!((f - 1.031_406_901_143_877).abs() < 1e-12);
        // The commonly quoted 1.0316 is a loose rounding of this value.
        assert!((f - 1.0316).abs() < 3e-4);
        assert!(p.density(0.5, &[]).is_err());
    }

    #[test]
    fn identical_atoms_collapse() {
        let one = params(vec![0.3], vec![0.2], vec![1.0], vec![0.5]);
        let two = params(vec![0.3, 0.3], vec![0.2, 0.2], vec![0.37, 1.0], vec![0.5]);
        for &d in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            assert!((one.density(d, &[0.1]).unwrap() - two.density(d, &[0.1]).unwrap()).abs() < 1e-14);
            assert!((one.cdf(d, &[0.1]).unwrap() - two.cdf(d, &[0.1]).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_integrates_to_one_and_cdf_matches_derivative() {
        let p = params(vec![-0.4, 0.3, 1.2], vec![0.05, 0.4, 0.1], vec![0.3, 0.6, 1.0], vec![0.8, -0.5]);
        let covs = [0.2, -0.3];
        let total = simpson(|x| p.density(x, &covs).unwrap(), 0.0, 1.0, 4000);
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        assert_eq!(p.cdf(0.0, &covs).unwrap(), 0.0);
        assert_eq!(p.cdf(1.0, &covs).unwrap(), 1.0);
        let eps = 1e-6;
        for i in 1..=20 {
            let d = i as f64 / 21.0;
            let fd = (p.cdf(d + eps, &covs).unwrap() - p.cdf(d - eps, &covs).unwrap()) / (2.0 * eps);
            assert!((fd - p.density(d, &covs).unwrap()).abs() < 1e-6);
        }
        let mid = params(vec![0.5], vec![0.3], vec![1.0], vec![]);
        assert!((mid.cdf(0.5, &[]).unwrap() - 0.5).abs() < 1e-15);
    }

    fn dataset(ds: &[f64], x: &[f64]) -> (Dataset, Vec<[f64; 4]>) {
        let ts: Vec<Trajectory> = ds
            .iter()
            .zip(x)
            .enumerate()
            .map(|(i, (&d, &x))| Trajectory {
                id: i.to_string(),
                x0: vec![x],
                a1: Arm::Plus,
                d_obs1: d,
                responder: true,
                x1: None,
                a2: None,
                d_obs2: None,
                y: 0.0,
            })
            .collect();
        let vals = ds.iter().map(|&d| [d, 0.5, 0.0, 0.0]).collect();
        (Dataset::new(ts, 1, 0).unwrap(), vals)
    }

    #[test]
    fn one_point_precision_ratio_matches_hand_computation() {
        let (ds, vals) = dataset(&[0.4], &[0.2]);
        let mut rng = RngStream::new(1, 0);
        let mut m = MarginalModel::new(
            Slot::D1,
            &ds,
            &vals,
            1,
            MarginalPrior::default(),
            MarginalProposal::default(),
            &mut rng,
        )
        .unwrap();
        m.params.intercepts = vec![0.1];
        m.params.variances = vec![0.3];
        m.params.coeffs = vec![0.5];
        m.refresh();
        // Copula terms with a = 0.2 and c = −0.1 at this subject.
        let ctx = CopulaContext { a: vec![0.2], c: vec![-0.1] };
        let tau_new = 2.5;
        let got = m.precision_log_ratio(&ctx, 0, tau_new);

        let loc = 0.1 + 0.5 * 0.2;
        let target = |var: f64| {
            let tn = TruncNormal::unit(loc, var).unwrap();
            let h = h_transform(tn.cdf(0.4));
            tn.pdf(0.4).ln() - 0.5 * 0.2 * h * h + 0.1 * h + ((1.0 / var).ln() * 0.0 - 1.0 / var)
            // IG(1,1) on σ² is Gamma(1,1) on 1/σ²
        };
        let gamma =
            |x: f64, shape: f64, rate: f64| shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x;
        let (tau, c) = (1.0 / 0.3, 15.0);
        let hand = target(1.0 / tau_new) - target(0.3) + gamma(tau, c, c / tau_new) - gamma(tau_new, c, c / tau);
        assert!((got - hand).abs() < 1e-10, "{got} vs {hand}");
    }

    #[test]
    fn identical_proposal_has_ratio_zero() {
        let (ds, vals) = dataset(&[0.4, 0.7, 0.1], &[0.2, -0.1, 0.3]);
        let mut rng = RngStream::new(2, 0);
        let m = MarginalModel::new(
            Slot::D1,
            &ds,
            &vals,
            3,
            MarginalPrior::default(),
            MarginalProposal::default(),
            &mut rng,
        )
        .unwrap();
        let ctx = CopulaContext { a: vec![0.1; 3], c: vec![0.05; 3] };
        assert!(m.intercept_log_ratio(&ctx, 1, m.params.intercepts[1]).abs() < 1e-12);
        assert!(m.coeff_log_ratio(&ctx, &m.params.coeffs.clone()).abs() < 1e-12);
        let tau = 1.0 / m.params.variances[2];
        assert!(m.precision_log_ratio(&ctx, 2, tau).abs() < 1e-12);
    }

    #[test]
    fn duplicated_data_doubles_the_likelihood() {
        let ds1 = [0.4, 0.7, 0.1];
        let x1 = [0.2, -0.1, 0.3];
        let (a, va) = dataset(&ds1, &x1);
        let (b, vb) = dataset(&[ds1, ds1].concat(), &[x1, x1].concat());
        let mut rng = RngStream::new(3, 0);
        let ma =
            MarginalModel::new(Slot::D1, &a, &va, 2, MarginalPrior::default(), MarginalProposal::default(), &mut rng)
                .unwrap();
        let mut mb =
            MarginalModel::new(Slot::D1, &b, &vb, 2, MarginalPrior::default(), MarginalProposal::default(), &mut rng)
                .unwrap();
        mb.params = ma.params.clone();
        mb.refresh();
        let ca = CopulaContext::independent(3);
        let cb = CopulaContext::independent(6);
        let la = ma.conditional_loglik(&ca) - ma.log_prior();
        let lb = mb.conditional_loglik(&cb) - mb.log_prior();
        assert!((lb - 2.0 * la).abs() < 1e-10);
        assert!(la.is_finite());
    }

    #[test]
    fn far_separated_atoms_capture_all_labels() {
        let ds: Vec<f64> = (0..50).map(|i| 0.9 + 0.002 * i as f64).collect();
        let (data, vals) = dataset(&ds, &vec![0.0; 50]);
        let mut rng = RngStream::new(4, 0);
        let mut m = MarginalModel::new(
            Slot::D1,
            &data,
            &vals,
            2,
            MarginalPrior::default(),
            MarginalProposal::default(),
            &mut rng,
        )
        .unwrap();
        m.params.intercepts = vec![-2.0, 0.95];
        m.params.variances = vec![0.01, 0.01];
        m.params.coeffs = vec![0.0];
        m.params.weights = crate::stats::stick::stick_break(&[0.5, 1.0]).unwrap();
        m.refresh();
        m.update_labels(&mut rng);
        assert!(m.labels().iter().all(|&z| z == 1));
    }

    #[test]
    fn independence_sampler_recovers_intercept() {
        // One cluster, identity copula: a Bayesian truncated-normal regression.
        let mut rng = RngStream::new(21, 0);
        let n = 500;
        let tn = TruncNormal::unit(0.3, 0.04).unwrap();
        let ds: Vec<f64> = (0..n).map(|_| tn.sample(&mut rng)).collect();
        let (data, vals) = dataset(&ds, &vec![0.0; n]);
        let mut m = MarginalModel::new(
            Slot::D1,
            &data,
            &vals,
            1,
            MarginalPrior::default(),
            MarginalProposal::default(),
            &mut rng,
        )
        .unwrap();
        let ctx = CopulaContext::independent(n);
        let mut draws = Vec::new();
        for t in 0..3000 {
            m.mh_steps(&ctx, &mut rng);
            if t >= 1000 {
                draws.push(m.params.intercepts[0] + m.params.coeffs[0] * 0.0);
            }
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * sd.max(0.005), "mean {mean} sd {sd}");
        m.params.validate(&m.prior).unwrap();
    }
}
