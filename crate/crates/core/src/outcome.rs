//! Per-sequence Dirichlet-process mixture of multivariate Gaussians over
//! (Y, active scores, baseline covariates), and the locally weighted
//! regression of Y it implies.
//!
//! Component parameters carry a Normal–inverse-Wishart base measure, so the
//! sampler is a blocked Gibbs sweep: labels, sticks, concentration, then a
//! conjugate draw of every (μ_b, Σ_b).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sequence};
use crate::error::{Error, Result};
use crate::stats::mvn::{cholesky_with_jitter, sample_inverse_wishart, symmetrize, GaussianKernel, MvnParams};
use crate::stats::stick::{update_concentration, StickWeights};
use crate::stats::{normal, sample};

pub const DEFAULT_TRUNCATION: usize = 15;

/// Relative ridge added to the base scale matrix.
const PRIOR_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDpmParams {
    pub sequence: Sequence,
    pub weights: StickWeights,
    pub comps: Vec<MvnParams>,
    pub alpha: f64,
}

impl OutcomeDpmParams {
    pub fn dim(&self) -> usize {
        self.comps.first().map_or(0, MvnParams::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.dim();
        if q < 2 || self.comps.len() != self.weights.len() {
            return Err(Error::invalid("outcome mixture has inconsistent dimensions"));
        }
        if self.comps.iter().any(|c| c.dim() != q) {
            return Err(Error::invalid("outcome components differ in dimension"));
        }
        let s: f64 = self.weights.w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::numeric("outcome weights are not a simplex"));
        }
        for c in &self.comps {
            cholesky_with_jitter(&c.cov)?;
        }
        Ok(())
    }
}

/// Dimension of the joint vector for sequence `k` with `m1` baseline covariates.
pub fn joint_dim(k: Sequence, m1: usize) -> usize {
    1 + k.outcome_slots().len() + m1
}

/// Joint vector (y, scores of the outcome slots, x0).
pub fn joint_vector(k: Sequence, y: f64, h: &[f64; 4], x0: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(joint_dim(k, x0.len()));
    z.push(y);
    z.extend(k.outcome_slots().iter().map(|s| h[s.index()]));
    z.extend_from_slice(x0);
    z
}

/// Conditioning vector (scores of the outcome slots, x0).
pub fn predictor_vector(k: Sequence, h: &[f64; 4], x0: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(joint_dim(k, x0.len()) - 1);
    z.extend(k.outcome_slots().iter().map(|s| h[s.index()]));
    z.extend_from_slice(x0);
    z
}

#[derive(Debug, Clone)]
struct ComponentRegression {
    ln_weight: f64,
    marginal: GaussianKernel,
    mu_y: f64,
    mu_rest: Vec<f64>,
    beta: Vec<f64>,
    cond_var: f64,
}

/// Locally weighted Gaussian regression of Y on the remaining coordinates,
/// precomputed from one parameter draw.
#[derive(Debug, Clone)]
pub struct OutcomePredictor {
    comps: Vec<ComponentRegression>,
}

impl OutcomePredictor {
    pub fn new(p: &OutcomeDpmParams) -> Result<Self> {
        let q = p.dim();
        if q < 2 {
            return Err(Error::invalid("outcome mixture needs at least one predictor"));
        }
        let rest: Vec<usize> = (1..q).collect();
        let mut comps = Vec::with_capacity(p.comps.len());
        for (c, &w) in p.comps.iter().zip(&p.weights.w) {
            let s_rr = c.cov.select_rows(&rest).select_columns(&rest);
            let chol = cholesky_with_jitter(&s_rr)?;
            let s_ry = c.cov.select_rows(&rest).column(0).into_owned();
            let beta = chol.solve(&s_ry);
            let cond_var = c.cov[(0, 0)] - s_ry.dot(&beta);
            if !(cond_var > 0.0) {
                return Err(Error::numeric("outcome component has a non-positive conditional variance"));
            }
            let mu_rest: Vec<f64> = rest.iter().map(|&i| c.mean[i]).collect();
            comps.push(ComponentRegression {
                ln_weight: w.ln(),
                marginal: GaussianKernel::new(&mu_rest, &s_rr)?,
                mu_y: c.mean[0],
                mu_rest,
                beta: beta.as_slice().to_vec(),
                cond_var,
            });
        }
        Ok(Self { comps })
    }

    pub fn truncation(&self) -> usize {
        self.comps.len()
    }

    fn log_local_weights(&self, z: &[f64]) -> Vec<f64> {
        let mut lw: Vec<f64> = self.comps.iter().map(|c| c.ln_weight + c.marginal.ln_pdf(z)).collect();
        let lse = sample::log_sum_exp(&lw);
        if lse.is_finite() {
            lw.iter_mut().for_each(|v| *v -= lse);
        } else {
            log::warn!("every outcome component density underflowed; using uniform local weights");
            let u = -(lw.len() as f64).ln();
            lw.iter_mut().for_each(|v| *v = u);
        }
        lw
    }

    /// ψ_b(z) ∝ ξ_b N(z | μ_b,−1, Σ_b,−1,−1), normalised.
    pub fn local_weights(&self, z: &[f64]) -> Vec<f64> {
        self.log_local_weights(z).into_iter().map(f64::exp).collect()
    }

    fn component_mean(c: &ComponentRegression, z: &[f64]) -> f64 {
        c.mu_y + c.beta.iter().zip(z.iter().zip(&c.mu_rest)).map(|(b, (x, m))| b * (x - m)).sum::<f64>()
    }

    /// E[Y | z] under the locally weighted mixture.
    pub fn conditional_mean(&self, z: &[f64]) -> f64 {
        self.local_weights(z).iter().zip(&self.comps).map(|(w, c)| w * Self::component_mean(c, z)).sum()
    }

    /// ln f(y | z) under the locally weighted mixture.
    pub fn conditional_ln_density(&self, y: f64, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .log_local_weights(z)
            .iter()
            .zip(&self.comps)
            .map(|(lw, c)| lw + normal::ln_density(y, Self::component_mean(c, z), c.cond_var))
            .collect();
        sample::log_sum_exp(&terms)
    }
}

/// Normal–inverse-Wishart base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub mean: DVector<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub scale: DMatrix<f64>,
}

impl NiwPrior {
    /// Centred at the sample mean and covariance of `rows`, with prior
    /// counts 1 (mean) and q + 2 (covariance). Small samples fall back to the
    /// diagonal of the sample covariance, or to the identity.
    pub fn empirical(rows: &[Vec<f64>], q: usize) -> Self {
        let n = rows.len();
        let mut mean = DVector::zeros(q);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        if n > 0 {
            mean /= n as f64;
        }
        let mut scale = if n >= 2 {
            let mut s = DMatrix::zeros(q, q);
            for r in rows {
                let d = DVector::from_column_slice(r) - &mean;
                s += &d * d.transpose();
            }
            s /= (n - 1) as f64;
            if n <= q + 1 || cholesky_with_jitter(&s).is_err() {
                DMatrix::from_diagonal(&s.diagonal().map(|v| if v > 1e-8 { v } else { 1.0 }))
            } else {
                s
            }
        } else {
            DMatrix::identity(q, q)
        };
        let ridge = PRIOR_RIDGE * scale.trace().max(q as f64) / q as f64;
        for i in 0..q {
            scale[(i, i)] += ridge;
        }
        Self { mean, kappa: 1.0, nu: q as f64 + 2.0, scale }
    }

    /// Conjugate posterior given the rows indexed by `idx`.
    pub fn posterior(&self, rows: &[Vec<f64>], idx: &[usize]) -> NiwPrior {
        let n = idx.len();
        if n == 0 {
            return self.clone();
        }
        let q = self.mean.len();
        let mut bar = DVector::zeros(q);
        for &i in idx {
            bar += DVector::from_column_slice(&rows[i]);
        }
        bar /= n as f64;
        let mut s = DMatrix::zeros(q, q);
        for &i in idx {
            let d = DVector::from_column_slice(&rows[i]) - &bar;
            s += &d * d.transpose();
        }
        let nf = n as f64;
        let kappa = self.kappa + nf;
        let dm = &bar - &self.mean;
        let mut scale = &self.scale + s + (&dm * dm.transpose()) * (self.kappa * nf / kappa);
        symmetrize(&mut scale);
        NiwPrior { mean: (&self.mean * self.kappa + bar * nf) / kappa, kappa, nu: self.nu + nf, scale }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MvnParams> {
        let cov = sample_inverse_wishart(self.nu, &self.scale, rng)?;
        let kernel = GaussianKernel::new(self.mean.as_slice(), &(&cov / self.kappa))?;
        let mean = DVector::from_vec(kernel.sample(rng));
        Ok(MvnParams { mean, cov })
    }
}

/// Sampler state of one sequence's outcome mixture.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub params: OutcomeDpmParams,
    pub prior: NiwPrior,
    pub conc_shape: f64,
    pub conc_rate: f64,
    members: Vec<usize>,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    predictor: OutcomePredictor,
}

impl OutcomeModel {
    /// Builds the model for sequence `k` over its subjects with the current
    /// scores `h`. The base measure is fixed here from the starting rows.
    pub fn new<R: Rng + ?Sized>(
        k: Sequence,
        data: &Dataset,
        h: &[[f64; 4]],
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::invalid("truncation level must be at least 1"));
        }
        let members: Vec<usize> = (0..data.n()).filter(|&i| data.sequence(i) == k).collect();
        let q = joint_dim(k, data.m1);
        let rows: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                let t = &data.trajectories[i];
                joint_vector(k, t.y, &h[i], &t.x0)
            })
            .collect();
        let mut prior = NiwPrior::empirical(&rows, q);
        // Scores are standard normal by construction, while the starting
        // latent scores are constant; centre their block on N(0, 1) instead.
        for c in 1..=k.outcome_slots().len() {
            prior.mean[c] = 0.0;
            for r in 0..q {
                prior.scale[(r, c)] = 0.0;
                prior.scale[(c, r)] = 0.0;
            }
            prior.scale[(c, c)] = 1.0;
        }
        Self::with_prior(k, members, rows, prior, truncation, rng)
    }

    /// Builds the model from explicit joint rows and base measure.
    pub fn with_prior<R: Rng + ?Sized>(
        k: Sequence,
        members: Vec<usize>,
        rows: Vec<Vec<f64>>,
        prior: NiwPrior,
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let labels = vec![0; rows.len()];
        let weights = StickWeights::from_prior(truncation, 1.0, rng);
        let mut model = Self {
            params: OutcomeDpmParams { sequence: k, weights, comps: Vec::new(), alpha: 1.0 },
            prior,
            conc_shape: 1.0,
            conc_rate: 1.0,
            members,
            rows,
            labels,
            predictor: OutcomePredictor { comps: Vec::new() },
        };
        model.draw_components(rng)?;
        Ok(model)
    }

    pub fn sequence(&self) -> Sequence {
        self.params.sequence
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn predictor(&self) -> &OutcomePredictor {
        &self.predictor
    }

    /// Rewrites the score coordinates of every member from `h`.
    pub fn refresh_scores(&mut self, h: &[[f64; 4]]) {
        let slots = self.sequence().outcome_slots();
        for (row, &i) in self.rows.iter_mut().zip(&self.members) {
            for (c, s) in slots.iter().enumerate() {
                row[1 + c] = h[i][s.index()];
            }
        }
    }

    fn draw_components<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let b = self.params.weights.len();
        let mut groups = vec![Vec::new(); b];
        for (m, &z) in self.labels.iter().enumerate() {
            groups[z].push(m);
        }
        self.params.comps =
            groups.iter().map(|g| self.prior.posterior(&self.rows, g).draw(rng)).collect::<Result<Vec<_>>>()?;
        self.predictor = OutcomePredictor::new(&self.params)?;
        Ok(())
    }

    pub fn update_labels<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let kernels = self
            .params
            .comps
            .iter()
            .map(|c| GaussianKernel::new(c.mean.as_slice(), &c.cov))
            .collect::<Result<Vec<_>>>()?;
        let lnw: Vec<f64> = self.params.weights.w.iter().map(|w| w.ln()).collect();
        let mut lp = vec![0.0; kernels.len()];
        for (m, row) in self.rows.iter().enumerate() {
            for (b, k) in kernels.iter().enumerate() {
                lp[b] = lnw[b] + k.ln_pdf(row);
            }
            self.labels[m] = sample::categorical_log(&lp, rng);
        }
        Ok(())
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.params.weights.len()];
        for &z in &self.labels {
            c[z] += 1;
        }
        c
    }

    /// Labels, sticks, concentration, then conjugate component draws.
    pub fn sweep<R: Rng + ?Sized>(&mut self, h: &[[f64; 4]], rng: &mut R) -> Result<()> {
        self.refresh_scores(h);
        self.update_labels(rng)?;
        let counts = self.cluster_counts();
        self.params.weights = StickWeights::posterior_draw(&counts, self.params.alpha, rng);
        self.params.alpha = update_concentration(&self.params.weights, self.conc_shape, self.conc_rate, rng);
        self.draw_components(rng)
    }

    /// ln f(y_i | scores, x0_i) of member subject `i` with score row `h_row`.
    pub fn subject_ln_likelihood(&self, i: usize, y: f64, x0: &[f64], h_row: &[f64; 4]) -> f64 {
        debug_assert!(self.members.binary_search(&i).is_ok());
        let z = predictor_vector(self.sequence(), h_row, x0);
        self.predictor.conditional_ln_density(y, &z)
    }

    /// Average fitted conditional mean over the members at their current scores.
    pub fn in_sample_mean(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| self.predictor.conditional_mean(&r[1..])).sum::<f64>() / self.rows.len() as f64
    }
}
