//! Full posterior chain, principal causal effects of the embedded regimes,
//! and the multiple-comparisons-with-the-best selection.
//!
//! One iteration updates, in order: the Stage-1 compliance marginals, the
//! Stage-2 marginals, the copula correlation matrix, the latent compliances
//! and the six outcome mixtures. The response models are fitted afterwards,
//! paired draw by draw with the retained imputations.

use serde::{Deserialize, Serialize};

use crate::augmentation::{self, AugmentationConfig, AugmentationTarget};
use crate::copula::{self, Acceptance, CopulaState, SequencePrecisions};
use crate::data::{Arm, Dataset, Sequence, Slot, SlotRole};
use crate::error::{Error, Result};
use crate::marginals::{self, covariates, MarginalDpmParams, MarginalModel, MarginalPrior, MarginalProposal};
use crate::outcome::{self, predictor_vector, OutcomeDpmParams, OutcomeModel, OutcomePredictor};
use crate::response::{self, ResponseDpmParams, ResponseModel};
use crate::stats::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Truncations {
    pub marginal: usize,
    pub outcome: usize,
    pub response: usize,
}

impl Default for Truncations {
    fn default() -> Self {
        Self {
            marginal: marginals::DEFAULT_TRUNCATION,
            outcome: outcome::DEFAULT_TRUNCATION,
            response: response::DEFAULT_TRUNCATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub truncations: Truncations,
    pub augmentation: AugmentationTarget,
    pub marginal_prior: MarginalPrior,
    pub marginal_proposal: MarginalProposal,
    /// Sweeps of each response model before its first paired draw.
    pub response_burn_in: usize,
    pub response_step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iters: 10_000,
            burn_in: 1_000,
            thin: 5,
            seed: 0,
            truncations: Truncations::default(),
            augmentation: AugmentationTarget::default(),
            marginal_prior: MarginalPrior::default(),
            marginal_proposal: MarginalProposal::default(),
            response_burn_in: 500,
            response_step: response::DEFAULT_STEP,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.iters <= self.burn_in {
            return Err(Error::invalid(format!("iters ({}) must exceed burn-in ({})", self.iters, self.burn_in)));
        }
        if self.retained() == 0 {
            return Err(Error::invalid("the chain retains no draws; lower thin or raise iters"));
        }
        let t = &self.truncations;
        if t.marginal == 0 || t.outcome == 0 || t.response == 0 {
            return Err(Error::invalid("truncation levels must be at least 1"));
        }
        if !(self.response_step > 0.0) {
            return Err(Error::invalid("response proposal step must be positive"));
        }
        Ok(())
    }

    /// floor((iters − burn_in) / thin).
    pub fn retained(&self) -> usize {
        self.iters.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    /// Whether 0-based iteration `t` is kept.
    pub fn is_retained(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Metropolis blocks reported in traces and acceptance summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Hyper,
    Intercept,
    Variance,
    Coefficients,
    Correlation,
    Augmentation,
}

impl Block {
    pub const ALL: [Block; 6] =
        [Block::Hyper, Block::Intercept, Block::Variance, Block::Coefficients, Block::Correlation, Block::Augmentation];

    pub fn name(self) -> &'static str {
        match self {
            Block::Hyper => "hyper",
            Block::Intercept => "intercept",
            Block::Variance => "variance",
            Block::Coefficients => "coefficients",
            Block::Correlation => "correlation",
            Block::Augmentation => "augmentation",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance(pub [Acceptance; 6]);

impl BlockAcceptance {
    pub fn get(&self, b: Block) -> Acceptance {
        self.0[b as usize]
    }

    pub fn rates(&self) -> Vec<(Block, f64)> {
        Block::ALL.iter().map(|&b| (b, self.get(b).rate())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub block: Block,
    pub value: f64,
    pub accept_rate: f64,
}

/// Dataset facts that predictions need once the chain is finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitContext {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub x0: Vec<Vec<f64>>,
    /// Mean intermediate covariates among nonresponders of each Stage-1 arm
    /// (index 0 for +1, 1 for −1).
    pub x1_mean: [Vec<f64>; 2],
    pub sequence_counts: [usize; 6],
}

impl FitContext {
    pub fn from_data(data: &Dataset) -> Self {
        let mut x1_mean = [vec![0.0; data.m2], vec![0.0; data.m2]];
        let mut counts = [0usize; 2];
        for t in &data.trajectories {
            if let Some(x1) = &t.x1 {
                let a = arm_index(t.a1);
                counts[a] += 1;
                for (m, v) in x1_mean[a].iter_mut().zip(x1) {
                    *m += v;
                }
            }
        }
        for a in 0..2 {
            if counts[a] > 0 {
                x1_mean[a].iter_mut().for_each(|v| *v /= counts[a] as f64);
            }
        }
        Self {
            n: data.n(),
            m1: data.m1,
            m2: data.m2,
            x0: data.trajectories.iter().map(|t| t.x0.clone()).collect(),
            x1_mean,
            sequence_counts: data.sequence_counts(),
        }
    }
}

fn arm_index(a: Arm) -> usize {
    match a {
        Arm::Plus => 0,
        Arm::Minus => 1,
    }
}

/// One retained state of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraw {
    pub iter: usize,
    pub marginals: Vec<MarginalDpmParams>,
    pub r: [[f64; 4]; 4],
    /// Observed and imputed compliances per subject (inert slots hold their start value).
    pub compliance: Vec<[f64; 4]>,
    pub outcomes: Vec<OutcomeDpmParams>,
    /// Average fitted conditional mean of each sequence over its own subjects.
    pub sequence_means: [f64; 6],
    /// Response mixtures for arms +1 and −1 paired with this draw.
    pub response: Vec<ResponseDpmParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub config: ChainConfig,
    pub context: FitContext,
    pub draws: Vec<ChainDraw>,
    pub traces: Vec<TraceRow>,
    pub acceptance: BlockAcceptance,
}

struct ChainState {
    values: Vec<[f64; 4]>,
    copula: CopulaState,
    marginals: [MarginalModel; 4],
    outcomes: Vec<OutcomeModel>,
    seqs: Vec<Sequence>,
}

fn stage_err(t: usize, block: &str, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("iteration {t}, {block}: {msg}")),
        other => other,
    }
}

/// Runs the chain and the paired response fits.
pub fn run_chain(cfg: &ChainConfig, data: &Dataset) -> Result<ChainOutput> {
    cfg.validate()?;
    let seqs = data.sequences().to_vec();
    let mut init_rng = RngStream::new(cfg.seed, 0);
    let mut rng_marg = RngStream::new(cfg.seed, 1);
    let mut rng_cop = RngStream::new(cfg.seed, 2);
    let mut rng_aug = RngStream::new(cfg.seed, 3);
    let mut rng_out = RngStream::new(cfg.seed, 4);

    let values = augmentation::initial_values(data);
    let build = |slot: Slot, rng: &mut RngStream| {
        MarginalModel::new(
            slot,
            data,
            &values,
            cfg.truncations.marginal,
            cfg.marginal_prior,
            cfg.marginal_proposal,
            rng,
        )
    };
    let marginals = [
        build(Slot::D1, &mut init_rng)?,
        build(Slot::D2, &mut init_rng)?,
        build(Slot::D3, &mut init_rng)?,
        build(Slot::D4, &mut init_rng)?,
    ];
    let mut copula = CopulaState::independent(data.n());
    for m in &marginals {
        m.write_scores(&mut copula.h);
    }
    let outcomes = Sequence::ALL
        .iter()
        .map(|&k| OutcomeModel::new(k, data, &copula.h, cfg.truncations.outcome, &mut init_rng))
        .collect::<Result<Vec<_>>>()?;
    let aug_cfg = AugmentationConfig::from_data(data, cfg.augmentation)?;
    let mut state = ChainState { values, copula, marginals, outcomes, seqs: seqs.clone() };

    let mut acceptance = BlockAcceptance::default();
    let mut traces = Vec::with_capacity(cfg.iters * Block::ALL.len());
    let mut draws = Vec::with_capacity(cfg.retained());

    for t in 0..cfg.iters {
        let prec = SequencePrecisions::new(&state.copula.r).map_err(|e| stage_err(t, "copula precision", e))?;
        for group in [[0usize, 1], [2, 3]] {
            for j in group {
                let m = &mut state.marginals[j];
                m.sweep(&mut state.copula.h, &prec, &seqs, &mut rng_marg)
                    .map_err(|e| stage_err(t, &format!("{} marginal", Slot::from_index(j)), e))?;
            }
        }
        copula::mh_update_r(&mut state.copula, &seqs, &mut rng_cop, &mut acceptance.0[Block::Correlation as usize])
            .map_err(|e| stage_err(t, "correlation", e))?;
        let prec = SequencePrecisions::new(&state.copula.r).map_err(|e| stage_err(t, "copula precision", e))?;

        {
            let outcomes = &state.outcomes;
            let term = |i: usize, h_row: &[f64; 4]| {
                let tr = &data.trajectories[i];
                outcomes[seqs[i].index()].subject_ln_likelihood(i, tr.y, &tr.x0, h_row)
            };
            augmentation::sweep(
                data,
                &mut state.values,
                &mut state.copula.h,
                &mut state.marginals,
                &prec,
                &aug_cfg,
                Some(&term),
                &mut acceptance.0[Block::Augmentation as usize],
                &mut rng_aug,
            );
        }
        for m in state.outcomes.iter_mut() {
            m.sweep(&state.copula.h, &mut rng_out).map_err(|e| stage_err(t, "outcome mixture", e))?;
        }

        let mut marg_acc = marginals::MarginalAcceptance::default();
        for m in &state.marginals {
            marg_acc.hyper.merge(m.acceptance.hyper);
            marg_acc.intercept.merge(m.acceptance.intercept);
            marg_acc.variance.merge(m.acceptance.variance);
            marg_acc.coeffs.merge(m.acceptance.coeffs);
        }
        acceptance.0[Block::Hyper as usize] = marg_acc.hyper;
        acceptance.0[Block::Intercept as usize] = marg_acc.intercept;
        acceptance.0[Block::Variance as usize] = marg_acc.variance;
        acceptance.0[Block::Coefficients as usize] = marg_acc.coeffs;
        traces.extend(trace_rows(t, &state, &acceptance));

        if cfg.is_retained(t) {
            draws.push(snapshot(t, &state));
        }
    }
    debug_assert_eq!(draws.len(), cfg.retained());

    fit_responses(cfg, data, &mut draws)?;
    Ok(ChainOutput { config: cfg.clone(), context: FitContext::from_data(data), draws, traces, acceptance })
}

fn trace_rows(t: usize, s: &ChainState, acc: &BlockAcceptance) -> Vec<TraceRow> {
    let d1 = &s.marginals[0].params;
    let wmean = |p: &MarginalDpmParams, v: &[f64]| p.weights.w.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
    // Mean imputed D2 across subjects whose D2 is latent.
    let latent: Vec<f64> = s.marginals[1]
        .members()
        .iter()
        .filter(|&&i| s.seqs[i].role(Slot::D2) == SlotRole::Latent)
        .map(|&i| s.values[i][1])
        .collect();
    let aug_value = if latent.is_empty() { 0.0 } else { latent.iter().sum::<f64>() / latent.len() as f64 };
    let values = [
        d1.base_mu,
        wmean(d1, &d1.intercepts),
        wmean(d1, &d1.variances),
        d1.coeffs.first().copied().unwrap_or(0.0),
        s.copula.r[(0, 1)],
        aug_value,
    ];
    Block::ALL
        .iter()
        .zip(values)
        .map(|(&block, value)| TraceRow { iter: t, block, value, accept_rate: acc.get(block).rate() })
        .collect()
}

fn snapshot(t: usize, s: &ChainState) -> ChainDraw {
    let mut r = [[0.0; 4]; 4];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = s.copula.r[(i, j)];
        }
    }
    let mut sequence_means = [f64::NAN; 6];
    for (k, m) in s.outcomes.iter().enumerate() {
        sequence_means[k] = m.in_sample_mean();
    }
    ChainDraw {
        iter: t,
        marginals: s.marginals.iter().map(|m| m.params.clone()).collect(),
        r,
        compliance: s.values.clone(),
        outcomes: s.outcomes.iter().map(|m| m.params.clone()).collect(),
        sequence_means,
        response: Vec::new(),
    }
}

/// Fits both response mixtures, one paired draw per retained chain draw.
pub fn fit_responses(cfg: &ChainConfig, data: &Dataset, draws: &mut [ChainDraw]) -> Result<()> {
    let first = match draws.first() {
        Some(d) => d.compliance.clone(),
        None => return Err(Error::invalid("no retained draws to pair the response models with")),
    };
    let run = |arm: Arm, stream: u64| -> Result<Vec<ResponseDpmParams>> {
        let mut rng = RngStream::new(cfg.seed, stream);
        let mut model = ResponseModel::new(arm, data, &first, cfg.truncations.response, &mut rng)?;
        model.step = cfg.response_step;
        for _ in 0..cfg.response_burn_in {
            model.sweep(&mut rng);
        }
        let mut out = Vec::with_capacity(draws.len());
        for d in draws.iter() {
            model.set_compliances(&d.compliance);
            for _ in 0..cfg.thin {
                model.sweep(&mut rng);
            }
            out.push(model.params.clone());
        }
        Ok(out)
    };
    let (plus, minus) = rayon::join(|| run(Arm::Plus, 5), || run(Arm::Minus, 6));
    let (plus, minus) = (plus?, minus?);
    for ((d, p), m) in draws.iter_mut().zip(plus).zip(minus) {
        d.response = vec![p, m];
    }
    Ok(())
}

/// One of the four embedded regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edtr(u8);

impl Edtr {
    pub const ALL: [Edtr; 4] = [Edtr(1), Edtr(2), Edtr(3), Edtr(4)];

    pub fn new(l: u8) -> Result<Self> {
        if (1..=4).contains(&l) {
            Ok(Edtr(l))
        } else {
            Err(Error::invalid(format!("embedded regime must be 1..4, got {l}")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn stage1_arm(self) -> Arm {
        if self.0 <= 2 {
            Arm::Plus
        } else {
            Arm::Minus
        }
    }

    pub fn responder_sequence(self) -> Sequence {
        Sequence::new(if self.0 <= 2 { 1 } else { 4 }).expect("valid sequence")
    }

    pub fn nonresponder_sequence(self) -> Sequence {
        Sequence::new([2, 3, 5, 6][self.0 as usize - 1]).expect("valid sequence")
    }

    /// The compliance slots a stratum must fix for this regime.
    pub fn required_slots(self) -> [Slot; 3] {
        let stage2 = if self.0 <= 2 { Slot::D3 } else { Slot::D4 };
        [Slot::D1, Slot::D2, stage2]
    }
}

/// Baseline covariate profile at which effects are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X0Profile {
    Explicit(Vec<f64>),
    PopulationAverage,
}

/// Compliance levels per slot plus a covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub levels: [Option<f64>; 4],
    pub x0: X0Profile,
}

impl Stratum {
    /// Every compliance at the same level.
    pub fn uniform(level: f64, x0: X0Profile) -> Result<Self> {
        let s = Self { levels: [Some(level); 4], x0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("stratum compliance levels must lie in [0, 1]"));
        }
        Ok(())
    }

    fn level(&self, slot: Slot) -> Result<f64> {
        self.levels[slot.index()].ok_or_else(|| Error::invalid(format!("stratum does not fix {slot}")))
    }
}

/// Mixes responder and nonresponder means: p·m_resp + (1 − p)·m_non.
pub fn combine(p_respond: f64, responder_mean: f64, nonresponder_mean: f64) -> f64 {
    p_respond * responder_mean + (1.0 - p_respond) * nonresponder_mean
}

/// Predictive pieces of one retained draw.
#[derive(Debug, Clone)]
pub struct DrawPredictor<'a> {
    draw: &'a ChainDraw,
    outcomes: Vec<OutcomePredictor>,
}

impl<'a> DrawPredictor<'a> {
    pub fn new(draw: &'a ChainDraw) -> Result<Self> {
        if draw.response.len() != 2 {
            return Err(Error::invalid("draw carries no paired response model"));
        }
        let outcomes = draw.outcomes.iter().map(OutcomePredictor::new).collect::<Result<Vec<_>>>()?;
        Ok(Self { draw, outcomes })
    }

    /// Response probability and the two stratum means at one covariate profile:
    /// (P(S = 1), responder mean, nonresponder mean).
    pub fn components(&self, l: Edtr, stratum: &Stratum, x0: &[f64], ctx: &FitContext) -> Result<(f64, f64, f64)> {
        let [s1, s2, s3] = l.required_slots();
        let (d1, d2, d3) = (stratum.level(s1)?, stratum.level(s2)?, stratum.level(s3)?);
        let arm = l.stage1_arm();
        let x1 = &ctx.x1_mean[arm_index(arm)];
        let mut h = [0.0; 4];
        h[0] = self.draw.marginals[0].score(d1, x0)?;
        h[1] = self.draw.marginals[1].score(d2, x0)?;
        let parent = if s3 == Slot::D3 { d1 } else { d2 };
        h[s3.index()] = self.draw.marginals[s3.index()].score(d3, &covariates(s3, x0, parent, x1))?;

        let kr = l.responder_sequence();
        let kn = l.nonresponder_sequence();
        let m_resp = self.outcomes[kr.index()].conditional_mean(&predictor_vector(kr, &h, x0));
        let m_non = self.outcomes[kn.index()].conditional_mean(&predictor_vector(kn, &h, x0));
        let p = self.draw.response[arm_index(arm)].response_prob(d1, d2, x0);
        Ok((p, m_resp, m_non))
    }

    /// Principal causal effect of regime `l` at the stratum.
    pub fn pce(&self, l: Edtr, stratum: &Stratum, ctx: &FitContext) -> Result<f64> {
        match &stratum.x0 {
            X0Profile::Explicit(x0) => {
                if x0.len() != ctx.m1 {
                    return Err(Error::invalid(format!("x0 profile has {} entries, expected {}", x0.len(), ctx.m1)));
                }
                let (p, a, b) = self.components(l, stratum, x0, ctx)?;
                Ok(combine(p, a, b))
            }
            X0Profile::PopulationAverage => {
                if ctx.x0.is_empty() {
                    return Err(Error::invalid("population-average profile needs the fitted covariates"));
                }
                let mut total = 0.0;
                for x0 in &ctx.x0 {
                    let (p, a, b) = self.components(l, stratum, x0, ctx)?;
                    total += combine(p, a, b);
                }
                Ok(total / ctx.x0.len() as f64)
            }
        }
    }
}

/// Posterior samples of the regime's effect, one per retained draw.
pub fn edtr_posterior(l: Edtr, stratum: &Stratum, out: &ChainOutput) -> Result<Vec<f64>> {
    if out.draws.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    stratum.validate()?;
    out.draws.iter().map(|d| DrawPredictor::new(d)?.pce(l, stratum, &out.context)).collect()
}

/// Posterior samples for all four regimes at once (rows = regimes).
pub fn all_edtr_posteriors(stratum: &Stratum, out: &ChainOutput) -> Result<Vec<Vec<f64>>> {
    if out.draws.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    stratum.validate()?;
    let mut rows: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(out.draws.len())).collect();
    for d in &out.draws {
        let pred = DrawPredictor::new(d)?;
        for (row, l) in rows.iter_mut().zip(Edtr::ALL) {
            row.push(pred.pce(l, stratum, &out.context)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McbResult {
    /// Posterior mean of each regime on the outcome scale.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Simultaneous interval for Δ_l = Y_l − max_{l'≠l} Y_l', oriented so
    /// that larger is better.
    pub intervals: Vec<(f64, f64)>,
    pub in_best: Vec<bool>,
}

impl McbResult {
    pub fn best_set(&self) -> Vec<usize> {
        self.in_best.iter().enumerate().filter(|(_, &b)| b).map(|(l, _)| l).collect()
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Multiple comparisons with the best over an L × M matrix of posterior
/// samples (row l holds M joint draws of regime l).
pub fn mcb_best_set(samples: &[Vec<f64>], level: f64, direction: Direction) -> Result<McbResult> {
    let l = samples.len();
    if l < 2 {
        return Err(Error::invalid("MCB needs at least two regimes"));
    }
    let m = samples[0].len();
    if m == 0 || samples.iter().any(|s| s.len() != m) {
        return Err(Error::invalid("MCB needs the same non-zero number of draws for every regime"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("MCB level must lie in (0, 1)"));
    }
    if m < 100 {
        log::warn!("MCB on only {m} posterior draws; simultaneous intervals are coarse");
    }
    let sign = match direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let mut delta = vec![vec![0.0; m]; l];
    for t in 0..m {
        for a in 0..l {
            let best_other = (0..l).filter(|&b| b != a).map(|b| sign * samples[b][t]).fold(f64::NEG_INFINITY, f64::max);
            delta[a][t] = sign * samples[a][t] - best_other;
        }
    }
    let stats: Vec<(f64, f64)> = delta.iter().map(|d| mean_sd(d)).collect();
    let mut modulus: Vec<f64> = (0..m)
        .map(|t| {
            (0..l)
                .filter(|&a| stats[a].1 > 0.0)
                .map(|a| ((delta[a][t] - stats[a].0) / stats[a].1).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    modulus.sort_by(f64::total_cmp);
    let c = quantile_sorted(&modulus, level);
    let intervals: Vec<(f64, f64)> = stats.iter().map(|&(mu, sd)| (mu - c * sd, mu + c * sd)).collect();
    let top = stats.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let in_best =
        intervals.iter().zip(&stats).map(|(&(lo, hi), &(mu, _))| (lo <= 0.0 && hi >= 0.0) || mu == top).collect();
    let (means, sds) = samples.iter().map(|s| mean_sd(s)).unzip();
    Ok(McbResult { means, sds, intervals, in_best })
}
