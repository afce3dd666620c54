//! Metropolis imputation of the latent potential compliances.
//!
//! Each latent slot is proposed from a normal centred on its current value
//! and truncated to [0, 1]. The target is the joint compliance model (the
//! slot's marginal density times the copula terms involving its score),
//! optionally multiplied by the subject's outcome likelihood at the
//! candidate score.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{h_transform, Acceptance, SequencePrecisions};
use crate::data::{Dataset, Sequence, Slot};
use crate::error::{Error, Result};
use crate::marginals::MarginalModel;
use crate::stats::truncnorm::TruncNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationTarget {
    CopulaOnly,
    #[default]
    CopulaTimesOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub target: AugmentationTarget,
    /// Proposal standard deviation per slot.
    pub proposal_sd: [f64; 4],
}

impl AugmentationConfig {
    /// Proposal scales set to the empirical standard deviation of each
    /// observed compliance.
    pub fn from_data(data: &Dataset, target: AugmentationTarget) -> Result<Self> {
        let mut proposal_sd = [0.0; 4];
        for slot in Slot::ALL {
            let obs = data.observed_values(slot);
            let sd = if obs.len() >= 2 {
                let m = obs.iter().sum::<f64>() / obs.len() as f64;
                (obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            // A degenerate observed column still needs a usable proposal.
            proposal_sd[slot.index()] = if sd > 1e-3 { sd } else { 0.1 };
        }
        let cfg = Self { target, proposal_sd };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.proposal_sd.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("augmentation proposal scales must be positive"));
        }
        Ok(())
    }
}

/// Initial values: observed slots as recorded, every other slot at the
/// empirical mean of the corresponding observed compliance.
pub fn initial_values(data: &Dataset) -> Vec<[f64; 4]> {
    let mut fill = [0.5; 4];
    for slot in Slot::ALL {
        let obs = data.observed_values(slot);
        if !obs.is_empty() {
            fill[slot.index()] = obs.iter().sum::<f64>() / obs.len() as f64;
        }
    }
    data.trajectories
        .iter()
        .map(|t| {
            let mut v = fill;
            for slot in Slot::ALL {
                if let Some(d) = t.observed(slot) {
                    v[slot.index()] = d;
                }
            }
            v
        })
        .collect()
}

fn proposal_kernel(center: f64, sd: f64) -> Option<TruncNormal> {
    TruncNormal::unit(center.clamp(0.0, 1.0), sd * sd).ok()
}

/// Candidate from N(current, sd²) truncated to [0, 1].
pub fn propose_missing<R: Rng + ?Sized>(current: f64, sd: f64, rng: &mut R) -> f64 {
    match proposal_kernel(current, sd) {
        Some(k) => k.sample(rng),
        None => current.clamp(0.0, 1.0),
    }
}

/// ln q(to | from) for the truncated-normal proposal.
pub fn proposal_ln_density(to: f64, from: f64, sd: f64) -> f64 {
    proposal_kernel(from, sd).map_or(f64::NEG_INFINITY, |k| k.ln_pdf(to))
}

/// Subject-level outcome log likelihood as a function of the score row.
pub type OutcomeTerm<'a> = &'a dyn Fn(usize, &[f64; 4]) -> f64;

#[allow(clippy::too_many_arguments)]
/// Log target for slot `j` of subject `i` at value `d`, up to a constant.
/// Returns the log target and the score at `d`.
pub fn target_ln(
    i: usize,
    slot: Slot,
    d: f64,
    seq: Sequence,
    h_row: &[f64; 4],
    marginal: &MarginalModel,
    prec: &SequencePrecisions,
    outcome: Option<OutcomeTerm<'_>>,
) -> (f64, f64) {
    let (f, cdf) = marginal.eval_subject(i, d);
    if !(f > 0.0) {
        return (f64::NEG_INFINITY, h_transform(cdf));
    }
    let h = h_transform(cdf);
    let (a, c) = prec.row_terms(seq, slot, h_row);
    let mut ln = f.ln() - 0.5 * a * h * h - h * c;
    if let Some(term) = outcome {
        let mut row = *h_row;
        row[slot.index()] = h;
        ln += term(i, &row);
    }
    (ln, h)
}

/// Log acceptance ratio for moving latent slot `j` of subject `i` from its
/// current value to `candidate`, with the proposal correction.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_log_ratio(
    i: usize,
    slot: Slot,
    candidate: f64,
    seq: Sequence,
    values: &[[f64; 4]],
    h: &[[f64; 4]],
    marginal: &MarginalModel,
    prec: &SequencePrecisions,
    sd: f64,
    outcome: Option<OutcomeTerm<'_>>,
) -> (f64, f64) {
    let current = values[i][slot.index()];
    let (cur_ln, _) = target_ln(i, slot, current, seq, &h[i], marginal, prec, outcome);
    let (new_ln, h_new) = target_ln(i, slot, candidate, seq, &h[i], marginal, prec, outcome);
    let q = proposal_ln_density(current, candidate, sd) - proposal_ln_density(candidate, current, sd);
    let mut ratio = new_ln - cur_ln + q;
    if candidate == current {
        ratio = 0.0;
    } else if ratio.is_nan() {
        ratio = f64::NEG_INFINITY;
    }
    (ratio, h_new)
}

/// One Metropolis update of latent slot `j` of subject `i`. Accepted values
/// are written to `values`, the marginal cache and the score row.
#[allow(clippy::too_many_arguments)]
pub fn mh_update_missing<R: Rng + ?Sized>(
    i: usize,
    slot: Slot,
    seq: Sequence,
    values: &mut [[f64; 4]],
    h: &mut [[f64; 4]],
    marginal: &mut MarginalModel,
    prec: &SequencePrecisions,
    cfg: &AugmentationConfig,
    outcome: Option<OutcomeTerm<'_>>,
    rng: &mut R,
) -> bool {
    debug_assert_eq!(seq.role(slot), crate::data::SlotRole::Latent);
    let sd = cfg.proposal_sd[slot.index()];
    let outcome = if cfg.target == AugmentationTarget::CopulaTimesOutcome { outcome } else { None };
    let candidate = propose_missing(values[i][slot.index()], sd, rng);
    let (ratio, h_new) = augmentation_log_ratio(i, slot, candidate, seq, values, h, marginal, prec, sd, outcome);
    let ok = crate::stats::sample::accept(ratio, rng);
    if ok {
        values[i][slot.index()] = candidate;
        marginal.set_value(i, candidate);
        h[i][slot.index()] = h_new;
    }
    debug_assert!(
        (h[i][slot.index()] - h_transform(marginal.eval_subject(i, values[i][slot.index()]).1)).abs() < 1e-9,
        "stale score after imputation"
    );
    ok
}

/// Sweeps every latent slot of every subject in index order.
#[allow(clippy::too_many_arguments)]
pub fn sweep<R: Rng + ?Sized>(
    data: &Dataset,
    values: &mut [[f64; 4]],
    h: &mut [[f64; 4]],
    marginals: &mut [MarginalModel; 4],
    prec: &SequencePrecisions,
    cfg: &AugmentationConfig,
    outcome: Option<OutcomeTerm<'_>>,
    acc: &mut Acceptance,
    rng: &mut R,
) {
    for i in 0..data.n() {
        let seq = data.sequence(i);
        for slot in seq.latent_slots() {
            let ok = mh_update_missing(i, slot, seq, values, h, &mut marginals[slot.index()], prec, cfg, outcome, rng);
            acc.record(ok);
        }
    }
}
