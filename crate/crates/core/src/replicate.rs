//! Replication studies: simulate, fit and score many datasets, then
//! summarise bias, spread and best-set inclusion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    all_edtr_posteriors, mcb_best_set, run_chain, ChainConfig, ChainOutput, Direction, Edtr, Stratum, X0Profile,
};
use crate::error::{Error, Result};
use crate::simgen::{gen_scenario, true_pce_oracle, OracleProfile, ScenarioSpec, Simulated};
use crate::stats::rng::derive_seed;

/// Compliance levels studied by default.
pub const DEFAULT_LEVELS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];
pub const DEFAULT_MCB_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateConfig {
    /// Base scenario; its seed is the study seed.
    pub spec: ScenarioSpec,
    pub reps: usize,
    /// Chain settings; the seed is replaced per replicate.
    pub chain: ChainConfig,
    pub levels: Vec<f64>,
    pub mcb_level: f64,
    pub direction: Direction,
}

impl ReplicateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid("compliance levels must be a non-empty list within [0, 1]"));
        }
        self.spec.validate()?;
        self.chain.validate()
    }

    /// Data and chain seeds of replicate `rep`.
    pub fn seeds(&self, rep: usize) -> (u64, u64) {
        let base = derive_seed(self.spec.seed, rep as u64);
        (base, derive_seed(base, 1))
    }
}

/// Posterior summary and truth of the four regimes at one compliance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: f64,
    pub estimate: [f64; 4],
    pub sd: [f64; 4],
    pub truth: [f64; 4],
    pub in_best: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub sequence_estimate: [f64; 6],
    pub sequence_sd: [f64; 6],
    pub sequence_truth: [f64; 6],
    pub levels: Vec<LevelResult>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Scores one fitted chain against its simulated truth.
pub fn score_fit(
    sim: &Simulated,
    out: &ChainOutput,
    levels: &[f64],
    mcb_level: f64,
    direction: Direction,
) -> Result<(Vec<f64>, Vec<f64>, Vec<LevelResult>)> {
    let mut seq_est = Vec::with_capacity(6);
    let mut seq_sd = Vec::with_capacity(6);
    for k in 0..6 {
        let s: Vec<f64> = out.draws.iter().map(|d| d.sequence_means[k]).collect();
        let (m, sd) = mean_sd(&s);
        seq_est.push(m);
        seq_sd.push(sd);
    }
    let rows: Vec<Vec<f64>> = sim.data.trajectories.iter().map(|t| t.x0.clone()).collect();
    let profile = OracleProfile::Rows(rows);
    let mut results = Vec::with_capacity(levels.len());
    for &level in levels {
        let stratum = Stratum::uniform(level, X0Profile::PopulationAverage)?;
        let samples = all_edtr_posteriors(&stratum, out)?;
        let mcb = mcb_best_set(&samples, mcb_level, direction)?;
        let mut truth = [0.0; 4];
        for (t, l) in truth.iter_mut().zip(Edtr::ALL) {
            *t = true_pce_oracle(&sim.spec, l, &stratum, &profile)?.value;
        }
        results.push(LevelResult {
            level,
            estimate: std::array::from_fn(|l| mcb.means[l]),
            sd: std::array::from_fn(|l| mcb.sds[l]),
            truth,
            in_best: std::array::from_fn(|l| mcb.in_best[l]),
        });
    }
    Ok((seq_est, seq_sd, results))
}

/// Simulates, fits and scores replicate `rep`.
pub fn replicate_one(cfg: &ReplicateConfig, rep: usize) -> Result<RepResult> {
    let (data_seed, chain_seed) = cfg.seeds(rep);
    let spec = ScenarioSpec { seed: data_seed, ..cfg.spec.clone() };
    let sim = gen_scenario(&spec)?;
    let chain = ChainConfig { seed: chain_seed, ..cfg.chain.clone() };
    let out = run_chain(&chain, &sim.data)?;
    let (est, sd, levels) = score_fit(&sim, &out, &cfg.levels, cfg.mcb_level, cfg.direction)?;
    Ok(RepResult {
        rep,
        data_seed,
        chain_seed,
        sequence_estimate: std::array::from_fn(|k| est[k]),
        sequence_sd: std::array::from_fn(|k| sd[k]),
        sequence_truth: sim.sequence_truth(),
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub results: Vec<RepResult>,
    pub failures: Vec<RepFailure>,
}

/// Per-sequence bias row: mean over replicates of (estimate − truth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub sequence: usize,
    pub bias: f64,
    /// Average posterior standard deviation.
    pub posterior_sd: f64,
    /// Spread of the estimates across replicates.
    pub empirical_sd: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdtrRow {
    pub level: f64,
    pub edtr: u8,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    pub bias: f64,
    pub posterior_sd: f64,
    /// Percentage of replicates placing the regime in the best set.
    pub inclusion_pct: f64,
    pub reps: usize,
}

impl ReplicateReport {
    pub fn sequence_table(&self) -> Vec<SequenceRow> {
        (0..6)
            .map(|k| {
                let ok: Vec<&RepResult> = self.results.iter().filter(|r| r.sequence_estimate[k].is_finite()).collect();
                let err: Vec<f64> = ok.iter().map(|r| r.sequence_estimate[k] - r.sequence_truth[k]).collect();
                let est: Vec<f64> = ok.iter().map(|r| r.sequence_estimate[k]).collect();
                let sds: Vec<f64> = ok.iter().map(|r| r.sequence_sd[k]).collect();
                SequenceRow {
                    sequence: k + 1,
                    bias: mean_sd(&err).0,
                    posterior_sd: mean_sd(&sds).0,
                    empirical_sd: mean_sd(&est).1,
                    reps: ok.len(),
                }
            })
            .collect()
    }

    pub fn edtr_table(&self) -> Vec<EdtrRow> {
        let Some(first) = self.results.first() else { return Vec::new() };
        let mut rows = Vec::new();
        for (li, lr) in first.levels.iter().enumerate() {
            for l in 0..4 {
                let pick = |f: &dyn Fn(&LevelResult) -> f64| -> Vec<f64> {
                    self.results.iter().map(|r| f(&r.levels[li])).collect()
                };
                let est = pick(&|x| x.estimate[l]);
                let truth = pick(&|x| x.truth[l]);
                let sds = pick(&|x| x.sd[l]);
                let incl = pick(&|x| f64::from(u8::from(x.in_best[l])));
                let err: Vec<f64> = est.iter().zip(&truth).map(|(e, t)| e - t).collect();
                rows.push(EdtrRow {
                    level: lr.level,
                    edtr: l as u8 + 1,
                    mean_estimate: mean_sd(&est).0,
                    mean_truth: mean_sd(&truth).0,
                    bias: mean_sd(&err).0,
                    posterior_sd: mean_sd(&sds).0,
                    inclusion_pct: 100.0 * mean_sd(&incl).0,
                    reps: est.len(),
                });
            }
        }
        rows
    }
}

/// Runs every replicate (in parallel), recording failures instead of aborting.
pub fn run_replicate(cfg: &ReplicateConfig) -> Result<ReplicateReport> {
    cfg.validate()?;
    let outcomes: Vec<(usize, Result<RepResult>)> =
        (0..cfg.reps).into_par_iter().map(|rep| (rep, replicate_one(cfg, rep))).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in outcomes {
        match r {
            Ok(r) => results.push(r),
            Err(e) => {
                log::error!("replicate {rep} failed: {e}");
                failures.push(RepFailure { rep, message: e.to_string() });
            }
        }
    }
    Ok(ReplicateReport { results, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(rep: usize, offset: f64) -> RepResult {
        let truth = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        RepResult {
            rep,
            data_seed: 0,
            chain_seed: 0,
            sequence_estimate: truth.map(|t| t + offset),
            sequence_sd: [0.1; 6],
            sequence_truth: truth,
            levels: DEFAULT_LEVELS
                .iter()
                .map(|&level| LevelResult {
                    level,
                    estimate: [1.0 + offset, 0.5 + offset, 2.0 + offset, 1.5 + offset],
                    sd: [0.1; 4],
                    truth: [1.0, 0.5, 2.0, 1.5],
                    in_best: [false, false, true, rep.is_multiple_of(2)],
                })
                .collect(),
        }
    }

    #[test]
    fn tables_have_expected_shape_and_zero_bias_at_truth() {
        let report = ReplicateReport { results: vec![fake(0, 0.0), fake(1, 0.0)], failures: vec![] };
        let seq = report.sequence_table();
        assert_eq!(seq.len(), 6);
        assert!(seq.iter().all(|r| r.bias == 0.0 && r.reps == 2));
        let edtr = report.edtr_table();
        assert_eq!(edtr.len(), 4 * DEFAULT_LEVELS.len());
        assert!(edtr.iter().all(|r| r.bias == 0.0));
        let incl: Vec<f64> = edtr.iter().take(4).map(|r| r.inclusion_pct).collect();
        assert_eq!(incl, vec![0.0, 0.0, 100.0, 50.0]);
    }

    #[test]
    fn bias_is_mean_error() {
        let report = ReplicateReport { results: vec![fake(0, 0.1), fake(1, -0.3)], failures: vec![] };
        for r in report.sequence_table() {
            assert!((r.bias + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_differ_across_replicates() {
        let cfg = ReplicateConfig {
            spec: ScenarioSpec::default(),
            reps: 3,
            chain: ChainConfig::default(),
            levels: DEFAULT_LEVELS.to_vec(),
            mcb_level: DEFAULT_MCB_LEVEL,
            direction: Direction::Maximize,
        };
        let s: Vec<(u64, u64)> = (0..3).map(|r| cfg.seeds(r)).collect();
        assert!(s[0] != s[1] && s[1] != s[2] && s[0].0 != s[0].1);
    }
}
