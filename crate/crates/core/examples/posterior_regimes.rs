//! Fits one dataset, then reports posterior regime effects and the best set
//! at several compliance levels next to their generative values.

use dtr_pce::engine::{all_edtr_posteriors, mcb_best_set, run_chain, ChainConfig, Direction, Edtr, Stratum, X0Profile};
use dtr_pce::simgen::{gen_scenario, true_pce_oracle, OracleProfile, Scenario, ScenarioSpec};

fn main() -> dtr_pce::Result<()> {
    let sim = gen_scenario(&ScenarioSpec::new(Scenario::Nonlinear, 300, 4))?;
    let cfg = ChainConfig { iters: 1500, burn_in: 500, thin: 5, seed: 2, ..ChainConfig::default() };
    let out = run_chain(&cfg, &sim.data)?;
    let rows = OracleProfile::Rows(sim.data.trajectories.iter().map(|t| t.x0.clone()).collect());
    for level in [1.0, 0.5] {
        let stratum = Stratum::uniform(level, X0Profile::PopulationAverage)?;
        let samples = all_edtr_posteriors(&stratum, &out)?;
        let best = mcb_best_set(&samples, 0.95, Direction::Maximize)?;
        println!("compliance {level}");
        for (l, regime) in Edtr::ALL.into_iter().enumerate() {
            let truth = true_pce_oracle(&sim.spec, regime, &stratum, &rows)?.value;
            let mark = if best.in_best[l] { "best set" } else { "" };
            println!("  regime {}: {:.3} (sd {:.3}), truth {truth:.3} {mark}", l + 1, best.means[l], best.sds[l]);
        }
    }
    Ok(())
}
