//! Evaluates the generative regime effects of each scenario across
//! compliance levels, with the Monte-Carlo covariate profile.

use dtr_pce::engine::{Edtr, Stratum, X0Profile};
use dtr_pce::simgen::{true_pce_oracle, OracleProfile, Scenario, ScenarioSpec};

fn main() -> dtr_pce::Result<()> {
    let profile = OracleProfile::MonteCarlo { size: 2000, seed: 3 };
    for scenario in [Scenario::Linear, Scenario::Nonlinear] {
        let spec = ScenarioSpec::new(scenario, 250, 0);
        println!("scenario {scenario}");
        for level in [1.0, 0.75, 0.5, 0.25] {
            let stratum = Stratum::uniform(level, X0Profile::PopulationAverage)?;
            let values: Vec<String> = Edtr::ALL
                .iter()
                .map(|&l| {
                    true_pce_oracle(&spec, l, &stratum, &profile).map(|v| format!("{:.3}±{:.3}", v.value, v.mc_se))
                })
                .collect::<Result<_, _>>()?;
            println!("  level {level:.2}: {}", values.join("  "));
        }
    }
    Ok(())
}
