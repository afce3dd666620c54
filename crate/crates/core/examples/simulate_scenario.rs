//! Generates each simulation scenario and prints sequence sizes and the
//! generative sequence means.

use dtr_pce::simgen::{gen_scenario, Scenario, ScenarioSpec};

fn main() -> dtr_pce::Result<()> {
    for scenario in [Scenario::Linear, Scenario::LinearBimodal, Scenario::Nonlinear, Scenario::NonlinearT] {
        let sim = gen_scenario(&ScenarioSpec::new(scenario, 500, 11))?;
        let counts = sim.data.sequence_counts();
        let truth = sim.sequence_truth();
        println!("scenario {scenario}: n = {}", sim.data.n());
        for k in 0..6 {
            println!("  sequence {}: {:>3} subjects, mean outcome {:.4}", k + 1, counts[k], truth[k]);
        }
    }
    Ok(())
}
