//! Writes a simulated dataset to CSV, reads it back and checks that the
//! observed data survive unchanged.

use dtr_pce::data::ingest_csv;
use dtr_pce::simgen::{gen_scenario, Scenario, ScenarioSpec};

fn main() -> dtr_pce::Result<()> {
    let sim = gen_scenario(&ScenarioSpec::new(Scenario::Nonlinear, 100, 2))?;
    let mut buf = Vec::new();
    sim.data.write_csv(&mut buf, &["scenario 3".to_string()])?;
    let back = ingest_csv(buf.as_slice())?;
    println!("{} bytes, {} subjects, identical: {}", buf.len(), back.n(), back == sim.data);
    print!("{}", String::from_utf8_lossy(&buf).lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
