//! Runs a small replication study and prints the bias and best-set tables.
//!
//! Usage: `cargo run --release --example replicate_study -- [scenario] [reps] [n]`

use dtr_pce::engine::{ChainConfig, Direction};
use dtr_pce::replicate::{run_replicate, ReplicateConfig, DEFAULT_LEVELS, DEFAULT_MCB_LEVEL};
use dtr_pce::simgen::{Scenario, ScenarioSpec};

fn main() -> dtr_pce::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario: Scenario = args.first().map(String::as_str).unwrap_or("1").parse()?;
    let reps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let n = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(250);
    let cfg = ReplicateConfig {
        spec: ScenarioSpec::new(scenario, n, 2024),
        reps,
        chain: ChainConfig { iters: 2000, burn_in: 500, thin: 5, ..ChainConfig::default() },
        levels: DEFAULT_LEVELS.to_vec(),
        mcb_level: DEFAULT_MCB_LEVEL,
        direction: Direction::Maximize,
    };
    let start = std::time::Instant::now();
    let report = run_replicate(&cfg)?;
    println!("{} replicates ({} failed) in {:.1?}", reps, report.failures.len(), start.elapsed());
    println!("sequence   bias     post.sd  emp.sd");
    for r in report.sequence_table() {
        println!("{:>8} {:>8.4} {:>8.4} {:>8.4}", r.sequence, r.bias, r.posterior_sd, r.empirical_sd);
    }
    println!("level edtr  estimate  truth    bias    post.sd  best%");
    for r in report.edtr_table() {
        println!(
            "{:>5} {:>4} {:>8.3} {:>8.3} {:>8.4} {:>8.4} {:>6.1}",
            r.level, r.edtr, r.mean_estimate, r.mean_truth, r.bias, r.posterior_sd, r.inclusion_pct
        );
    }
    Ok(())
}
