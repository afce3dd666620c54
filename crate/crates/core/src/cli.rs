//! Command-line front end: argument parsing, the flat run configuration and
//! the five subcommands.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::AugmentationTarget;
use crate::engine::{
    all_edtr_posteriors, mcb_best_set, run_chain, ChainConfig, ChainDraw, ChainOutput, Direction, FitContext, Stratum,
    Truncations, X0Profile,
};
use crate::error::{Error, Result};
use crate::marginals::{MarginalPrior, MarginalProposal};
use crate::replicate::{run_replicate, ReplicateConfig, ReplicateReport, DEFAULT_LEVELS, DEFAULT_MCB_LEVEL};
use crate::simgen::{gen_scenario, Scenario, ScenarioSpec, DEFAULT_NU};

/// Exit code when some replicates of a study fail.
pub const EXIT_PARTIAL_FAILURE: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Maximize,
    Minimize,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Maximize => Direction::Maximize,
            DirectionArg::Minimize => Direction::Minimize,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtr-pce", version, about = "Principal causal effects of embedded treatment regimes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub burn: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Scenario: 1, 2, 3 or 3t.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub direction: Option<DirectionArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario dataset with its truth table and outcome histogram.
    Simulate {
        /// Number of subjects.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the posterior chain on a dataset.
    Fit {
        /// Dataset CSV.
        data: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Posterior regime effects at the configured compliance levels.
    Pce {
        /// Directory written by `fit`.
        draws: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Best-set selection from a posterior sample file written by `pce`.
    Mcb {
        /// Sample CSV written by `pce`.
        samples: PathBuf,
        /// Simultaneous credible level.
        #[arg(long)]
        level: Option<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate, fit and score many datasets.
    Replicate {
        /// Number of subjects per dataset.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Flat, typed run configuration; every key is optional in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub nu: f64,
    pub minus_arm_uses_d2: bool,

    pub seed: u64,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub truncation_marginal: usize,
    pub truncation_outcome: usize,
    pub truncation_response: usize,
    pub augmentation: AugmentationTarget,
    pub response_burn_in: usize,
    pub response_step: f64,
    pub intercept_var: f64,
    pub precision_shape: f64,
    pub mu_sd: f64,
    pub s_halfwidth: f64,

    pub levels: Vec<f64>,
    /// Explicit baseline-covariate profile; the dataset average when absent.
    pub x0: Option<Vec<f64>>,
    pub mcb_level: f64,
    pub direction: Direction,

    pub reps: usize,
    /// Run replication studies under both imputation targets.
    pub compare_targets: bool,
    /// Worker threads for replication (0 = one per core).
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let chain = ChainConfig::default();
        let proposal = MarginalProposal::default();
        Self {
            scenario: Scenario::Linear,
            n: 250,
            nu: DEFAULT_NU,
            minus_arm_uses_d2: false,
            seed: chain.seed,
            iters: chain.iters,
            burn_in: chain.burn_in,
            thin: chain.thin,
            truncation_marginal: chain.truncations.marginal,
            truncation_outcome: chain.truncations.outcome,
            truncation_response: chain.truncations.response,
            augmentation: chain.augmentation,
            response_burn_in: chain.response_burn_in,
            response_step: chain.response_step,
            intercept_var: proposal.intercept_var,
            precision_shape: proposal.precision_shape,
            mu_sd: proposal.mu_sd,
            s_halfwidth: proposal.s_halfwidth,
            levels: DEFAULT_LEVELS.to_vec(),
            x0: None,
            mcb_level: DEFAULT_MCB_LEVEL,
            direction: Direction::Maximize,
            reps: 20,
            compare_targets: false,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, a: &CommonArgs) -> Result<()> {
        if let Some(v) = a.seed {
            self.seed = v;
        }
        if let Some(v) = a.iters {
            self.iters = v;
        }
        if let Some(v) = a.burn {
            self.burn_in = v;
        }
        if let Some(v) = a.thin {
            self.thin = v;
        }
        if let Some(v) = a.reps {
            self.reps = v;
        }
        if let Some(s) = &a.scenario {
            self.scenario = s.parse()?;
        }
        if let Some(d) = a.direction {
            self.direction = d.into();
        }
        Ok(())
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            iters: self.iters,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            truncations: Truncations {
                marginal: self.truncation_marginal,
                outcome: self.truncation_outcome,
                response: self.truncation_response,
            },
            augmentation: self.augmentation,
            marginal_prior: MarginalPrior::default(),
            marginal_proposal: MarginalProposal {
                intercept_var: self.intercept_var,
                precision_shape: self.precision_shape,
                mu_sd: self.mu_sd,
                s_halfwidth: self.s_halfwidth,
            },
            response_burn_in: self.response_burn_in,
            response_step: self.response_step,
        }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            scenario: self.scenario,
            n: self.n,
            seed: self.seed,
            nu: self.nu,
            minus_arm_uses_d2: self.minus_arm_uses_d2,
        }
    }

    /// Short SHA-256 digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    fn header(&self, command: &str) -> String {
        format!("dtr-pce {command} config_hash={} seed={}", self.hash(), self.seed)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(common)?;
    Ok(cfg)
}

fn require_out(common: &CommonArgs) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| Error::invalid("--out is required"))
}

/// Runs a parsed command; returns the exit code on success.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { n, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n {
                cfg.n = n;
            }
            cmd_simulate(&cfg, require_out(&common)?)?;
        }
        Command::Fit { data, common } => {
            let cfg = resolve(&common)?;
            cmd_fit(&cfg, &data, require_out(&common)?)?;
        }
        Command::Pce { draws, common } => {
            let cfg = resolve(&common)?;
            cmd_pce(&cfg, &draws, require_out(&common)?)?;
        }
        Command::Mcb { samples, level, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(l) = level {
                cfg.mcb_level = l;
            }
            cmd_mcb(&cfg, &samples, require_out(&common)?)?;
        }
        Command::Replicate { n, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n {
                cfg.n = n;
            }
            let failed = cmd_replicate(&cfg, require_out(&common)?)?;
            if failed > 0 {
                return Ok(EXIT_PARTIAL_FAILURE);
            }
        }
    }
    Ok(0)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path, header: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = create(path)?;
    writeln!(w, "# {header}")?;
    Ok(csv::Writer::from_writer(w))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// Writes the dataset, its truth table and an outcome histogram per sequence.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sim = gen_scenario(&cfg.scenario_spec())?;
    let header = cfg.header("simulate");
    let comments = [header.clone(), format!("scenario={} n={}", cfg.scenario, cfg.n)];
    sim.data.write_csv(create(out)?, &comments)?;
    sim.write_truth_csv(create(&sibling(out, "truth"))?, &comments)?;
    write_histogram(&sim.data, &sibling(out, "hist"), &header)?;
    let counts = sim.data.sequence_counts();
    println!("n={} sequence counts: {}", sim.data.n(), counts.map(|c| c.to_string()).join(" "));
    Ok(())
}

/// Number of bins in the outcome histogram.
pub const HISTOGRAM_BINS: usize = 20;

fn write_histogram(data: &crate::data::Dataset, path: &Path, header: &str) -> Result<()> {
    let ys: Vec<f64> = data.trajectories.iter().map(|t| t.y).collect();
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut counts = vec![[0usize; HISTOGRAM_BINS]; 6];
    for (i, y) in ys.iter().enumerate() {
        let b = (((y - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[data.sequence(i).index()][b] += 1;
    }
    let mut w = csv_writer(path, header)?;
    w.write_record(["sequence", "bin_lo", "bin_hi", "count"])?;
    for (k, row) in counts.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            let a = lo + width * b as f64;
            w.write_record([(k + 1).to_string(), fmt(a), fmt(a + width), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// First line of a draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub header: String,
    pub config: ChainConfig,
    pub context: FitContext,
}

pub const DRAWS_FILE: &str = "draws.jsonl";
pub const TRACE_FILE: &str = "trace.csv";
pub const ACCEPTANCE_FILE: &str = "acceptance.csv";

/// Runs the chain; writes draws (JSON lines), traces and acceptance rates into `out`.
pub fn cmd_fit(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<ChainOutput> {
    let data = crate::data::ingest_csv(File::open(data_path)?)?;
    let chain = cfg.chain();
    let output = run_chain(&chain, &data)?;
    fs::create_dir_all(out)?;
    let header = cfg.header("fit");
    write_draws(&out.join(DRAWS_FILE), &header, &output)?;

    let mut w = csv_writer(&out.join(TRACE_FILE), &header)?;
    w.write_record(["iter", "block", "value", "accept_rate"])?;
    for t in &output.traces {
        w.write_record([t.iter.to_string(), t.block.name().to_string(), fmt(t.value), fmt(t.accept_rate)])?;
    }
    w.flush()?;

    let mut w = csv_writer(&out.join(ACCEPTANCE_FILE), &header)?;
    w.write_record(["block", "proposed", "accepted", "rate"])?;
    for (block, rate) in output.acceptance.rates() {
        let a = output.acceptance.get(block);
        w.write_record([block.name().to_string(), a.proposed.to_string(), a.accepted.to_string(), fmt(rate)])?;
    }
    w.flush()?;

    println!("retained draws: {}", output.draws.len());
    for (block, rate) in output.acceptance.rates() {
        println!("acceptance {}: {rate:.3}", block.name());
    }
    Ok(output)
}

pub fn write_draws(path: &Path, header: &str, output: &ChainOutput) -> Result<()> {
    let mut w = create(path)?;
    let meta = DrawsMeta { header: header.to_string(), config: output.config.clone(), context: output.context.clone() };
    serde_json::to_writer(&mut w, &meta)?;
    writeln!(w)?;
    for d in &output.draws {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<ChainOutput> {
    let file = File::open(path).map_err(|e| Error::Data { row: 0, msg: format!("{}: {e}", path.display()) })?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| Error::Data { row: 1, msg: "empty draws file".into() })??;
    let meta: DrawsMeta = serde_json::from_str(&first).map_err(|e| Error::Data { row: 1, msg: e.to_string() })?;
    let mut draws = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: ChainDraw = serde_json::from_str(&line).map_err(|e| Error::Data { row: i + 2, msg: e.to_string() })?;
        draws.push(d);
    }
    if draws.is_empty() {
        return Err(Error::Data { row: 0, msg: "draws file holds no retained draws".into() });
    }
    Ok(ChainOutput {
        config: meta.config,
        context: meta.context,
        draws,
        traces: Vec::new(),
        acceptance: Default::default(),
    })
}

fn stratum_label(level: f64) -> String {
    format!("all={level}")
}

fn write_mcb_rows(
    w: &mut csv::Writer<BufWriter<File>>,
    label: &str,
    samples: &[Vec<f64>],
    level: f64,
    direction: Direction,
) -> Result<()> {
    let r = mcb_best_set(samples, level, direction)?;
    for l in 0..samples.len() {
        let (lo, hi) = r.intervals[l];
        w.write_record([
            (l + 1).to_string(),
            label.to_string(),
            fmt(r.means[l]),
            fmt(r.sds[l]),
            fmt(lo),
            fmt(hi),
            u8::from(r.in_best[l]).to_string(),
        ])?;
    }
    Ok(())
}

const REPORT_HEADER: [&str; 7] = ["edtr", "stratum", "mean", "sd", "lo", "hi", "in_best_set"];

/// Posterior regime effects at every configured level; writes the report
/// and a per-draw sample file next to it.
pub fn cmd_pce(cfg: &RunConfig, draws_dir: &Path, out: &Path) -> Result<()> {
    let path = if draws_dir.is_dir() { draws_dir.join(DRAWS_FILE) } else { draws_dir.to_path_buf() };
    let output = read_draws(&path)?;
    let profile = match &cfg.x0 {
        Some(x) => X0Profile::Explicit(x.clone()),
        None => X0Profile::PopulationAverage,
    };
    let header = RunConfig { seed: output.config.seed, ..cfg.clone() }.header("pce");
    let mut report = csv_writer(out, &header)?;
    report.write_record(REPORT_HEADER)?;
    let mut samples_out = csv_writer(&sibling(out, "samples"), &header)?;
    samples_out.write_record(["stratum", "draw", "edtr1", "edtr2", "edtr3", "edtr4"])?;
    for &level in &cfg.levels {
        let stratum = Stratum::uniform(level, profile.clone())?;
        let samples = all_edtr_posteriors(&stratum, &output)?;
        let label = stratum_label(level);
        write_mcb_rows(&mut report, &label, &samples, cfg.mcb_level, cfg.direction)?;
        for t in 0..samples[0].len() {
            let mut rec = vec![label.clone(), t.to_string()];
            rec.extend(samples.iter().map(|s| fmt(s[t])));
            samples_out.write_record(&rec)?;
        }
    }
    report.flush()?;
    samples_out.flush()?;
    Ok(())
}

/// Reads a sample file grouped by stratum, preserving first-appearance order.
pub fn read_samples(path: &Path) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let file = File::open(path).map_err(|e| Error::Data { row: 0, msg: format!("{}: {e}", path.display()) })?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = reader.headers()?.clone();
    let l = headers.iter().filter(|h| h.starts_with("edtr")).count();
    if headers.get(0) != Some("stratum") || l < 2 {
        return Err(Error::Data { row: 0, msg: "expected columns stratum, draw, edtr1..edtrL".into() });
    }
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let label = rec.get(0).unwrap_or_default().to_string();
        let idx = match groups.iter().position(|(g, _)| *g == label) {
            Some(p) => p,
            None => {
                groups.push((label, vec![Vec::new(); l]));
                groups.len() - 1
            }
        };
        for j in 0..l {
            let v: f64 = rec
                .get(2 + j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data { row: i + 2, msg: format!("bad value in column edtr{}", j + 1) })?;
            groups[idx].1[j].push(v);
        }
    }
    if groups.is_empty() {
        return Err(Error::Data { row: 0, msg: "sample file holds no draws".into() });
    }
    Ok(groups)
}

/// Best-set report from a sample file.
pub fn cmd_mcb(cfg: &RunConfig, samples: &Path, out: &Path) -> Result<()> {
    let groups = read_samples(samples)?;
    let mut report = csv_writer(out, &cfg.header("mcb"))?;
    report.write_record(REPORT_HEADER)?;
    for (label, s) in &groups {
        write_mcb_rows(&mut report, label, s, cfg.mcb_level, cfg.direction)?;
    }
    report.flush()?;
    Ok(())
}

pub fn replicate_config(cfg: &RunConfig) -> ReplicateConfig {
    ReplicateConfig {
        spec: cfg.scenario_spec(),
        reps: cfg.reps,
        chain: cfg.chain(),
        levels: cfg.levels.clone(),
        mcb_level: cfg.mcb_level,
        direction: cfg.direction,
    }
}

fn target_name(t: AugmentationTarget) -> &'static str {
    match t {
        AugmentationTarget::CopulaOnly => "copula_only",
        AugmentationTarget::CopulaTimesOutcome => "copula_times_outcome",
    }
}

/// Runs the study (under one or both imputation targets) and writes its
/// tables into `out`. Returns the number of failed replicates.
pub fn cmd_replicate(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let targets = if cfg.compare_targets {
        vec![AugmentationTarget::CopulaTimesOutcome, AugmentationTarget::CopulaOnly]
    } else {
        vec![cfg.augmentation]
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut reports = Vec::new();
    for &t in &targets {
        let mut rc = replicate_config(cfg);
        rc.chain.augmentation = t;
        let report = pool.install(|| run_replicate(&rc))?;
        reports.push((t, report));
    }
    fs::create_dir_all(out)?;
    write_replicate_tables(cfg, out, &reports)?;
    let failed: usize = reports.iter().map(|(_, r)| r.failures.len()).sum();
    for (t, r) in &reports {
        println!("target {}: {} succeeded, {} failed", target_name(*t), r.results.len(), r.failures.len());
        for row in r.sequence_table() {
            println!("  sequence {}: bias {:+.4} posterior sd {:.4}", row.sequence, row.bias, row.posterior_sd);
        }
    }
    Ok(failed)
}

fn write_replicate_tables(
    cfg: &RunConfig,
    out: &Path,
    reports: &[(AugmentationTarget, ReplicateReport)],
) -> Result<()> {
    let header = cfg.header("replicate");
    let mut seq = csv_writer(&out.join("sequence_bias.csv"), &header)?;
    seq.write_record(["target", "sequence", "bias", "posterior_sd", "empirical_sd", "reps"])?;
    let mut edtr = csv_writer(&out.join("edtr_bias.csv"), &header)?;
    edtr.write_record([
        "target",
        "level",
        "edtr",
        "mean_estimate",
        "mean_truth",
        "bias",
        "posterior_sd",
        "best_set_pct",
        "reps",
    ])?;
    let mut reps = csv_writer(&out.join("replicates.csv"), &header)?;
    reps.write_record(["target", "rep", "data_seed", "chain_seed", "sequence", "estimate", "posterior_sd", "truth"])?;
    let mut fail = csv_writer(&out.join("failures.csv"), &header)?;
    fail.write_record(["target", "rep", "message"])?;
    for (t, r) in reports {
        let name = target_name(*t);
        for row in r.sequence_table() {
            seq.write_record([
                name.to_string(),
                row.sequence.to_string(),
                fmt(row.bias),
                fmt(row.posterior_sd),
                fmt(row.empirical_sd),
                row.reps.to_string(),
            ])?;
        }
        for row in r.edtr_table() {
            edtr.write_record([
                name.to_string(),
                fmt(row.level),
                row.edtr.to_string(),
                fmt(row.mean_estimate),
                fmt(row.mean_truth),
                fmt(row.bias),
                fmt(row.posterior_sd),
                fmt(row.inclusion_pct),
                row.reps.to_string(),
            ])?;
        }
        for res in &r.results {
            for k in 0..6 {
                reps.write_record([
                    name.to_string(),
                    res.rep.to_string(),
                    res.data_seed.to_string(),
                    res.chain_seed.to_string(),
                    (k + 1).to_string(),
                    fmt(res.sequence_estimate[k]),
                    fmt(res.sequence_sd[k]),
                    fmt(res.sequence_truth[k]),
                ])?;
            }
        }
        for f in &r.failures {
            fail.write_record([name.to_string(), f.rep.to_string(), f.message.clone()])?;
        }
    }
    seq.flush()?;
    edtr.flush()?;
    reps.flush()?;
    fail.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg =
            RunConfig { iters: 300, direction: Direction::Minimize, x0: Some(vec![0.0, 1.0]), ..RunConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(toml::from_str::<RunConfig>("itres = 3").is_err());
        let partial: RunConfig = toml::from_str("scenario = \"3t\"\nthin = 2").unwrap();
        assert_eq!(partial.scenario, Scenario::NonlinearT);
        assert_eq!(partial.thin, 2);
        assert_eq!(partial.iters, 10_000);
    }

    #[test]
    fn defaults_mirror_the_chain_defaults() {
        assert_eq!(RunConfig::default().chain(), ChainConfig::default());
    }

    #[test]
    fn hash_tracks_every_key() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        let args = CommonArgs {
            seed: Some(9),
            iters: Some(100),
            burn: Some(50),
            thin: Some(5),
            scenario: Some("2".into()),
            direction: Some(DirectionArg::Minimize),
            ..CommonArgs::default()
        };
        cfg.apply(&args).unwrap();
        assert_eq!((cfg.seed, cfg.iters, cfg.burn_in, cfg.thin), (9, 100, 50, 5));
        assert_eq!(cfg.scenario, Scenario::LinearBimodal);
        assert_eq!(cfg.direction, Direction::Minimize);
        assert_eq!(cfg.chain().retained(), 10);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run_from_args(["dtr-pce", "frobnicate"]), 1);
        assert_eq!(run_from_args(["dtr-pce", "simulate", "--direction", "sideways"]), 1);
        assert_eq!(run_from_args(["dtr-pce", "simulate"]), 1);
        assert_eq!(run_from_args(["dtr-pce", "--help"]), 0);
    }
}
