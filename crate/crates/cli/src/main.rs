//! `mwld`: rate functions, bounds, Monte Carlo overflow estimates and
//! scheduler comparisons from the command line.
//!
//! Every command writes one JSON document holding the resolved
//! configuration, its SHA-256 digest and the result. Tables go to the CSV
//! paths named in the configuration. Exit codes: 0 success, 2 invalid
//! configuration or arguments, 3 resource budget exceeded, 1 anything else.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{parse_assignment, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "mwld", version, about = "Large-deviations rate functions for max-weight scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// I_t(b) (or J(b) with --j) and its optimal path.
    Ratefn(Common),
    /// Lower and upper bounds on I_t(b) for two identical queues.
    Bounds(Common),
    /// I_2(b) by the two-slot decomposition.
    I2(Common),
    /// Monte Carlo overflow probabilities over a list of L.
    Mc(Common),
    /// Max-weight, GPS and priority rate functions over a grid of b.
    Compare(Common),
    /// Workload trajectory of a given arrival path.
    Trajectory(Common),
    /// Brute-force I_t(b) on a grid, next to the exact value.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set source.lambda=0.2`.
    #[arg(long = "set", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
    /// Target workload `b1,b2,...` or `mean`.
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long = "t-cap")]
    t_cap: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    capacities: Option<String>,
    /// wc-max-weight, max-weight, gps or priority.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    order: Option<String>,
    /// compound-poisson, exp-increment or deterministic.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    mean: Option<String>,
    /// branch-convex, grid-dp or closed-form-i2.
    #[arg(long)]
    method: Option<String>,
    /// Compute J instead of I_t.
    #[arg(long)]
    j: bool,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long = "max-states")]
    max_states: Option<String>,
    #[arg(long = "L")]
    sources: Option<String>,
    #[arg(long = "T")]
    mc_horizon: Option<String>,
    #[arg(long = "B")]
    level: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// `lo:hi:step` for both coordinates.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long = "oracle-delta")]
    oracle_delta: Option<String>,
    /// `a,b;c,d;...`, oldest slot first.
    #[arg(long)]
    arrivals: Option<String>,
    /// JSON output path (stdout when absent).
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long = "trajectory-out")]
    trajectory_out: Option<String>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, env = "MWLD_THREADS", default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let flags = [
            ("b", &self.b),
            ("t", &self.t),
            ("t_cap", &self.t_cap),
            ("seed", &self.seed),
            ("region.capacities", &self.capacities),
            ("policy.kind", &self.policy),
            ("policy.weights", &self.weights),
            ("policy.order", &self.order),
            ("source.kind", &self.source),
            ("source.lambda", &self.lambda),
            ("source.mu", &self.mu),
            ("source.nu", &self.nu),
            ("source.mean", &self.mean),
            ("ratefn.method", &self.method),
            ("grid.delta", &self.delta),
            ("grid.max_states", &self.max_states),
            ("mc.L", &self.sources),
            ("mc.T", &self.mc_horizon),
            ("mc.B", &self.level),
            ("mc.replicates", &self.replicates),
            ("compare.grid", &self.grid),
            ("oracle.delta", &self.oracle_delta),
            ("trajectory.arrivals", &self.arrivals),
            ("output.path", &self.out),
            ("output.csv", &self.csv),
            ("output.trajectory", &self.trajectory_out),
        ];
        let mut out = self.set.clone();
        out.extend(flags.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
        if self.j {
            out.push(("ratefn.j".into(), "true".into()));
        }
        out
    }
}

fn run(name: &str, common: &Common, f: fn(&RunConfig) -> Result<commands::Report, CliError>) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| f(&cfg))?;
    let doc = json!({
        "command": name,
        "config": cfg.to_json(),
        "config_digest": cfg.digest(),
        "result": report.result,
    });
    let text = serde_json::to_string_pretty(&doc).expect("JSON values serialise") + "\n";
    for (key, table) in &report.tables {
        let path = cfg.str(key);
        if !path.is_empty() {
            commands::write_csv(std::fs::File::create(path)?, table)?;
        }
    }
    match cfg.str("output.path") {
        "" => std::io::stdout().lock().write_all(text.as_bytes())?,
        path => std::fs::write(path, text)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ratefn(c) => run("ratefn", c, commands::ratefn),
        Command::Bounds(c) => run("bounds", c, commands::bounds),
        Command::I2(c) => run("i2", c, commands::i2),
        Command::Mc(c) => run("mc", c, commands::mc),
        Command::Compare(c) => run("compare", c, commands::compare),
        Command::Trajectory(c) => run("trajectory", c, commands::trajectory_cmd),
        Command::Oracle(c) => run("oracle", c, commands::oracle),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mwld: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
