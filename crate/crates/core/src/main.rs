use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hslv::config::{is_known_key, ExperimentConfig};
use hslv::convergence::SweepParam;
use hslv::experiments::{self, Report};
use hslv::table::ErrorMetric;

/// Heston stochastic-local-volatility Monte Carlo experiments.
///
/// Any configuration key can also be given as `--key value` (for example
/// `--paths 2000 --steps 5,40`); such overrides win over the config file.
#[derive(Parser, Debug)]
#[command(name = "hslv", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_metric)]
    error_metric: Option<ErrorMetric>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Price the synthetic market surface.
    Market,
    /// One SLV run per scheme with prices, errors and optional traces.
    Simulate,
    /// Scheme-comparison error tables, one file per strike.
    Tables,
    /// Strong-convergence study on coupled Brownian paths.
    Converge,
    /// Binned conditional expectation against a near-exact reference.
    Condexp,
    /// Error sweep over `vbar` or `p`.
    Sweep {
        #[arg(value_parser = parse_sweep)]
        param: Option<SweepParam>,
    },
}

fn parse_metric(s: &str) -> Result<ErrorMetric, String> {
    s.parse().map_err(|e: hslv::Error| e.to_string())
}

fn parse_sweep(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e: hslv::Error| e.to_string())
}

const CLAP_FLAGS: &[&str] = &[
    "config",
    "seed",
    "out",
    "threads",
    "error-metric",
    "help",
    "version",
];

type Overrides = Vec<(String, String)>;

/// Splits `--key value` / `--key=value` overrides of configuration keys out of
/// the argument list, leaving everything else for clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    if let Some(bin) = it.next() {
        rest.push(bin);
    }
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if CLAP_FLAGS.contains(&name.as_str()) {
            rest.push(arg);
            continue;
        }
        let key = name.replace('-', "_");
        if !is_known_key(&key) {
            return Err(format!("unknown option or configuration key '--{name}'"));
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> hslv::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(m) = cli.error_metric {
        cfg.error_metric = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> hslv::Result<Report> {
    match &cli.command {
        Command::Market => experiments::cmd_market(cfg),
        Command::Simulate => experiments::cmd_simulate(cfg),
        Command::Tables => experiments::cmd_tables(cfg),
        Command::Converge => experiments::cmd_converge(cfg),
        Command::Condexp => experiments::cmd_condexp(cfg),
        Command::Sweep { param } => experiments::cmd_sweep(cfg, *param),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load_config(&cli, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run(&cli, &cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for path in &report.written {
        println!("{}", path.display());
    }
    let failures_path = cfg.out.join("failures.csv");
    if report.ok() {
        let _ = fs::remove_file(&failures_path);
        return ExitCode::SUCCESS;
    }
    for f in &report.failures {
        eprintln!("FAIL {}: {}", f.check, f.detail);
    }
    if let Err(e) = File::create(&failures_path)
        .map_err(hslv::Error::from)
        .and_then(|f| report.write_failures(BufWriter::new(f)))
    {
        eprintln!("error: cannot write {}: {e}", failures_path.display());
    }
    ExitCode::from(3)
}
