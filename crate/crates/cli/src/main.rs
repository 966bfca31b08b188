use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pricelearn::config::{Command, ConfigOverrides, Readout, RunConfig};
use pricelearn::impact::{analytic_overlays, run_experiment, run_replica, Capture, ImpactExperiment};
use pricelearn::output::{overlays_csv, parse_config_or_manifest, recursion_csv, Manifest, OutputDir};
use pricelearn::verify::{verify, VerifyOptions};

const GIT_DESCRIBE: &str = match option_env!("PRICELEARN_GIT_DESCRIBE") {
    Some(d) => d,
    None => "unknown",
};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "PRICELEARN_OUT";
const OUT_FALLBACK: &str = "pricelearn-out";

#[derive(Debug, Parser)]
#[command(
    name = "pricelearn",
    version,
    about = "Market maker learning a latent efficient price from its own order flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// One replica: trades, quotes and the posterior path.
    Simulate(RunArgs),
    /// Monte-Carlo meta-order impact curve with analytic overlays.
    Impact(RunArgs),
    /// One replica with the posterior density written at every output time.
    FilterDemo(RunArgs),
    /// Run the self-verification suite; exits nonzero on any failure.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration (or a manifest from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; required for simulate and impact.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config `output_dir`, then $PRICELEARN_OUT, then ./pricelearn-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base intensity lambda0 [default: 50]
    #[arg(long, allow_negative_numbers = true)]
    lambda0: Option<f64>,
    /// Intensity decay a [default: 5]
    #[arg(long = "a", allow_negative_numbers = true)]
    a: Option<f64>,
    /// Efficient-price volatility sigma [default: 0.06]
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Initial efficient price S0 [default: 100]
    #[arg(long, allow_negative_numbers = true)]
    s0: Option<f64>,
    /// Prior mean x0 [default: 100]
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    /// Prior standard deviation sigma0 [default: 0.05]
    #[arg(long, allow_negative_numbers = true)]
    sigma0: Option<f64>,
    /// Quote half-spread delta [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    half_spread: Option<f64>,
    /// Quote policy: fixed, mid-mean, mid-argmax [default: mid-mean]
    #[arg(long)]
    policy: Option<String>,
    /// Meta-order speed beta, orders per second [default: 10]
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Meta-order end time T, or `inf` [default: 2.5]
    #[arg(long, value_parser = parse_horizon, allow_negative_numbers = true)]
    meta_horizon: Option<Horizon>,
    /// Simulated time span [default: 5]
    #[arg(long, allow_negative_numbers = true)]
    horizon: Option<f64>,
    /// Spacing of output times [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    output_dt: Option<f64>,
    /// Monte-Carlo replicas [default: 200]
    #[arg(long)]
    replicas: Option<usize>,
    /// Grid nodes [default: 4001]
    #[arg(long)]
    grid_n: Option<usize>,
    /// Posterior filter: grid, gaussian, argmax-root [default: grid]
    #[arg(long)]
    filter: Option<String>,
    /// Impact readout: auto, mean, mid, argmax [default: auto]
    #[arg(long, value_parser = parse_readout)]
    readout: Option<Readout>,
    /// Subtract the efficient price path as a control variate [default: true]
    #[arg(long)]
    control_variate: Option<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Horizon(Option<f64>);

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    match s {
        "inf" | "infinity" | "none" => Ok(Horizon(None)),
        _ => s.parse::<f64>().map(|v| Horizon(Some(v))).map_err(|e| e.to_string()),
    }
}

fn parse_readout(s: &str) -> Result<Readout, String> {
    match s {
        "auto" => Ok(Readout::Auto),
        "mean" => Ok(Readout::Mean),
        "mid" => Ok(Readout::Mid),
        "argmax" => Ok(Readout::Argmax),
        _ => Err(format!("unknown readout `{s}` (known: auto, mean, mid, argmax)")),
    }
}

impl RunArgs {
    fn overrides(&self, command: Command) -> ConfigOverrides {
        ConfigOverrides {
            command: Some(command),
            seed: self.seed,
            output_dir: self.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
            lambda0: self.lambda0,
            a: self.a,
            sigma: self.sigma,
            s0: self.s0,
            x0: self.x0,
            sigma0: self.sigma0,
            half_spread: self.half_spread,
            policy: self.policy.clone(),
            beta: self.beta,
            meta_horizon: self.meta_horizon.map(|h| h.0),
            horizon: self.horizon,
            output_dt: self.output_dt,
            replicas: self.replicas,
            grid_n: self.grid_n,
            filter: self.filter.clone(),
            readout: self.readout,
            control_variate: self.control_variate,
        }
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Defaults, then the file, then flags; the result is validated.
fn resolve(command: Command, args: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_config_or_manifest(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    args.overrides(command).apply(&mut cfg);
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(std::env::var(OUT_ENV).unwrap_or_else(|_| OUT_FALLBACK.to_string()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> CliResult<OutputDir> {
    Ok(OutputDir::create(cfg.output_dir.as_deref().unwrap_or(OUT_FALLBACK))?)
}

fn simulate(cfg: &RunConfig, densities: bool) -> CliResult<()> {
    let exp = ImpactExperiment::from_config(cfg)?;
    let trace = run_replica(&exp, 0, Capture { events: true, densities })?;
    let out = output_dir(cfg)?;
    out.write_events(&trace.events)?;
    out.write_trajectory(&trace.samples, &trace.events)?;
    for (k, snap) in trace.densities.iter().enumerate() {
        out.write_density(k, snap)?;
    }
    out.write_manifest(&Manifest::new(cfg, GIT_DESCRIBE))?;
    let last = trace.samples.last().expect("at least the initial sample");
    println!(
        "{} trades, final mid {} (efficient price {}); wrote {}",
        trace.events.len(),
        0.5 * (last.bid + last.ask),
        last.efficient_price,
        out.path("").display()
    );
    Ok(())
}

fn impact(cfg: &RunConfig) -> CliResult<()> {
    let exp = ImpactExperiment::from_config(cfg)?;
    let curve = run_experiment(&exp)?;
    let overlays = analytic_overlays(&exp, &curve.times)?;
    let out = output_dir(cfg)?;
    out.write_curve(&curve)?;
    out.write("overlays.csv", &overlays_csv(&overlays))?;
    out.write("recursion.csv", &recursion_csv(&overlays, exp.schedule.beta))?;
    out.write_manifest(&Manifest::new(cfg, GIT_DESCRIBE))?;
    println!(
        "{} replicas, readout {}; max |mean - overlay| = {:.3e}; wrote {}",
        curve.replicas,
        curve.readout,
        curve.max_deviation(),
        out.path("").display()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let (command, args) = match &cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Impact(a) => (Command::Impact, a),
        Cmd::FilterDemo(a) => (Command::FilterDemo, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };
    let cfg = resolve(command, args)?;
    match command {
        Command::Simulate => simulate(&cfg, false)?,
        Command::FilterDemo => simulate(&cfg, true)?,
        Command::Impact => impact(&cfg)?,
        Command::Verify => {
            let report = verify(&VerifyOptions::from_config(&cfg));
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
