mod commands;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spikerate::config::RunConfig;

use manifest::{digest_file, write_atomic, Invocation, RunManifest};

/// Simulation and nonparametric rate estimation for mean-field spiking
/// neuron systems.
#[derive(Debug, Parser)]
#[command(name = "spikerate", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicate loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SPIKERATE_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Exit with status 2 when an experiment check fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the system; writes events.csv and trajectory.bin.
    Simulate,
    /// Estimate the rate from a stored trajectory.
    Estimate {
        #[arg(long)]
        trajectory: PathBuf,
        /// Comma-separated evaluation points (default: `estimator.points`).
        #[arg(long)]
        points: Option<String>,
        /// Compare against the limit flow and decompose the error.
        #[arg(long)]
        validate: bool,
    },
    /// Solve the limit equation and locate its equilibria.
    Flow {
        /// Search interval `a,b` for equilibria.
        #[arg(long, default_value = "-10,10")]
        range: String,
    },
    /// Run the experiment named in `[experiment]`.
    Experiment,
    /// Validate a configuration and print it with defaults filled in.
    CheckConfig,
    /// Re-run a recorded invocation and compare output digests.
    Replay { manifest: PathBuf },
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let x: f64 = s.parse().with_context(|| format!("invalid number `{s}`"))?;
            if !x.is_finite() {
                bail!("non-finite value `{s}`");
            }
            Ok(x)
        })
        .collect()
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading configuration {}", path.display()))?;
    resolve(&text, seed).with_context(|| format!("in configuration {}", path.display()))
}

fn resolve(text: &str, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_toml(text)?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    Ok(cfg)
}

fn require_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => load_config(p, cli.seed),
        None => bail!("this command needs --config"),
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Runs an invocation and writes its manifest; returns the exit status.
fn run_recorded(invocation: Invocation, cfg: &RunConfig, cli: &Cli) -> Result<ExitCode> {
    let start = Instant::now();
    let outcome = commands::execute(&invocation, cfg, &cli.out)?;
    let manifest = RunManifest {
        tool: env!("CARGO_BIN_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: invocation.clone(),
        seed: cfg.simulation.seed,
        threads: cli.threads,
        config: cfg.to_toml(),
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    let path = cli.out.join(RunManifest::file_name(&invocation));
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_atomic(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    for f in &manifest.outputs {
        println!("{}  {}", f.sha256, cli.out.join(&f.path).display());
    }
    if outcome.failed_checks.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = outcome.failed_checks.iter().map(|c| c.name.as_str()).collect();
        eprintln!("error: {} check(s) failed: {}", names.len(), names.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn replay(path: &Path, out: &Path) -> Result<ExitCode> {
    let recorded = RunManifest::load(path)?;
    for input in &recorded.inputs {
        let now = digest_file(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let cfg = resolve(&recorded.config, None).context("in recorded configuration")?;
    let outcome = commands::execute(&recorded.invocation, &cfg, out)?;
    let mut mismatches = 0;
    for (want, got) in recorded.outputs.iter().zip(&outcome.outputs) {
        let ok = want == got;
        mismatches += usize::from(!ok);
        println!("{} {}", if ok { "match   " } else { "MISMATCH" }, want.path);
    }
    if recorded.outputs.len() != outcome.outputs.len() {
        eprintln!("error: recorded {} outputs, replay produced {}", recorded.outputs.len(), outcome.outputs.len());
        return Ok(ExitCode::FAILURE);
    }
    if mismatches > 0 {
        eprintln!("error: {mismatches} output(s) differ from the recorded run");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate => run_recorded(Invocation::Simulate, &require_config(cli)?, cli),
        Command::Estimate { trajectory, points, validate } => {
            let cfg = match &cli.config {
                Some(p) => load_config(p, cli.seed)?,
                None => resolve(&commands::embedded_config(trajectory)?, cli.seed)
                    .context("in the configuration stored with the trajectory")?,
            };
            let points = points.as_deref().map(parse_list).transpose()?;
            let trajectory = fs::canonicalize(trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            run_recorded(Invocation::Estimate { trajectory, points, validate: *validate }, &cfg, cli)
        }
        Command::Flow { range } => {
            let r = parse_list(range)?;
            if r.len() != 2 {
                bail!("--range takes two numbers `a,b`");
            }
            run_recorded(Invocation::Flow { range: (r[0], r[1]) }, &require_config(cli)?, cli)
        }
        Command::Experiment => run_recorded(Invocation::Experiment { check: cli.check }, &require_config(cli)?, cli),
        Command::CheckConfig => {
            let cfg = require_config(cli)?;
            print!("{}", cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest } => replay(manifest, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
