use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use spikerate::config::RunConfig;
use spikerate::estimator::{batch_csv, estimate_rate, estimate_rate_validated, EstimateReport};
use spikerate::experiments::{
    all_pass, clt_study, extinction_study, partial_variance, reproduce_partial_obs, risk_curve, run_figure,
    strong_approx_study, BandwidthRule, Check, ExperimentPlan, FigurePreset, RiskCurve, RiskRow, FIG1_POINTS,
    PARTIAL_GAMMAS,
};
use spikerate::flow::{find_equilibria, solve_limit_ode};
use spikerate::simulator::{read_trajectory, simulate_with, write_events_csv, write_trajectory};

use crate::manifest::{digest_file, FileDigest, Invocation, Outputs};

const FLOW_TOLERANCE: f64 = 1e-10;

/// Experiment names accepted by `experiment`.
pub const EXPERIMENTS: [&str; 8] = ["fig1", "partial", "risk", "clt", "fig3", "fig4", "strong", "extinction"];

pub struct Outcome {
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Failed checks of an experiment run with `--check`.
    pub failed_checks: Vec<Check>,
}

/// Runs one recorded invocation against a resolved configuration.
pub fn execute(invocation: &Invocation, cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let mut out = Outputs::new(out_dir)?;
    let mut inputs = Vec::new();
    let mut failed_checks = Vec::new();
    match invocation {
        Invocation::Simulate => simulate(cfg, &mut out)?,
        Invocation::Estimate { trajectory, points, validate } => {
            inputs.push(digest_file(trajectory)?);
            estimate(cfg, trajectory, points.as_deref(), *validate, &mut out)?;
        }
        Invocation::Flow { range } => flow(cfg, *range, &mut out)?,
        Invocation::Experiment { check } => {
            let checks = experiment(cfg, &mut out)?;
            if *check {
                failed_checks = checks.into_iter().filter(|c| !c.pass).collect();
            }
        }
    }
    Ok(Outcome { inputs, outputs: out.into_files(), failed_checks })
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = cfg.model()?;
    let traj = simulate_with(&model, cfg.simulation.seed, &cfg.sim_config()?)?;
    let mut csv = Vec::new();
    write_events_csv(&mut csv, &traj)?;
    out.write("events.csv", &csv)?;
    let mut bin = Vec::new();
    write_trajectory(&mut bin, &traj, &cfg.to_toml())?;
    out.write("trajectory.bin", &bin)?;
    eprintln!("simulated {} events for N = {} up to T = {}", traj.events().len(), model.n, model.horizon);
    Ok(())
}

/// Configuration embedded in a stored trajectory.
pub fn embedded_config(trajectory: &Path) -> Result<String> {
    let file = fs::File::open(trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
    let stored = read_trajectory(std::io::BufReader::new(file))
        .with_context(|| format!("reading trajectory {}", trajectory.display()))?;
    Ok(stored.config_text)
}

fn estimate(cfg: &RunConfig, trajectory: &Path, points: Option<&[f64]>, validate: bool, out: &mut Outputs) -> Result<()> {
    let model = cfg.model()?;
    let bytes = fs::read(trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
    let stored =
        read_trajectory(bytes.as_slice()).with_context(|| format!("reading trajectory {}", trajectory.display()))?;
    let traj = stored.into_trajectory(&model)?;
    let points = points.unwrap_or(&cfg.estimator.points);
    let flow = if validate { Some(solve_limit_ode(&model, FLOW_TOLERANCE)?) } else { None };
    let reports: Vec<EstimateReport> = points
        .iter()
        .map(|&x| {
            let ec = cfg.estimator_config(x)?;
            Ok(match &flow {
                Some(flow) => estimate_rate_validated(&traj, &ec, flow)?,
                None => estimate_rate(&traj, &ec)?,
            })
        })
        .collect::<Result<_>>()?;
    out.write("estimates.csv", batch_csv(&reports).as_bytes())?;
    out.write("estimates.json", &json(&reports)?)?;
    let degenerate = reports.iter().filter(|r| r.degenerate).count();
    eprintln!("estimated {} point(s), {degenerate} degenerate", reports.len());
    Ok(())
}

#[derive(Serialize)]
struct Equilibria {
    range: (f64, f64),
    roots: Vec<f64>,
}

fn flow(cfg: &RunConfig, range: (f64, f64), out: &mut Outputs) -> Result<()> {
    if !(range.0 < range.1 && range.0.is_finite() && range.1.is_finite()) {
        bail!("invalid range [{}, {}]: need finite a < b", range.0, range.1);
    }
    let model = cfg.model()?;
    let sol = solve_limit_ode(&model, FLOW_TOLERANCE)?;
    out.write("flow.csv", sol.to_csv().as_bytes())?;
    let roots = find_equilibria(&model, range);
    out.write("equilibria.json", &json(&Equilibria { range, roots })?)?;
    Ok(())
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    experiment: &'a str,
    seed: u64,
    pass: bool,
    checks: &'a [Check],
    result: serde_json::Value,
}

fn experiment(cfg: &RunConfig, out: &mut Outputs) -> Result<Vec<Check>> {
    let exp = cfg.experiment.as_ref().ok_or_else(|| anyhow!("configuration has no [experiment] section"))?;
    let name = exp.name.as_str();
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let seed = cfg.simulation.seed;
    let rule = BandwidthRule { scale: cfg.estimator.bandwidth_scale, exponent: cfg.estimator.bandwidth_exponent };
    let points_or = |default: &[f64]| {
        if cfg.estimator.points.is_empty() {
            default.to_vec()
        } else {
            cfg.estimator.points.clone()
        }
    };
    let mut write = |csv: String, checks: &[Check], result: serde_json::Value| -> Result<()> {
        out.write(&format!("{name}.csv"), csv.as_bytes())?;
        let summary = ExperimentSummary { experiment: name, seed, pass: all_pass(checks), checks, result };
        out.write(&format!("{name}.json"), &json(&summary)?)
    };
    let checks = match name {
        "fig1" | "fig3" | "fig4" => {
            let preset = FigurePreset::parse(name).expect("figure name");
            let run = run_figure(&model, &points_or(preset.points()), &kernel, cfg.bandwidth(model.n), seed)?;
            let checks = run.checks(exp.threshold.unwrap_or(0.1));
            write(run.to_csv(), &checks, serde_json::to_value(&run)?)?;
            checks
        }
        "partial" => {
            let gammas: Vec<usize> = if exp.gammas.is_empty() {
                PARTIAL_GAMMAS.iter().copied().filter(|&g| g <= model.n).collect()
            } else {
                exp.gammas.clone()
            };
            let h = cfg.bandwidth(model.n);
            let run = reproduce_partial_obs(&model, &gammas, &points_or(&FIG1_POINTS), &kernel, h, seed)?;
            let variance = match exp.replicates {
                Some(reps) => {
                    Some(partial_variance(&model, &gammas, exp.x_star.unwrap_or(0.6), &kernel, h, seed, reps)?)
                }
                None => None,
            };
            let checks = variance.as_ref().map(|v| v.checks()).unwrap_or_default();
            #[derive(Serialize)]
            struct Partial<'a> {
                run: &'a spikerate::experiments::PartialRun,
                variance: Option<&'a spikerate::experiments::PartialVariance>,
            }
            write(run.to_csv(), &checks, serde_json::to_value(&Partial { run: &run, variance: variance.as_ref() })?)?;
            checks
        }
        "risk" => {
            let curve = if exp.fixture.is_empty() {
                if exp.ns.is_empty() {
                    bail!("risk experiment needs `experiment.ns` or a fixture");
                }
                let mut plan = ExperimentPlan::new(
                    model.clone(),
                    exp.ns.clone(),
                    rule,
                    exp.replicates.unwrap_or(100),
                    points_or(&[exp.x_star.unwrap_or(0.2)]),
                    seed,
                );
                plan.kernel = kernel.clone();
                plan.epsilon = cfg.estimator.epsilon;
                risk_curve(&plan, &model.rate)?
            } else {
                let rows = exp
                    .fixture
                    .iter()
                    .map(|&[n, mse]| {
                        if !(n >= 1.0 && n.fract() == 0.0) {
                            bail!("fixture population size must be a positive integer (got {n})");
                        }
                        Ok(RiskRow::synthetic(n as usize, mse))
                    })
                    .collect::<Result<Vec<_>>>()?;
                RiskCurve::from_rows(rows)?
            };
            let checks = curve.checks(exp.target.unwrap_or(-2.0 / 3.0), exp.threshold.unwrap_or(0.2));
            write(curve.to_csv(), &checks, serde_json::to_value(&curve)?)?;
            checks
        }
        "clt" => {
            let n = exp.ns.first().copied().unwrap_or(model.n);
            let report =
                clt_study(&model, exp.x_star.unwrap_or(0.0), &kernel, n, rule, exp.replicates.unwrap_or(200), seed)?;
            let checks = report.checks(exp.threshold.unwrap_or(0.25), 0.01);
            write(report.to_csv(), &checks, serde_json::to_value(&report)?)?;
            checks
        }
        "strong" => {
            let ns = if exp.ns.is_empty() { vec![1000, 4000, 16000] } else { exp.ns.clone() };
            let study = strong_approx_study(&model, &ns, exp.replicates.unwrap_or(50), exp.probes.unwrap_or(200), seed)?;
            let checks = study.checks(exp.threshold.unwrap_or(2.0));
            write(study.to_csv(), &checks, serde_json::to_value(&study)?)?;
            checks
        }
        "extinction" => {
            let study =
                extinction_study(&model, exp.replicates.unwrap_or(100), seed, exp.quiet_horizon, exp.rate_epsilon)?;
            let checks = exp.expect_extinct.map(|e| study.checks(e, exp.threshold.unwrap_or(0.6))).unwrap_or_default();
            write(study.to_csv(), &checks, serde_json::to_value(&study)?)?;
            checks
        }
        other => bail!("unknown experiment `{other}` (expected one of {})", EXPERIMENTS.join(", ")),
    };
    for c in &checks {
        eprintln!("[{}] {} = {} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    Ok(checks)
}
