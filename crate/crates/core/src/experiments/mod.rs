//! Monte Carlo harness: single-run figure reproductions, partial
//! observation, risk curves, CLT, strong approximation and extinction
//! studies.
//!
//! Replicates run in parallel on the current rayon pool with seeds derived
//! from one master seed; results are collected in replicate order and
//! reduced sequentially, so aggregates do not depend on the thread count.

mod stats;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimator::{
    clt_variance, estimate_rate, limit_occupation, strong_approx_diag, EstimateReport, EstimatorConfig,
    EstimatorError, Observed, OccupationComparison, DEFAULT_EPSILON,
};
use crate::flow::{solve_limit_ode, FlowError, FlowSolution};
use crate::model::{KernelSpec, ModelSpec, RateSpec};
use crate::simulator::{detect_extinction, simulate, ExtinctionReport, RecordLevel, SimError, SystemTrajectory};

pub use stats::{ad_p_value, anderson_darling_normal, least_squares, mean_var, AndersonDarling, LinearFit};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ExperimentError::InvalidPlan(msg.into()))
}

const FLOW_TOLERANCE: f64 = 1e-10;

/// Population size of the full-scale figure runs.
pub const FULL_SCALE_N: usize = 20000;
pub const FIG1_POINTS: [f64; 9] = [-0.6, -0.4, -0.2, 0.0, 0.2, 0.3, 0.4, 0.5, 0.6];
pub const FIG3_POINTS: [f64; 6] = [0.2, 0.5, 0.7, 1.2, 1.7, 2.2];
pub const FIG4_POINTS: [f64; 7] = [0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9];
pub const PARTIAL_GAMMAS: [usize; 4] = [10000, 5000, 1000, 100];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` in stream `stream` (usually the population
/// size) under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stream) ^ index)
}

/// `f(0), ..., f(count - 1)` in parallel, returned in index order.
pub fn replicate_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Like [`replicate_map`]; the error reported is the one of the lowest
/// failing index.
pub fn try_replicate_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    replicate_map(count, f).into_iter().collect()
}

/// `h = scale · N^-exponent`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthRule {
    pub scale: f64,
    pub exponent: f64,
}

impl BandwidthRule {
    /// `h = N^-0.49`, used by the figure runs.
    pub const FIGURE: Self = Self { scale: 1.0, exponent: 0.49 };
    /// `h = N^-0.45`, undersmoothed for β = 1.
    pub const CLT: Self = Self { scale: 1.0, exponent: 0.45 };

    /// `h = N^{-1/(2β+1)}`
    pub fn rate_optimal(beta: f64) -> Self {
        Self { scale: 1.0, exponent: 1.0 / (2.0 * beta + 1.0) }
    }

    pub fn at(&self, n: usize) -> f64 {
        self.scale * (n as f64).powf(-self.exponent)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return invalid(format!("bandwidth scale must be positive (got {})", self.scale));
        }
        if !(self.exponent > 0.0 && self.exponent < 0.5) {
            return invalid(format!("bandwidth exponent must lie in (0, 1/2) (got {})", self.exponent));
        }
        Ok(())
    }
}

/// One named pass/fail assertion of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, bound: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), value, bound: bound.into(), pass }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Estimate at one point with the occupation comparison against the flow.
fn estimate_point(
    traj: &SystemTrajectory,
    flow: &FlowSolution,
    cfg: &EstimatorConfig,
) -> Result<(EstimateReport, OccupationComparison)> {
    let report = estimate_rate(traj, cfg)?;
    let a_n = report.denominator / report.observed as f64;
    let a_lim = limit_occupation(flow, cfg, cfg.window_end.unwrap_or(traj.terminal_time()));
    let degenerate = a_lim == 0.0;
    let omega = !degenerate && (a_n / a_lim - 1.0).abs() <= cfg.epsilon;
    Ok((report, OccupationComparison { a_n, a_lim, omega, degenerate }))
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return invalid("no estimation points");
    }
    if points.iter().any(|x| !x.is_finite()) {
        return invalid("estimation points must be finite");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Figure runs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FigurePreset {
    /// f = 2 - e^{-r²}, ν = U(-2, 3), x0 = -1
    Fig1,
    /// f = log(1 + r), ν = U(0, 4), x0 = 0.1
    Fig3,
    /// f = log(1 + r), ν = U(0, 1), x0 = 1
    Fig4,
}

impl FigurePreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "fig1" => Some(Self::Fig1),
            "fig3" => Some(Self::Fig3),
            "fig4" => Some(Self::Fig4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
        }
    }

    pub fn model(self, n: usize) -> ModelSpec {
        match self {
            Self::Fig1 => ModelSpec::excitatory_inhibitory(n),
            Self::Fig3 => ModelSpec::purely_excitatory(n, 4.0, 0.1),
            Self::Fig4 => ModelSpec::purely_excitatory(n, 1.0, 1.0),
        }
    }

    pub fn points(self) -> &'static [f64] {
        match self {
            Self::Fig1 => &FIG1_POINTS,
            Self::Fig3 => &FIG3_POINTS,
            Self::Fig4 => &FIG4_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub x_star: f64,
    pub estimate: f64,
    pub true_f: f64,
    pub error: f64,
    pub a_n: f64,
    pub a_lim: f64,
    pub omega: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRun {
    pub n: usize,
    pub bandwidth: f64,
    pub seed: u64,
    pub events: usize,
    pub rows: Vec<FigureRow>,
    pub extinction: ExtinctionReport,
}

pub const FIGURE_CSV_HEADER: &str = "x_star,estimate,true_f,error,a_n,a_lim,omega,degenerate";

impl FigureRun {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FIGURE_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.x_star, r.estimate, r.true_f, r.error, r.a_n, r.a_lim, r.omega, r.degenerate
            );
        }
        out
    }

    pub fn max_abs_error(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.error.abs()))
    }

    /// `|error| <= threshold` at every point.
    pub fn checks(&self, threshold: f64) -> Vec<Check> {
        self.rows
            .iter()
            .map(|r| {
                Check::new(
                    format!("abs_error_at_{}", r.x_star),
                    r.error.abs(),
                    format!("<= {threshold}"),
                    r.error.abs() <= threshold,
                )
            })
            .collect()
    }
}

/// One simulation, estimates at every point against the model's own rate.
pub fn run_figure(
    model: &ModelSpec,
    points: &[f64],
    kernel: &KernelSpec,
    bandwidth: f64,
    seed: u64,
) -> Result<FigureRun> {
    check_points(points)?;
    let flow = solve_limit_ode(model, FLOW_TOLERANCE)?;
    let traj = simulate(model, seed, RecordLevel::EventsOnly)?;
    let rows = figure_rows(&traj, &flow, points, &EstimatorConfig::new(kernel.clone(), bandwidth, points[0]))?;
    Ok(FigureRun {
        n: model.n,
        bandwidth,
        seed,
        events: traj.events().len(),
        rows,
        extinction: detect_extinction(&traj, None, None),
    })
}

fn figure_rows(
    traj: &SystemTrajectory,
    flow: &FlowSolution,
    points: &[f64],
    base: &EstimatorConfig,
) -> Result<Vec<FigureRow>> {
    let rate = &traj.model().rate;
    points
        .iter()
        .map(|&x| {
            let (r, occ) = estimate_point(traj, flow, &base.with_x_star(x))?;
            let true_f = rate.eval(x);
            Ok(FigureRow {
                x_star: x,
                estimate: r.estimate,
                true_f,
                error: r.estimate - true_f,
                a_n: occ.a_n,
                a_lim: occ.a_lim,
                omega: occ.omega,
                degenerate: r.degenerate,
            })
        })
        .collect()
}

/// Preset model, points and `h = N^-0.49`.
pub fn reproduce_figure(preset: FigurePreset, n: usize, seed: u64) -> Result<FigureRun> {
    run_figure(&preset.model(n), preset.points(), &KernelSpec::rectangular(), BandwidthRule::FIGURE.at(n), seed)
}

/// Mean absolute error per point over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorProfile {
    pub n: usize,
    pub bandwidth: f64,
    pub replicates: usize,
    pub points: Vec<f64>,
    pub mean_abs_error: Vec<f64>,
    /// Least-squares slope of the mean absolute error against `x*`.
    pub trend_slope: f64,
}

impl ErrorProfile {
    /// Errors shrink as the points move up the grid.
    pub fn checks(&self) -> Vec<Check> {
        vec![Check::new("error_trend_slope", self.trend_slope, "< 0", self.trend_slope < 0.0)]
    }
}

pub fn error_profile(
    model: &ModelSpec,
    points: &[f64],
    kernel: &KernelSpec,
    bandwidth: f64,
    seed: u64,
    replicates: usize,
) -> Result<ErrorProfile> {
    check_points(points)?;
    if replicates == 0 || points.len() < 2 {
        return invalid("an error profile needs at least one replicate and two points");
    }
    let flow = solve_limit_ode(model, FLOW_TOLERANCE)?;
    let base = EstimatorConfig::new(kernel.clone(), bandwidth, points[0]);
    let runs = try_replicate_map(replicates, |r| {
        let traj = simulate(model, derive_seed(seed, model.n as u64, r as u64), RecordLevel::EventsOnly)?;
        figure_rows(&traj, &flow, points, &base)
    })?;
    let mut mean_abs_error = vec![0.0; points.len()];
    for rows in &runs {
        for (m, row) in mean_abs_error.iter_mut().zip(rows) {
            *m += row.error.abs();
        }
    }
    mean_abs_error.iter_mut().for_each(|m| *m /= replicates as f64);
    let trend_slope = least_squares(points, &mean_abs_error).map_or(f64::NAN, |f| f.slope);
    Ok(ErrorProfile { n: model.n, bandwidth, replicates, points: points.to_vec(), mean_abs_error, trend_slope })
}

// ---------------------------------------------------------------------------
// Partial observation

/// Neurons `start..end` observed for subsystem size `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ObservationBlock {
    pub gamma: usize,
    pub start: usize,
    pub end: usize,
}

impl ObservationBlock {
    pub fn observed(&self) -> Observed {
        Observed::Subset((self.start..self.end).collect())
    }
}

/// Consecutive disjoint blocks in the given order when they fit into `n`
/// neurons; otherwise nested prefixes `0..gamma` (second flag `false`).
pub fn observation_blocks(n: usize, gammas: &[usize]) -> Result<(Vec<ObservationBlock>, bool)> {
    if gammas.is_empty() {
        return invalid("no subsystem sizes");
    }
    if let Some(&g) = gammas.iter().find(|&&g| g == 0 || g > n) {
        return invalid(format!("subsystem size {g} must lie in 1..={n}"));
    }
    let total: usize = gammas.iter().sum();
    if total <= n {
        let mut start = 0;
        let blocks = gammas
            .iter()
            .map(|&gamma| {
                let b = ObservationBlock { gamma, start, end: start + gamma };
                start += gamma;
                b
            })
            .collect();
        Ok((blocks, true))
    } else {
        Ok((gammas.iter().map(|&gamma| ObservationBlock { gamma, start: 0, end: gamma }).collect(), false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialRow {
    pub gamma: usize,
    pub x_star: f64,
    pub estimate: f64,
    pub true_f: f64,
    pub error: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialRun {
    pub n: usize,
    pub bandwidth: f64,
    pub seed: u64,
    pub disjoint: bool,
    pub blocks: Vec<ObservationBlock>,
    pub rows: Vec<PartialRow>,
}

pub const PARTIAL_CSV_HEADER: &str = "gamma,x_star,estimate,true_f,error,degenerate";

impl PartialRun {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{PARTIAL_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.gamma, r.x_star, r.estimate, r.true_f, r.error, r.degenerate);
        }
        out
    }

    pub fn rows_for(&self, gamma: usize) -> impl Iterator<Item = &PartialRow> {
        self.rows.iter().filter(move |r| r.gamma == gamma)
    }
}

fn partial_rows(
    traj: &SystemTrajectory,
    blocks: &[ObservationBlock],
    points: &[f64],
    base: &EstimatorConfig,
) -> Result<Vec<PartialRow>> {
    let rate = &traj.model().rate;
    let mut rows = Vec::with_capacity(blocks.len() * points.len());
    for b in blocks {
        let cfg = base.clone().with_observed(b.observed());
        for &x in points {
            let r = estimate_rate(traj, &cfg.with_x_star(x))?;
            let true_f = rate.eval(x);
            rows.push(PartialRow {
                gamma: b.gamma,
                x_star: x,
                estimate: r.estimate,
                true_f,
                error: r.estimate - true_f,
                degenerate: r.degenerate,
            });
        }
    }
    Ok(rows)
}

/// One simulation; the estimator restricted to each subsystem block.
pub fn reproduce_partial_obs(
    model: &ModelSpec,
    gammas: &[usize],
    points: &[f64],
    kernel: &KernelSpec,
    bandwidth: f64,
    seed: u64,
) -> Result<PartialRun> {
    check_points(points)?;
    let (blocks, disjoint) = observation_blocks(model.n, gammas)?;
    let traj = simulate(model, seed, RecordLevel::EventsOnly)?;
    let rows = partial_rows(&traj, &blocks, points, &EstimatorConfig::new(kernel.clone(), bandwidth, points[0]))?;
    Ok(PartialRun { n: model.n, bandwidth, seed, disjoint, blocks, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialVarianceRow {
    pub gamma: usize,
    pub mean: f64,
    pub variance: f64,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialVariance {
    pub n: usize,
    pub x_star: f64,
    pub bandwidth: f64,
    pub replicates: usize,
    pub disjoint: bool,
    /// Sorted by increasing `gamma`.
    pub rows: Vec<PartialVarianceRow>,
}

impl PartialVariance {
    pub fn is_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].variance <= w[0].variance)
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut checks: Vec<Check> = self
            .rows
            .windows(2)
            .map(|w| {
                Check::new(
                    format!("variance_gamma_{}_vs_{}", w[1].gamma, w[0].gamma),
                    w[1].variance / w[0].variance,
                    "<= 1",
                    w[1].variance <= w[0].variance,
                )
            })
            .collect();
        if checks.is_empty() {
            checks.push(Check::new("variance_ordering", 1.0, "needs two subsystem sizes", false));
        }
        checks
    }
}

/// Across-seed variance of the subsystem estimators at one point.
pub fn partial_variance(
    model: &ModelSpec,
    gammas: &[usize],
    x_star: f64,
    kernel: &KernelSpec,
    bandwidth: f64,
    seed: u64,
    replicates: usize,
) -> Result<PartialVariance> {
    if replicates < 2 {
        return invalid("variance needs at least two replicates");
    }
    let (mut blocks, disjoint) = observation_blocks(model.n, gammas)?;
    blocks.sort_by_key(|b| b.gamma);
    let base = EstimatorConfig::new(kernel.clone(), bandwidth, x_star);
    let runs = try_replicate_map(replicates, |r| {
        let traj = simulate(model, derive_seed(seed, model.n as u64, r as u64), RecordLevel::EventsOnly)?;
        partial_rows(&traj, &blocks, &[x_star], &base)
    })?;
    let rows = blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let estimates: Vec<f64> = runs.iter().map(|rows| rows[k].estimate).collect();
            let (mean, variance) = mean_var(&estimates);
            PartialVarianceRow { gamma: b.gamma, mean, variance, estimates }
        })
        .collect();
    Ok(PartialVariance { n: model.n, x_star, bandwidth, replicates, disjoint, rows })
}

// ---------------------------------------------------------------------------
// Risk curve

/// Replicated study over a grid of population sizes.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model: ModelSpec,
    pub ns: Vec<usize>,
    pub bandwidth: BandwidthRule,
    pub replicates: usize,
    pub points: Vec<f64>,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub epsilon: f64,
}

impl ExperimentPlan {
    /// Rectangular kernel and the default occupation tolerance.
    pub fn new(model: ModelSpec, ns: Vec<usize>, bandwidth: BandwidthRule, replicates: usize, points: Vec<f64>, seed: u64) -> Self {
        Self { model, ns, bandwidth, replicates, points, seed, kernel: KernelSpec::rectangular(), epsilon: DEFAULT_EPSILON }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(EstimatorError::from)?;
        if self.ns.is_empty() || self.ns.contains(&0) {
            return invalid("population sizes must be nonempty and >= 1");
        }
        if self.replicates == 0 {
            return invalid("replicate count must be >= 1");
        }
        self.bandwidth.validate()?;
        check_points(&self.points)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return invalid(format!("epsilon must lie in (0, 1) (got {})", self.epsilon));
        }
        self.kernel.validate().map_err(EstimatorError::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub n: usize,
    pub bandwidth: f64,
    pub replicates: usize,
    /// Squared errors (averaged over the points) of the replicates on
    /// which the occupation event holds at every point.
    pub squared_errors: Vec<f64>,
    pub omega_failures: usize,
    pub degenerate: usize,
    pub mse: f64,
    pub mse_se: f64,
}

impl RiskRow {
    fn from_errors(n: usize, bandwidth: f64, replicates: usize, squared_errors: Vec<f64>, omega_failures: usize, degenerate: usize) -> Self {
        let k = squared_errors.len();
        let (mse, var) = if k == 0 { (f64::NAN, f64::NAN) } else { mean_var(&squared_errors) };
        let mse_se = if k > 1 { (var / k as f64).sqrt() } else { f64::NAN };
        Self { n, bandwidth, replicates, squared_errors, omega_failures, degenerate, mse, mse_se }
    }

    /// A row carrying only a given MSE, e.g. for fitting known power laws.
    pub fn synthetic(n: usize, mse: f64) -> Self {
        Self { n, bandwidth: f64::NAN, replicates: 0, squared_errors: Vec::new(), omega_failures: 0, degenerate: 0, mse, mse_se: 0.0 }
    }

    pub fn omega_failure_fraction(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.omega_failures as f64 / self.replicates as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub rows: Vec<RiskRow>,
    /// Least-squares slope of `ln MSE` against `ln N`.
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

pub const RISK_CSV_HEADER: &str = "n,bandwidth,replicates,omega_failures,degenerate,mse,mse_se";

impl RiskCurve {
    /// Fits the log-log slope; needs three distinct `N` with positive MSE.
    pub fn from_rows(mut rows: Vec<RiskRow>) -> Result<Self> {
        rows.sort_by_key(|r| r.n);
        let mut distinct: Vec<usize> = rows.iter().map(|r| r.n).collect();
        distinct.dedup();
        if distinct.len() < 3 {
            return invalid(format!("a risk curve needs at least 3 distinct N values (got {})", distinct.len()));
        }
        if let Some(r) = rows.iter().find(|r| !(r.mse > 0.0 && r.mse.is_finite())) {
            return invalid(format!("MSE at N = {} is not positive ({})", r.n, r.mse));
        }
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mse.ln()).collect();
        let fit = least_squares(&x, &y).expect("distinct abscissae");
        Ok(Self { rows, slope: fit.slope, slope_se: fit.slope_se, intercept: fit.intercept })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{RISK_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n, r.bandwidth, r.replicates, r.omega_failures, r.degenerate, r.mse, r.mse_se
            );
        }
        out
    }

    /// Slope within `tolerance` of `target`; MSE nonincreasing and the
    /// occupation-failure fraction nonincreasing in `N`, both up to two
    /// standard errors.
    pub fn checks(&self, target: f64, tolerance: f64) -> Vec<Check> {
        let mut checks = vec![Check::new(
            "log_log_slope",
            self.slope,
            format!("within {tolerance} of {target:.6}"),
            (self.slope - target).abs() <= tolerance,
        )];
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let band = 2.0 * (a.mse_se.powi(2) + b.mse_se.powi(2)).sqrt();
            let band = if band.is_finite() { band } else { 0.0 };
            checks.push(Check::new(
                format!("mse_{}_vs_{}", b.n, a.n),
                b.mse - a.mse,
                format!("<= {band:.3e}"),
                b.mse <= a.mse + band,
            ));
            if a.replicates > 0 && b.replicates > 0 {
                let (pa, pb) = (a.omega_failure_fraction(), b.omega_failure_fraction());
                let se = (pa * (1.0 - pa) / a.replicates as f64 + pb * (1.0 - pb) / b.replicates as f64).sqrt();
                checks.push(Check::new(
                    format!("omega_failures_{}_vs_{}", b.n, a.n),
                    pb - pa,
                    format!("<= {:.3e}", 2.0 * se),
                    pb <= pa + 2.0 * se,
                ));
            }
        }
        checks
    }
}

/// Occupation-conditioned MSE at each `N` and the fitted log-log slope.
pub fn risk_curve(plan: &ExperimentPlan, true_f: &RateSpec) -> Result<RiskCurve> {
    plan.validate()?;
    let mut distinct = plan.ns.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return invalid(format!("a risk curve needs at least 3 distinct N values (got {})", distinct.len()));
    }
    let flow = solve_limit_ode(&plan.model, FLOW_TOLERANCE)?;
    let truth: Vec<f64> = plan.points.iter().map(|&x| true_f.eval(x)).collect();
    let mut rows = Vec::with_capacity(plan.ns.len());
    for &n in &plan.ns {
        let model = plan.model.with_n(n);
        let h = plan.bandwidth.at(n);
        let base = EstimatorConfig::new(plan.kernel.clone(), h, plan.points[0]).with_epsilon(plan.epsilon);
        let reps = try_replicate_map(plan.replicates, |r| {
            let traj = simulate(&model, derive_seed(plan.seed, n as u64, r as u64), RecordLevel::EventsOnly)?;
            let mut sq = 0.0;
            let mut omega = true;
            let mut degenerate = false;
            for (&x, &f) in plan.points.iter().zip(&truth) {
                let (rep, occ) = estimate_point(&traj, &flow, &base.with_x_star(x))?;
                sq += (rep.estimate - f).powi(2);
                omega &= occ.omega;
                degenerate |= rep.degenerate;
            }
            Ok((sq / plan.points.len() as f64, omega, degenerate))
        })?;
        let squared_errors: Vec<f64> = reps.iter().filter(|r| r.1).map(|r| r.0).collect();
        let omega_failures = reps.iter().filter(|r| !r.1).count();
        let degenerate = reps.iter().filter(|r| r.2).count();
        rows.push(RiskRow::from_errors(n, h, plan.replicates, squared_errors, omega_failures, degenerate));
    }
    RiskCurve::from_rows(rows)
}

// ---------------------------------------------------------------------------
// CLT

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub bandwidth: f64,
    pub x_star: f64,
    pub replicates: usize,
    pub kappa2: f64,
    /// `√(N h) (f̂ - f(x*))` per replicate
    pub samples: Vec<f64>,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_ratio: f64,
    pub anderson_darling: Option<AndersonDarling>,
    pub omega_failures: usize,
}

impl CltReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replicate,z\n");
        for (k, z) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{k},{z}");
        }
        out
    }

    /// Variance within `variance_tolerance` (relative) of `κ²`, normality
    /// p-value above `min_p`, mean within four standard errors of 0.
    pub fn checks(&self, variance_tolerance: f64, min_p: f64) -> Vec<Check> {
        let p = self.anderson_darling.map_or(0.0, |a| a.p_value);
        vec![
            Check::new(
                "variance_ratio",
                self.variance_ratio,
                format!("within {variance_tolerance} of 1"),
                (self.variance_ratio - 1.0).abs() <= variance_tolerance,
            ),
            Check::new("anderson_darling_p", p, format!("> {min_p}"), p > min_p),
            Check::new(
                "mean_in_standard_errors",
                self.mean / self.mean_se,
                "within 4",
                self.mean.abs() <= 4.0 * self.mean_se,
            ),
        ]
    }
}

pub fn clt_study(
    model: &ModelSpec,
    x_star: f64,
    kernel: &KernelSpec,
    n: usize,
    rule: BandwidthRule,
    replicates: usize,
    seed: u64,
) -> Result<CltReport> {
    rule.validate()?;
    if replicates < 2 || n == 0 {
        return invalid("a CLT study needs N >= 1 and at least two replicates");
    }
    let kappa2 = clt_variance(model, x_star, kernel)?;
    let model = model.with_n(n);
    let h = rule.at(n);
    let flow = solve_limit_ode(&model, FLOW_TOLERANCE)?;
    let cfg = EstimatorConfig::new(kernel.clone(), h, x_star);
    let f_star = model.rate.eval(x_star);
    let scale = (n as f64 * h).sqrt();
    let reps = try_replicate_map(replicates, |r| {
        let traj = simulate(&model, derive_seed(seed, n as u64, r as u64), RecordLevel::EventsOnly)?;
        let (rep, occ) = estimate_point(&traj, &flow, &cfg)?;
        Ok((scale * (rep.estimate - f_star), occ.omega))
    })?;
    let samples: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let omega_failures = reps.iter().filter(|r| !r.1).count();
    let (mean, variance) = mean_var(&samples);
    Ok(CltReport {
        n,
        bandwidth: h,
        x_star,
        replicates,
        kappa2,
        mean,
        mean_se: (variance / replicates as f64).sqrt(),
        variance,
        variance_ratio: variance / kappa2,
        anderson_darling: anderson_darling_normal(&samples),
        samples,
        omega_failures,
    })
}

// ---------------------------------------------------------------------------
// Strong approximation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongRow {
    pub n: usize,
    pub replicates: usize,
    /// Replicate mean of `mean_i sup_t |V^i_t|²`.
    pub mean_sup_sq: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongApproxStudy {
    pub probes: usize,
    pub rows: Vec<StrongRow>,
    /// Largest over smallest `mean_sup_sq`.
    pub spread: f64,
}

impl StrongApproxStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,replicates,mean_sup_sq,se\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.n, r.replicates, r.mean_sup_sq, r.se);
        }
        out
    }

    pub fn checks(&self, max_spread: f64) -> Vec<Check> {
        vec![Check::new("sup_moment_spread", self.spread, format!("< {max_spread}"), self.spread < max_spread)]
    }
}

/// `E[sup_t |V_t|²]` on `probes + 1` equispaced times over `[0, T]`.
pub fn strong_approx_study(
    model: &ModelSpec,
    ns: &[usize],
    replicates: usize,
    probes: usize,
    seed: u64,
) -> Result<StrongApproxStudy> {
    if ns.is_empty() || ns.contains(&0) || replicates == 0 || probes == 0 {
        return invalid("strong approximation needs N >= 1, replicates >= 1 and probes >= 1");
    }
    let flow = solve_limit_ode(model, FLOW_TOLERANCE)?;
    let grid: Vec<f64> = (0..=probes).map(|k| model.horizon * k as f64 / probes as f64).collect();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let m = model.with_n(n);
        let sups = try_replicate_map(replicates, |r| {
            let traj = simulate(&m, derive_seed(seed, n as u64, r as u64), RecordLevel::EventsOnly)?;
            Ok(strong_approx_diag(&traj, &flow, &grid).moment(2).expect("second moment"))
        })?;
        let (mean, var) = mean_var(&sups);
        rows.push(StrongRow { n, replicates, mean_sup_sq: mean, se: (var / replicates as f64).sqrt() });
    }
    let max = rows.iter().fold(f64::MIN, |m, r| m.max(r.mean_sup_sq));
    let min = rows.iter().fold(f64::MAX, |m, r| m.min(r.mean_sup_sq));
    Ok(StrongApproxStudy { probes, rows, spread: max / min })
}

// ---------------------------------------------------------------------------
// Extinction

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionStudy {
    pub n: usize,
    pub w: f64,
    pub replicates: usize,
    pub extinct: usize,
    pub fraction_extinct: f64,
    pub reports: Vec<ExtinctionReport>,
}

impl ExtinctionStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replicate,extinct,last_spike,terminal_rate\n");
        for (k, r) in self.reports.iter().enumerate() {
            let last = r.last_spike.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{k},{},{last},{}", r.extinct, r.terminal_rate);
        }
        out
    }

    /// At least `min_fraction` of the replicates extinct (or non-extinct
    /// when `expect_extinct` is false).
    pub fn checks(&self, expect_extinct: bool, min_fraction: f64) -> Vec<Check> {
        let (name, value) = if expect_extinct {
            ("fraction_extinct", self.fraction_extinct)
        } else {
            ("fraction_active", 1.0 - self.fraction_extinct)
        };
        vec![Check::new(name, value, format!(">= {min_fraction}"), value >= min_fraction)]
    }
}

pub fn extinction_study(
    model: &ModelSpec,
    replicates: usize,
    seed: u64,
    quiet_horizon: Option<f64>,
    rate_epsilon: Option<f64>,
) -> Result<ExtinctionStudy> {
    if replicates == 0 {
        return invalid("replicate count must be >= 1");
    }
    let reports = try_replicate_map(replicates, |r| {
        let traj = simulate(model, derive_seed(seed, model.n as u64, r as u64), RecordLevel::EventsOnly)?;
        Ok(detect_extinction(&traj, quiet_horizon, rate_epsilon))
    })?;
    let extinct = reports.iter().filter(|r| r.extinct).count();
    Ok(ExtinctionStudy {
        n: model.n,
        w: model.w(),
        replicates,
        extinct,
        fraction_extinct: extinct as f64 / replicates as f64,
        reports,
    })
}

#[cfg(test)]
mod tests;
