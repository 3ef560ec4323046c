//! Kernel estimator of the spiking rate,
//! `f̂(x*) = Σ_n Q_h(X^{I_n}_{T_n-} - x*) / Σ_i ∫_0^T Q_h(X^i_s - x*) ds`,
//! with `0/0 := 0`, plus validation-mode diagnostics that need the true rate
//! and the limit flow.

mod diagnostics;
mod occupation;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::flow::FlowSolution;
use crate::model::{kernel_l2_norm, KernelSpec, ModelError, ModelSpec, RateSpec};
use crate::numerics;
use crate::simulator::SystemTrajectory;
pub use diagnostics::{strong_approx_diag, StrongApproxReport};
pub(crate) use occupation::{visit_pieces, Piece};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("F(x*) = {0} vanishes at x*; the asymptotic variance is degenerate")]
    DegenerateVariance(f64),
}

/// Neurons whose spikes and potentials enter the estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Observed {
    All,
    /// 0-based, distinct neuron indices.
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub x_star: f64,
    /// End of the observation window; `None` uses the run horizon.
    pub window_end: Option<f64>,
    pub observed: Observed,
    /// Tolerance of the occupation event `|A_N / A_lim - 1| <= ε`.
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 0.1;

impl EstimatorConfig {
    pub fn new(kernel: KernelSpec, bandwidth: f64, x_star: f64) -> Self {
        Self { kernel, bandwidth, x_star, window_end: None, observed: Observed::All, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_observed(mut self, observed: Observed) -> Self {
        self.observed = observed;
        self
    }

    pub fn with_x_star(&self, x_star: f64) -> Self {
        Self { x_star, ..self.clone() }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_window_end(mut self, t: f64) -> Self {
        self.window_end = Some(t);
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        self.kernel.validate()?;
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(EstimatorError::InvalidConfig(format!("bandwidth must be positive (got {})", self.bandwidth)));
        }
        if !self.x_star.is_finite() {
            return Err(EstimatorError::InvalidConfig("estimation point must be finite".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(EstimatorError::InvalidConfig(format!("epsilon must lie in (0, 1) (got {})", self.epsilon)));
        }
        if let Some(t) = self.window_end {
            if !(t > 0.0) {
                return Err(EstimatorError::InvalidConfig(format!("window end must be positive (got {t})")));
            }
        }
        if let Observed::Subset(s) = &self.observed {
            if s.is_empty() {
                return Err(EstimatorError::InvalidConfig("observed subset is empty".into()));
            }
        }
        Ok(())
    }

    /// `[x* - Kh, x* + Kh]`
    pub fn window(&self) -> (f64, f64) {
        let r = self.kernel.support() * self.bandwidth;
        (self.x_star - r, self.x_star + r)
    }

    #[inline]
    fn q(&self, y: f64) -> f64 {
        self.kernel.eval_scaled(y - self.x_star, self.bandwidth)
    }

    fn resolve(&self, traj: &SystemTrajectory) -> Result<(Vec<usize>, Vec<bool>, f64), EstimatorError> {
        self.validate()?;
        let n = traj.n();
        let t_end = self.window_end.unwrap_or(traj.terminal_time());
        if t_end > traj.terminal_time() {
            return Err(EstimatorError::InvalidConfig(format!(
                "window end {t_end} exceeds the run horizon {}",
                traj.terminal_time()
            )));
        }
        let observed: Vec<usize> = match &self.observed {
            Observed::All => (0..n).collect(),
            Observed::Subset(s) => s.clone(),
        };
        let mut member = vec![false; n];
        for &i in &observed {
            if i >= n {
                return Err(EstimatorError::InvalidConfig(format!("observed neuron {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut member[i], true) {
                return Err(EstimatorError::InvalidConfig(format!("observed neuron {i} listed twice")));
            }
        }
        Ok((observed, member, t_end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationComparison {
    /// `A_N`: occupation per observed neuron
    pub a_n: f64,
    /// `A_lim`: occupation of the limit flow
    pub a_lim: f64,
    pub omega: bool,
    /// The limit flow never visits the kernel window.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// martingale part `(1/|S|)[Σ_n Q_h - Σ_i ∫ f Q_h]`
    pub m: f64,
    /// bias part `(1/|S|) Σ_i ∫ Q_h [f - f(x*)]`
    pub b: f64,
    pub a_n: f64,
    /// `(f̂ - f(x*)) A_N`
    pub scaled_error: f64,
    /// `|(f̂ - f(x*)) A_N - (M + B)|`
    pub residual: f64,
    pub holds: bool,
}

pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub x_star: f64,
    pub bandwidth: f64,
    pub kernel: String,
    pub estimate: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub observed: usize,
    /// Observed spikes with nonzero kernel weight.
    pub spikes_in_window: usize,
    /// Zero occupation: the estimate is 0 by the `0/0` rule.
    pub degenerate: bool,
    /// Occupation of each observed neuron, in the order of the subset.
    #[serde(skip)]
    pub per_neuron: Vec<f64>,
    pub omega: Option<bool>,
    pub occupation: Option<OccupationComparison>,
    pub decomposition: Option<Decomposition>,
    pub true_f: Option<f64>,
    pub error: Option<f64>,
    pub warnings: Vec<String>,
}

struct Accumulation {
    numerator: f64,
    spikes: usize,
    per_neuron: Vec<f64>,
    denominator: f64,
    /// `Σ ∫ f Q_h` and `Σ ∫ Q_h (f - f(x*))`
    validation: Option<(f64, f64)>,
}

fn accumulate(
    traj: &SystemTrajectory,
    cfg: &EstimatorConfig,
    true_f: Option<&RateSpec>,
) -> Result<(Accumulation, usize), EstimatorError> {
    let (observed, member, t_end) = cfg.resolve(traj)?;
    let mut numerator = 0.0;
    let mut spikes = 0;
    for e in traj.events().iter().take_while(|e| e.time <= t_end) {
        if member[e.neuron as usize] {
            let q = cfg.q(e.pre_potential);
            if q != 0.0 {
                numerator += q;
                spikes += 1;
            }
        }
    }
    let (lo, hi) = cfg.window();
    let rectangular = cfg.kernel.is_rectangular();
    let height = 1.0 / (2.0 * cfg.kernel.support() * cfg.bandwidth);
    let f_star = true_f.map(|f| f.eval(cfg.x_star));
    let mut raw = vec![0.0; traj.n()];
    let (mut int_fq, mut int_qd) = (0.0, 0.0);
    visit_pieces(traj, &observed, lo, hi, t_end, |i, piece: &Piece<'_>| {
        let occ = if rectangular { piece.len() } else { piece.integrate(|x| cfg.q(x)) };
        raw[i] += occ;
        if let (Some(f), Some(fs)) = (true_f, f_star) {
            let (fq, q) = if rectangular {
                (height * piece.integrate(|x| f.eval(x)), height * occ)
            } else {
                (piece.integrate(|x| cfg.q(x) * f.eval(x)), occ)
            };
            int_fq += fq;
            int_qd += fq - fs * q;
        }
    });
    let scale = if rectangular { height } else { 1.0 };
    let per_neuron: Vec<f64> = observed.iter().map(|&i| raw[i] * scale).collect();
    let denominator = per_neuron.iter().sum();
    let validation = true_f.map(|_| (int_fq, int_qd));
    Ok((Accumulation { numerator, spikes, per_neuron, denominator, validation }, observed.len()))
}

fn base_report(cfg: &EstimatorConfig, acc: &Accumulation, observed: usize) -> EstimateReport {
    let degenerate = acc.denominator == 0.0;
    let estimate = if degenerate { 0.0 } else { acc.numerator / acc.denominator };
    let mut warnings = Vec::new();
    if cfg.kernel.is_rectangular() {
        warnings.push("rectangular kernel is discontinuous; smooth-kernel error bounds do not apply".into());
    }
    EstimateReport {
        x_star: cfg.x_star,
        bandwidth: cfg.bandwidth,
        kernel: cfg.kernel.shape().as_str().into(),
        estimate,
        numerator: acc.numerator,
        denominator: acc.denominator,
        observed,
        spikes_in_window: acc.spikes,
        degenerate,
        per_neuron: acc.per_neuron.clone(),
        omega: None,
        occupation: None,
        decomposition: None,
        true_f: None,
        error: None,
        warnings,
    }
}

/// `Σ_{i∈S} ∫_0^T Q_h(X^i_s - x*) ds`
pub fn occupation_integral(traj: &SystemTrajectory, cfg: &EstimatorConfig) -> Result<f64, EstimatorError> {
    Ok(accumulate(traj, cfg, None)?.0.denominator)
}

/// The estimator proper; touches neither the true rate nor the limit flow.
pub fn estimate_rate(traj: &SystemTrajectory, cfg: &EstimatorConfig) -> Result<EstimateReport, EstimatorError> {
    let (acc, observed) = accumulate(traj, cfg, None)?;
    Ok(base_report(cfg, &acc, observed))
}

/// Estimate plus the occupation comparison against the limit flow and the
/// error decomposition under the model's own rate.
pub fn estimate_rate_validated(
    traj: &SystemTrajectory,
    cfg: &EstimatorConfig,
    flow: &FlowSolution,
) -> Result<EstimateReport, EstimatorError> {
    let true_f = &traj.model().rate;
    let (acc, observed) = accumulate(traj, cfg, Some(true_f))?;
    let mut report = base_report(cfg, &acc, observed);
    let occ = compare_from(acc.denominator / observed as f64, flow, cfg, traj.terminal_time());
    report.omega = Some(occ.omega);
    report.occupation = Some(occ);
    report.decomposition = Some(decompose(&acc, observed, report.estimate, true_f.eval(cfg.x_star)));
    let f_star = true_f.eval(cfg.x_star);
    report.true_f = Some(f_star);
    report.error = Some(report.estimate - f_star);
    Ok(report)
}

/// `∫_0^T Q_h(x_s - x*) ds` along the limit flow.
pub fn limit_occupation(flow: &FlowSolution, cfg: &EstimatorConfig, t_end: f64) -> f64 {
    let (lo, hi) = cfg.window();
    let (t_a, t_b) = flow.time_in(lo, hi);
    let (t_a, t_b) = (t_a.min(t_end), t_b.min(t_end));
    if t_b <= t_a {
        return 0.0;
    }
    if cfg.kernel.is_rectangular() {
        (t_b - t_a) / (2.0 * cfg.kernel.support() * cfg.bandwidth)
    } else {
        numerics::integrate(|t| cfg.q(flow.eval(t)), t_a, t_b, 1e-300, 1e-10).value
    }
}

fn compare_from(a_n: f64, flow: &FlowSolution, cfg: &EstimatorConfig, horizon: f64) -> OccupationComparison {
    let a_lim = limit_occupation(flow, cfg, cfg.window_end.unwrap_or(horizon));
    let degenerate = a_lim == 0.0;
    let omega = !degenerate && (a_n / a_lim - 1.0).abs() <= cfg.epsilon;
    OccupationComparison { a_n, a_lim, omega, degenerate }
}

/// `A_N` against `A_lim` and the occupation event flag.
pub fn compare_occupation(
    traj: &SystemTrajectory,
    flow: &FlowSolution,
    cfg: &EstimatorConfig,
) -> Result<OccupationComparison, EstimatorError> {
    let (acc, observed) = accumulate(traj, cfg, None)?;
    Ok(compare_from(acc.denominator / observed as f64, flow, cfg, traj.terminal_time()))
}

fn decompose(acc: &Accumulation, observed: usize, estimate: f64, f_star: f64) -> Decomposition {
    let (int_fq, int_qd) = acc.validation.expect("validation integrals");
    let s = observed as f64;
    let a_n = acc.denominator / s;
    let m = (acc.numerator - int_fq) / s;
    let b = int_qd / s;
    let scaled_error = (estimate - f_star) * a_n;
    let residual = (scaled_error - (m + b)).abs();
    let scale = 1.0f64.max(m.abs()).max(b.abs()).max(scaled_error.abs());
    Decomposition { m, b, a_n, scaled_error, residual, holds: residual <= DECOMPOSITION_TOLERANCE * scale }
}

/// Martingale/bias split of the scaled estimation error under `true_f`.
pub fn error_decomposition(
    traj: &SystemTrajectory,
    cfg: &EstimatorConfig,
    true_f: &RateSpec,
) -> Result<Decomposition, EstimatorError> {
    let (acc, observed) = accumulate(traj, cfg, Some(true_f))?;
    let estimate = base_report(cfg, &acc, observed).estimate;
    Ok(decompose(&acc, observed, estimate, true_f.eval(cfg.x_star)))
}

/// `κ² = |F(x*) f(x*)| ∫Q²`, the limiting variance of `√(Nh)(f̂ - f(x*))`.
pub fn clt_variance(model: &ModelSpec, x_star: f64, kernel: &KernelSpec) -> Result<f64, EstimatorError> {
    let big_f = model.big_f(x_star);
    if big_f.abs() < 1e-12 {
        return Err(EstimatorError::DegenerateVariance(big_f));
    }
    Ok((big_f * model.rate.eval(x_star)).abs() * kernel_l2_norm(kernel)?)
}

/// `σ² = f(x*) / |F(x*)| ∫Q²`, the variance of the rescaled martingale part.
pub fn martingale_variance(model: &ModelSpec, x_star: f64, kernel: &KernelSpec) -> Result<f64, EstimatorError> {
    let big_f = model.big_f(x_star);
    if big_f.abs() < 1e-12 {
        return Err(EstimatorError::DegenerateVariance(big_f));
    }
    Ok(model.rate.eval(x_star) / big_f.abs() * kernel_l2_norm(kernel)?)
}

pub const BATCH_CSV_HEADER: &str = "x_star,estimate,numerator,denominator,degenerate,true_f,error,omega_flag";

/// One CSV row per report; unknown validation fields are left empty.
pub fn batch_csv(reports: &[EstimateReport]) -> String {
    let mut out = String::from(BATCH_CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.x_star,
            r.estimate,
            r.numerator,
            r.denominator,
            r.degenerate,
            opt(r.true_f),
            opt(r.error),
            r.omega.map(|b| b.to_string()).unwrap_or_default()
        );
    }
    out
}
