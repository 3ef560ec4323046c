//! Extinction diagnostics for purely excitatory systems.

use serde::Serialize;

use super::{SimError, SystemTrajectory};
use crate::model::ModelSpec;
use crate::numerics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionReport {
    pub extinct: bool,
    pub last_spike: Option<f64>,
    /// `Σ_i f(X^i_T)`
    pub terminal_rate: f64,
    pub quiet_horizon: f64,
    pub rate_epsilon: f64,
}

/// Extinct iff no spike in the final `quiet_horizon` and the terminal total
/// rate is below `rate_epsilon`. `None` picks `0.2 T` and `1e-6 N`.
pub fn detect_extinction(
    traj: &SystemTrajectory,
    quiet_horizon: Option<f64>,
    rate_epsilon: Option<f64>,
) -> ExtinctionReport {
    let t_end = traj.terminal_time();
    let quiet_horizon = quiet_horizon.unwrap_or(0.2 * t_end);
    let rate_epsilon = rate_epsilon.unwrap_or(1e-6 * traj.n() as f64);
    let last_spike = traj.events().last().map(|e| e.time);
    let terminal_rate = traj.total_rate_at(t_end);
    let quiet = last_spike.is_none_or(|t| t < t_end - quiet_horizon);
    ExtinctionReport { extinct: quiet && terminal_rate < rate_epsilon, last_spike, terminal_rate, quiet_horizon, rate_epsilon }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionBound {
    pub probability: f64,
    pub log_probability: f64,
}

/// `exp(-N ∫_0^r log(1+u)/u du)`, a lower bound on the probability of never
/// spiking from any start with all potentials below `r`.
pub fn extinction_lower_bound(n: usize, r: f64) -> Result<ExtinctionBound, SimError> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(SimError::InvalidLog(format!("radius must be finite and nonnegative (got {r})")));
    }
    let integral = if r == 0.0 {
        0.0
    } else {
        numerics::integrate(|u| u.ln_1p() / u, 0.0, r, 0.0, 1e-12).value
    };
    let log_probability = -(n as f64) * integral;
    Ok(ExtinctionBound { probability: log_probability.exp(), log_probability })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// `A^N V(x)` per state.
    pub generator: Vec<f64>,
    /// `V(x)` per state.
    pub lyapunov: Vec<f64>,
    /// `max_x (A^N V(x) - V(x)/2)`
    pub max_excess: f64,
    /// `C` such that `A^N V <= V/2 + C` on the nonnegative orthant.
    pub constant: f64,
    pub holds: bool,
}

/// `A^N V(x)` for `V(x) = Σ|x^i|` by quadrature over the weight law.
pub fn lyapunov_generator(model: &ModelSpec, x: &[f64]) -> Result<f64, SimError> {
    let n = x.len();
    let inv_n = 1.0 / n as f64;
    let drift: f64 = x.iter().map(|&xi| model.drift.eval(xi) * sign(xi)).sum();
    let rates: Vec<f64> = x.iter().map(|&xi| model.rate.eval(xi)).collect();
    let total_rate: f64 = rates.iter().sum();
    if total_rate == 0.0 {
        return Ok(drift);
    }
    let jump = model
        .weights
        .expectation(|u| {
            let mut all = 0.0;
            let mut own = 0.0;
            for (&xi, &fi) in x.iter().zip(&rates) {
                let g = (xi + u * inv_n).abs() - xi.abs();
                all += g;
                own += fi * g;
            }
            total_rate * all - own
        })
        .ok_or_else(|| SimError::InvalidLog("weight law has no quadrature rule".into()))?;
    Ok(drift + jump)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Evaluates the generator of `V(x) = Σ|x^i|` on nonnegative states and
/// checks `A^N V <= V/2 + C` with `C = N sup_{y>=0} (b(y) - y/2 + κ f(y))`,
/// `κ = (N-1) w / N`.
pub fn lyapunov_drift_check(states: &[Vec<f64>], model: &ModelSpec) -> Result<LyapunovReport, SimError> {
    let n = model.n;
    for s in states {
        if s.len() != n {
            return Err(SimError::InvalidLog(format!("state of length {} for n = {n}", s.len())));
        }
        if let Some(x) = s.iter().find(|x| !(**x >= 0.0)) {
            return Err(SimError::InvalidLog(format!("states must be nonnegative (found {x})")));
        }
    }
    let kappa = (n as f64 - 1.0) * model.w() / n as f64;
    let h = |y: f64| model.drift.eval(y) - 0.5 * y + kappa * model.rate.eval(y);
    let grid: Vec<f64> = std::iter::once(0.0).chain((0..=2400).map(|k| 10f64.powf(-6.0 + k as f64 / 200.0))).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &y)| (k, h(y)))
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let y_star = numerics::golden_min(|y| -h(y), lo, hi, 1e-12);
    let sup = h(y_star).max(h(grid[best]));
    let constant = n as f64 * sup.max(0.0);

    let mut generator = Vec::with_capacity(states.len());
    let mut lyapunov = Vec::with_capacity(states.len());
    let mut max_excess = f64::NEG_INFINITY;
    for s in states {
        let a = lyapunov_generator(model, s)?;
        let v: f64 = s.iter().map(|x| x.abs()).sum();
        max_excess = max_excess.max(a - 0.5 * v);
        generator.push(a);
        lyapunov.push(v);
    }
    let holds = max_excess <= constant * (1.0 + 1e-9) + 1e-9;
    Ok(LyapunovReport { generator, lyapunov, max_excess, constant, holds })
}
