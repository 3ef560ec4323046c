//! The mean-field limit `dx = F(x) dt`: adaptive solution with dense output,
//! the inverse flow `γ`, equilibria of `F`, and the bracketing flows driven
//! by constant lower/upper rates.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelSpec;
use crate::numerics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("tolerance must be positive (got {0})")]
    BadTolerance(f64),
    #[error("{y} lies outside the open range ]{lo}, {hi}[ traversed by the flow")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("the flow is not strictly monotone")]
    NotMonotone,
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Piecewise cubic Hermite solution of a scalar autonomous ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseScalar {
    times: Vec<f64>,
    states: Vec<f64>,
    slopes: Vec<f64>,
}

/// Solves `dx = rhs(x) dt` on `[0, t_end]` with mixed absolute/relative
/// local error `tol`.
pub fn integrate_scalar<F: Fn(f64) -> f64>(rhs: F, x0: f64, t_end: f64, tol: f64) -> Result<DenseScalar, FlowError> {
    if !(tol > 0.0) {
        return Err(FlowError::BadTolerance(tol));
    }
    let mut times = vec![0.0];
    let mut states = vec![x0];
    let mut slopes = vec![rhs(x0)];
    if !(t_end > 0.0) {
        return Ok(DenseScalar { times, states, slopes });
    }
    // Keeps the Hermite interpolant within tolerance between accepted steps.
    let h_max = (t_end / 32.0).min(0.1);
    let mut h = h_max.min(1e-2 * t_end.max(1.0));
    let mut t = 0.0;
    let mut x = x0;
    let mut k1 = slopes[0];
    let mut k = [0.0; 7];
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        k[0] = k1;
        for s in 0..6 {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                acc += A[s][j] * kj;
            }
            k[s + 1] = rhs(x + h * acc);
        }
        let x_new = x + h * (0..6).map(|j| A[5][j] * k[j]).sum::<f64>();
        let err_abs = h * E.iter().zip(k.iter()).map(|(e, kj)| e * kj).sum::<f64>();
        let scale = tol * (1.0 + x.abs().max(x_new.abs()));
        let err = if x_new.is_finite() && err_abs.is_finite() { err_abs.abs() / scale } else { f64::INFINITY };
        if err <= 1.0 {
            t = if t_end - (t + h) < 1e-14 * t_end { t_end } else { t + h };
            x = x_new;
            k1 = k[6];
            times.push(t);
            states.push(x);
            slopes.push(k1);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(h_max);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(FlowError::StepUnderflow { t });
        }
    }
    Ok(DenseScalar { times, states, slopes })
}

impl DenseScalar {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("non-empty")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    fn step_index(&self, t: f64) -> usize {
        let n = self.times.len();
        if n < 2 {
            return 0;
        }
        self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1
    }

    fn hermite(&self, k: usize, t: f64) -> (f64, f64) {
        if self.times.len() < 2 {
            return (self.states[0], self.slopes[0]);
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1, m0, m1) = (self.states[k], self.states[k + 1], self.slopes[k], self.slopes[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let value = y0 + (3.0 * s2 - 2.0 * s3) * (y1 - y0) + (s3 - 2.0 * s2 + s) * h * m0 + (s3 - s2) * h * m1;
        let deriv = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * h * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * h * m1)
            / h;
        (value, deriv)
    }

    /// Dense-output value at `t` (clamped to the solved range).
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.end_time());
        self.hermite(self.step_index(t), t).0
    }

    /// Time derivative of the interpolant at `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.end_time());
        self.hermite(self.step_index(t), t).1
    }

    /// Time at which a monotone solution passes through `y`, if it does.
    pub fn time_of(&self, y: f64) -> Option<f64> {
        let first = self.states[0];
        let last = self.terminal();
        let increasing = last >= first;
        let (lo, hi) = if increasing { (first, last) } else { (last, first) };
        if !(lo..=hi).contains(&y) {
            return None;
        }
        if y == first {
            return Some(0.0);
        }
        let k = if increasing {
            self.states.partition_point(|&s| s < y)
        } else {
            self.states.partition_point(|&s| s > y)
        }
        .clamp(1, self.states.len() - 1)
            - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        numerics::bracketed_root(|t| self.hermite(k, t).0 - y, t0, t1, 1e-15 * t1.max(1.0))
    }
}

/// Solution of the limit ODE on `[0, T]`.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    model: ModelSpec,
    dense: DenseScalar,
}

/// Solves `dx = F(x) dt` from `x₀` on `[0, T]` at local tolerance `tol`.
pub fn solve_limit_ode(model: &ModelSpec, tol: f64) -> Result<FlowSolution, FlowError> {
    let dense = integrate_scalar(|x| model.big_f(x), model.x0, model.horizon, tol)?;
    Ok(FlowSolution { model: model.clone(), dense })
}

impl FlowSolution {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn dense(&self) -> &DenseScalar {
        &self.dense
    }

    pub fn x0(&self) -> f64 {
        self.dense.states[0]
    }

    /// `x_T`
    pub fn terminal(&self) -> f64 {
        self.dense.terminal()
    }

    pub fn horizon(&self) -> f64 {
        self.dense.end_time()
    }

    /// `x_t`
    pub fn eval(&self, t: f64) -> f64 {
        self.dense.eval(t)
    }

    pub fn is_strictly_monotone(&self) -> bool {
        let s = &self.dense.states;
        s.windows(2).all(|w| w[1] > w[0]) || s.windows(2).all(|w| w[1] < w[0])
    }

    /// Time spent by the limit path in the closed interval `[lo, hi]`.
    pub fn time_in(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (x0, xt) = (self.x0(), self.terminal());
        let (a, b) = (x0.min(xt), x0.max(xt));
        let lo = lo.max(a);
        let hi = hi.min(b);
        if lo > hi {
            return (0.0, 0.0);
        }
        if a == b {
            return (0.0, self.horizon());
        }
        let ta = self.dense.time_of(lo).unwrap_or(0.0);
        let tb = self.dense.time_of(hi).unwrap_or(self.horizon());
        (ta.min(tb), ta.max(tb))
    }

    pub fn inverse(&self) -> Result<InverseFlow<'_>, FlowError> {
        if !self.is_strictly_monotone() {
            return Err(FlowError::NotMonotone);
        }
        Ok(InverseFlow { flow: self })
    }

    /// CSV rows `t,x` at the accepted steps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x\n");
        for (t, x) in self.dense.times.iter().zip(&self.dense.states) {
            let _ = writeln!(out, "{t},{x}");
        }
        out
    }
}

/// The inverse `γ` of a strictly monotone limit flow on `]x₀, x_T[`.
#[derive(Debug, Clone, Copy)]
pub struct InverseFlow<'a> {
    flow: &'a FlowSolution,
}

impl InverseFlow<'_> {
    /// Open interval `]min, max[` of values reached on `]0, T[`.
    pub fn domain(&self) -> (f64, f64) {
        let (a, b) = (self.flow.x0(), self.flow.terminal());
        (a.min(b), a.max(b))
    }

    /// `γ(y)`
    pub fn eval(&self, y: f64) -> Result<f64, FlowError> {
        let (lo, hi) = self.domain();
        if !(y > lo && y < hi) {
            return Err(FlowError::OutOfRange { y, lo, hi });
        }
        self.flow.dense.time_of(y).ok_or(FlowError::OutOfRange { y, lo, hi })
    }
}

/// `γ(y)`, the time at which the limit flow reaches `y`.
pub fn invert_flow(sol: &FlowSolution, y: f64) -> Result<f64, FlowError> {
    sol.inverse()?.eval(y)
}

const SCAN_RESOLUTION: f64 = 1e-3;
const ROOT_TOLERANCE: f64 = 1e-10;

/// Roots of `F = b + w f` on `[a, b]`, by sign-change scan plus detection of
/// touching zeros at local minima of `|F|`.
pub fn find_equilibria(model: &ModelSpec, interval: (f64, f64)) -> Vec<f64> {
    let (a, b) = (interval.0.min(interval.1), interval.0.max(interval.1));
    let n = ((b - a) / SCAN_RESOLUTION).ceil().max(1.0) as usize;
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| model.big_f(x)).collect();
    let f = |x: f64| model.big_f(x);
    let mut roots = Vec::new();
    for i in 0..n {
        if fs[i] == 0.0 {
            roots.push(xs[i]);
        } else if fs[i] * fs[i + 1] < 0.0 {
            if let Some(r) = numerics::bracketed_root(f, xs[i], xs[i + 1], 1e-15) {
                roots.push(r);
            }
        }
    }
    if fs[n] == 0.0 {
        roots.push(xs[n]);
    }
    for i in 1..n {
        let local_min = fs[i].abs() <= fs[i - 1].abs() && fs[i].abs() <= fs[i + 1].abs();
        let same_sign = fs[i - 1] * fs[i] > 0.0 && fs[i] * fs[i + 1] > 0.0;
        if local_min && same_sign {
            let m = numerics::golden_min(|x| f(x).abs(), xs[i - 1], xs[i + 1], 1e-14);
            roots.push(m);
        }
    }
    roots.retain(|&r| f(r).abs() <= ROOT_TOLERANCE);
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-8);
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketReport {
    pub l_t: f64,
    pub r_t: f64,
    /// terminal value of the true limit flow
    pub x_t: f64,
    pub ordered: bool,
}

/// Flows of `b + w·l` and `b + w·r` from `x₀` to time `horizon`. When
/// `l <= f <= r` on the traversed range, they bracket the limit flow.
pub fn bracketing_flows(model: &ModelSpec, l_bound: f64, r_bound: f64, horizon: f64) -> Result<BracketReport, FlowError> {
    let w = model.w();
    let (low, high) = ((w * l_bound).min(w * r_bound), (w * l_bound).max(w * r_bound));
    let tol = 1e-10;
    let l = integrate_scalar(|x| model.drift.eval(x) + low, model.x0, horizon, tol)?;
    let r = integrate_scalar(|x| model.drift.eval(x) + high, model.x0, horizon, tol)?;
    let x = integrate_scalar(|x| model.big_f(x), model.x0, horizon, tol)?;
    let (l_t, r_t, x_t) = (l.terminal(), r.terminal(), x.terminal());
    let slack = 1e-9 * (1.0 + x_t.abs());
    Ok(BracketReport { l_t, r_t, x_t, ordered: l_t <= x_t + slack && x_t <= r_t + slack })
}

/// Whether `x*` lies strictly inside `]x₀, x_T[` and `F` stays away from
/// zero on the stretch of the path leading to it.
pub fn check_reachable_point(sol: &FlowSolution, x_star: f64) -> bool {
    const ENDPOINT_GAP: f64 = 1e-12;
    let (x0, xt) = (sol.x0(), sol.terminal());
    let (lo, hi) = (x0.min(xt), x0.max(xt));
    if !(x_star > lo + ENDPOINT_GAP && x_star < hi - ENDPOINT_GAP) {
        return false;
    }
    let model = sol.model();
    let n = 2000;
    let min_abs = (0..=n)
        .map(|i| x0 + (x_star - x0) * i as f64 / n as f64)
        .map(|x| model.big_f(x).abs())
        .fold(f64::INFINITY, f64::min);
    min_abs > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriftSpec, RateSpec, WeightLaw};
    use proptest::prelude::*;

    fn decay_only(x0: f64, horizon: f64) -> ModelSpec {
        ModelSpec::new(DriftSpec::linear_decay(), RateSpec::zero(), WeightLaw::point_mass(1.0).unwrap(), 1, x0, horizon)
            .unwrap()
    }

    fn mixed(x0: f64, horizon: f64) -> ModelSpec {
        ModelSpec::excitatory_inhibitory(100).with_x0(x0).with_horizon(horizon)
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let sol = solve_limit_ode(&decay_only(1.0, 1.0), 1e-9).unwrap();
        assert!((sol.terminal() - (-1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn fixed_point_start_stays_put() {
        let m = ModelSpec::new(DriftSpec::zero(), RateSpec::zero(), WeightLaw::point_mass(1.0).unwrap(), 1, 0.3, 5.0)
            .unwrap();
        let sol = solve_limit_ode(&m, 1e-9).unwrap();
        for k in 0..=50 {
            assert_eq!(sol.eval(0.1 * k as f64), 0.3);
        }
    }

    #[test]
    fn mixed_flow_approaches_equilibrium() {
        // classical RK4 with step 1e-4
        let sol = solve_limit_ode(&mixed(-1.0, 10.0), 1e-10).unwrap();
        assert!((sol.terminal() - 0.685_382_258_09).abs() < 1e-7, "{}", sol.terminal());
        assert!(sol.is_strictly_monotone());
        let long = solve_limit_ode(&mixed(-1.0, 30.0), 1e-10).unwrap();
        assert!((long.terminal() - 0.6889).abs() < 1e-3, "{}", long.terminal());
    }

    #[test]
    fn dense_output_satisfies_ode_at_midpoints() {
        for m in [mixed(-1.0, 10.0), decay_only(2.0, 4.0), ModelSpec::purely_excitatory(10, 4.0, 0.1)] {
            let sol = solve_limit_ode(&m, 1e-9).unwrap();
            let t = sol.dense().times();
            for w in t.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let fx = m.big_f(sol.eval(mid));
                let resid = (sol.dense().derivative(mid) - fx).abs();
                assert!(resid <= 1e-7 * (1.0 + fx.abs()), "residual {resid} at {mid}");
            }
        }
    }

    #[test]
    fn inverse_flow_examples() {
        let sol = solve_limit_ode(&decay_only(1.0, 3.0), 1e-9).unwrap();
        assert!((invert_flow(&sol, 0.5).unwrap() - 2f64.ln()).abs() < 1e-7);
        let mid = 0.5 * (sol.x0() + sol.terminal());
        let t = invert_flow(&sol, mid).unwrap();
        assert!((sol.eval(t) - mid).abs() <= 1e-8);
        let sol = solve_limit_ode(&mixed(-1.0, 10.0), 1e-9).unwrap();
        let t0 = invert_flow(&sol, 0.0).unwrap();
        assert!(t0 > 0.0 && t0.is_finite());
        assert!(sol.eval(t0).abs() <= 1e-8);
        assert!(matches!(invert_flow(&sol, 0.9), Err(FlowError::OutOfRange { .. })));
        assert!(matches!(invert_flow(&sol, -1.0), Err(FlowError::OutOfRange { .. })));
    }

    #[test]
    fn equilibria_examples() {
        let r = find_equilibria(&mixed(-1.0, 10.0), (-5.0, 5.0));
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.6889).abs() < 1e-3);
        let r = find_equilibria(&ModelSpec::purely_excitatory(10, 4.0, 0.1), (-0.5, 5.0));
        assert_eq!(r.len(), 2, "{r:?}");
        assert!(r[0].abs() < 1e-8);
        assert!((r[1] - 2.5129).abs() < 1e-3);
        assert_eq!(find_equilibria(&decay_only(1.0, 1.0), (-1.0, 1.0)), vec![0.0]);
    }

    #[test]
    fn equilibria_are_stationary() {
        for m in [mixed(-1.0, 10.0), ModelSpec::purely_excitatory(10, 4.0, 0.1)] {
            for e in find_equilibria(&m, (-0.5, 5.0)) {
                let sol = solve_limit_ode(&m.with_x0(e), 1e-9).unwrap();
                for &x in sol.dense().states() {
                    assert!((x - e).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn bracketing_examples() {
        let m = mixed(-1.0, 10.0);
        let r = bracketing_flows(&m, 1.0, 2.0, 10.0).unwrap();
        assert!(r.ordered);
        assert!(r.l_t <= 0.6889 && 0.6889 <= r.r_t);
        let c = ModelSpec::new(DriftSpec::linear_decay(), RateSpec::constant(1.5), WeightLaw::point_mass(0.5).unwrap(), 1, -1.0, 3.0)
            .unwrap();
        let r = bracketing_flows(&c, 1.5, 1.5, 3.0).unwrap();
        assert!((r.l_t - r.x_t).abs() < 1e-9 && (r.r_t - r.x_t).abs() < 1e-9);
        let r = bracketing_flows(&m, 0.0, 2.0, 10.0).unwrap();
        assert!((r.l_t + (-10f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn brackets_hold_along_the_path() {
        let m = mixed(-1.0, 10.0);
        let x = solve_limit_ode(&m, 1e-10).unwrap();
        let l = integrate_scalar(|y| m.drift.eval(y) + 0.5, m.x0, 10.0, 1e-10).unwrap();
        let r = integrate_scalar(|y| m.drift.eval(y) + 1.0, m.x0, 10.0, 1e-10).unwrap();
        for k in 0..=200 {
            let t = 0.05 * k as f64;
            assert!(l.eval(t) <= x.eval(t) + 1e-9 && x.eval(t) <= r.eval(t) + 1e-9);
        }
    }

    #[test]
    fn reachable_point_examples() {
        let sol = solve_limit_ode(&mixed(-1.0, 10.0), 1e-9).unwrap();
        assert!(check_reachable_point(&sol, 0.2));
        assert!(!check_reachable_point(&sol, -1.0));
        assert!(!check_reachable_point(&sol, 0.9));
        assert!(!check_reachable_point(&sol, sol.terminal()));
    }

    #[test]
    fn csv_export_has_one_row_per_step() {
        let sol = solve_limit_ode(&decay_only(1.0, 1.0), 1e-9).unwrap();
        let csv = sol.to_csv();
        assert!(csv.starts_with("t,x\n"));
        assert_eq!(csv.lines().count(), sol.dense().times().len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn semigroup_property(s in 0.1f64..4.0, t in 0.1f64..4.0, x0 in -2.0f64..0.5) {
            let m = mixed(x0, s + t);
            let whole = solve_limit_ode(&m, 1e-10).unwrap();
            let first = solve_limit_ode(&m.with_horizon(s), 1e-10).unwrap();
            let second = solve_limit_ode(&m.with_x0(first.terminal()).with_horizon(t), 1e-10).unwrap();
            prop_assert!((second.terminal() - whole.terminal()).abs() < 1e-7);
        }

        #[test]
        fn inverse_round_trips(frac in 0.01f64..0.99, t_frac in 0.01f64..0.99) {
            let sol = solve_limit_ode(&mixed(-1.0, 10.0), 1e-9).unwrap();
            let y = sol.x0() + frac * (sol.terminal() - sol.x0());
            let t = invert_flow(&sol, y).unwrap();
            prop_assert!((sol.eval(t) - y).abs() <= 1e-8);
            let t_in = t_frac * 5.0;
            let back = invert_flow(&sol, sol.eval(t_in)).unwrap();
            prop_assert!((back - t_in).abs() <= 1e-8);
        }
    }
}
