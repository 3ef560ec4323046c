use serde::Serialize;

use super::{ModelError, ModelSpec};
use crate::numerics;

/// Slack added to derivative bounds to absorb finite-difference error.
const DERIVATIVE_SLACK: f64 = 1e-6;
/// Grids longer than this are thinned for the all-pairs Hölder sweep.
const MAX_PAIR_POINTS: usize = 2000;

/// Parameters of the class `H(β, l, L)` at a given estimation point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderClassParams {
    pub beta: f64,
    /// lower bound `l` on `|F(x*)|`
    pub lower: f64,
    /// bound `L` on `f`, `|f'|` and the Hölder constant
    pub upper: f64,
    /// interval `[x₀, x_T]` on which the top derivative is Hölder
    pub interval: (f64, f64),
    pub x_star: f64,
    /// range standing in for "all x" in the global bounds
    pub sweep: (f64, f64),
}

impl HolderClassParams {
    /// `k = ⌈β⌉ - 1`
    pub fn k(&self) -> usize {
        (self.beta.ceil() as usize).saturating_sub(1)
    }

    /// `α = β - k ∈ ]0, 1]`
    pub fn alpha(&self) -> f64 {
        self.beta - self.k() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderViolation {
    pub constraint: &'static str,
    pub at: f64,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub member: bool,
    pub violations: Vec<HolderViolation>,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Checks on a finite grid whether the model's rate belongs to `H(β, l, L)`.
pub fn check_holder_membership(
    model: &ModelSpec,
    params: &HolderClassParams,
    grid_step: f64,
) -> Result<HolderReport, ModelError> {
    if params.beta < 1.0 || params.beta.is_nan() {
        return Err(ModelError::BetaTooSmall(params.beta));
    }
    if !(grid_step > 0.0) {
        return Err(ModelError::InvalidParameter(format!("grid_step must be positive (got {grid_step})")));
    }
    let f = |x: f64| model.rate.eval(x);
    let bound = params.upper + DERIVATIVE_SLACK;
    let mut violations = Vec::new();

    let big_f = model.big_f(params.x_star).abs();
    if big_f < params.lower {
        violations.push(HolderViolation { constraint: "|F(x*)| >= l", at: params.x_star, value: big_f, limit: params.lower });
    }

    let d1_step = (grid_step * 1e-2).max(1e-7);
    let sweep = grid(params.sweep.0, params.sweep.1, grid_step);
    if let Some(&x) = sweep.iter().find(|&&x| f(x) > bound) {
        violations.push(HolderViolation { constraint: "f <= L", at: x, value: f(x), limit: params.upper });
    }
    if let Some(&x) = sweep.iter().find(|&&x| f(x) < 0.0) {
        violations.push(HolderViolation { constraint: "f >= 0", at: x, value: f(x), limit: 0.0 });
    }
    if let Some((x, d)) = sweep
        .iter()
        .map(|&x| (x, numerics::derivative(&f, x, 1, d1_step).abs()))
        .find(|&(_, d)| d > bound)
    {
        violations.push(HolderViolation { constraint: "|f'| <= L", at: x, value: d, limit: params.upper });
    }

    let k = params.k();
    let alpha = params.alpha();
    let step = if k <= 1 { d1_step } else { grid_step };
    let xs = grid(params.interval.0, params.interval.1, grid_step);
    let top: Vec<f64> = xs.iter().map(|&x| numerics::derivative(&f, x, k, step)).collect();
    let mut worst: Option<HolderViolation> = None;
    let mut record = |i: usize, j: usize| {
        let dist = (xs[j] - xs[i]).abs();
        let diff = (top[j] - top[i]).abs();
        let limit = bound * dist.powf(alpha);
        if diff > limit {
            let ratio = diff / dist.powf(alpha);
            if worst.as_ref().is_none_or(|w| ratio > w.value) {
                worst = Some(HolderViolation { constraint: "Hölder bound on f^(k)", at: xs[i], value: ratio, limit: params.upper });
            }
        }
    };
    if alpha >= 1.0 {
        // adjacent pairs suffice for a Lipschitz bound
        for i in 0..xs.len().saturating_sub(1) {
            record(i, i + 1);
        }
    } else {
        let stride = xs.len().div_ceil(MAX_PAIR_POINTS).max(1);
        let idx: Vec<usize> = (0..xs.len()).step_by(stride).collect();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                record(i, j);
            }
        }
    }
    violations.extend(worst);

    Ok(HolderReport { member: violations.is_empty(), violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriftSpec, RateSpec, WeightLaw};

    fn model(rate: RateSpec) -> ModelSpec {
        ModelSpec::new(DriftSpec::linear_decay(), rate, WeightLaw::uniform(-2.0, 3.0).unwrap(), 100, -1.0, 10.0).unwrap()
    }

    fn params(beta: f64, l: f64, upper: f64) -> HolderClassParams {
        HolderClassParams { beta, lower: l, upper, interval: (-1.0, 0.68), x_star: 0.0, sweep: (-3.0, 3.0) }
    }

    #[test]
    fn two_minus_gauss_is_a_member() {
        let r = check_holder_membership(&model(RateSpec::two_minus_gauss()), &params(2.0, 0.1, 2.2), 1e-3).unwrap();
        assert!(r.member, "{:?}", r.violations);
    }

    #[test]
    fn zero_rate_fails_nondegeneracy() {
        let r = check_holder_membership(&model(RateSpec::zero()), &params(2.0, 0.1, 2.2), 1e-3).unwrap();
        assert!(!r.member);
        assert_eq!(r.violations[0].constraint, "|F(x*)| >= l");
    }

    #[test]
    fn absolute_value_has_no_lipschitz_derivative() {
        let mut p = params(2.0, 0.1, 5.0);
        p.sweep = (-1.0, 1.0);
        p.x_star = 0.5;
        let r = check_holder_membership(&model(RateSpec::abs()), &p, 1e-3).unwrap();
        assert!(!r.member);
        assert!(r.violations.iter().any(|v| v.constraint == "Hölder bound on f^(k)"));
        // with beta = 1 only the Lipschitz bound is required
        p.beta = 1.0;
        assert!(check_holder_membership(&model(RateSpec::abs()), &p, 1e-3).unwrap().member);
    }

    #[test]
    fn fractional_beta_uses_all_pairs() {
        let mut p = params(1.5, 0.1, 2.2);
        p.interval = (-0.5, 0.5);
        let r = check_holder_membership(&model(RateSpec::two_minus_gauss()), &p, 1e-2).unwrap();
        assert!(r.member, "{:?}", r.violations);
    }

    #[test]
    fn rejects_beta_below_one() {
        assert_eq!(
            check_holder_membership(&model(RateSpec::log1p()), &params(0.5, 0.1, 2.0), 1e-3),
            Err(ModelError::BetaTooSmall(0.5))
        );
    }

    #[test]
    fn membership_is_monotone_in_upper_bound() {
        let m = model(RateSpec::two_minus_gauss());
        let mut was_member = false;
        for k in 0..40 {
            let upper = 0.5 + 0.1 * k as f64;
            let member = check_holder_membership(&m, &params(2.0, 0.1, upper), 1e-2).unwrap().member;
            assert!(!was_member || member, "lost membership at L = {upper}");
            was_member = member;
        }
        assert!(was_member);
    }
}
