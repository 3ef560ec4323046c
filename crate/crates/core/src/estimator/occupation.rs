//! Occupation integrals `Σ_{i∈S} ∫_0^T g(X^i_s) ds` for integrands `g`
//! supported on the kernel window `[x* - Kh, x* + Kh]`.
//!
//! Each inter-event segment of each neuron is monotone, so its visit to the
//! window is a single time interval. On the linear path the interval comes
//! from exact crossing times of `v0 e^{-λs}`; otherwise from the inverse of
//! a dense drift-flow solution.

use crate::flow::{integrate_scalar, DenseScalar};
use crate::numerics;
use crate::simulator::{decay, Representation, SystemTrajectory};

/// Part of one neuron's segment spent inside the window, in local time
/// `s` measured from the segment start.
pub(crate) enum Piece<'a> {
    /// `X(s) = v0 e^{-λ s}`
    Exp { v0: f64, lam: f64, s_a: f64, s_b: f64 },
    /// `X(s)` given by a dense drift-flow solution
    Dense { dense: &'a DenseScalar, s_a: f64, s_b: f64 },
}

impl Piece<'_> {
    #[inline]
    pub fn len(&self) -> f64 {
        match self {
            Piece::Exp { s_a, s_b, .. } | Piece::Dense { s_a, s_b, .. } => s_b - s_a,
        }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Piece::Exp { v0, lam, .. } => v0 * decay(*lam, s),
            Piece::Dense { dense, .. } => dense.eval(s),
        }
    }

    /// `∫ g(X(s)) ds` over the piece.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let (a, b) = match self {
            Piece::Exp { s_a, s_b, .. } | Piece::Dense { s_a, s_b, .. } => (*s_a, *s_b),
        };
        if b <= a {
            return 0.0;
        }
        numerics::integrate(|s| g(self.value(s)), a, b, 1e-300, 1e-10).value
    }
}

/// Sub-interval of `[0, d]` on which `v0 e^{-λs}` lies in `[lo, hi]`.
#[inline]
pub(crate) fn exp_window(v0: f64, lam: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if lam == 0.0 || v0 == 0.0 {
        return (lo <= v0 && v0 <= hi).then_some((0.0, d));
    }
    // reduce to a positive, decreasing path
    let (v0, lo, hi) = if v0 > 0.0 { (v0, lo, hi) } else { (-v0, -hi, -lo) };
    if hi <= 0.0 {
        return None;
    }
    let v1 = v0 * decay(lam, d);
    if v1 > hi || v0 < lo {
        return None;
    }
    let s_a = if v0 <= hi { 0.0 } else { (v0 / hi).ln() / lam };
    let s_b = if v1 >= lo { d } else { (v0 / lo).ln() / lam };
    let s_a = s_a.clamp(0.0, d);
    let s_b = s_b.clamp(s_a, d);
    (s_b > s_a).then_some((s_a, s_b))
}

/// Sub-interval of `[0, d]` on which a monotone dense path lies in `[lo, hi]`.
fn dense_window(dense: &DenseScalar, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let d = dense.end_time();
    let (x_a, x_b) = (dense.eval(0.0), dense.terminal());
    let (min, max) = (x_a.min(x_b), x_a.max(x_b));
    if max < lo || min > hi {
        return None;
    }
    if x_a == x_b {
        return Some((0.0, d));
    }
    let enter = |y: f64| dense.time_of(y);
    let (s_a, s_b) = if x_b < x_a {
        let s_a = if x_a <= hi { 0.0 } else { enter(hi)? };
        let s_b = if x_b >= lo { d } else { enter(lo)? };
        (s_a, s_b)
    } else {
        let s_a = if x_a >= lo { 0.0 } else { enter(lo)? };
        let s_b = if x_b <= hi { d } else { enter(hi)? };
        (s_a, s_b)
    };
    (s_b > s_a).then_some((s_a, s_b))
}

/// Calls `visit(neuron, piece)` for every in-window piece of every observed
/// neuron on `[0, t_end]`.
pub(crate) fn visit_pieces<F>(traj: &SystemTrajectory, observed: &[usize], lo: f64, hi: f64, t_end: f64, mut visit: F)
where
    F: FnMut(usize, &Piece<'_>),
{
    match &traj.repr {
        Representation::Linear(log) => {
            let lam = log.lam;
            let mut cursor = traj.cursor();
            loop {
                let (t0, t1) = cursor.segment();
                let t1 = t1.min(t_end);
                if t1 > t0 {
                    let (d0, d1) = (decay(lam, t0), decay(lam, t1));
                    let (a_min, a_max) = log.band(cursor.applied());
                    let slack = 1e-12 * (1.0 + a_min.abs().max(a_max.abs()));
                    let (a_min, a_max) = (a_min - slack, a_max + slack);
                    let x_min = (a_min * d0).min(a_min * d1);
                    let x_max = (a_max * d0).max(a_max * d1);
                    if x_max >= lo && x_min <= hi {
                        let d = t1 - t0;
                        for &i in observed {
                            let a = cursor.scaled(i).expect("linear cursor");
                            let v0 = a * d0;
                            if let Some((s_a, s_b)) = exp_window(v0, lam, d, lo, hi) {
                                visit(i, &Piece::Exp { v0, lam, s_a, s_b });
                            }
                        }
                    }
                }
                if t1 >= t_end || !cursor.advance() {
                    break;
                }
            }
        }
        Representation::General => {
            let model = traj.model();
            let drift = &model.drift;
            let jump_scale = 1.0 / model.n as f64;
            let events = traj.events();
            for &i in observed {
                let (mut x, mut t0) = (model.x0, 0.0);
                for k in 0..=events.len() {
                    let t1 = events.get(k).map_or(traj.terminal_time(), |e| e.time).min(t_end);
                    let d = t1 - t0;
                    let x_end = drift.flow(x, d);
                    if d > 0.0 && x.max(x_end) >= lo && x.min(x_end) <= hi {
                        if let Some(lam) = drift.linear_rate() {
                            if let Some((s_a, s_b)) = exp_window(x, lam, d, lo, hi) {
                                visit(i, &Piece::Exp { v0: x, lam, s_a, s_b });
                            }
                        } else if let Ok(dense) = integrate_scalar(|y| drift.eval(y), x, d, 1e-10) {
                            if let Some((s_a, s_b)) = dense_window(&dense, lo, hi) {
                                visit(i, &Piece::Dense { dense: &dense, s_a, s_b });
                            }
                        }
                    }
                    if k == events.len() || t1 >= t_end {
                        break;
                    }
                    let e = &events[k];
                    x = if e.neuron as usize == i { x_end } else { x_end + e.weight * jump_scale };
                    t0 = t1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn riemann(v0: f64, lam: f64, d: f64, lo: f64, hi: f64) -> f64 {
        let steps = (d / 1e-6).round() as usize;
        let dt = d / steps as f64;
        (0..steps)
            .filter(|k| {
                let x = v0 * (-lam * (*k as f64 + 0.5) * dt).exp();
                lo <= x && x <= hi
            })
            .count() as f64
            * dt
    }

    #[test]
    fn single_path_example() {
        let (s_a, s_b) = exp_window(1.0, 1.0, 10.0, 0.2, 0.5).unwrap();
        assert!(((s_b - s_a) - 2.5f64.ln()).abs() < 1e-14);
        assert!(((s_b - s_a) / 0.3 - 3.0543).abs() < 1e-4);
    }

    #[test]
    fn constant_and_missed_paths() {
        assert_eq!(exp_window(0.3, 0.0, 2.0, 0.2, 0.5), Some((0.0, 2.0)));
        assert_eq!(exp_window(0.6, 0.0, 2.0, 0.2, 0.5), None);
        assert_eq!(exp_window(0.0, 1.0, 2.0, -0.1, 0.1), Some((0.0, 2.0)));
        assert_eq!(exp_window(3.0, 1.0, 0.1, 0.2, 0.5), None);
        assert_eq!(exp_window(0.1, 1.0, 0.1, 0.2, 0.5), None);
        assert_eq!(exp_window(-1.0, 1.0, 5.0, 0.1, 0.5), None);
    }

    #[test]
    fn negative_paths_mirror_positive_ones() {
        let a = exp_window(-1.0, 1.0, 3.0, -0.5, -0.2).unwrap();
        let b = exp_window(1.0, 1.0, 3.0, 0.2, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_window_matches_exact_crossings() {
        let dense = integrate_scalar(|y| -y, 1.0, 3.0, 1e-12).unwrap();
        let (s_a, s_b) = dense_window(&dense, 0.2, 0.5).unwrap();
        assert!((s_a - 2f64.ln()).abs() < 1e-8);
        assert!((s_b - 5f64.ln()).abs() < 1e-8);
        let rising = integrate_scalar(|y| 1.0 - y, 0.0, 3.0, 1e-12).unwrap();
        let (s_a, s_b) = dense_window(&rising, 0.2, 0.5).unwrap();
        assert!((s_a - (1.0f64 / 0.8).ln()).abs() < 1e-8);
        assert!((s_b - 2f64.ln()).abs() < 1e-8);
        assert!(dense_window(&rising, 2.0, 3.0).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn crossing_times_match_riemann_sum(
            v0 in -3.0f64..3.0,
            lam in 0.2f64..2.0,
            d in 0.05f64..1.0,
            centre in -1.5f64..1.5,
            half in 0.02f64..0.8,
        ) {
            let (lo, hi) = (centre - half, centre + half);
            let exact = exp_window(v0, lam, d, lo, hi).map_or(0.0, |(a, b)| b - a);
            let oracle = riemann(v0, lam, d, lo, hi);
            // the midpoint sum resolves each crossing to half a step
            prop_assert!((exact - oracle).abs() <= (1e-5 * exact).max(1.1e-6), "{exact} vs {oracle}");
        }
    }
}
