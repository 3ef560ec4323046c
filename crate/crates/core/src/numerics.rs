//! Scalar numerical routines shared by the model, flow and estimator code:
//! adaptive Gauss–Kronrod quadrature, bracketed root polishing and
//! golden-section minimisation.

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let s = f(centre - dx) + f(centre + dx);
        kronrod += wk * s;
        // odd indices carry the embedded Gauss nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive G7K15 quadrature with bisection of the worst interval.
///
/// Stops once the summed error estimate is below `max(abs_tol, rel_tol * |I|)`
/// or the interval budget is exhausted; the returned error is the final
/// estimate in either case.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0 };
    }
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) && pieces.len() < MAX_INTERVALS {
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, pv, pe) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            pieces.push((lo, hi, pv, pe));
            break;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // re-sum to shed the drift of the running updates
    let value = pieces.iter().map(|p| p.2).sum();
    let error = pieces.iter().map(|p| p.3).sum();
    Quadrature { value, error }
}

/// Root of `f` on `[a, b]` given a sign change, by bisection finished with
/// secant steps. Returns the endpoint when it is already an exact zero.
pub fn bracketed_root<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (b - a).abs() <= x_tol || mid == a || mid == b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let fa = f(a);
    let fb = f(b);
    if fa == fb {
        return Some(0.5 * (a + b));
    }
    let secant = a - fa * (b - a) / (fb - fa);
    let lo = a.min(b);
    let hi = a.max(b);
    Some(secant.clamp(lo, hi))
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }
    0.5 * (a + b)
}

/// Central finite-difference estimate of the `order`-th derivative.
pub fn derivative<F: Fn(f64) -> f64>(f: &F, x: f64, order: usize, step: f64) -> f64 {
    match order {
        0 => f(x),
        _ => {
            let h = step;
            (derivative(f, x + 0.5 * h, order - 1, h) - derivative(f, x - 0.5 * h, order - 1, h)) / h
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let q = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-14, 1e-14);
        assert!((q.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn integrates_log_ratio_to_dilogarithm_value() {
        let q = integrate(|u: f64| u.ln_1p() / u, 0.0, 1.0, 1e-15, 1e-14);
        let expected = std::f64::consts::PI.powi(2) / 12.0;
        assert!((q.value - expected).abs() < 1e-13, "{}", q.value);
    }

    #[test]
    fn adapts_to_kinks() {
        let q = integrate(|x: f64| x.abs(), -1.0, 2.0, 1e-12, 1e-12);
        assert!((q.value - 2.5).abs() < 1e-10);
    }

    #[test]
    fn root_and_minimum() {
        let r = bracketed_root(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(bracketed_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
        let m = golden_min(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((m - 0.3).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_derivatives() {
        let d1 = derivative(&|x: f64| x.sin(), 0.4, 1, 1e-4);
        let d2 = derivative(&|x: f64| x.sin(), 0.4, 2, 1e-3);
        assert!((d1 - 0.4f64.cos()).abs() < 1e-8);
        assert!((d2 + 0.4f64.sin()).abs() < 1e-6);
    }
}
