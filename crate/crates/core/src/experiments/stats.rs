use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Anderson–Darling test of normality with mean and variance estimated from
/// the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AndersonDarling {
    /// `A²`
    pub statistic: f64,
    /// `A² (1 + 0.75/n + 2.25/n²)`
    pub adjusted: f64,
    pub p_value: f64,
}

/// `None` for fewer than 8 samples or a constant sample.
pub fn anderson_darling_normal(samples: &[f64]) -> Option<AndersonDarling> {
    let n = samples.len();
    if n < 8 || samples.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let (mean, var) = mean_var(samples);
    if var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let std_normal = Normal::standard();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        // ln(1 - Φ(z)) as ln Φ(-z) keeps the upper tail accurate
        let lo = std_normal.cdf(z[i]).ln();
        let hi = std_normal.cdf(-z[n - 1 - i]).ln();
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    let statistic = -nf - s / nf;
    let adjusted = statistic * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    Some(AndersonDarling { statistic, adjusted, p_value: ad_p_value(adjusted) })
}

/// D'Agostino–Stephens piecewise approximation for the adjusted statistic.
pub fn ad_p_value(a: f64) -> f64 {
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    p.clamp(0.0, 1.0)
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; 0 for two points.
    pub slope_se: f64,
}

/// Ordinary least squares `y = intercept + slope x`. `None` for fewer than
/// two distinct abscissae.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let m = x.len();
    if m != y.len() || m < 2 {
        return None;
    }
    let mf = m as f64;
    let mx = x.iter().sum::<f64>() / mf;
    let my = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if m > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (mf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit { slope, intercept, slope_se })
}
