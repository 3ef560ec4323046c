use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// Q(u) = ½ 1{|u| <= 1}
    Rectangular,
    /// C^∞ bump proportional to exp(-1 / (1 - u²)) on ]-1, 1[.
    SmoothBump,
    /// Polynomial kernel on [-1, 1] with vanishing moments 1..=k.
    HigherOrder,
}

impl FromStr for KernelShape {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rectangular" => Ok(KernelShape::Rectangular),
            "smooth-bump" => Ok(KernelShape::SmoothBump),
            "higher-order" => Ok(KernelShape::HigherOrder),
            other => Err(ModelError::UnknownKernel(other.into())),
        }
    }
}

impl KernelShape {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelShape::Rectangular => "rectangular",
            KernelShape::SmoothBump => "smooth-bump",
            KernelShape::HigherOrder => "higher-order",
        }
    }
}

/// Kernel `Q`, supported on `[-K, K]`.
///
/// The base shape lives on `[-1, 1]`; a support radius `K != 1` stretches it
/// as `Q(u) = Q₁(u / K) / K`, which keeps `∫Q = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    shape: KernelShape,
    order: usize,
    support: f64,
    // Legendre coefficients (2j+1)/2 · P_j(0) for the higher-order family
    legendre: Vec<f64>,
}

fn bump_normaliser() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| numerics::integrate(bump_raw, -1.0, 1.0, 1e-16, 1e-15).value)
}

fn bump_raw(u: f64) -> f64 {
    let s = 1.0 - u * u;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn legendre_values(u: f64, degree: usize, out: &mut impl FnMut(usize, f64)) {
    let mut p_prev = 1.0;
    out(0, p_prev);
    if degree == 0 {
        return;
    }
    let mut p = u;
    out(1, p);
    for j in 1..degree {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * u * p - jf * p_prev) / (jf + 1.0);
        p_prev = p;
        p = next;
        out(j + 1, p);
    }
}

impl KernelSpec {
    pub fn new(shape: KernelShape, order: usize) -> Result<Self, ModelError> {
        let legendre = match shape {
            KernelShape::Rectangular | KernelShape::SmoothBump => {
                if order > 1 {
                    return Err(ModelError::InvalidKernel(format!(
                        "{} kernel only has vanishing moments up to order 1 (requested {order})",
                        shape.as_str()
                    )));
                }
                Vec::new()
            }
            KernelShape::HigherOrder => {
                // reproducing kernel of polynomials of degree <= order at 0
                let mut at_zero = vec![0.0; order + 1];
                legendre_values(0.0, order, &mut |j, v| at_zero[j] = v);
                at_zero.iter().enumerate().map(|(j, p0)| (2.0 * j as f64 + 1.0) / 2.0 * p0).collect()
            }
        };
        let order = match shape {
            KernelShape::HigherOrder => order,
            _ => 1,
        };
        Ok(Self { shape, order, support: 1.0, legendre })
    }

    pub fn rectangular() -> Self {
        Self::new(KernelShape::Rectangular, 1).expect("valid")
    }

    pub fn smooth_bump() -> Self {
        Self::new(KernelShape::SmoothBump, 1).expect("valid")
    }

    pub fn higher_order(order: usize) -> Self {
        Self::new(KernelShape::HigherOrder, order).expect("valid")
    }

    /// Same shape stretched to support `[-radius, radius]`. Not validated;
    /// see [`KernelSpec::validate`].
    pub fn with_support(&self, radius: f64) -> Self {
        Self { support: radius, ..self.clone() }
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    /// Highest `k` with `∫ u^j Q(u) du = 0` for all `1 <= j <= k`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Support radius `K`.
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn is_rectangular(&self) -> bool {
        self.shape == KernelShape::Rectangular
    }

    pub fn is_nonnegative(&self) -> bool {
        !matches!(self.shape, KernelShape::HigherOrder) || self.order < 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.support > 0.0 && self.support.is_finite()) {
            return Err(ModelError::InvalidKernel(format!("support radius must be positive (got {})", self.support)));
        }
        Ok(())
    }

    fn base(&self, v: f64) -> f64 {
        if v.abs() > 1.0 {
            return 0.0;
        }
        match self.shape {
            KernelShape::Rectangular => 0.5,
            KernelShape::SmoothBump => bump_raw(v) / bump_normaliser(),
            KernelShape::HigherOrder => {
                let mut acc = 0.0;
                let coeffs = &self.legendre;
                legendre_values(v, coeffs.len() - 1, &mut |j, p| acc += coeffs[j] * p);
                acc
            }
        }
    }

    /// `Q(u)`
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.base(u / self.support) / self.support
    }

    /// `Q_h(y) = Q(y / h) / h`
    #[inline]
    pub fn eval_scaled(&self, y: f64, h: f64) -> f64 {
        self.eval(y / h) / h
    }

    /// `∫ g(u) Q(u) du` by adaptive quadrature on the support.
    pub fn integrate_against<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let k = self.support;
        numerics::integrate(|u| g(u) * self.eval(u), -k, k, 1e-15, 1e-13).value
    }
}

/// Builds a kernel from its shape tag (`rectangular`, `smooth-bump`,
/// `higher-order`) and vanishing-moment order.
pub fn build_kernel(tag: &str, order: usize) -> Result<KernelSpec, ModelError> {
    KernelSpec::new(tag.parse()?, order)
}

/// `∫ Q²(u) du`
pub fn kernel_l2_norm(kernel: &KernelSpec) -> Result<f64, ModelError> {
    kernel.validate()?;
    let k = kernel.support();
    let q = numerics::integrate(|u| kernel.eval(u).powi(2), -k, k, 0.0, 1e-12);
    if !q.value.is_finite() || q.value <= 0.0 {
        return Err(ModelError::InvalidKernel("kernel has no L² mass".into()));
    }
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Midpoint Riemann sum, independent of the adaptive quadrature.
    fn riemann<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn rectangular_moments_and_norm() {
        let q = build_kernel("rectangular", 1).unwrap();
        assert!((q.integrate_against(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!(q.integrate_against(|u| u).abs() < 1e-12);
        assert!((kernel_l2_norm(&q).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(q.eval(1.0), 0.5);
        assert_eq!(q.eval(1.0 + 1e-12), 0.0);
    }

    #[test]
    fn higher_order_moments_vanish() {
        for order in 0..=6 {
            let q = build_kernel("higher-order", order).unwrap();
            assert!((q.integrate_against(|_| 1.0) - 1.0).abs() < 1e-10);
            for j in 1..=order {
                let m = q.integrate_against(|u| u.powi(j as i32));
                assert!(m.abs() < 1e-10, "order {order}, moment {j} = {m}");
            }
            // independent check by a fine Riemann sum
            let mass = riemann(|u| q.eval(u), -1.0, 1.0, 200_000);
            assert!((mass - 1.0).abs() < 1e-8);
        }
        let q3 = build_kernel("higher-order", 3).unwrap();
        let l2 = kernel_l2_norm(&q3).unwrap();
        let oracle = riemann(|u| q3.eval(u).powi(2), -1.0, 1.0, 400_000);
        assert!((l2 - oracle).abs() < 1e-6);
        // second moment of an order-3 kernel is zero but not the fourth
        assert!(q3.integrate_against(|u| u.powi(4)).abs() > 1e-3);
    }

    #[test]
    fn smooth_bump_is_a_density() {
        let q = KernelSpec::smooth_bump();
        assert!((q.integrate_against(|_| 1.0) - 1.0).abs() < 1e-10);
        assert!((riemann(|u| q.eval(u), -1.0, 1.0, 100_000) - 1.0).abs() < 1e-8);
        assert!(q.integrate_against(|u| u).abs() < 1e-12);
    }

    #[test]
    fn rescaled_support_keeps_unit_mass() {
        let q = KernelSpec::higher_order(2).with_support(2.5);
        assert!((q.integrate_against(|_| 1.0) - 1.0).abs() < 1e-10);
        assert!(q.integrate_against(|u| u * u).abs() < 1e-10);
        assert_eq!(q.eval(2.6), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_kernel("triangle", 1), Err(ModelError::UnknownKernel(_))));
        assert!(build_kernel("rectangular", 2).is_err());
        assert!(kernel_l2_norm(&KernelSpec::rectangular().with_support(0.0)).is_err());
    }
}
