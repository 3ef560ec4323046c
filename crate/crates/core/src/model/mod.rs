//! Functional ingredients of the finite system: drift `b`, spiking rate `f`,
//! synaptic weight law `ν`, and the estimation kernel `Q`.

mod holder;
mod kernel;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::numerics;

pub use holder::{check_holder_membership, HolderClassParams, HolderReport, HolderViolation};
pub use kernel::{build_kernel, kernel_l2_norm, KernelShape, KernelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("population size must satisfy n >= 1 (got {0})")]
    EmptyPopulation(usize),
    #[error("horizon must satisfy T > 0 (got {0})")]
    NonPositiveHorizon(f64),
    #[error("initial potential must be finite (got {0})")]
    NonFiniteInitial(f64),
    #[error("invalid weight law: {0}")]
    InvalidWeights(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("unknown kernel shape `{0}`")]
    UnknownKernel(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("Hölder regularity must satisfy beta >= 1 (got {0})")]
    BetaTooSmall(f64),
    #[error("{0}")]
    InvalidParameter(String),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum DriftKind {
    /// b(x) = -rate * x
    LinearDecay { rate: f64 },
    Custom { eval: ScalarFn },
}

/// Drift `b` of the membrane potential between spikes.
#[derive(Clone)]
pub struct DriftSpec {
    kind: DriftKind,
    lipschitz: f64,
    sign_opposing: bool,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DriftKind::LinearDecay { rate } => write!(f, "DriftSpec(linear-decay, rate={rate})"),
            DriftKind::Custom { .. } => write!(f, "DriftSpec(custom, lipschitz={})", self.lipschitz),
        }
    }
}

impl DriftSpec {
    /// b(x) = -x
    pub fn linear_decay() -> Self {
        Self::linear(1.0)
    }

    /// b(x) = -rate * x, with `rate >= 0`.
    pub fn linear(rate: f64) -> Self {
        assert!(rate >= 0.0 && rate.is_finite(), "decay rate must be finite and nonnegative");
        Self { kind: DriftKind::LinearDecay { rate }, lipschitz: rate, sign_opposing: true }
    }

    /// b ≡ 0
    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    /// Arbitrary drift integrated numerically. `sign_opposing` declares that
    /// `x * b(x) <= 0`, i.e. the flow never increases `|x|`.
    pub fn custom<F>(eval: F, lipschitz: f64, sign_opposing: bool) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { kind: DriftKind::Custom { eval: Arc::new(eval) }, lipschitz, sign_opposing }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            DriftKind::LinearDecay { rate } => -rate * x,
            DriftKind::Custom { eval } => eval(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_sign_opposing(&self) -> bool {
        self.sign_opposing
    }

    /// True when the drift has a closed-form flow.
    pub fn has_analytic_flow(&self) -> bool {
        matches!(self.kind, DriftKind::LinearDecay { .. })
    }

    /// Decay rate when the drift is `b(x) = -rate * x`.
    pub fn linear_rate(&self) -> Option<f64> {
        match self.kind {
            DriftKind::LinearDecay { rate } => Some(rate),
            DriftKind::Custom { .. } => None,
        }
    }

    /// Closed-form flow `φ_dt(x)`, when available.
    pub fn analytic_flow(&self, x: f64, dt: f64) -> Option<f64> {
        match self.kind {
            DriftKind::LinearDecay { rate } => Some(if rate == 0.0 { x } else { x * (-rate * dt).exp() }),
            DriftKind::Custom { .. } => None,
        }
    }

    /// Flow of `dx = b(x) dt` over `dt >= 0`: closed form when available,
    /// otherwise adaptive Runge–Kutta at tolerance 1e-10.
    pub fn flow(&self, x: f64, dt: f64) -> f64 {
        if let Some(v) = self.analytic_flow(x, dt) {
            return v;
        }
        if dt <= 0.0 {
            return x;
        }
        match crate::flow::integrate_scalar(|y| self.eval(y), x, dt, 1e-10) {
            Ok(dense) => dense.terminal(),
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Clone)]
enum RateKind {
    TwoMinusGauss,
    Log1p,
    Constant(f64),
    Abs,
    Custom(ScalarFn),
}

/// Spiking rate function `f >= 0`.
#[derive(Clone)]
pub struct RateSpec {
    kind: RateKind,
    name: String,
    upper_bound: Option<f64>,
    lipschitz: f64,
    monotone_in_abs: bool,
}

impl fmt::Debug for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RateSpec({}, bound={:?})", self.name, self.upper_bound)
    }
}

impl RateSpec {
    /// f(r) = 2 - exp(-r²), bounded by 2.
    pub fn two_minus_gauss() -> Self {
        Self {
            kind: RateKind::TwoMinusGauss,
            name: "two-minus-gauss".into(),
            upper_bound: Some(2.0),
            // max |f'| = sqrt(2) e^{-1/2}
            lipschitz: 2f64.sqrt() * (-0.5f64).exp(),
            monotone_in_abs: true,
        }
    }

    /// f(r) = log(1 + |r|); coincides with log(1 + r) on the nonnegative
    /// potentials of a purely excitatory system.
    pub fn log1p() -> Self {
        Self {
            kind: RateKind::Log1p,
            name: "log1p".into(),
            upper_bound: None,
            lipschitz: 1.0,
            monotone_in_abs: true,
        }
    }

    pub fn constant(lambda: f64) -> Self {
        assert!(lambda >= 0.0 && lambda.is_finite(), "constant rate must be finite and nonnegative");
        Self {
            kind: RateKind::Constant(lambda),
            name: format!("constant({lambda})"),
            upper_bound: Some(lambda),
            lipschitz: 0.0,
            monotone_in_abs: true,
        }
    }

    /// f ≡ 0
    pub fn zero() -> Self {
        let mut r = Self::constant(0.0);
        r.name = "zero".into();
        r
    }

    /// f(r) = |r|
    pub fn abs() -> Self {
        Self { kind: RateKind::Abs, name: "abs".into(), upper_bound: None, lipschitz: 1.0, monotone_in_abs: true }
    }

    pub fn custom<F>(name: &str, eval: F, upper_bound: Option<f64>, lipschitz: f64, monotone_in_abs: bool) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: RateKind::Custom(Arc::new(eval)),
            name: name.into(),
            upper_bound,
            lipschitz,
            monotone_in_abs,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            RateKind::TwoMinusGauss => 2.0 - (-x * x).exp(),
            RateKind::Log1p => x.abs().ln_1p(),
            RateKind::Constant(c) => *c,
            RateKind::Abs => x.abs(),
            RateKind::Custom(f) => f(x),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn upper_bound(&self) -> Option<f64> {
        self.upper_bound
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `f(x) <= f(|y|)` whenever `|x| <= |y|`.
    pub fn is_monotone_in_abs(&self) -> bool {
        self.monotone_in_abs
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(self.kind, RateKind::Constant(c) if c == 0.0)
    }
}

type Sampler = Arc<dyn Fn(&mut dyn rand::RngCore) -> f64 + Send + Sync>;

/// Law `ν` of the synaptic weights.
#[derive(Clone)]
pub enum WeightLaw {
    Uniform { a: f64, b: f64 },
    PointMass(f64),
    Custom { name: String, sampler: Sampler, mean: f64, abs_moment: ScalarFn },
}

impl fmt::Debug for WeightLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightLaw::Uniform { a, b } => write!(f, "Uniform({a}, {b})"),
            WeightLaw::PointMass(u) => write!(f, "PointMass({u})"),
            WeightLaw::Custom { name, mean, .. } => write!(f, "Custom({name}, mean={mean})"),
        }
    }
}

impl WeightLaw {
    pub fn uniform(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ModelError::InvalidWeights(format!("uniform law needs finite a < b (got a={a}, b={b})")));
        }
        Ok(WeightLaw::Uniform { a, b })
    }

    pub fn point_mass(u: f64) -> Result<Self, ModelError> {
        if u == 0.0 || !u.is_finite() {
            return Err(ModelError::InvalidWeights("point mass must sit at a finite nonzero weight".into()));
        }
        Ok(WeightLaw::PointMass(u))
    }

    /// Weight law from a sampler and its moment oracle. The sampler must not
    /// return 0.
    pub fn custom<S, M>(name: &str, sampler: S, mean: f64, abs_moment: M) -> Self
    where
        S: Fn(&mut dyn rand::RngCore) -> f64 + Send + Sync + 'static,
        M: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        WeightLaw::Custom { name: name.into(), sampler: Arc::new(sampler), mean, abs_moment: Arc::new(abs_moment) }
    }

    /// `w = ∫ u ν(du)`
    pub fn mean(&self) -> f64 {
        match self {
            WeightLaw::Uniform { a, b } => 0.5 * (a + b),
            WeightLaw::PointMass(u) => *u,
            WeightLaw::Custom { mean, .. } => *mean,
        }
    }

    /// `∫ |u|^p ν(du)`
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            WeightLaw::Uniform { a, b } => {
                let anti = |x: f64| x.signum() * x.abs().powf(p + 1.0) / (p + 1.0);
                (anti(*b) - anti(*a)) / (b - a)
            }
            WeightLaw::PointMass(u) => u.abs().powf(p),
            WeightLaw::Custom { abs_moment, .. } => abs_moment(p),
        }
    }

    /// True when ν is carried by `[0, ∞)`.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            WeightLaw::Uniform { a, .. } => *a >= 0.0,
            WeightLaw::PointMass(u) => *u > 0.0,
            WeightLaw::Custom { .. } => false,
        }
    }

    /// `∫ g(u) ν(du)` for the families with a density or atom.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G) -> Option<f64> {
        match self {
            WeightLaw::Uniform { a, b } => {
                Some(numerics::integrate(&g, *a, *b, 1e-13, 1e-12).value / (b - a))
            }
            WeightLaw::PointMass(u) => Some(g(*u)),
            WeightLaw::Custom { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Uniform { a, b } => loop {
                let u: f64 = rng.random();
                let v = a + (b - a) * u;
                if v != 0.0 {
                    return v;
                }
            },
            WeightLaw::PointMass(u) => *u,
            WeightLaw::Custom { sampler, .. } => {
                let mut adapter = RngAdapter(rng);
                sampler(&mut adapter)
            }
        }
    }
}

struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// One finite system: ingredients, population size, initial potential and
/// observation horizon.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub rate: RateSpec,
    pub weights: WeightLaw,
    pub n: usize,
    pub x0: f64,
    pub horizon: f64,
}

impl ModelSpec {
    pub fn new(
        drift: DriftSpec,
        rate: RateSpec,
        weights: WeightLaw,
        n: usize,
        x0: f64,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        let m = Self { drift, rate, weights, n, x0, horizon };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 1 {
            return Err(ModelError::EmptyPopulation(self.n));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ModelError::NonPositiveHorizon(self.horizon));
        }
        if !self.x0.is_finite() {
            return Err(ModelError::NonFiniteInitial(self.x0));
        }
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_x0(&self, x0: f64) -> Self {
        Self { x0, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    /// Mean synaptic weight `w`.
    pub fn w(&self) -> f64 {
        self.weights.mean()
    }

    /// Vector field of the mean-field limit, `F(x) = b(x) + w f(x)`.
    #[inline]
    pub fn big_f(&self, x: f64) -> f64 {
        self.drift.eval(x) + self.w() * self.rate.eval(x)
    }

    /// Mixed excitatory/inhibitory system: f(r) = 2 - e^{-r²}, b(x) = -x, ν = U(-2, 3).
    pub fn excitatory_inhibitory(n: usize) -> Self {
        Self::new(
            DriftSpec::linear_decay(),
            RateSpec::two_minus_gauss(),
            WeightLaw::Uniform { a: -2.0, b: 3.0 },
            n,
            -1.0,
            10.0,
        )
        .expect("valid preset")
    }

    /// Purely excitatory system: f(r) = log(1 + r), b(x) = -x, ν = U(0, b).
    pub fn purely_excitatory(n: usize, weight_max: f64, x0: f64) -> Self {
        Self::new(
            DriftSpec::linear_decay(),
            RateSpec::log1p(),
            WeightLaw::Uniform { a: 0.0, b: weight_max },
            n,
            x0,
            10.0,
        )
        .expect("valid preset")
    }
}

/// `F(x) = b(x) + w f(x)` for the given model.
pub fn evaluate_big_f(model: &ModelSpec, x: f64) -> f64 {
    model.big_f(x)
}
