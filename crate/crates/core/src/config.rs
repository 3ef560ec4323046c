//! TOML run configuration: model, kernel, estimator, simulation and
//! experiment sections.
//!
//! ```toml
//! n = 20000
//! x0 = -1.0
//! horizon = 10.0
//!
//! [drift]
//! kind = "linear-decay"
//!
//! [rate]
//! kind = "two-minus-gauss"
//!
//! [weights]
//! kind = "uniform"
//! a = -2.0
//! b = 3.0
//!
//! [kernel]
//! shape = "rectangular"
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorConfig, Observed, DEFAULT_EPSILON};
use crate::model::{build_kernel, DriftSpec, KernelSpec, ModelError, ModelSpec, RateSpec, WeightLaw};
use crate::simulator::{BoundStrategy, RecordLevel, SimConfig, DEFAULT_CHECKPOINT, DEFAULT_EVENT_CAP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }

    fn model(key: &str, e: ModelError) -> Self {
        Self::invalid(key, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub x0: f64,
    pub horizon: f64,
    #[serde(default)]
    pub drift: DriftConfig,
    pub rate: RateConfig,
    pub weights: WeightsConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// `linear-decay` (b(x) = -rate·x) or `zero`
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { kind: "linear-decay".into(), rate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    /// `two-minus-gauss`, `log1p`, `constant`, `abs` or `zero`
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    /// `uniform` on `[a, b]` or `point-mass` at `a`
    pub kind: String,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub shape: String,
    pub order: usize,
    pub support: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { shape: "rectangular".into(), order: 0, support: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Fixed bandwidth; overrides the `scale · n^-exponent` rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub bandwidth_scale: f64,
    pub bandwidth_exponent: f64,
    #[serde(default)]
    pub points: Vec<f64>,
    pub epsilon: f64,
    /// Observe neurons `0..observe_first` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe_first: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_end: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            bandwidth: None,
            bandwidth_scale: 1.0,
            bandwidth_exponent: 0.49,
            points: Vec::new(),
            epsilon: DEFAULT_EPSILON,
            observe_first: None,
            window_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    /// `events-only` or `snapshots`
    pub record: String,
    pub event_cap: u64,
    pub force_general: bool,
    /// `auto`, `global`, `monotone` or `user`
    pub bound: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_value: Option<f64>,
    pub checkpoint: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            seed: 1,
            record: "events-only".into(),
            event_cap: DEFAULT_EVENT_CAP,
            force_general: false,
            bound: "auto".into(),
            bound_value: None,
            checkpoint: DEFAULT_CHECKPOINT,
        }
    }
}

/// Knobs of the Monte Carlo experiments; unset fields fall back to the
/// per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// `fig1`, `partial`, `risk`, `clt`, `fig3`, `fig4`, `strong` or `extinction`
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ns: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gammas: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    /// Tolerance of the experiment's main check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Target log-log slope of the risk curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Expected extinction outcome; no check when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_extinct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiet_horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_epsilon: Option<f64>,
    /// Synthetic risk rows `[n, mse]` used instead of simulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixture: Vec<[f64; 2]>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every section without running anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model()?;
        self.kernel()?;
        self.sim_config()?;
        let e = &self.estimator;
        if let Some(h) = e.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ConfigError::invalid("estimator.bandwidth", format!("must be positive (got {h})")));
            }
        }
        if !(e.bandwidth_scale > 0.0 && e.bandwidth_scale.is_finite()) {
            return Err(ConfigError::invalid("estimator.bandwidth_scale", "must be positive"));
        }
        if !(e.bandwidth_exponent > 0.0 && e.bandwidth_exponent < 0.5) {
            return Err(ConfigError::invalid(
                "estimator.bandwidth_exponent",
                format!("must lie in (0, 1/2) so that n h² grows (got {})", e.bandwidth_exponent),
            ));
        }
        if !(e.epsilon > 0.0 && e.epsilon < 1.0) {
            return Err(ConfigError::invalid("estimator.epsilon", "must lie in (0, 1)"));
        }
        if let Some(x) = e.points.iter().find(|x| !x.is_finite()) {
            return Err(ConfigError::invalid("estimator.points", format!("non-finite point {x}")));
        }
        if let Some(k) = e.observe_first {
            if k == 0 || k > self.n {
                return Err(ConfigError::invalid("estimator.observe_first", format!("must lie in 1..={} (got {k})", self.n)));
            }
        }
        if let Some(t) = e.window_end {
            if !(t > 0.0 && t <= self.horizon) {
                return Err(ConfigError::invalid("estimator.window_end", format!("must lie in (0, horizon] (got {t})")));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, ConfigError> {
        let drift = match self.drift.kind.as_str() {
            "linear-decay" => {
                let rate = self.drift.rate.unwrap_or(1.0);
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(ConfigError::invalid("drift.rate", format!("must be positive (got {rate})")));
                }
                DriftSpec::linear(rate)
            }
            "zero" => DriftSpec::zero(),
            other => return Err(ConfigError::invalid("drift.kind", format!("unknown drift `{other}`"))),
        };
        let params = &self.rate.params;
        let expect = |k: usize| -> Result<(), ConfigError> {
            if params.len() == k {
                Ok(())
            } else {
                Err(ConfigError::invalid(
                    "rate.params",
                    format!("`{}` takes {k} parameter(s), got {}", self.rate.kind, params.len()),
                ))
            }
        };
        let rate = match self.rate.kind.as_str() {
            "two-minus-gauss" => {
                expect(0)?;
                RateSpec::two_minus_gauss()
            }
            "log1p" => {
                expect(0)?;
                RateSpec::log1p()
            }
            "abs" => {
                expect(0)?;
                RateSpec::abs()
            }
            "zero" => {
                expect(0)?;
                RateSpec::zero()
            }
            "constant" => {
                expect(1)?;
                if !(params[0] >= 0.0 && params[0].is_finite()) {
                    return Err(ConfigError::invalid("rate.params", "constant rate must be finite and nonnegative"));
                }
                RateSpec::constant(params[0])
            }
            other => return Err(ConfigError::invalid("rate.kind", format!("unknown rate `{other}`"))),
        };
        let weights = match self.weights.kind.as_str() {
            "uniform" => {
                let b = self.weights.b.ok_or_else(|| ConfigError::invalid("weights.b", "uniform weights need `b`"))?;
                WeightLaw::uniform(self.weights.a, b).map_err(|e| ConfigError::model("weights", e))?
            }
            "point-mass" => WeightLaw::point_mass(self.weights.a).map_err(|e| ConfigError::model("weights.a", e))?,
            other => return Err(ConfigError::invalid("weights.kind", format!("unknown weight law `{other}`"))),
        };
        ModelSpec::new(drift, rate, weights, self.n, self.x0, self.horizon).map_err(|e| {
            let key = match e {
                ModelError::EmptyPopulation(_) => "n",
                ModelError::NonPositiveHorizon(_) => "horizon",
                ModelError::NonFiniteInitial(_) => "x0",
                _ => "model",
            };
            ConfigError::model(key, e)
        })
    }

    pub fn kernel(&self) -> Result<KernelSpec, ConfigError> {
        let k = build_kernel(&self.kernel.shape, self.kernel.order).map_err(|e| ConfigError::model("kernel.shape", e))?;
        if !(self.kernel.support > 0.0 && self.kernel.support.is_finite()) {
            return Err(ConfigError::invalid("kernel.support", "must be positive"));
        }
        Ok(k.with_support(self.kernel.support))
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let s = &self.simulation;
        let record = match s.record.as_str() {
            "events-only" => RecordLevel::EventsOnly,
            "snapshots" => RecordLevel::Snapshots,
            other => return Err(ConfigError::invalid("simulation.record", format!("unknown record level `{other}`"))),
        };
        if !(s.checkpoint > 0.0 && s.checkpoint.is_finite()) {
            return Err(ConfigError::invalid("simulation.checkpoint", "must be positive"));
        }
        let strategy = match s.bound.as_str() {
            "auto" => BoundStrategy::Auto,
            "global" => BoundStrategy::GlobalL,
            "monotone" => BoundStrategy::MonotoneDecay { checkpoint: s.checkpoint },
            "user" => {
                let v = s
                    .bound_value
                    .ok_or_else(|| ConfigError::invalid("simulation.bound_value", "`user` bound needs a value"))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(ConfigError::invalid("simulation.bound_value", "must be positive"));
                }
                BoundStrategy::User(v)
            }
            other => return Err(ConfigError::invalid("simulation.bound", format!("unknown bound strategy `{other}`"))),
        };
        if s.event_cap == 0 {
            return Err(ConfigError::invalid("simulation.event_cap", "must be positive"));
        }
        Ok(SimConfig { strategy, record, event_cap: s.event_cap, force_general: s.force_general, streams: None })
    }

    /// Bandwidth for a population of size `n`.
    pub fn bandwidth(&self, n: usize) -> f64 {
        let e = &self.estimator;
        e.bandwidth.unwrap_or_else(|| e.bandwidth_scale * (n as f64).powf(-e.bandwidth_exponent))
    }

    /// Estimator configuration at `x_star` for the configured population.
    pub fn estimator_config(&self, x_star: f64) -> Result<EstimatorConfig, ConfigError> {
        let e = &self.estimator;
        let mut cfg = EstimatorConfig::new(self.kernel()?, self.bandwidth(self.n), x_star).with_epsilon(e.epsilon);
        if let Some(k) = e.observe_first {
            cfg = cfg.with_observed(Observed::Subset((0..k).collect()));
        }
        if let Some(t) = e.window_end {
            cfg = cfg.with_window_end(t);
        }
        Ok(cfg)
    }
}
