//! Exact event-driven simulation of the finite system by thinning.
//!
//! Every neuron owns a ChaCha stream and a unit-rate exponential clock in
//! operational time. The common per-neuron bound `β(t)` converts operational
//! time to real time, so all candidate streams are Poisson of rate `β(t)`.
//! A candidate of neuron `j` at `t` is accepted with probability
//! `f(X^j_{t-}) / β(t)`.

mod extinction;
mod io;
mod state;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
pub use extinction::{
    detect_extinction, extinction_lower_bound, lyapunov_drift_check, ExtinctionBound, ExtinctionReport,
    LyapunovReport,
};
pub use io::{read_trajectory, write_events_csv, write_trajectory, StoredTrajectory, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};
pub(crate) use state::{decay, LinearLog};
use state::{GeneralState, LinearState, State, MAX_LINEAR_EXPONENT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no thinning bound available: {0}")]
    NoBound(String),
    #[error("thinning bound violated at t = {time}: neuron {neuron} has rate {rate} > bound {bound} (potential {potential})")]
    BoundViolation { time: f64, neuron: usize, potential: f64, rate: f64, bound: f64 },
    #[error("event cap {cap} exceeded at t = {time}")]
    EventCap { cap: u64, time: f64 },
    #[error("non-finite potential {potential} for neuron {neuron} at t = {time}")]
    NonFinite { time: f64, neuron: usize, potential: f64 },
    #[error("neuron index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("time {time} outside [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },
    #[error("stream map must list one stream per neuron")]
    StreamMap,
    #[error("invalid event log: {0}")]
    InvalidLog(String),
}

/// One accepted spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub time: f64,
    /// 0-based index of the spiking neuron.
    pub neuron: u32,
    pub weight: f64,
    /// Potential of the spiker just before the spike.
    pub pre_potential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStrategy {
    /// Pick global-L when `f` is bounded, monotone-decay otherwise.
    Auto,
    /// `β = L` for a declared global bound `f <= L`.
    GlobalL,
    /// `β = f(max_i |X^i|)`, refreshed at events and every `checkpoint`
    /// time units. Needs `f` monotone in `|x|` and a sign-opposing drift.
    MonotoneDecay { checkpoint: f64 },
    /// Caller-supplied constant bound.
    User(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordLevel {
    EventsOnly,
    /// Full post-jump state after every event.
    Snapshots,
    /// Full state at the given (sorted) probe times.
    Probed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub strategy: BoundStrategy,
    pub record: RecordLevel,
    pub event_cap: u64,
    /// Disable the linear-drift representation.
    pub force_general: bool,
    /// RNG stream of each neuron; defaults to the neuron index.
    pub streams: Option<Vec<u64>>,
}

pub const DEFAULT_CHECKPOINT: f64 = 0.1;
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;
const BOUND_TOLERANCE: f64 = 1e-12;
const BOUND_INFLATION: f64 = 1e-9;

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            strategy: BoundStrategy::Auto,
            record: RecordLevel::EventsOnly,
            event_cap: DEFAULT_EVENT_CAP,
            force_general: false,
            streams: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SimStats {
    pub candidates: u64,
    pub accepted: u64,
    pub bound_refreshes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Representation {
    Linear(LinearLog),
    General,
}

/// Result of a run: event log plus whatever is needed to rebuild every
/// potential on `[0, T]`.
#[derive(Debug, Clone)]
pub struct SystemTrajectory {
    model: ModelSpec,
    seed: u64,
    events: Vec<SpikeEvent>,
    terminal_time: f64,
    pub(crate) repr: Representation,
    snapshots: Option<Vec<Vec<f64>>>,
    probes: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    stats: SimStats,
}

/// Operational-time clock: real time `t = t_c + (τ - θ_c) / β`.
struct Clock {
    t_c: f64,
    theta_c: f64,
    beta: f64,
}

impl Clock {
    #[inline]
    fn real_time(&self, tau: f64) -> f64 {
        if self.beta > 0.0 {
            (self.t_c + (tau - self.theta_c) / self.beta).max(self.t_c)
        } else {
            f64::INFINITY
        }
    }

    fn rebase(&mut self, t: f64, beta: f64) {
        self.theta_c += (t - self.t_c) * self.beta;
        self.t_c = t;
        self.beta = beta;
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate(f64, u32);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

enum Bound {
    Constant(f64),
    Monotone { checkpoint: f64 },
}

fn resolve_bound(model: &ModelSpec, strategy: BoundStrategy) -> Result<Bound, SimError> {
    let monotone_ok = model.rate.is_monotone_in_abs() && model.drift.is_sign_opposing();
    match strategy {
        BoundStrategy::Auto => match model.rate.upper_bound() {
            Some(l) => Ok(Bound::Constant(l)),
            None if monotone_ok => Ok(Bound::Monotone { checkpoint: DEFAULT_CHECKPOINT }),
            None => Err(SimError::NoBound(format!(
                "rate '{}' has no global bound and is not monotone in |x| under a sign-opposing drift",
                model.rate.name()
            ))),
        },
        BoundStrategy::GlobalL => model
            .rate
            .upper_bound()
            .map(Bound::Constant)
            .ok_or_else(|| SimError::NoBound(format!("rate '{}' declares no global bound", model.rate.name()))),
        BoundStrategy::MonotoneDecay { checkpoint } => {
            if !monotone_ok {
                return Err(SimError::NoBound(
                    "monotone-decay needs a rate monotone in |x| and a sign-opposing drift".into(),
                ));
            }
            if !(checkpoint > 0.0) {
                return Err(SimError::NoBound(format!("checkpoint spacing must be positive (got {checkpoint})")));
            }
            Ok(Bound::Monotone { checkpoint })
        }
        BoundStrategy::User(beta) => {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(SimError::NoBound(format!("user bound must be finite and nonnegative (got {beta})")));
            }
            Ok(Bound::Constant(beta))
        }
    }
}

pub(crate) fn uses_linear_path(model: &ModelSpec, force_general: bool) -> Option<f64> {
    let lam = model.drift.linear_rate()?;
    (!force_general && lam * model.horizon <= MAX_LINEAR_EXPONENT).then_some(lam)
}

/// RNG of neuron stream `stream` under master seed `seed`.
pub fn neuron_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates the model on `[0, T]` with default settings.
pub fn simulate(model: &ModelSpec, seed: u64, record: RecordLevel) -> Result<SystemTrajectory, SimError> {
    simulate_with(model, seed, &SimConfig { record, ..SimConfig::default() })
}

pub fn simulate_with(model: &ModelSpec, seed: u64, config: &SimConfig) -> Result<SystemTrajectory, SimError> {
    model.validate()?;
    let n = model.n;
    let horizon = model.horizon;
    let bound = resolve_bound(model, config.strategy)?;
    let streams: Vec<u64> = match &config.streams {
        Some(s) if s.len() == n => s.clone(),
        Some(_) => return Err(SimError::StreamMap),
        None => (0..n as u64).collect(),
    };
    let mut state = match uses_linear_path(model, config.force_general) {
        Some(lam) => State::Linear(LinearState::new(n, model.x0, lam)),
        None => State::General(GeneralState::new(model.drift.clone(), n, model.x0)),
    };
    let rate = &model.rate;
    let monotone_beta = |m: f64| rate.eval(m) * (1.0 + BOUND_INFLATION);
    let (initial_beta, checkpoint) = match bound {
        Bound::Constant(b) => (b, None),
        Bound::Monotone { checkpoint } => (monotone_beta(model.x0.abs()), Some(checkpoint)),
    };
    let mut clock = Clock { t_c: 0.0, theta_c: 0.0, beta: initial_beta };
    let mut stats = SimStats::default();

    let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&s| neuron_rng(seed, s)).collect();
    let mut heap: BinaryHeap<Reverse<Candidate>> = rngs
        .iter_mut()
        .enumerate()
        .map(|(j, rng)| {
            let e: f64 = Exp1.sample(rng);
            Reverse(Candidate(e, j as u32))
        })
        .collect();

    let mut events = Vec::new();
    let mut snapshots = matches!(config.record, RecordLevel::Snapshots).then(|| vec![vec![model.x0; n]]);
    let probe_times: Vec<f64> = match &config.record {
        RecordLevel::Probed(p) => {
            let mut p: Vec<f64> = p.iter().copied().filter(|t| (0.0..=horizon).contains(t)).collect();
            p.sort_by(f64::total_cmp);
            p
        }
        _ => Vec::new(),
    };
    let mut probe_states = Vec::with_capacity(probe_times.len());
    let mut next_checkpoint_index = 1u64;

    while let Some(&Reverse(Candidate(tau, j))) = heap.peek() {
        let t = clock.real_time(tau);
        if let Some(dt) = checkpoint {
            let cp = next_checkpoint_index as f64 * dt;
            if cp < t && cp < horizon {
                clock.rebase(cp, monotone_beta(state.max_abs(cp)));
                stats.bound_refreshes += 1;
                next_checkpoint_index += 1;
                continue;
            }
        }
        if t > horizon {
            break;
        }
        heap.pop();
        let j = j as usize;
        stats.candidates += 1;
        let x = state.value(j, t);
        if !x.is_finite() {
            return Err(SimError::NonFinite { time: t, neuron: j, potential: x });
        }
        let r = rate.eval(x);
        if r > clock.beta * (1.0 + BOUND_TOLERANCE) {
            return Err(SimError::BoundViolation { time: t, neuron: j, potential: x, rate: r, bound: clock.beta });
        }
        let rng = &mut rngs[j];
        let z: f64 = rng.random();
        if z * clock.beta < r {
            let u = model.weights.sample(rng);
            while probe_states.len() < probe_times.len() && probe_times[probe_states.len()] < t {
                probe_states.push(state.snapshot(probe_times[probe_states.len()]));
            }
            let pre = state.apply(t, j, u);
            events.push(SpikeEvent { time: t, neuron: j as u32, weight: u, pre_potential: pre });
            stats.accepted += 1;
            if stats.accepted > config.event_cap {
                return Err(SimError::EventCap { cap: config.event_cap, time: t });
            }
            if let Some(s) = snapshots.as_mut() {
                s.push(state.snapshot(t));
            }
            if checkpoint.is_some() {
                clock.rebase(t, monotone_beta(state.max_abs(t)));
                stats.bound_refreshes += 1;
            }
        }
        let e: f64 = Exp1.sample(&mut rngs[j]);
        heap.push(Reverse(Candidate(tau + e, j as u32)));
    }
    while probe_states.len() < probe_times.len() {
        probe_states.push(state.snapshot(probe_times[probe_states.len()]));
    }

    let repr = match state {
        State::Linear(s) => Representation::Linear(s.log),
        State::General(_) => Representation::General,
    };
    Ok(SystemTrajectory {
        model: model.clone(),
        seed,
        events,
        terminal_time: horizon,
        repr,
        snapshots,
        probes: (!probe_times.is_empty()).then_some((probe_times, probe_states)),
        stats,
    })
}

impl SystemTrajectory {
    /// Rebuilds a trajectory from a stored event log.
    pub fn from_events(
        model: &ModelSpec,
        seed: u64,
        events: Vec<SpikeEvent>,
        linear: bool,
    ) -> Result<Self, SimError> {
        model.validate()?;
        let n = model.n;
        let mut last = 0.0;
        for (k, e) in events.iter().enumerate() {
            if !(e.time >= last && e.time <= model.horizon) {
                return Err(SimError::InvalidLog(format!("event {k} at t = {} is out of order or beyond T", e.time)));
            }
            if e.neuron as usize >= n {
                return Err(SimError::InvalidLog(format!("event {k} names neuron {} but n = {n}", e.neuron)));
            }
            if !(e.weight.is_finite() && e.weight != 0.0) {
                return Err(SimError::InvalidLog(format!("event {k} has weight {}", e.weight)));
            }
            last = e.time;
        }
        let repr = match (linear, model.drift.linear_rate()) {
            (true, Some(lam)) => {
                let mut s = LinearState::new(n, model.x0, lam);
                for e in &events {
                    s.apply(e.time, e.neuron as usize, e.weight);
                }
                Representation::Linear(s.log)
            }
            (true, None) => return Err(SimError::InvalidLog("linear representation needs a linear drift".into())),
            (false, _) => Representation::General,
        };
        let accepted = events.len() as u64;
        Ok(Self {
            model: model.clone(),
            seed,
            events,
            terminal_time: model.horizon,
            repr,
            snapshots: None,
            probes: None,
            stats: SimStats { candidates: 0, accepted, bound_refreshes: 0 },
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn terminal_time(&self) -> f64 {
        self.terminal_time
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// True when the run used the linear-drift representation.
    pub fn is_linear(&self) -> bool {
        matches!(self.repr, Representation::Linear(_))
    }

    /// Post-jump states, index 0 being the initial state.
    pub fn snapshots(&self) -> Option<&[Vec<f64>]> {
        self.snapshots.as_deref()
    }

    /// Probe times and the full state at each.
    pub fn probes(&self) -> Option<(&[f64], &[Vec<f64>])> {
        self.probes.as_ref().map(|(t, s)| (t.as_slice(), s.as_slice()))
    }

    /// Number of events at times `<= t` (`< t` when `left`).
    pub fn events_before(&self, t: f64, left: bool) -> usize {
        if left {
            self.events.partition_point(|e| e.time < t)
        } else {
            self.events.partition_point(|e| e.time <= t)
        }
    }

    /// `X^i_t`, or the left limit `X^i_{t-}` when `left` is set.
    pub fn potential_at(&self, i: usize, t: f64, left: bool) -> Result<f64, SimError> {
        let n = self.n();
        if i >= n {
            return Err(SimError::IndexOutOfRange { index: i, n });
        }
        if !(0.0..=self.terminal_time).contains(&t) {
            return Err(SimError::TimeOutOfRange { time: t, horizon: self.terminal_time });
        }
        let k = self.events_before(t, left);
        Ok(match &self.repr {
            Representation::Linear(log) => {
                let (mut base, mut mark) = (log.x0, 0usize);
                for (m, e) in self.events[..k].iter().enumerate() {
                    if e.neuron as usize == i {
                        base = log.spiker_base[m];
                        mark = m + 1;
                    }
                }
                (base + (log.s_hist[k] - log.s_hist[mark])) * decay(log.lam, t)
            }
            Representation::General => {
                let drift = &self.model.drift;
                let jump_scale = 1.0 / n as f64;
                let (mut x, mut t_last) = (self.model.x0, 0.0);
                for e in &self.events[..k] {
                    x = drift.flow(x, e.time - t_last);
                    if e.neuron as usize != i {
                        x += e.weight * jump_scale;
                    }
                    t_last = e.time;
                }
                drift.flow(x, t - t_last)
            }
        })
    }

    /// Cursor positioned before the first event.
    pub fn cursor(&self) -> StateCursor<'_> {
        let n = self.n();
        let inner = match &self.repr {
            Representation::Linear(log) => CursorState::Linear { base: vec![log.x0; n], mark: vec![0; n] },
            Representation::General => CursorState::General { x: vec![self.model.x0; n], t_last: 0.0 },
        };
        StateCursor { traj: self, k: 0, inner }
    }

    /// All potentials at `t` (left limits when `left`).
    pub fn states_at(&self, t: f64, left: bool) -> Vec<f64> {
        let mut c = self.cursor();
        let k = self.events_before(t, left);
        while c.applied() < k {
            c.advance();
        }
        c.values(t)
    }

    /// Per-neuron jump `X_{T_n} - X_{T_n-}` at event `n`.
    pub fn increments_at(&self, n: usize) -> Vec<f64> {
        let mut c = self.cursor();
        while c.applied() < n {
            c.advance();
        }
        let t = self.events[n].time;
        let before = c.values(t);
        c.advance();
        c.values(t).iter().zip(&before).map(|(a, b)| a - b).collect()
    }

    /// `Σ_i f(X^i_t)`
    pub fn total_rate_at(&self, t: f64) -> f64 {
        self.states_at(t, false).iter().map(|&x| self.model.rate.eval(x)).sum()
    }
}

pub(crate) enum CursorState {
    Linear { base: Vec<f64>, mark: Vec<u32> },
    General { x: Vec<f64>, t_last: f64 },
}

/// Sequential replay of the state, one event at a time.
pub struct StateCursor<'a> {
    traj: &'a SystemTrajectory,
    k: usize,
    pub(crate) inner: CursorState,
}

impl StateCursor<'_> {
    /// Number of events applied so far.
    pub fn applied(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.traj.events.len()
    }

    /// Time interval of the current inter-event segment.
    pub fn segment(&self) -> (f64, f64) {
        let ev = &self.traj.events;
        let t0 = if self.k == 0 { 0.0 } else { ev[self.k - 1].time };
        let t1 = ev.get(self.k).map_or(self.traj.terminal_time, |e| e.time);
        (t0, t1)
    }

    /// `X^i_t` for `t` inside the current segment.
    #[inline]
    pub fn value(&self, i: usize, t: f64) -> f64 {
        match (&self.inner, &self.traj.repr) {
            (CursorState::Linear { base, mark }, Representation::Linear(log)) => {
                (base[i] + (log.s_hist[self.k] - log.s_hist[mark[i] as usize])) * decay(log.lam, t)
            }
            (CursorState::General { x, t_last }, _) => self.traj.model.drift.flow(x[i], t - t_last),
            _ => unreachable!("cursor and representation always match"),
        }
    }

    /// `X^i e^{λt}`, constant over the segment on the linear path.
    #[inline]
    pub(crate) fn scaled(&self, i: usize) -> Option<f64> {
        match (&self.inner, &self.traj.repr) {
            (CursorState::Linear { base, mark }, Representation::Linear(log)) => {
                Some(base[i] + (log.s_hist[self.k] - log.s_hist[mark[i] as usize]))
            }
            _ => None,
        }
    }

    pub fn values(&self, t: f64) -> Vec<f64> {
        (0..self.traj.n()).map(|i| self.value(i, t)).collect()
    }

    /// Applies the next event; returns false when none is left.
    pub fn advance(&mut self) -> bool {
        let Some(e) = self.traj.events.get(self.k) else {
            return false;
        };
        let j = e.neuron as usize;
        match (&mut self.inner, &self.traj.repr) {
            (CursorState::Linear { base, mark }, Representation::Linear(log)) => {
                base[j] = log.spiker_base[self.k];
                mark[j] = (self.k + 1) as u32;
            }
            (CursorState::General { x, t_last }, _) => {
                let drift = &self.traj.model.drift;
                let jump = e.weight / x.len() as f64;
                let dt = e.time - *t_last;
                for (i, xi) in x.iter_mut().enumerate() {
                    let moved = drift.flow(*xi, dt);
                    *xi = if i == j { moved } else { moved + jump };
                }
                *t_last = e.time;
            }
            _ => unreachable!("cursor and representation always match"),
        }
        self.k += 1;
        true
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpikerError {
    #[error("no unique zero increment: {zeros} neurons share the minimal |increment|")]
    Ambiguous { zeros: usize },
    #[error("empty increment vector")]
    Empty,
}

/// `argmin_i |Δ(i)|` for the observed jumps at one event; the minimum must
/// be unique.
pub fn identify_spiker(increments: &[f64]) -> Result<usize, SpikerError> {
    let min = increments.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(SpikerError::Empty);
    }
    let mut hits = increments.iter().enumerate().filter(|(_, d)| d.abs() == min);
    let (first, _) = hits.next().expect("minimum attained");
    let others = hits.count();
    if others > 0 {
        return Err(SpikerError::Ambiguous { zeros: others + 1 });
    }
    Ok(first)
}
