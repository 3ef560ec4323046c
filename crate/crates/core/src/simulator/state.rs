//! Per-run neuron state. The linear path stores, for `b(x) = -λx`,
//! `X^i_t = e^{-λt} (base_i + S_t - S_{mark_i})` where `S_t` accumulates
//! `e^{λ T_n} U_n / N` over all events; a spike only rebases the spiker, so
//! every event costs O(log N).

use std::collections::BTreeMap;

use crate::model::DriftSpec;

/// Largest `λT` for which `e^{λT}` is kept in the shared accumulator.
pub(crate) const MAX_LINEAR_EXPONENT: f64 = 600.0;

#[inline]
pub(crate) fn growth(lam: f64, t: f64) -> f64 {
    if lam == 0.0 {
        1.0
    } else {
        (lam * t).exp()
    }
}

#[inline]
pub(crate) fn decay(lam: f64, t: f64) -> f64 {
    if lam == 0.0 {
        1.0
    } else {
        (-lam * t).exp()
    }
}

#[inline]
pub(crate) fn increment(lam: f64, t: f64, u: f64, n: usize) -> f64 {
    growth(lam, t) * u / n as f64
}

/// Monotone map of f64 onto u64 for ordered keys.
#[inline]
fn key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[inline]
fn unkey(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

/// Event-indexed record of the linear representation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearLog {
    pub lam: f64,
    pub x0: f64,
    /// `S` after `k` events, `k = 0..=events`.
    pub s_hist: Vec<f64>,
    /// Spiker's new base after each event (its mark becomes `n + 1`).
    pub spiker_base: Vec<f64>,
    /// Range of `base_i - S_{mark_i}` over all neurons after `k` events.
    pub offsets: Vec<(f64, f64)>,
}

impl LinearLog {
    pub fn events(&self) -> usize {
        self.spiker_base.len()
    }

    /// Range of the scaled potentials `X e^{λt}` during segment `k`.
    pub fn band(&self, k: usize) -> (f64, f64) {
        let (lo, hi) = self.offsets[k];
        (lo + self.s_hist[k], hi + self.s_hist[k])
    }
}

pub(crate) struct LinearState {
    pub n: usize,
    pub base: Vec<f64>,
    pub mark: Vec<u32>,
    offsets: BTreeMap<u64, u32>,
    pub log: LinearLog,
}

impl LinearState {
    pub fn new(n: usize, x0: f64, lam: f64) -> Self {
        let mut offsets = BTreeMap::new();
        offsets.insert(key(x0), n as u32);
        Self {
            n,
            base: vec![x0; n],
            mark: vec![0; n],
            offsets,
            log: LinearLog { lam, x0, s_hist: vec![0.0], spiker_base: Vec::new(), offsets: vec![(x0, x0)] },
        }
    }

    #[inline]
    fn s(&self) -> f64 {
        *self.log.s_hist.last().expect("non-empty")
    }

    #[inline]
    pub fn scaled(&self, i: usize) -> f64 {
        self.base[i] + (self.s() - self.log.s_hist[self.mark[i] as usize])
    }

    #[inline]
    pub fn value(&self, i: usize, t: f64) -> f64 {
        self.scaled(i) * decay(self.log.lam, t)
    }

    fn offset(&self, i: usize) -> f64 {
        self.base[i] - self.log.s_hist[self.mark[i] as usize]
    }

    fn remove_offset(&mut self, c: f64) {
        let k = key(c);
        let count = self.offsets.get_mut(&k).expect("offset present");
        *count -= 1;
        if *count == 0 {
            self.offsets.remove(&k);
        }
    }

    /// Applies the event `(t, j, u)` and returns the spiker's pre-jump value.
    pub fn apply(&mut self, t: f64, j: usize, u: f64) -> f64 {
        let old = self.offset(j);
        let scaled = self.scaled(j);
        let pre = scaled * decay(self.log.lam, t);
        let s_new = self.s() + increment(self.log.lam, t, u, self.n);
        self.log.s_hist.push(s_new);
        let k = self.log.spiker_base.len();
        self.base[j] = scaled;
        self.mark[j] = (k + 1) as u32;
        self.log.spiker_base.push(scaled);
        self.remove_offset(old);
        *self.offsets.entry(key(self.offset(j))).or_insert(0) += 1;
        let lo = unkey(*self.offsets.keys().next().expect("non-empty"));
        let hi = unkey(*self.offsets.keys().next_back().expect("non-empty"));
        self.log.offsets.push((lo, hi));
        pre
    }

    pub fn max_abs(&self, t: f64) -> f64 {
        let (lo, hi) = self.log.band(self.log.events());
        lo.abs().max(hi.abs()) * decay(self.log.lam, t)
    }

    pub fn snapshot(&self, t: f64) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, t)).collect()
    }
}

/// Potentials of all neurons at the time of the last event.
pub(crate) struct GeneralState {
    pub drift: DriftSpec,
    pub x: Vec<f64>,
    pub t_last: f64,
}

impl GeneralState {
    pub fn new(drift: DriftSpec, n: usize, x0: f64) -> Self {
        Self { drift, x: vec![x0; n], t_last: 0.0 }
    }

    #[inline]
    pub fn value(&self, i: usize, t: f64) -> f64 {
        self.drift.flow(self.x[i], t - self.t_last)
    }

    pub fn apply(&mut self, t: f64, j: usize, u: f64) -> f64 {
        let jump = u / self.x.len() as f64;
        let dt = t - self.t_last;
        let mut pre = 0.0;
        for (i, x) in self.x.iter_mut().enumerate() {
            let moved = self.drift.flow(*x, dt);
            if i == j {
                pre = moved;
                *x = moved;
            } else {
                *x = moved + jump;
            }
        }
        self.t_last = t;
        pre
    }

    pub fn max_abs(&self, t: f64) -> f64 {
        (0..self.x.len()).map(|i| self.value(i, t).abs()).fold(0.0, f64::max)
    }

    pub fn snapshot(&self, t: f64) -> Vec<f64> {
        (0..self.x.len()).map(|i| self.value(i, t)).collect()
    }
}

pub(crate) enum State {
    Linear(LinearState),
    General(GeneralState),
}

impl State {
    #[inline]
    pub fn value(&self, i: usize, t: f64) -> f64 {
        match self {
            State::Linear(s) => s.value(i, t),
            State::General(s) => s.value(i, t),
        }
    }

    pub fn apply(&mut self, t: f64, j: usize, u: f64) -> f64 {
        match self {
            State::Linear(s) => s.apply(t, j, u),
            State::General(s) => s.apply(t, j, u),
        }
    }

    pub fn max_abs(&self, t: f64) -> f64 {
        match self {
            State::Linear(s) => s.max_abs(t),
            State::General(s) => s.max_abs(t),
        }
    }

    pub fn snapshot(&self, t: f64) -> Vec<f64> {
        match self {
            State::Linear(s) => s.snapshot(t),
            State::General(s) => s.snapshot(t),
        }
    }
}
