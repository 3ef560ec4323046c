//! Event-log CSV export and the versioned binary trajectory format.
//!
//! Binary layout (little endian): magic, `u32` version, `u32` flags
//! (bit 0: linear representation), `u64` seed, `u64` n, `f64` horizon,
//! `f64` x0, `u64` config length + UTF-8 config text, `u64` event count,
//! then per event `f64` time, `u32` neuron, `f64` weight, `f64` pre-jump
//! potential.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{SimError, SpikeEvent, SystemTrajectory};
use crate::model::ModelSpec;

pub const TRAJECTORY_MAGIC: [u8; 8] = *b"SPKRTRAJ";
pub const TRAJECTORY_VERSION: u32 = 1;
const FLAG_LINEAR: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a trajectory file (bad magic)")]
    BadMagic,
    #[error("trajectory format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

/// Writes `n,time,neuron,weight,pre_potential` rows.
pub fn write_events_csv<W: Write>(mut out: W, traj: &SystemTrajectory) -> io::Result<()> {
    writeln!(out, "n,time,neuron,weight,pre_potential")?;
    for (k, e) in traj.events().iter().enumerate() {
        writeln!(out, "{k},{},{},{},{}", e.time, e.neuron, e.weight, e.pre_potential)?;
    }
    Ok(())
}

pub fn write_trajectory<W: Write>(mut out: W, traj: &SystemTrajectory, config_text: &str) -> io::Result<()> {
    let m = traj.model();
    out.write_all(&TRAJECTORY_MAGIC)?;
    out.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    let flags = if traj.is_linear() { FLAG_LINEAR } else { 0 };
    out.write_all(&flags.to_le_bytes())?;
    out.write_all(&traj.seed().to_le_bytes())?;
    out.write_all(&(m.n as u64).to_le_bytes())?;
    out.write_all(&m.horizon.to_le_bytes())?;
    out.write_all(&m.x0.to_le_bytes())?;
    out.write_all(&(config_text.len() as u64).to_le_bytes())?;
    out.write_all(config_text.as_bytes())?;
    out.write_all(&(traj.events().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(28 * traj.events().len());
    for e in traj.events() {
        buf.extend_from_slice(&e.time.to_le_bytes());
        buf.extend_from_slice(&e.neuron.to_le_bytes());
        buf.extend_from_slice(&e.weight.to_le_bytes());
        buf.extend_from_slice(&e.pre_potential.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()
}

/// Decoded trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrajectory {
    pub version: u32,
    pub linear: bool,
    pub seed: u64,
    pub n: usize,
    pub horizon: f64,
    pub x0: f64,
    pub config_text: String,
    pub events: Vec<SpikeEvent>,
}

fn take<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K], TrajectoryIoError> {
    let mut b = [0u8; K];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TrajectoryIoError::Malformed("truncated file".into()),
        _ => TrajectoryIoError::Io(e),
    })?;
    Ok(b)
}

pub fn read_trajectory<R: Read>(mut r: R) -> Result<StoredTrajectory, TrajectoryIoError> {
    let magic: [u8; 8] = take(&mut r).map_err(|_| TrajectoryIoError::BadMagic)?;
    if magic != TRAJECTORY_MAGIC {
        return Err(TrajectoryIoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != TRAJECTORY_VERSION {
        return Err(TrajectoryIoError::Version { found: version, expected: TRAJECTORY_VERSION });
    }
    let flags = u32::from_le_bytes(take(&mut r)?);
    let seed = u64::from_le_bytes(take(&mut r)?);
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let horizon = f64::from_le_bytes(take(&mut r)?);
    let x0 = f64::from_le_bytes(take(&mut r)?);
    let len = u64::from_le_bytes(take(&mut r)?);
    let mut text = Vec::new();
    (&mut r).take(len).read_to_end(&mut text)?;
    if text.len() as u64 != len {
        return Err(TrajectoryIoError::Malformed("truncated configuration block".into()));
    }
    let config_text =
        String::from_utf8(text).map_err(|_| TrajectoryIoError::Malformed("configuration is not UTF-8".into()))?;
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let time = f64::from_le_bytes(take(&mut r)?);
        let neuron = u32::from_le_bytes(take(&mut r)?);
        let weight = f64::from_le_bytes(take(&mut r)?);
        let pre_potential = f64::from_le_bytes(take(&mut r)?);
        events.push(SpikeEvent { time, neuron, weight, pre_potential });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TrajectoryIoError::Malformed("trailing bytes after the event block".into()));
    }
    Ok(StoredTrajectory { version, linear: flags & FLAG_LINEAR != 0, seed, n, horizon, x0, config_text, events })
}

impl StoredTrajectory {
    /// Rebuilds the trajectory for `model`, which must match the stored
    /// population size, horizon and initial potential.
    pub fn into_trajectory(self, model: &ModelSpec) -> Result<SystemTrajectory, SimError> {
        if model.n != self.n || model.horizon != self.horizon || model.x0 != self.x0 {
            return Err(SimError::InvalidLog(format!(
                "stored run has n = {}, T = {}, x0 = {} but the model has n = {}, T = {}, x0 = {}",
                self.n, self.horizon, self.x0, model.n, model.horizon, model.x0
            )));
        }
        SystemTrajectory::from_events(model, self.seed, self.events, self.linear)
    }
}
