use serde::Serialize;

use crate::flow::FlowSolution;
use crate::simulator::SystemTrajectory;

/// Fluctuation process `V^i_t = √N (X^i_t - x_t)` on a probe grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongApproxReport {
    pub probes: Vec<f64>,
    /// `values[i][k] = V^i` at `probes[k]`
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
    /// `sup_k |V^i_{t_k}|` per neuron
    pub sup: Vec<f64>,
    /// `(p, mean_i sup^p)` for `p = 1, 2, 4`
    pub moments: Vec<(u32, f64)>,
}

impl StrongApproxReport {
    pub fn moment(&self, p: u32) -> Option<f64> {
        self.moments.iter().find(|(q, _)| *q == p).map(|(_, m)| *m)
    }
}

pub fn strong_approx_diag(traj: &SystemTrajectory, flow: &FlowSolution, probes: &[f64]) -> StrongApproxReport {
    let n = traj.n();
    let root_n = (n as f64).sqrt();
    let mut probes: Vec<f64> = probes.iter().copied().filter(|t| (0.0..=traj.terminal_time()).contains(t)).collect();
    probes.sort_by(f64::total_cmp);
    let mut values = vec![Vec::with_capacity(probes.len()); n];
    let mut cursor = traj.cursor();
    let events = traj.events();
    for &t in &probes {
        while cursor.applied() < events.len() && events[cursor.applied()].time <= t {
            cursor.advance();
        }
        let x = flow.eval(t);
        for (i, v) in values.iter_mut().enumerate() {
            v.push(root_n * (cursor.value(i, t) - x));
        }
    }
    let sup: Vec<f64> = values.iter().map(|v| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))).collect();
    let moments = [1u32, 2, 4]
        .iter()
        .map(|&p| (p, sup.iter().map(|s| s.powi(p as i32)).sum::<f64>() / n as f64))
        .collect();
    StrongApproxReport { probes, values, sup, moments }
}
