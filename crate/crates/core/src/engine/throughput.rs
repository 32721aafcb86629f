//! Average network throughput over a measurement window: data bits received
//! by all nodes in the window, divided by window length times node count.

use std::collections::BTreeMap;

use crate::domain::NodeId;

/// Constant-rate reception by `node` over `[start_s, end_s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reception {
    pub node: NodeId,
    pub flow: u32,
    pub start_s: f64,
    pub end_s: f64,
    pub rate_bps: f64,
}

impl Reception {
    /// Bits received inside `[from, to)`.
    pub fn bits_within(&self, from: f64, to: f64) -> f64 {
        let lo = self.start_s.max(from);
        let hi = self.end_s.min(to);
        if hi > lo {
            self.rate_bps * (hi - lo)
        } else {
            0.0
        }
    }
}

/// Everything delivered during a run, as piecewise-constant segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeliveryLog {
    pub receptions: Vec<Reception>,
}

impl DeliveryLog {
    pub fn push(&mut self, r: Reception) {
        if r.rate_bps > 0.0 && r.end_s > r.start_s {
            self.receptions.push(r);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

impl Window {
    pub fn length(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThroughputReport {
    pub window_s: f64,
    pub window_start_s: f64,
    pub node_count: usize,
    pub received_bits: BTreeMap<NodeId, f64>,
    pub average_bps: f64,
    /// Mean delivered rate of each flow over the window.
    pub flow_rates: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThroughputError {
    #[error("measurement window has zero or negative length")]
    EmptyWindow,
    #[error("node count must be positive")]
    NoNodes,
}

/// Applies the average-throughput formula to the receptions in `window`.
/// `nodes` is the set of nodes counted in N; every one gets an entry in the
/// per-node table even if it received nothing.
pub fn throughput(log: &DeliveryLog, window: Window, nodes: &[NodeId]) -> Result<ThroughputReport, ThroughputError> {
    let t = window.length();
    if !(t > 0.0) {
        return Err(ThroughputError::EmptyWindow);
    }
    if nodes.is_empty() {
        return Err(ThroughputError::NoNodes);
    }
    let mut received: BTreeMap<NodeId, f64> = nodes.iter().map(|n| (*n, 0.0)).collect();
    let mut per_flow: BTreeMap<u32, f64> = BTreeMap::new();
    for r in &log.receptions {
        let bits = r.bits_within(window.start_s, window.end_s);
        *per_flow.entry(r.flow).or_default() += bits;
        if let Some(v) = received.get_mut(&r.node) {
            *v += bits;
        }
    }
    let total: f64 = received.values().sum();
    Ok(ThroughputReport {
        window_s: t,
        window_start_s: window.start_s,
        node_count: received.len(),
        average_bps: total / (t * received.len() as f64),
        received_bits: received,
        flow_rates: per_flow.into_iter().map(|(f, bits)| (f, bits / t)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rx(node: u32, start: f64, end: f64, rate: f64) -> Reception {
        Reception { node: NodeId(node), flow: node, start_s: start, end_s: end, rate_bps: rate }
    }

    fn ids(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn two_nodes_one_megabit_each() {
        let mut log = DeliveryLog::default();
        log.push(rx(0, 0.0, 1.0, 1e6));
        log.push(rx(1, 0.0, 1.0, 1e6));
        let r = throughput(&log, Window { start_s: 0.0, end_s: 1.0 }, &ids(2)).unwrap();
        assert_eq!(r.average_bps, 1e6);
    }

    #[test]
    fn one_receiver_of_four() {
        let mut log = DeliveryLog::default();
        log.push(rx(2, 0.0, 2.0, 2e6));
        let r = throughput(&log, Window { start_s: 0.0, end_s: 2.0 }, &ids(4)).unwrap();
        assert_eq!(r.received_bits[&NodeId(2)], 4e6);
        assert_eq!(r.average_bps, 0.5e6);
    }

    #[test]
    fn nothing_received_and_bad_windows() {
        let r = throughput(&DeliveryLog::default(), Window { start_s: 0.0, end_s: 3.0 }, &ids(3)).unwrap();
        assert_eq!(r.average_bps, 0.0);
        assert_eq!(throughput(&DeliveryLog::default(), Window { start_s: 1.0, end_s: 1.0 }, &ids(3)), Err(ThroughputError::EmptyWindow));
        assert_eq!(throughput(&DeliveryLog::default(), Window { start_s: 0.0, end_s: 1.0 }, &[]), Err(ThroughputError::NoNodes));
    }

    #[test]
    fn receptions_are_clipped_to_the_window() {
        let mut log = DeliveryLog::default();
        log.push(rx(0, 0.0, 10.0, 1e6));
        let r = throughput(&log, Window { start_s: 5.0, end_s: 7.0 }, &ids(1)).unwrap();
        assert_eq!(r.received_bits[&NodeId(0)], 2e6);
        assert_eq!(r.flow_rates[&0], 1e6);
    }
}
