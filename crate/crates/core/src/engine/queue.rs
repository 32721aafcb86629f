//! Time-ordered event queue with insertion-order tie breaking.

use std::collections::BTreeMap;
use std::fmt;

use crate::domain::{Channel, NodeId};
use crate::handoff::HandoffKind;
use crate::traffic::RequestId;

/// Simulated time in microseconds.
pub type Micros = u64;

pub fn to_micros(s: f64) -> Micros {
    if s <= 0.0 {
        0
    } else {
        (s * 1e6).round() as Micros
    }
}

pub fn to_secs(t: Micros) -> f64 {
    t as f64 / 1e6
}

pub fn fmt_time(t: Micros) -> String {
    format!("{}.{:06}", t / 1_000_000, t % 1_000_000)
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    NodeStart(NodeId),
    ScanComplete(NodeId),
    AssocComplete { node: NodeId, ap: NodeId, upstream: Channel, serving: Channel, kind: Option<HandoffKind>, epoch: u64 },
    BeaconCheck(NodeId),
    HandoffCheck(NodeId),
    MetricSample,
    ControlFrame { node: NodeId, channel: Channel, begin: bool, frame: u64 },
    Dynamism(usize),
    FlowStart(u32),
    FlowStop(u32),
    DiscoveryDone { flow: u32, request: RequestId },
    SimEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::NodeStart(_) => "NodeStart",
            EventKind::ScanComplete(_) => "ScanComplete",
            EventKind::AssocComplete { .. } => "AssocComplete",
            EventKind::BeaconCheck(_) => "BeaconCheck",
            EventKind::HandoffCheck(_) => "HandoffCheck",
            EventKind::MetricSample => "MetricSample",
            EventKind::ControlFrame { .. } => "ControlFrame",
            EventKind::Dynamism(_) => "Dynamism",
            EventKind::FlowStart(_) => "FlowStart",
            EventKind::FlowStop(_) => "FlowStop",
            EventKind::DiscoveryDone { .. } => "DiscoveryDone",
            EventKind::SimEnd => "SimEnd",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::NodeStart(n) | EventKind::ScanComplete(n) | EventKind::BeaconCheck(n) | EventKind::HandoffCheck(n) => {
                write!(f, "{} node={n}", self.name())
            }
            EventKind::AssocComplete { node, ap, upstream, serving, kind, .. } => {
                let k = match kind {
                    None => "join",
                    Some(HandoffKind::Soft) => "soft",
                    Some(HandoffKind::Hard) => "hard",
                };
                write!(f, "AssocComplete node={node} ap={ap} up={upstream} serve={serving} via={k}")
            }
            EventKind::ControlFrame { node, channel, begin, frame } => {
                write!(f, "ControlFrame node={node} ch={channel} {} frame={frame}", if *begin { "begin" } else { "end" })
            }
            EventKind::Dynamism(i) => write!(f, "Dynamism index={i}"),
            EventKind::FlowStart(id) | EventKind::FlowStop(id) => write!(f, "{} flow={id}", self.name()),
            EventKind::DiscoveryDone { flow, request } => {
                write!(f, "DiscoveryDone flow={flow} req={}:{}", request.origin, request.seq)
            }
            EventKind::MetricSample | EventKind::SimEnd => f.write_str(self.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: Micros,
    pub seq: u64,
    pub kind: EventKind,
}

/// Pops events in `(time, seq)` order; `seq` increases with every push.
#[derive(Clone, Debug, Default)]
pub struct EventQueue {
    events: BTreeMap<(Micros, u64), EventKind>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Micros, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.insert((time, seq), kind);
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.events.pop_first().map(|((time, seq), kind)| Event { time, seq, kind })
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.events.keys().next().map(|k| k.0)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_insertion() {
        let mut q = EventQueue::default();
        q.push(5, EventKind::SimEnd);
        q.push(1, EventKind::FlowStart(2));
        q.push(1, EventKind::FlowStart(1));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.seq)).collect();
        assert_eq!(order, vec![(1, 1), (1, 2), (5, 0)]);
    }

    #[test]
    fn time_conversion() {
        assert_eq!(to_micros(10.3), 10_300_000);
        assert_eq!(fmt_time(10_300_000), "10.300000");
        assert_eq!(to_secs(1_500_000), 1.5);
    }
}
