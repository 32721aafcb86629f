//! Seeded random scenarios for sweeps and oracle checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Band, Mode, NodeId};
use crate::formation::ChannelPolicy;
use crate::scenario::{
    AttenuationSpec, FlowSpec, HardwareApSpec, LogDistanceSpec, NodeSpec, PositionSpec, ProtocolParams, Scenario, SimSpec,
    TrafficSpec, DEFAULT_BIT_RATE_BPS, DEFAULT_TX_POWER_DBM,
};
use crate::traffic::Destination;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    /// Mesh nodes, hardware AP excluded.
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub min_flows: usize,
    pub max_flows: usize,
    /// Side of the square the nodes are dropped into, metres.
    pub area_m: f64,
    pub offered_bps: f64,
    pub duration_s: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            min_nodes: 3,
            max_nodes: 8,
            min_flows: 2,
            max_flows: 6,
            area_m: 80.0,
            offered_bps: 10e6,
            duration_s: 20.0,
        }
    }
}

impl Limits {
    /// Bounds used for solver-versus-oracle checks.
    pub fn small(max_nodes: usize, max_flows: usize) -> Self {
        Limits {
            min_nodes: 1.min(max_nodes),
            max_nodes,
            min_flows: 0,
            max_flows,
            duration_s: 10.0,
            ..Limits::default()
        }
    }
}

/// A dual-band scenario drawn from `seed`: nodes at random positions under
/// log-distance attenuation, saturating flows towards the internet or other
/// nodes, all starting once formation has settled.
pub fn random_scenario(seed: u64, limits: &Limits) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(limits.min_nodes..=limits.max_nodes.max(limits.min_nodes));
    let half = limits.area_m / 2.0;
    let mut position = vec![PositionSpec { id: NodeId(0), x: 0.0, y: 0.0 }];
    let mut nodes = Vec::with_capacity(n);
    for i in 1..=n {
        let id = NodeId(i as u32);
        position.push(PositionSpec { id, x: round2(rng.random_range(-half..=half)), y: round2(rng.random_range(-half..=half)) });
        nodes.push(NodeSpec {
            id,
            start_s: round2(rng.random_range(0.0..1.0)),
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            bit_rate_bps: DEFAULT_BIT_RATE_BPS,
        });
    }
    let ids: Vec<NodeId> = nodes.iter().map(|s| s.id).collect();
    let flow_count = if ids.is_empty() { 0 } else { rng.random_range(limits.min_flows..=limits.max_flows.max(limits.min_flows)) };
    let start = (limits.duration_s / 4.0).max(3.0).min(limits.duration_s);
    let mut flows = Vec::with_capacity(flow_count);
    for id in 1..=flow_count {
        let src = *ids.choose(&mut rng).expect("non-empty");
        let dst = if ids.len() > 1 && rng.random_bool(0.3) {
            let others: Vec<NodeId> = ids.iter().copied().filter(|d| *d != src).collect();
            Destination::Node(*others.choose(&mut rng).expect("non-empty"))
        } else {
            Destination::Internet
        };
        flows.push(FlowSpec { id: id as u32, src, dst, offered_bps: limits.offered_bps, start_s: start, stop_s: None });
    }
    Scenario {
        name: format!("random_{seed}"),
        mode: Mode::DualBand,
        benchmark_channels: ChannelPolicy::Shared,
        hardware_ap: HardwareApSpec {
            id: NodeId(0),
            band: Band::Band58,
            channel: 36,
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            bit_rate_bps: DEFAULT_BIT_RATE_BPS,
        },
        nodes,
        attenuation: AttenuationSpec {
            default_db: None,
            log_distance: Some(LogDistanceSpec { pl0_db: 40.0, exponent: 3.0, d0_m: 1.0 }),
            position,
            link: Vec::new(),
        },
        interferers: Vec::new(),
        traffic: TrafficSpec { flows },
        services: Vec::new(),
        dynamism: Vec::new(),
        protocol: ProtocolParams::default(),
        sim: SimSpec { duration_s: limits.duration_s, seed, window: None, check_invariants: true },
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
