//! Received signal strength, frame error rate, reachability and the
//! carrier-sense contention structure derived from an attenuation matrix.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{Band, Channel, NodeId};

/// Symmetric attenuation (dB) between nodes and interferers. Missing or
/// infinite entries mean "disconnected"; the diagonal is zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttenuationMatrix {
    entries: BTreeMap<(NodeId, NodeId), f64>,
}

impl AttenuationMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn set(&mut self, a: NodeId, b: NodeId, db: f64) {
        if a != b {
            self.entries.insert(Self::key(a, b), db);
        }
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.entries.get(&Self::key(a, b)).copied().unwrap_or(f64::INFINITY)
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        a == b || self.entries.contains_key(&Self::key(a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.entries.iter().map(|(&(a, b), &db)| (a, b, db))
    }
}

/// Log-distance path loss: `pl0 + 10·n·log10(d/d0)`, flat at `pl0` inside `d0`.
pub fn log_distance_attenuation(distance_m: f64, pl0_db: f64, exponent: f64, d0_m: f64) -> f64 {
    if distance_m <= d0_m {
        pl0_db
    } else {
        pl0_db + 10.0 * exponent * (distance_m / d0_m).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    pub rx_sensitivity_dbm: f64,
    pub cs_threshold_dbm: f64,
    pub fer_clear_dbm: f64,
    pub fer_floor_dbm: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            rx_sensitivity_dbm: -82.0,
            cs_threshold_dbm: -82.0,
            fer_clear_dbm: -70.0,
            fer_floor_dbm: -90.0,
        }
    }
}

impl PropagationParams {
    pub fn is_valid(&self) -> bool {
        let all_finite = [self.rx_sensitivity_dbm, self.cs_threshold_dbm, self.fer_clear_dbm, self.fer_floor_dbm]
            .iter()
            .all(|v| v.is_finite());
        all_finite
            && self.fer_floor_dbm < self.fer_clear_dbm
            && self.rx_sensitivity_dbm <= self.cs_threshold_dbm
            && self.cs_threshold_dbm <= self.fer_clear_dbm
    }

    pub fn senses(&self, rssi: Option<f64>) -> bool {
        rssi.is_some_and(|r| r >= self.cs_threshold_dbm)
    }
}

/// Received power; `None` is the no-signal sentinel for a disconnected pair.
pub fn rssi(tx_power_dbm: f64, attenuation_db: f64) -> Option<f64> {
    if attenuation_db.is_finite() {
        Some(tx_power_dbm - attenuation_db)
    } else {
        None
    }
}

/// Piecewise-linear frame error rate: 1 at or below `fer_floor`, 0 at or
/// above `fer_clear`.
pub fn frame_error_rate(rssi: Option<f64>, p: &PropagationParams) -> f64 {
    let Some(r) = rssi else { return 1.0 };
    if r >= p.fer_clear_dbm {
        0.0
    } else if r <= p.fer_floor_dbm {
        1.0
    } else {
        (p.fer_clear_dbm - r) / (p.fer_clear_dbm - p.fer_floor_dbm)
    }
}

pub fn reachable(rssi: Option<f64>, p: &PropagationParams) -> bool {
    rssi.is_some_and(|r| r >= p.rx_sensitivity_dbm)
}

/// A radio identified by its node and slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxKey {
    pub node: NodeId,
    pub radio: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmitter {
    pub key: TxKey,
    pub channel: Channel,
    pub tx_power_dbm: f64,
}

/// External airtime occupant: a non-mesh device on a band (or one channel).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfererState {
    pub id: NodeId,
    pub band: Band,
    pub channel: Option<Channel>,
    pub utilization: f64,
    pub tx_power_dbm: f64,
}

impl InterfererState {
    pub fn occupies(&self, channel: &Channel) -> bool {
        match self.channel {
            Some(c) => c == *channel,
            None => self.band == channel.band,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContentionClique {
    pub channel: Channel,
    pub members: BTreeSet<TxKey>,
    /// Interferers sensed by at least one member.
    pub interferers: BTreeSet<NodeId>,
    pub external_utilization: f64,
}

pub fn mutually_sense(a: &Transmitter, b: &Transmitter, matrix: &AttenuationMatrix, p: &PropagationParams) -> bool {
    if a.channel != b.channel {
        return false;
    }
    let att = matrix.get(a.key.node, b.key.node);
    p.senses(rssi(a.tx_power_dbm, att)) && p.senses(rssi(b.tx_power_dbm, att))
}

pub fn senses_interferer(
    node: NodeId,
    channel: &Channel,
    i: &InterfererState,
    matrix: &AttenuationMatrix,
    p: &PropagationParams,
) -> bool {
    i.utilization > 0.0 && i.occupies(channel) && p.senses(rssi(i.tx_power_dbm, matrix.get(i.id, node)))
}

/// Summed utilization of the interferers sensed by any of `members`, capped at 1.
pub fn external_utilization<'a>(
    channel: &Channel,
    members: impl Iterator<Item = &'a NodeId> + Clone,
    interferers: &[InterfererState],
    matrix: &AttenuationMatrix,
    p: &PropagationParams,
) -> (BTreeSet<NodeId>, f64) {
    let mut ids = BTreeSet::new();
    let mut sum = 0.0;
    for i in interferers {
        if members.clone().any(|n| senses_interferer(*n, channel, i, matrix, p)) && ids.insert(i.id) {
            sum += i.utilization;
        }
    }
    (ids, sum.min(1.0))
}

/// Groups active transmitters into maximal mutually-carrier-sensing sets per
/// channel (Bron–Kerbosch with pivoting). Transmitters on different channels,
/// and therefore different bands, never share a clique.
pub fn build_contention_cliques(
    transmitters: &[Transmitter],
    interferers: &[InterfererState],
    matrix: &AttenuationMatrix,
    p: &PropagationParams,
) -> Vec<ContentionClique> {
    let mut by_channel: BTreeMap<Channel, Vec<&Transmitter>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for t in transmitters {
        if seen.insert(t.key) {
            by_channel.entry(t.channel).or_default().push(t);
        }
    }

    let mut out = Vec::new();
    for (channel, txs) in by_channel {
        let n = txs.len();
        let adj: Vec<BTreeSet<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && mutually_sense(txs[i], txs[j], matrix, p)).collect())
            .collect();
        let mut found = Vec::new();
        bron_kerbosch(&adj, BTreeSet::new(), (0..n).collect(), BTreeSet::new(), &mut found);
        let mut cliques: Vec<BTreeSet<TxKey>> =
            found.into_iter().map(|set| set.into_iter().map(|i| txs[i].key).collect()).collect();
        cliques.sort();
        for members in cliques {
            let nodes: Vec<NodeId> = members.iter().map(|k| k.node).collect();
            let (ids, ext) = external_utilization(&channel, nodes.iter(), interferers, matrix, p);
            out.push(ContentionClique { channel, members, interferers: ids, external_utilization: ext });
        }
    }
    out
}

fn bron_kerbosch(
    adj: &[BTreeSet<usize>],
    r: BTreeSet<usize>,
    mut p: BTreeSet<usize>,
    mut x: BTreeSet<usize>,
    out: &mut Vec<BTreeSet<usize>>,
) {
    if p.is_empty() && x.is_empty() {
        out.push(r);
        return;
    }
    let pivot = p.union(&x).max_by_key(|u| adj[**u].intersection(&p).count()).copied();
    let candidates: Vec<usize> = match pivot {
        Some(u) => p.difference(&adj[u]).copied().collect(),
        None => p.iter().copied().collect(),
    };
    for v in candidates {
        let mut r2 = r.clone();
        r2.insert(v);
        let p2 = p.intersection(&adj[v]).copied().collect();
        let x2 = x.intersection(&adj[v]).copied().collect();
        bron_kerbosch(adj, r2, p2, x2, out);
        p.remove(&v);
        x.insert(v);
    }
}
