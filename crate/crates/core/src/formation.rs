//! Network formation: beaconing APs, scanning, AP selection, association and
//! activation of the joining node's own serving radio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AssocState, Band, Channel, Mode, Node, NodeId, RadioRole};
use crate::metric::{link_quality, rank_candidates, AirtimeParams, LinkObservation, ScoredAp};
use crate::radio::{frame_error_rate, reachable, rssi, AttenuationMatrix, PropagationParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormationParams {
    pub beacon_interval_s: f64,
    pub scan_duration_s: f64,
    pub retry_backoff_s: f64,
    pub assoc_delay_s: f64,
    pub channel_switch_s: f64,
}

impl Default for FormationParams {
    fn default() -> Self {
        FormationParams {
            beacon_interval_s: 0.1,
            scan_duration_s: 0.02,
            retry_backoff_s: 1.0,
            assoc_delay_s: 0.01,
            channel_switch_s: 0.005,
        }
    }
}

/// How serving channels are picked in single-band benchmark mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPolicy {
    /// Every radio on channel 1.
    #[default]
    Shared,
    /// Least-utilized channel, avoiding the node's own upstream channel.
    Assigned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Beacon {
    pub network_name: String,
    pub ap: NodeId,
    pub band: Band,
    pub channel: Channel,
    pub advertised_load: f64,
    pub is_hardware: bool,
}

pub fn emit_beacon(ap: &Node, advertised_load: f64, network_name: &str) -> Option<Beacon> {
    if !ap.is_beaconing() {
        return None;
    }
    let channel = ap.serving_channel()?;
    Some(Beacon {
        network_name: network_name.to_string(),
        ap: ap.id,
        band: channel.band,
        channel,
        advertised_load,
        is_hardware: ap.is_hardware_ap(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanEntry {
    pub beacon: Beacon,
    pub rssi_dbm: f64,
    pub observation: LinkObservation,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanResult {
    pub entries: Vec<ScanEntry>,
    /// Busy fraction observed on each scanned channel.
    pub channel_utilization: BTreeMap<Channel, f64>,
}

impl ScanResult {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct ScanEnv<'a> {
    pub nodes: &'a BTreeMap<NodeId, Node>,
    pub matrix: &'a AttenuationMatrix,
    pub propagation: &'a PropagationParams,
}

/// Hears every reachable beacon on the requested bands. `beacons` are the
/// beacons currently on air; `utilization` reports the observed busy fraction
/// per channel.
pub fn scan(
    scanner: &Node,
    bands: &[Band],
    beacons: &[Beacon],
    env: &ScanEnv<'_>,
    utilization: impl Fn(&Channel) -> f64,
) -> ScanResult {
    let mut result = ScanResult::default();
    for band in bands {
        let Some(radio) = scanner.radios.iter().find(|r| r.band == *band) else { continue };
        for &idx in band.channels() {
            let ch = Channel { band: *band, index: idx };
            result.channel_utilization.insert(ch, utilization(&ch).clamp(0.0, 1.0));
        }
        for b in beacons.iter().filter(|b| b.band == *band && b.ap != scanner.id) {
            let Some(ap) = env.nodes.get(&b.ap) else { continue };
            let Some(serving) = ap.serving() else { continue };
            let signal = rssi(serving.tx_power_dbm, env.matrix.get(ap.id, scanner.id));
            if !reachable(signal, env.propagation) {
                continue;
            }
            let rssi_dbm = signal.unwrap_or(f64::NEG_INFINITY);
            let observation = LinkObservation {
                ap: b.ap,
                band: b.band,
                channel: b.channel,
                rssi_dbm,
                frame_error_rate: frame_error_rate(signal, env.propagation),
                rate_bps: radio.bit_rate_bps.min(serving.bit_rate_bps),
                advertised_load: b.advertised_load,
            };
            result.entries.push(ScanEntry { beacon: b.clone(), rssi_dbm, observation });
        }
    }
    result
}

/// Scores and ranks every entry of a scan, best first. Entries whose metric
/// cannot be computed (e.g. a frame error rate of 1) are dropped.
pub fn score_scan(result: &ScanResult, params: &AirtimeParams) -> Vec<ScoredAp> {
    let scored = result
        .entries
        .iter()
        .filter_map(|e| {
            let metric = link_quality(params, &e.observation).ok()?;
            Some(ScoredAp { ap: e.beacon.ap, band: e.beacon.band, channel: e.beacon.channel, rssi_dbm: e.rssi_dbm, metric })
        })
        .collect();
    rank_candidates(scored)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormationError {
    #[error("no AP available")]
    NoApAvailable,
    #[error("association target {0} vanished")]
    TargetVanished(NodeId),
    #[error("node {0} is not in a joinable state")]
    NotJoinable(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

pub fn select_ap(result: &ScanResult, params: &AirtimeParams) -> Result<ScoredAp, FormationError> {
    score_scan(result, params).into_iter().next().ok_or(FormationError::NoApAvailable)
}

/// Least-utilized channel of `band`, ties to the lowest index. `avoid` is
/// skipped when another channel exists.
pub fn channel_assign(band: Band, utilization: &BTreeMap<Channel, f64>, avoid: Option<Channel>) -> Channel {
    band.channels()
        .iter()
        .map(|&index| Channel { band, index })
        .filter(|c| Some(*c) != avoid || band.channels().len() == 1)
        .min_by(|a, b| {
            let ua = utilization.get(a).copied().unwrap_or(0.0);
            let ub = utilization.get(b).copied().unwrap_or(0.0);
            ua.total_cmp(&ub).then(a.index.cmp(&b.index))
        })
        .unwrap_or_else(|| Channel::first(band))
}

/// The serving channel a node activates after associating upstream on `upstream`.
pub fn serving_channel_for(
    mode: Mode,
    policy: ChannelPolicy,
    upstream: Channel,
    utilization: &BTreeMap<Channel, f64>,
) -> Channel {
    match mode {
        Mode::DualBand => channel_assign(upstream.band.other(), utilization, None),
        Mode::SingleBand => match policy {
            ChannelPolicy::Shared => Channel::first(Band::Band24),
            ChannelPolicy::Assigned => channel_assign(Band::Band24, utilization, Some(upstream)),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoinPlan {
    pub target: ScoredAp,
    pub serving: Channel,
}

/// Chooses the AP to join and the serving channel to activate afterwards.
pub fn plan_join(
    node: &Node,
    result: &ScanResult,
    params: &AirtimeParams,
    mode: Mode,
    policy: ChannelPolicy,
) -> Result<JoinPlan, FormationError> {
    if node.assoc != AssocState::Scanning {
        return Err(FormationError::NotJoinable(node.id));
    }
    let target = select_ap(result, params)?;
    let serving = serving_channel_for(mode, policy, target.channel, &result.channel_utilization);
    Ok(JoinPlan { target, serving })
}

/// Radio slots (upstream, serving) for a node associating on `upstream_band`.
pub fn radio_slots(node: &Node, upstream_band: Band) -> (usize, usize) {
    if node.radios[0].band != node.radios[1].band {
        let up = if node.radios[0].band == upstream_band { 0 } else { 1 };
        (up, 1 - up)
    } else {
        let up = match node.radio_index(RadioRole::Serving) {
            Some(serv) => 1 - serv,
            None => node.radio_index(RadioRole::Upstream).unwrap_or(0),
        };
        (up, 1 - up)
    }
}

/// Removes `node` from its parent, purging the parent's switch entries that
/// point at it.
pub fn detach(nodes: &mut BTreeMap<NodeId, Node>, node: NodeId) {
    let Some(parent) = nodes.get_mut(&node).and_then(|n| n.parent.take()) else { return };
    if let Some(p) = nodes.get_mut(&parent.0) {
        p.children.remove(&node);
        p.mac_table.purge_via(node);
    }
}

/// Completes an association: `node`'s upstream radio joins `ap` on
/// `upstream`, its other radio serves `serving`, and the AP adopts it.
pub fn complete_association(
    nodes: &mut BTreeMap<NodeId, Node>,
    node: NodeId,
    ap: NodeId,
    upstream: Channel,
    serving: Channel,
) -> Result<(), FormationError> {
    let target = nodes.get(&ap).ok_or(FormationError::TargetVanished(ap))?;
    if !target.is_beaconing() || target.serving_channel() != Some(upstream) {
        return Err(FormationError::TargetVanished(ap));
    }
    let n = nodes.get_mut(&node).ok_or(FormationError::UnknownNode(node))?;
    let (up, serv) = radio_slots(n, upstream.band);
    n.radios[up].activate(RadioRole::Upstream, upstream);
    n.radios[serv].activate(RadioRole::Serving, serving);
    n.parent = Some((ap, upstream.band));
    n.assoc = AssocState::Associated;
    nodes.get_mut(&ap).expect("checked above").children.insert(node);
    Ok(())
}
