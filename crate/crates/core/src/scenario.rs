//! Scenario documents: schema, parsing with positioned errors, validation,
//! serialization, the single-band benchmark transform and dotted-path
//! overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Band, Channel, Mode, NodeId};
use crate::formation::{ChannelPolicy, FormationParams};
use crate::handoff::HandoffConfig;
use crate::metric::{AirtimeParams, LoadParams};
use crate::radio::{log_distance_attenuation, AttenuationMatrix, InterfererState, PropagationParams};
use crate::traffic::Destination;

pub const DEFAULT_TX_POWER_DBM: f64 = 20.0;
pub const DEFAULT_BIT_RATE_BPS: f64 = 11e6;

fn default_name() -> String {
    "scenario".into()
}
fn default_mode() -> Mode {
    Mode::DualBand
}
fn default_tx_power() -> f64 {
    DEFAULT_TX_POWER_DBM
}
fn default_bit_rate() -> f64 {
    DEFAULT_BIT_RATE_BPS
}
fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub benchmark_channels: ChannelPolicy,
    pub hardware_ap: HardwareApSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub attenuation: AttenuationSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interferers: Vec<InterfererSpec>,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub services: Vec<ServiceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dynamism: Vec<DynamismEvent>,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub sim: SimSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareApSpec {
    pub id: NodeId,
    pub band: Band,
    pub channel: u8,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_bit_rate")]
    pub bit_rate_bps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_bit_rate")]
    pub bit_rate_bps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttenuationSpec {
    /// Attenuation of every pair not listed explicitly. `inf` disconnects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_distance: Option<LogDistanceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub position: Vec<PositionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub link: Vec<LinkSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogDistanceSpec {
    pub pl0_db: f64,
    pub exponent: f64,
    pub d0_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererSpec {
    pub id: NodeId,
    pub band: Band,
    /// Restricts the interferer to one channel; absent means the whole band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u8>,
    pub utilization: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
}

impl InterfererSpec {
    pub fn state(&self) -> InterfererState {
        InterfererState {
            id: self.id,
            band: self.band,
            channel: self.channel.map(|index| Channel { band: self.band, index }),
            utilization: self.utilization,
            tx_power_dbm: self.tx_power_dbm,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub id: u32,
    pub src: NodeId,
    pub dst: Destination,
    pub offered_bps: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub providers: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamismEvent {
    SetAttenuation {
        at_s: f64,
        a: NodeId,
        b: NodeId,
        db: f64,
    },
    RemoveNode {
        at_s: f64,
        id: NodeId,
    },
    AddNode {
        at_s: f64,
        id: NodeId,
        #[serde(default = "default_tx_power")]
        tx_power_dbm: f64,
        #[serde(default = "default_bit_rate")]
        bit_rate_bps: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        links: Vec<LinkSpec>,
    },
    SetInterferer {
        at_s: f64,
        id: NodeId,
        utilization: f64,
    },
}

impl DynamismEvent {
    pub fn at_s(&self) -> f64 {
        match self {
            DynamismEvent::SetAttenuation { at_s, .. }
            | DynamismEvent::RemoveNode { at_s, .. }
            | DynamismEvent::AddNode { at_s, .. }
            | DynamismEvent::SetInterferer { at_s, .. } => *at_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficParams {
    pub reply_window_s: f64,
    pub control_frame_bits: f64,
    pub dedup_capacity: usize,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams { reply_window_s: 0.5, control_frame_bits: 2048.0, dedup_capacity: 1024 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineParams {
    /// Fraction of the PHY bit rate usable for payload.
    pub mac_efficiency: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams { mac_efficiency: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    pub airtime: AirtimeParams,
    pub load: LoadParams,
    pub formation: FormationParams,
    pub handoff: HandoffConfig,
    pub propagation: PropagationParams,
    pub traffic: TrafficParams,
    pub engine: EngineParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub duration_s: f64,
    pub seed: u64,
    /// Measurement window; the second half of the run when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSpec>,
    #[serde(skip_serializing_if = "is_default")]
    pub check_invariants: bool,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec { duration_s: 60.0, seed: 0, window: None, check_invariants: false }
    }
}

impl SimSpec {
    pub fn effective_window(&self) -> WindowSpec {
        self.window.unwrap_or(WindowSpec { start_s: self.duration_s / 2.0, end_s: self.duration_s })
    }
}

/// Where a scenario error was found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    /// 1-based line and column in the source text.
    Text { line: usize, column: usize },
    /// Dotted path into the document, e.g. `traffic.flows[1].src`.
    Path(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Text { line, column } => write!(f, "line {line}, column {column}"),
            Location::Path(p) => f.write_str(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub location: Location,
    pub message: String,
}

impl ScenarioError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError { location: Location::Path(path.into()), message: message.into() }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl From<ScenarioError> for ScenarioErrors {
    fn from(e: ScenarioError) -> Self {
        ScenarioErrors(vec![e])
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioErrors> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let (line, column) = line_col(text, span.start);
                Location::Text { line, column }
            }
            None => Location::Text { line: 1, column: 1 },
        };
        ScenarioError { location, message: e.message().trim().to_string() }
    })?;
    validate(&scenario)?;
    Ok(scenario)
}

pub fn serialize_scenario(s: &Scenario) -> String {
    toml::to_string(s).expect("scenario is always representable")
}

/// Hex SHA-256 of the canonical serialization.
pub fn scenario_hash(s: &Scenario) -> String {
    let digest = Sha256::digest(serialize_scenario(s).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Checks every cross-reference and range constraint.
pub fn validate(s: &Scenario) -> Result<(), ScenarioErrors> {
    let mut errs = Vec::new();
    let mut err = |path: String, msg: String| errs.push(ScenarioError::at(path, msg));

    let hw = &s.hardware_ap;
    if Channel::new(hw.band, hw.channel).is_err() {
        err("hardware_ap.channel".into(), format!("{} is not a {} GHz channel (expected one of {:?})", hw.channel, hw.band, hw.band.channels()));
    }
    if s.mode == Mode::SingleBand && hw.band != Band::Band24 {
        err("hardware_ap.band".into(), "single-band scenarios run entirely on 2.4 GHz".into());
    }
    if !hw.tx_power_dbm.is_finite() {
        err("hardware_ap.tx_power_dbm".into(), "must be finite".into());
    }
    if !(hw.bit_rate_bps > 0.0 && hw.bit_rate_bps.is_finite()) {
        err("hardware_ap.bit_rate_bps".into(), "must be positive".into());
    }

    let mut ids: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut claim = |id: NodeId, path: String, errs: &mut Vec<ScenarioError>| {
        if let Some(prev) = ids.get(&id) {
            errs.push(ScenarioError::at(path, format!("id {id} already used by {prev}")));
        } else {
            ids.insert(id, path);
        }
    };
    let mut errs2 = Vec::new();
    claim(hw.id, "hardware_ap.id".into(), &mut errs2);
    for (i, n) in s.nodes.iter().enumerate() {
        claim(n.id, format!("nodes[{i}].id"), &mut errs2);
    }
    for (i, it) in s.interferers.iter().enumerate() {
        claim(it.id, format!("interferers[{i}].id"), &mut errs2);
    }
    for (i, d) in s.dynamism.iter().enumerate() {
        if let DynamismEvent::AddNode { id, .. } = d {
            claim(*id, format!("dynamism[{i}].id"), &mut errs2);
        }
    }
    errs.append(&mut errs2);
    let mut err = |path: String, msg: String| errs.push(ScenarioError::at(path, msg));

    let mesh: BTreeSet<NodeId> = s.nodes.iter().map(|n| n.id).collect();
    let added: BTreeSet<NodeId> = s
        .dynamism
        .iter()
        .filter_map(|d| if let DynamismEvent::AddNode { id, .. } = d { Some(*id) } else { None })
        .collect();
    let interferers: BTreeSet<NodeId> = s.interferers.iter().map(|i| i.id).collect();
    let is_node = |id: &NodeId| *id == hw.id || mesh.contains(id) || added.contains(id);
    let is_station = |id: &NodeId| is_node(id) || interferers.contains(id);

    for (i, n) in s.nodes.iter().enumerate() {
        if !finite_nonneg(n.start_s) {
            err(format!("nodes[{i}].start_s"), "must be a finite time >= 0".into());
        }
        if !(n.bit_rate_bps > 0.0 && n.bit_rate_bps.is_finite()) {
            err(format!("nodes[{i}].bit_rate_bps"), "must be positive".into());
        }
        if !n.tx_power_dbm.is_finite() {
            err(format!("nodes[{i}].tx_power_dbm"), "must be finite".into());
        }
    }

    for (i, it) in s.interferers.iter().enumerate() {
        if let Some(c) = it.channel {
            if Channel::new(it.band, c).is_err() {
                err(format!("interferers[{i}].channel"), format!("{c} is not a {} GHz channel", it.band));
            }
        }
        if !(0.0..=1.0).contains(&it.utilization) {
            err(format!("interferers[{i}].utilization"), "must be within [0, 1]".into());
        }
    }

    let att = &s.attenuation;
    if let Some(d) = att.default_db {
        if d.is_nan() || d < 0.0 {
            err("attenuation.default_db".into(), "must be >= 0 (inf allowed)".into());
        }
    }
    for (i, l) in att.link.iter().enumerate() {
        for (field, id) in [("a", l.a), ("b", l.b)] {
            if !is_station(&id) {
                err(format!("attenuation.link[{i}].{field}"), format!("unknown id {id}"));
            }
        }
        if l.a == l.b {
            err(format!("attenuation.link[{i}]"), "a and b must differ".into());
        }
        if l.db.is_nan() || l.db < 0.0 {
            err(format!("attenuation.link[{i}].db"), "must be >= 0 (inf allowed)".into());
        }
    }
    let mut positioned = BTreeSet::new();
    for (i, p) in att.position.iter().enumerate() {
        if !is_station(&p.id) {
            err(format!("attenuation.position[{i}].id"), format!("unknown id {}", p.id));
        }
        if !positioned.insert(p.id) {
            err(format!("attenuation.position[{i}].id"), format!("duplicate position for {}", p.id));
        }
        if !(p.x.is_finite() && p.y.is_finite()) {
            err(format!("attenuation.position[{i}]"), "coordinates must be finite".into());
        }
    }
    if !att.position.is_empty() && att.log_distance.is_none() {
        err("attenuation.log_distance".into(), "positions require a log_distance model".into());
    }
    if let Some(ld) = &att.log_distance {
        if !(ld.d0_m > 0.0 && ld.exponent > 0.0 && ld.pl0_db.is_finite() && ld.d0_m.is_finite() && ld.exponent.is_finite()) {
            err("attenuation.log_distance".into(), "pl0_db finite, exponent > 0, d0_m > 0 required".into());
        }
    }
    if att.default_db.is_none() {
        let explicit: BTreeSet<(NodeId, NodeId)> =
            att.link.iter().map(|l| if l.a <= l.b { (l.a, l.b) } else { (l.b, l.a) }).collect();
        let stations: Vec<NodeId> = std::iter::once(hw.id).chain(mesh.iter().copied()).chain(interferers.iter().copied()).collect();
        'outer: for (x, a) in stations.iter().enumerate() {
            for b in &stations[x + 1..] {
                if interferers.contains(a) && interferers.contains(b) {
                    continue;
                }
                let key = if a <= b { (*a, *b) } else { (*b, *a) };
                if !explicit.contains(&key) && !(positioned.contains(a) && positioned.contains(b)) {
                    err("attenuation".into(), format!("no attenuation for pair ({a}, {b}); add [[attenuation.link]], positions, or attenuation.default_db"));
                    break 'outer;
                }
            }
        }
    }

    let services: BTreeSet<&str> = s.services.iter().map(|v| v.name.as_str()).collect();
    let mut flow_ids = BTreeSet::new();
    for (i, f) in s.traffic.flows.iter().enumerate() {
        let p = format!("traffic.flows[{i}]");
        if !flow_ids.insert(f.id) {
            err(format!("{p}.id"), format!("duplicate flow id {}", f.id));
        }
        if !is_node(&f.src) {
            err(format!("{p}.src"), format!("unknown node {}", f.src));
        }
        match &f.dst {
            Destination::Node(d) if !is_node(d) => err(format!("{p}.dst"), format!("unknown node {d}")),
            Destination::Node(d) if *d == f.src => err(format!("{p}.dst"), "source and destination coincide".into()),
            Destination::Service(name) if !services.contains(name.as_str()) => {
                err(format!("{p}.dst"), format!("unknown service {name:?}"))
            }
            _ => {}
        }
        if !finite_nonneg(f.offered_bps) {
            err(format!("{p}.offered_bps"), "must be a finite rate >= 0".into());
        }
        if !finite_nonneg(f.start_s) {
            err(format!("{p}.start_s"), "must be a finite time >= 0".into());
        }
        if let Some(stop) = f.stop_s {
            if !(stop > f.start_s) {
                err(format!("{p}.stop_s"), "must be after start_s".into());
            }
        }
    }
    let mut names = BTreeSet::new();
    for (i, svc) in s.services.iter().enumerate() {
        if svc.name.is_empty() {
            err(format!("services[{i}].name"), "must not be empty".into());
        }
        if !names.insert(svc.name.as_str()) {
            err(format!("services[{i}].name"), format!("duplicate service {:?}", svc.name));
        }
        for (j, p) in svc.providers.iter().enumerate() {
            if !is_node(p) {
                err(format!("services[{i}].providers[{j}]"), format!("unknown node {p}"));
            }
        }
    }

    let mut alive: BTreeSet<NodeId> = mesh.clone();
    let mut order: Vec<(usize, &DynamismEvent)> = s.dynamism.iter().enumerate().collect();
    order.sort_by(|a, b| a.1.at_s().total_cmp(&b.1.at_s()).then(a.0.cmp(&b.0)));
    for (i, d) in order {
        let p = format!("dynamism[{i}]");
        if !finite_nonneg(d.at_s()) || d.at_s() > s.sim.duration_s {
            err(format!("{p}.at_s"), "must lie within the run".into());
        }
        match d {
            DynamismEvent::SetAttenuation { a, b, db, .. } => {
                for (field, id) in [("a", a), ("b", b)] {
                    if !is_station(id) {
                        err(format!("{p}.{field}"), format!("unknown id {id}"));
                    }
                }
                if a == b {
                    err(p.clone(), "a and b must differ".into());
                }
                if db.is_nan() || *db < 0.0 {
                    err(format!("{p}.db"), "must be >= 0 (inf allowed)".into());
                }
            }
            DynamismEvent::RemoveNode { id, .. } => {
                if *id == hw.id {
                    err(format!("{p}.id"), "the hardware AP cannot be removed".into());
                } else if !alive.remove(id) {
                    err(format!("{p}.id"), format!("node {id} is not present at that time"));
                }
            }
            DynamismEvent::AddNode { id, links, bit_rate_bps, tx_power_dbm, .. } => {
                alive.insert(*id);
                if !(*bit_rate_bps > 0.0 && bit_rate_bps.is_finite()) || !tx_power_dbm.is_finite() {
                    err(p.clone(), "tx_power_dbm must be finite and bit_rate_bps positive".into());
                }
                for (j, l) in links.iter().enumerate() {
                    if l.a != *id && l.b != *id {
                        err(format!("{p}.links[{j}]"), format!("link must involve the added node {id}"));
                    }
                    for (field, other) in [("a", l.a), ("b", l.b)] {
                        if !is_station(&other) {
                            err(format!("{p}.links[{j}].{field}"), format!("unknown id {other}"));
                        }
                    }
                    if l.db.is_nan() || l.db < 0.0 {
                        err(format!("{p}.links[{j}].db"), "must be >= 0 (inf allowed)".into());
                    }
                }
            }
            DynamismEvent::SetInterferer { id, utilization, .. } => {
                if !interferers.contains(id) {
                    err(format!("{p}.id"), format!("unknown interferer {id}"));
                }
                if !(0.0..=1.0).contains(utilization) {
                    err(format!("{p}.utilization"), "must be within [0, 1]".into());
                }
            }
        }
    }

    let pr = &s.protocol;
    if !pr.airtime.is_valid() {
        err("protocol.airtime".into(), "overhead_us >= 0 and test_frame_bits > 0 required".into());
    }
    if !(pr.load.ewma_alpha > 0.0 && pr.load.ewma_alpha <= 1.0) || !(pr.load.sample_period_s > 0.0 && pr.load.sample_period_s.is_finite()) {
        err("protocol.load".into(), "ewma_alpha in (0, 1] and sample_period_s > 0 required".into());
    }
    let f = &pr.formation;
    if !(f.beacon_interval_s > 0.0 && f.scan_duration_s > 0.0 && f.retry_backoff_s > 0.0)
        || !(finite_nonneg(f.assoc_delay_s) && finite_nonneg(f.channel_switch_s))
        || ![f.beacon_interval_s, f.scan_duration_s, f.retry_backoff_s].iter().all(|v| v.is_finite())
    {
        err("protocol.formation".into(), "intervals must be positive and delays non-negative".into());
    }
    if !pr.handoff.is_valid() {
        err("protocol.handoff".into(), "T > 0, theta_us > 0, k >= 1 and alpha >= 1 required".into());
    }
    if !pr.propagation.is_valid() {
        err("protocol.propagation".into(), "need fer_floor < fer_clear and rx_sensitivity <= cs_threshold <= fer_clear".into());
    }
    let t = &pr.traffic;
    if !(t.reply_window_s > 0.0 && t.control_frame_bits > 0.0 && t.dedup_capacity > 0) || !t.reply_window_s.is_finite() || !t.control_frame_bits.is_finite() {
        err("protocol.traffic".into(), "reply_window_s, control_frame_bits and dedup_capacity must be positive".into());
    }
    if !(pr.engine.mac_efficiency > 0.0 && pr.engine.mac_efficiency <= 1.0) {
        err("protocol.engine.mac_efficiency".into(), "must be within (0, 1]".into());
    }

    if !(s.sim.duration_s > 0.0 && s.sim.duration_s.is_finite()) || s.sim.duration_s > 1e6 {
        err("sim.duration_s".into(), "must be positive and at most 1e6 seconds".into());
    }
    if let Some(w) = s.sim.window {
        if !(w.start_s >= 0.0 && w.end_s > w.start_s && w.end_s <= s.sim.duration_s) {
            err("sim.window".into(), "need 0 <= start_s < end_s <= duration_s".into());
        }
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(ScenarioErrors(errs))
    }
}

impl Scenario {
    pub fn hardware_channel(&self) -> Channel {
        Channel { band: self.hardware_ap.band, index: self.hardware_ap.channel }
    }

    pub fn interferer_states(&self) -> Vec<InterfererState> {
        self.interferers.iter().map(InterfererSpec::state).collect()
    }

    /// Initial attenuation matrix: default, then log-distance between
    /// positioned pairs, then explicit links, later entries winning.
    pub fn attenuation_matrix(&self) -> AttenuationMatrix {
        let mut m = AttenuationMatrix::new();
        let att = &self.attenuation;
        let mut stations: Vec<NodeId> = vec![self.hardware_ap.id];
        stations.extend(self.nodes.iter().map(|n| n.id));
        stations.extend(self.interferers.iter().map(|i| i.id));
        if let Some(d) = att.default_db {
            for (x, a) in stations.iter().enumerate() {
                for b in &stations[x + 1..] {
                    m.set(*a, *b, d);
                }
            }
        }
        if let Some(ld) = &att.log_distance {
            for (x, p) in att.position.iter().enumerate() {
                for q in &att.position[x + 1..] {
                    let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                    m.set(p.id, q.id, log_distance_attenuation(d, ld.pl0_db, ld.exponent, ld.d0_m));
                }
            }
        }
        for l in &att.link {
            m.set(l.a, l.b, l.db);
        }
        m
    }

    /// Ids of every node that can take part in the mesh, hardware AP included.
    pub fn declared_nodes(&self) -> BTreeSet<NodeId> {
        let mut ids: BTreeSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.insert(self.hardware_ap.id);
        for d in &self.dynamism {
            if let DynamismEvent::AddNode { id, .. } = d {
                ids.insert(*id);
            }
        }
        ids
    }
}

/// The single-band benchmark twin of a dual-band scenario: every radio on
/// 2.4 GHz, serving channels per `benchmark_channels`.
pub fn derive_single_band(s: &Scenario) -> Result<Scenario, ScenarioError> {
    if s.mode != Mode::DualBand {
        return Err(ScenarioError::at("mode", "scenario is already single-band"));
    }
    let mut out = s.clone();
    out.mode = Mode::SingleBand;
    out.hardware_ap.band = Band::Band24;
    out.hardware_ap.channel = Channel::first(Band::Band24).index;
    Ok(out)
}

fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}")).map(|w| w.v).unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

enum Segment<'a> {
    Key(&'a str),
    Index(&'a str, usize),
}

fn segments(path: &str) -> Result<Vec<Segment<'_>>, ScenarioError> {
    let bad = || ScenarioError::at(path, "malformed override path");
    path.split('.')
        .map(|part| {
            if part.is_empty() {
                return Err(bad());
            }
            match part.find('[') {
                None => Ok(Segment::Key(part)),
                Some(open) => {
                    let idx = part[open + 1..].strip_suffix(']').ok_or_else(bad)?;
                    let idx: usize = idx.parse().map_err(|_| bad())?;
                    if open == 0 {
                        return Err(bad());
                    }
                    Ok(Segment::Index(&part[..open], idx))
                }
            }
        })
        .collect()
}

/// Sets the value at a dotted path (e.g. `protocol.handoff.T` or
/// `traffic.flows[0].offered_bps`) and re-validates. `raw` is a TOML value;
/// anything that does not parse as one is taken as a bare string.
pub fn apply_override(s: &Scenario, path: &str, raw: &str) -> Result<Scenario, ScenarioErrors> {
    let segs = segments(path)?;
    let mut doc = toml::Value::try_from(s).map_err(|e| ScenarioError::at(path, e.to_string()))?;
    let missing = |what: &str| ScenarioError::at(path, format!("no {what} at this path"));

    let mut cur = &mut doc;
    let last = segs.len() - 1;
    for (i, seg) in segs.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| missing("table"))?;
        match seg {
            Segment::Key(k) if i == last => {
                table.insert((*k).to_string(), parse_value(raw));
                break;
            }
            Segment::Key(k) => {
                cur = table.entry((*k).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
            Segment::Index(k, idx) => {
                let arr = table.get_mut(*k).and_then(|v| v.as_array_mut()).ok_or_else(|| missing("array"))?;
                let slot = arr.get_mut(*idx).ok_or_else(|| missing("element"))?;
                if i == last {
                    *slot = parse_value(raw);
                    break;
                }
                cur = slot;
            }
        }
    }

    let text = toml::to_string(&doc).map_err(|e| ScenarioError::at(path, e.to_string()))?;
    let out: Scenario = toml::from_str(&text).map_err(|e| ScenarioError::at(path, e.message().trim().to_string()))?;
    validate(&out)?;
    Ok(out)
}
