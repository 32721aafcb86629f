//! Shared vocabulary: node identities, bands, channels, radios, roles and the
//! association state machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::traffic::MacTable;

/// Opaque node identifier assigned by the scenario file. Doubles as the MAC
/// address of the node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "2.4")]
    Band24,
    #[serde(rename = "5.8")]
    Band58,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Band24, Band::Band58];

    pub fn other(self) -> Band {
        other_band(self)
    }

    /// Canonical non-overlapping channel set of the band, ascending.
    pub fn channels(self) -> &'static [u8] {
        match self {
            Band::Band24 => &[1, 6, 11],
            Band::Band58 => &[36, 40, 44, 48, 149, 153, 157, 161],
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::Band24 => f.write_str("2.4"),
            Band::Band58 => f.write_str("5.8"),
        }
    }
}

pub fn other_band(b: Band) -> Band {
    match b {
        Band::Band24 => Band::Band58,
        Band::Band58 => Band::Band24,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub band: Band,
    pub index: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("channel {index} is not a non-overlapping {band} GHz channel")]
pub struct InvalidChannel {
    pub band: Band,
    pub index: u8,
}

impl Channel {
    pub fn new(band: Band, index: u8) -> Result<Channel, InvalidChannel> {
        if band.channels().contains(&index) {
            Ok(Channel { band, index })
        } else {
            Err(InvalidChannel { band, index })
        }
    }

    /// Lowest channel of the band.
    pub fn first(band: Band) -> Channel {
        Channel { band, index: band.channels()[0] }
    }

    /// Channels interfere iff they are the same (band, index) pair.
    pub fn interferes(&self, other: &Channel) -> bool {
        self == other
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.band, self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RadioRole {
    Upstream,
    Serving,
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Radio {
    pub band: Band,
    pub role: RadioRole,
    pub channel: Option<Channel>,
    pub tx_power_dbm: f64,
    pub bit_rate_bps: f64,
}

impl Radio {
    pub fn idle(band: Band, tx_power_dbm: f64, bit_rate_bps: f64) -> Radio {
        Radio { band, role: RadioRole::Idle, channel: None, tx_power_dbm, bit_rate_bps }
    }

    pub fn is_active(&self) -> bool {
        self.role != RadioRole::Idle
    }

    pub fn activate(&mut self, role: RadioRole, channel: Channel) {
        debug_assert_eq!(channel.band, self.band);
        self.role = role;
        self.channel = Some(channel);
    }

    pub fn deactivate(&mut self) {
        self.role = RadioRole::Idle;
        self.channel = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "dual")]
    DualBand,
    #[serde(rename = "single")]
    SingleBand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    HardwareAp,
    MeshNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssocState {
    Scanning,
    Associating(NodeId),
    Associated,
    Reassociating(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal association transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: AssocState,
    pub to: AssocState,
}

impl AssocState {
    /// Applies a transition, rejecting anything outside the association
    /// lifecycle. Failure edges (`Associating -> Scanning`,
    /// `Reassociating -> Scanning`) and candidate fallback
    /// (`Reassociating(a) -> Reassociating(b)`) are legal.
    pub fn transition(self, to: AssocState) -> Result<AssocState, IllegalTransition> {
        use AssocState::*;
        let ok = matches!(
            (self, to),
            (Scanning, Associating(_))
                | (Associating(_), Associated)
                | (Associating(_), Scanning)
                | (Associated, Reassociating(_))
                | (Associated, Scanning)
                | (Reassociating(_), Associated)
                | (Reassociating(_), Reassociating(_))
                | (Reassociating(_), Scanning)
        );
        if ok {
            Ok(to)
        } else {
            Err(IllegalTransition { from: self, to })
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub radios: [Radio; 2],
    pub kind: NodeKind,
    pub assoc: AssocState,
    /// Parent AP and the band of the upstream link.
    pub parent: Option<(NodeId, Band)>,
    pub children: BTreeSet<NodeId>,
    pub mac_table: MacTable,
}

impl Node {
    /// A hardware AP with its single active radio serving `channel`.
    pub fn hardware_ap(id: NodeId, channel: Channel, tx_power_dbm: f64, bit_rate_bps: f64) -> Node {
        let mut serving = Radio::idle(channel.band, tx_power_dbm, bit_rate_bps);
        serving.activate(RadioRole::Serving, channel);
        let spare = Radio::idle(channel.band.other(), tx_power_dbm, bit_rate_bps);
        Node {
            id,
            radios: [serving, spare],
            kind: NodeKind::HardwareAp,
            assoc: AssocState::Associated,
            parent: None,
            children: BTreeSet::new(),
            mac_table: MacTable::default(),
        }
    }

    /// A mesh node with both radios idle. Dual-band nodes carry one radio per
    /// band; single-band benchmark nodes carry two 2.4 GHz radios.
    pub fn mesh(id: NodeId, mode: Mode, tx_power_dbm: f64, bit_rate_bps: f64) -> Node {
        let second = match mode {
            Mode::DualBand => Band::Band58,
            Mode::SingleBand => Band::Band24,
        };
        Node {
            id,
            radios: [
                Radio::idle(Band::Band24, tx_power_dbm, bit_rate_bps),
                Radio::idle(second, tx_power_dbm, bit_rate_bps),
            ],
            kind: NodeKind::MeshNode,
            assoc: AssocState::Scanning,
            parent: None,
            children: BTreeSet::new(),
            mac_table: MacTable::default(),
        }
    }

    pub fn is_hardware_ap(&self) -> bool {
        self.kind == NodeKind::HardwareAp
    }

    pub fn radio_index(&self, role: RadioRole) -> Option<usize> {
        self.radios.iter().position(|r| r.role == role)
    }

    pub fn upstream(&self) -> Option<&Radio> {
        self.radios.iter().find(|r| r.role == RadioRole::Upstream)
    }

    pub fn serving(&self) -> Option<&Radio> {
        self.radios.iter().find(|r| r.role == RadioRole::Serving)
    }

    pub fn serving_channel(&self) -> Option<Channel> {
        self.serving().and_then(|r| r.channel)
    }

    pub fn upstream_channel(&self) -> Option<Channel> {
        self.upstream().and_then(|r| r.channel)
    }

    /// Whether the node is currently an AP that other nodes can join.
    pub fn is_beaconing(&self) -> bool {
        match self.kind {
            NodeKind::HardwareAp => self.serving().is_some(),
            NodeKind::MeshNode => {
                matches!(self.assoc, AssocState::Associated) && self.serving().is_some()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRoot,
    MultipleRoots(Vec<NodeId>),
    RootHasParent(NodeId),
    RootRadioCount { node: NodeId, active: usize },
    RadioChannelMismatch { node: NodeId, radio: usize },
    RadioBandsInvalid(NodeId),
    AssociatedWithoutParent(NodeId),
    UnassociatedWithParent(NodeId),
    UnassociatedWithChildren(NodeId),
    UnknownParent { node: NodeId, parent: NodeId },
    UnknownChild { node: NodeId, child: NodeId },
    ParentChildMismatch { node: NodeId, other: NodeId },
    MissingRadioRole { node: NodeId, role: &'static str },
    UpstreamBandMismatch(NodeId),
    UpstreamChannelMismatch { node: NodeId, parent: NodeId },
    SameBandServing(NodeId),
    Cycle(Vec<NodeId>),
    Unrooted(NodeId),
    StaleMacEntry { node: NodeId, dest: NodeId, via: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Checks the association topology: a tree rooted at the hardware AP with
/// consistent parent/child bookkeeping and band alternation.
///
/// A `Reassociating` node heads a transiently detached subtree (its old
/// association is gone, the new one not yet complete); chains ending at such a
/// node are accepted.
pub fn validate_tree(nodes: &BTreeMap<NodeId, Node>, mode: Mode) -> Vec<Violation> {
    let mut out = Vec::new();
    let roots: Vec<NodeId> = nodes.values().filter(|n| n.is_hardware_ap()).map(|n| n.id).collect();
    match roots.len() {
        0 => out.push(Violation::MissingRoot),
        1 => {}
        _ => out.push(Violation::MultipleRoots(roots.clone())),
    }

    for node in nodes.values() {
        for (i, r) in node.radios.iter().enumerate() {
            let ok = match (r.role, r.channel) {
                (RadioRole::Idle, None) => true,
                (RadioRole::Idle, Some(_)) => false,
                (_, None) => false,
                (_, Some(ch)) => ch.band == r.band && r.band.channels().contains(&ch.index),
            };
            if !ok {
                out.push(Violation::RadioChannelMismatch { node: node.id, radio: i });
            }
        }
        let bands_ok = match mode {
            Mode::DualBand => node.radios[0].band != node.radios[1].band,
            Mode::SingleBand => node.radios.iter().all(|r| r.band == Band::Band24),
        };
        if !bands_ok {
            out.push(Violation::RadioBandsInvalid(node.id));
        }

        for c in &node.children {
            match nodes.get(c) {
                None => out.push(Violation::UnknownChild { node: node.id, child: *c }),
                Some(child) => {
                    if child.parent.map(|p| p.0) != Some(node.id) {
                        out.push(Violation::ParentChildMismatch { node: node.id, other: *c });
                    }
                }
            }
        }
        for (dest, entry) in node.mac_table.iter() {
            if !node.children.contains(&entry.via) {
                out.push(Violation::StaleMacEntry { node: node.id, dest: *dest, via: entry.via });
            }
        }

        if node.is_hardware_ap() {
            if node.parent.is_some() {
                out.push(Violation::RootHasParent(node.id));
            }
            let active = node.radios.iter().filter(|r| r.is_active()).count();
            if active != 1 {
                out.push(Violation::RootRadioCount { node: node.id, active });
            }
            continue;
        }

        match node.assoc {
            AssocState::Associated => {
                let Some((pid, band)) = node.parent else {
                    out.push(Violation::AssociatedWithoutParent(node.id));
                    continue;
                };
                let Some(parent) = nodes.get(&pid) else {
                    out.push(Violation::UnknownParent { node: node.id, parent: pid });
                    continue;
                };
                if !parent.children.contains(&node.id) {
                    out.push(Violation::ParentChildMismatch { node: node.id, other: pid });
                }
                let (Some(up), Some(serv)) = (node.upstream(), node.serving()) else {
                    let role = if node.upstream().is_none() { "upstream" } else { "serving" };
                    out.push(Violation::MissingRadioRole { node: node.id, role });
                    continue;
                };
                if up.band != band {
                    out.push(Violation::UpstreamBandMismatch(node.id));
                }
                if parent.serving_channel() != up.channel {
                    out.push(Violation::UpstreamChannelMismatch { node: node.id, parent: pid });
                }
                if mode == Mode::DualBand && up.band == serv.band {
                    out.push(Violation::SameBandServing(node.id));
                }
            }
            AssocState::Scanning | AssocState::Associating(_) => {
                if node.parent.is_some() {
                    out.push(Violation::UnassociatedWithParent(node.id));
                }
                if !node.children.is_empty() {
                    out.push(Violation::UnassociatedWithChildren(node.id));
                }
            }
            AssocState::Reassociating(_) => {
                if node.parent.is_some() {
                    out.push(Violation::UnassociatedWithParent(node.id));
                }
            }
        }
    }

    // Rootedness and cycles: walk each parent chain.
    for node in nodes.values() {
        if node.is_hardware_ap() || node.parent.is_none() {
            continue;
        }
        let mut seen = vec![node.id];
        let mut cur = node;
        loop {
            let Some((pid, _)) = cur.parent else {
                if !matches!(cur.assoc, AssocState::Reassociating(_)) && !cur.is_hardware_ap() {
                    out.push(Violation::Unrooted(node.id));
                }
                break;
            };
            if seen.contains(&pid) {
                // Report each cycle once, from its smallest member.
                let start = seen.iter().position(|x| *x == pid).unwrap_or(0);
                let mut cycle = seen[start..].to_vec();
                if cycle.iter().min() == Some(&node.id) {
                    cycle.sort();
                    out.push(Violation::Cycle(cycle));
                }
                break;
            }
            match nodes.get(&pid) {
                Some(p) => {
                    seen.push(pid);
                    cur = p;
                }
                None => break,
            }
        }
    }
    out
}

/// All strict descendants of `root` following `children` sets.
pub fn descendants(nodes: &BTreeMap<NodeId, Node>, root: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        if let Some(n) = nodes.get(&v) {
            for c in &n.children {
                if out.insert(*c) {
                    stack.push(*c);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star() -> BTreeMap<NodeId, Node> {
        let mut nodes = BTreeMap::new();
        let hw = Node::hardware_ap(NodeId(0), Channel::new(Band::Band58, 36).unwrap(), 20.0, 11e6);
        let mut sw = Node::mesh(NodeId(1), Mode::DualBand, 20.0, 11e6);
        sw.radios[1].activate(RadioRole::Upstream, Channel::new(Band::Band58, 36).unwrap());
        sw.radios[0].activate(RadioRole::Serving, Channel::new(Band::Band24, 6).unwrap());
        sw.assoc = AssocState::Associated;
        sw.parent = Some((NodeId(0), Band::Band58));
        let mut hw = hw;
        hw.children.insert(NodeId(1));
        for id in [2, 3] {
            let mut e = Node::mesh(NodeId(id), Mode::DualBand, 20.0, 11e6);
            e.radios[0].activate(RadioRole::Upstream, Channel::new(Band::Band24, 6).unwrap());
            e.radios[1].activate(RadioRole::Serving, Channel::new(Band::Band58, 36).unwrap());
            e.assoc = AssocState::Associated;
            e.parent = Some((NodeId(1), Band::Band24));
            sw.children.insert(NodeId(id));
            nodes.insert(e.id, e);
        }
        nodes.insert(hw.id, hw);
        nodes.insert(sw.id, sw);
        nodes
    }

    #[test]
    fn band_involution() {
        assert_eq!(other_band(Band::Band24), Band::Band58);
        assert_eq!(other_band(Band::Band58), Band::Band24);
        for b in Band::ALL {
            assert_eq!(b.other().other(), b);
        }
    }

    #[test]
    fn channel_sets() {
        assert!(Channel::new(Band::Band24, 6).is_ok());
        assert!(Channel::new(Band::Band24, 3).is_err());
        assert!(Channel::new(Band::Band58, 149).is_ok());
        assert!(Channel::new(Band::Band58, 1).is_err());
        let a = Channel::new(Band::Band24, 1).unwrap();
        assert!(a.interferes(&a));
        assert!(!a.interferes(&Channel::new(Band::Band24, 6).unwrap()));
    }

    #[test]
    fn lone_hardware_ap_is_valid() {
        let mut nodes = BTreeMap::new();
        let hw = Node::hardware_ap(NodeId(0), Channel::first(Band::Band58), 20.0, 11e6);
        nodes.insert(hw.id, hw);
        assert!(validate_tree(&nodes, Mode::DualBand).is_empty());
    }

    #[test]
    fn star_topology_is_valid() {
        assert_eq!(validate_tree(&star(), Mode::DualBand), vec![]);
    }

    #[test]
    fn two_node_cycle_is_reported() {
        let mut nodes = star();
        // Make 2 and 3 name each other as parent.
        nodes.get_mut(&NodeId(1)).unwrap().children.clear();
        for (a, b) in [(2, 3), (3, 2)] {
            let n = nodes.get_mut(&NodeId(a)).unwrap();
            n.parent = Some((NodeId(b), Band::Band24));
            n.children.insert(NodeId(b));
        }
        let report = validate_tree(&nodes, Mode::DualBand);
        assert!(report.contains(&Violation::Cycle(vec![NodeId(2), NodeId(3)])), "{report:?}");
    }

    #[test]
    fn same_band_serving_rejected_in_dual_mode() {
        let mut nodes = star();
        let e = nodes.get_mut(&NodeId(2)).unwrap();
        e.radios[1].deactivate();
        e.radios[1].band = Band::Band24;
        let report = validate_tree(&nodes, Mode::DualBand);
        assert!(report.contains(&Violation::RadioBandsInvalid(NodeId(2))));
    }

    #[test]
    fn detached_subtree_under_reassociating_node_is_accepted() {
        let mut nodes = star();
        nodes.get_mut(&NodeId(0)).unwrap().children.clear();
        let sw = nodes.get_mut(&NodeId(1)).unwrap();
        sw.parent = None;
        sw.assoc = AssocState::Reassociating(NodeId(0));
        assert_eq!(validate_tree(&nodes, Mode::DualBand), vec![]);
        // The same shape with the head merely Scanning is not.
        nodes.get_mut(&NodeId(1)).unwrap().assoc = AssocState::Scanning;
        assert!(!validate_tree(&nodes, Mode::DualBand).is_empty());
    }

    #[test]
    fn assoc_transitions() {
        use AssocState::*;
        let s = Scanning.transition(Associating(NodeId(1))).unwrap();
        let s = s.transition(Associated).unwrap();
        let s = s.transition(Reassociating(NodeId(2))).unwrap();
        let s = s.transition(Associated).unwrap();
        assert_eq!(s.transition(Scanning), Ok(Scanning));
        assert!(Scanning.transition(Associated).is_err());
        assert!(Associated.transition(Associating(NodeId(1))).is_err());
    }

    #[test]
    fn descendants_of_inner_node() {
        let nodes = star();
        let d = descendants(&nodes, NodeId(0));
        assert_eq!(d.into_iter().collect::<Vec<_>>(), vec![NodeId(1), NodeId(2), NodeId(3)]);
        assert!(descendants(&nodes, NodeId(2)).is_empty());
    }
}
