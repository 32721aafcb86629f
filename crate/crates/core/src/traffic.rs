//! Traffic handling on the formed tree: uplink relaying toward the hardware
//! AP, downlink delivery through per-node learning switches, and flood-based
//! service discovery with source-routed replies.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{AssocState, Node, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack,
    ServiceRequest,
    ServiceReply,
    Disassoc,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId {
    pub origin: NodeId,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: Destination,
    pub payload_bits: u64,
    pub dedup_id: Option<RequestId>,
    pub route: Option<Vec<NodeId>>,
}

/// Where a flow's data goes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "DestinationRepr", into = "DestinationRepr")]
pub enum Destination {
    Internet,
    Node(NodeId),
    Service(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum DestinationRepr {
    Id(u32),
    Name(String),
}

impl TryFrom<DestinationRepr> for Destination {
    type Error = String;

    fn try_from(r: DestinationRepr) -> Result<Self, String> {
        match r {
            DestinationRepr::Id(id) => Ok(Destination::Node(NodeId(id))),
            DestinationRepr::Name(s) if s == "internet" => Ok(Destination::Internet),
            DestinationRepr::Name(s) => match s.strip_prefix("service:") {
                Some(name) if !name.is_empty() => Ok(Destination::Service(name.to_string())),
                _ => Err(format!("destination must be a node id, \"internet\" or \"service:<name>\", got {s:?}")),
            },
        }
    }
}

impl From<Destination> for DestinationRepr {
    fn from(d: Destination) -> Self {
        match d {
            Destination::Internet => DestinationRepr::Name("internet".into()),
            Destination::Node(id) => DestinationRepr::Id(id.0),
            Destination::Service(name) => DestinationRepr::Name(format!("service:{name}")),
        }
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Internet => f.write_str("internet"),
            Destination::Node(id) => write!(f, "{id}"),
            Destination::Service(s) => write!(f, "service:{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacEntry {
    pub via: NodeId,
    pub refreshed_at: f64,
}

/// Destination -> child map of one node's layer-2 switch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MacTable {
    entries: BTreeMap<NodeId, MacEntry>,
}

impl MacTable {
    pub fn lookup(&self, dest: NodeId) -> Option<NodeId> {
        self.entries.get(&dest).map(|e| e.via)
    }

    pub fn get(&self, dest: NodeId) -> Option<&MacEntry> {
        self.entries.get(&dest)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &MacEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn forget(&mut self, dest: NodeId) {
        self.entries.remove(&dest);
    }

    /// Drops every entry that points at `child`.
    pub fn purge_via(&mut self, child: NodeId) {
        self.entries.retain(|_, e| e.via != child);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Records `dest -> via_child`. Ignored (returns false) when `via_child` is no
/// longer a child, e.g. a stale ack that arrives after a handoff.
pub fn learn(table: &mut MacTable, dest: NodeId, via_child: NodeId, now: f64, children: &BTreeSet<NodeId>) -> bool {
    if !children.contains(&via_child) {
        return false;
    }
    table.entries.insert(dest, MacEntry { via: via_child, refreshed_at: now });
    true
}

fn is_attached(n: &Node) -> bool {
    n.is_hardware_ap() || n.assoc == AssocState::Associated
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UplinkAction {
    Forward(NodeId),
    /// The hardware AP hands the frame to the backbone.
    Deliver,
    Drop,
}

pub fn forward_uplink(nodes: &BTreeMap<NodeId, Node>, at: NodeId) -> UplinkAction {
    match nodes.get(&at) {
        Some(n) if n.is_hardware_ap() => UplinkAction::Deliver,
        Some(n) if n.assoc == AssocState::Associated => match n.parent {
            Some((p, _)) => UplinkAction::Forward(p),
            None => UplinkAction::Drop,
        },
        _ => UplinkAction::Drop,
    }
}

/// Node sequence from `src` up to the hardware AP, or `None` if the chain is
/// broken somewhere (orphaned or mid-handoff ancestor).
pub fn uplink_path(nodes: &BTreeMap<NodeId, Node>, src: NodeId) -> Option<Vec<NodeId>> {
    let mut path = vec![src];
    let mut cur = src;
    loop {
        match forward_uplink(nodes, cur) {
            UplinkAction::Deliver => return Some(path),
            UplinkAction::Drop => return None,
            UplinkAction::Forward(p) => {
                if path.contains(&p) || path.len() > nodes.len() {
                    return None;
                }
                path.push(p);
                cur = p;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DownlinkOutcome {
    pub delivered: bool,
    /// Every node that received a copy, in delivery order.
    pub received: Vec<NodeId>,
    /// (from, to) of every copy sent.
    pub transmissions: Vec<(NodeId, NodeId)>,
    /// Acknowledgement path from the destination back to the origin.
    pub ack_path: Vec<NodeId>,
    pub flooded: bool,
}

impl DownlinkOutcome {
    /// Copies that reached nodes off the destination's path.
    pub fn duplicate_deliveries(&self) -> usize {
        self.received.iter().filter(|n| !self.ack_path.contains(n)).count()
    }
}

/// Sends one frame from `origin` down the tree toward `dst`: table hit means
/// unicast to the learned child, miss means replicate to all children. The
/// destination acks back to the origin and every node on the ack path learns
/// `dst`. If the frame is lost, the origin and every node that unicast it
/// forget `dst` so that the next frame floods.
pub fn forward_downlink(nodes: &mut BTreeMap<NodeId, Node>, origin: NodeId, dst: NodeId, now: f64) -> DownlinkOutcome {
    let mut out = DownlinkOutcome::default();
    let mut unicasters = Vec::new();
    let mut queue = VecDeque::from([origin]);
    while let Some(x) = queue.pop_front() {
        if x == dst {
            out.delivered = true;
            continue;
        }
        let Some(node) = nodes.get(&x) else { continue };
        if x != origin && !is_attached(node) {
            continue;
        }
        let next: Vec<NodeId> = match node.mac_table.lookup(dst).filter(|c| node.children.contains(c)) {
            Some(c) => {
                unicasters.push(x);
                vec![c]
            }
            None => {
                if !node.children.is_empty() {
                    out.flooded = true;
                }
                node.children.iter().copied().collect()
            }
        };
        for c in next {
            out.transmissions.push((x, c));
            out.received.push(c);
            queue.push_back(c);
        }
    }

    if out.delivered {
        let mut path = vec![dst];
        let mut cur = dst;
        while cur != origin {
            let Some((p, _)) = nodes.get(&cur).and_then(|n| n.parent) else { break };
            let parent = nodes.get_mut(&p).expect("parent exists");
            let children = parent.children.clone();
            learn(&mut parent.mac_table, dst, cur, now, &children);
            path.push(p);
            cur = p;
        }
        path.reverse();
        out.ack_path = path;
    } else {
        for u in unicasters {
            if let Some(n) = nodes.get_mut(&u) {
                n.mac_table.forget(dst);
            }
        }
    }
    out
}

/// Bounded memory of request ids already seen, evicting the oldest.
#[derive(Clone, Debug)]
pub struct DedupCache {
    capacity: usize,
    order: VecDeque<RequestId>,
    seen: HashSet<RequestId>,
}

impl DedupCache {
    pub fn new(capacity: usize) -> Self {
        DedupCache { capacity: capacity.max(1), order: VecDeque::new(), seen: HashSet::new() }
    }

    /// Returns true if `id` was not seen before (and records it).
    pub fn insert(&mut self, id: RequestId) -> bool {
        if self.seen.contains(&id) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.order.push_back(id);
        self.seen.insert(id);
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Parent/child adjacency of every attached node.
pub fn tree_neighbors(nodes: &BTreeMap<NodeId, Node>) -> BTreeMap<NodeId, Vec<NodeId>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for n in nodes.values() {
        adj.entry(n.id).or_default();
        if n.assoc == AssocState::Associated {
            if let Some((p, _)) = n.parent {
                adj.entry(n.id).or_default().push(p);
                adj.entry(p).or_default().push(n.id);
            }
        }
    }
    for v in adj.values_mut() {
        v.sort();
        v.dedup();
    }
    adj
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceReply {
    pub provider: NodeId,
    /// Requester first, provider last.
    pub route: Vec<NodeId>,
    pub arrival_s: f64,
}

impl ServiceReply {
    pub fn hops(&self) -> usize {
        self.route.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub node: NodeId,
    pub at_s: f64,
    pub targets: Vec<NodeId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscoveryOutcome {
    pub forwards: Vec<Forward>,
    /// Receptions dropped because the id was already seen.
    pub duplicates: usize,
    pub replies: Vec<ServiceReply>,
    /// (from, to, at_s) of every reply hop.
    pub reply_hops: Vec<(NodeId, NodeId, f64)>,
}

#[derive(PartialEq)]
struct Arrival {
    at: f64,
    seq: u64,
    node: NodeId,
    from: NodeId,
    path: Vec<NodeId>,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Floods a service request from `requester` over `neighbors`. Each node
/// forwards a given request id at most once; providers also reply along the
/// reverse of the recorded path. Links with an infinite `hop_delay` lose the
/// frame.
pub fn flood_service_request(
    neighbors: &BTreeMap<NodeId, Vec<NodeId>>,
    requester: NodeId,
    providers: &BTreeSet<NodeId>,
    id: RequestId,
    dedup: &mut BTreeMap<NodeId, DedupCache>,
    dedup_capacity: usize,
    hop_delay: impl Fn(NodeId, NodeId) -> f64,
    start_s: f64,
) -> DiscoveryOutcome {
    let mut out = DiscoveryOutcome::default();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut cache = |n: NodeId| -> bool { dedup.entry(n).or_insert_with(|| DedupCache::new(dedup_capacity)).insert(id) };

    cache(requester);
    let targets = neighbors.get(&requester).cloned().unwrap_or_default();
    out.forwards.push(Forward { node: requester, at_s: start_s, targets: targets.clone() });
    for t in targets {
        let d = hop_delay(requester, t);
        if d.is_finite() {
            seq += 1;
            heap.push(Arrival { at: start_s + d, seq, node: t, from: requester, path: vec![requester, t] });
        }
    }

    while let Some(a) = heap.pop() {
        if !cache(a.node) {
            out.duplicates += 1;
            continue;
        }
        if providers.contains(&a.node) {
            let mut t = a.at;
            for w in a.path.windows(2).rev() {
                t += hop_delay(w[1], w[0]);
                out.reply_hops.push((w[1], w[0], t));
            }
            out.replies.push(ServiceReply { provider: a.node, route: a.path.clone(), arrival_s: t });
        }
        let targets: Vec<NodeId> =
            neighbors.get(&a.node).map(|v| v.iter().copied().filter(|n| *n != a.from).collect()).unwrap_or_default();
        if targets.is_empty() {
            continue;
        }
        out.forwards.push(Forward { node: a.node, at_s: a.at, targets: targets.clone() });
        for t in targets {
            let d = hop_delay(a.node, t);
            if !d.is_finite() {
                continue;
            }
            seq += 1;
            let mut path = a.path.clone();
            path.push(t);
            heap.push(Arrival { at: a.at + d, seq, node: t, from: a.node, path });
        }
    }
    out.replies.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.provider.cmp(&b.provider)));
    out
}

/// Picks the reply with the fewest hops among those arriving by `deadline_s`,
/// then the earliest arrival, then the lowest provider id.
pub fn select_provider(replies: &[ServiceReply], deadline_s: f64) -> Option<&ServiceReply> {
    replies.iter().filter(|r| r.arrival_s <= deadline_s).min_by(|a, b| {
        a.hops()
            .cmp(&b.hops())
            .then(a.arrival_s.total_cmp(&b.arrival_s))
            .then(a.provider.cmp(&b.provider))
    })
}

/// Whether every consecutive pair of `route` is still a live parent/child link.
pub fn route_intact(nodes: &BTreeMap<NodeId, Node>, route: &[NodeId]) -> bool {
    route.windows(2).all(|w| {
        let linked = |child: NodeId, parent: NodeId| {
            nodes
                .get(&child)
                .is_some_and(|c| c.assoc == AssocState::Associated && c.parent.map(|p| p.0) == Some(parent))
        };
        linked(w[0], w[1]) || linked(w[1], w[0])
    })
}

/// A traffic demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: u32,
    pub src: NodeId,
    pub dst: Destination,
    pub offered_bps: f64,
    pub start_s: f64,
    pub stop_s: f64,
    pub delivered_bits: f64,
}
