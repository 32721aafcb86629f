//! Background candidate scanning, the stay / soft / hard handoff rule, and the
//! association bookkeeping of a handoff.
//!
//! A soft handoff moves the upstream link to another AP on the same band and
//! leaves the node's serving radio, and therefore its whole subtree, alone. A
//! hard handoff moves the upstream link to the other band; the serving radio
//! flips to the old upstream band on a freshly assigned channel and every
//! child is told to disassociate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{AssocState, Band, Channel, Node, NodeId, RadioRole};
use crate::formation::detach;
use crate::metric::{candidate_order, ScoredAp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandoffConfig {
    /// Background scan interval T, seconds.
    #[serde(rename = "T")]
    pub scan_interval_s: f64,
    /// Metric value above which the current link is unacceptable, microseconds.
    pub theta_us: f64,
    /// Consecutive lost beacons that declare the link broken.
    pub k: u32,
    /// A same-band candidate wins if its metric is within this factor of the best.
    pub alpha: f64,
}

impl Default for HandoffConfig {
    fn default() -> Self {
        HandoffConfig { scan_interval_s: 1.0, theta_us: 3000.0, k: 3, alpha: 1.5 }
    }
}

impl HandoffConfig {
    pub fn is_valid(&self) -> bool {
        self.scan_interval_s > 0.0
            && self.scan_interval_s.is_finite()
            && self.theta_us > 0.0
            && self.k >= 1
            && self.alpha >= 1.0
            && self.alpha.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub ap: ScoredAp,
    pub seen_at: f64,
}

/// APs heard in background scans, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateList {
    entries: Vec<Candidate>,
}

impl CandidateList {
    /// Builds a list from a fresh scan, dropping `owner` and its subtree.
    pub fn from_scan(scored: Vec<ScoredAp>, now: f64, owner: NodeId, subtree: &BTreeSet<NodeId>) -> Self {
        let mut list = CandidateList::default();
        for ap in scored {
            list.insert(Candidate { ap, seen_at: now }, owner, subtree);
        }
        list
    }

    pub fn insert(&mut self, c: Candidate, owner: NodeId, subtree: &BTreeSet<NodeId>) {
        if c.ap.ap == owner || subtree.contains(&c.ap.ap) {
            return;
        }
        self.entries.retain(|e| e.ap.ap != c.ap.ap || e.ap.channel != c.ap.channel);
        let pos = self.entries.partition_point(|e| candidate_order(&e.ap, &c.ap).is_lt());
        self.entries.insert(pos, c);
    }

    pub fn expire(&mut self, now: f64, max_age: f64) {
        self.entries.retain(|c| now - c.seen_at <= max_age);
    }

    pub fn remove_ap(&mut self, ap: NodeId) {
        self.entries.retain(|c| c.ap.ap != ap);
    }

    pub fn retain(&mut self, f: impl FnMut(&Candidate) -> bool) {
        self.entries.retain(f);
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.entries.first()
    }

    pub fn best_on(&self, band: Band) -> Option<&Candidate> {
        self.entries.iter().find(|c| c.ap.band == band)
    }

    pub fn pop_front(&mut self) -> Option<Candidate> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.remove(0))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rebuilds a node's candidate list from a background scan.
pub fn refresh_candidates(
    nodes: &BTreeMap<NodeId, Node>,
    node: NodeId,
    scored: Vec<ScoredAp>,
    now: f64,
) -> CandidateList {
    let subtree = crate::domain::descendants(nodes, node);
    let mut list = CandidateList::from_scan(scored, now, node, &subtree);
    if let Some((parent, _)) = nodes.get(&node).and_then(|n| n.parent) {
        list.remove_ap(parent);
    }
    list
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HandoffKind {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HandoffDecision {
    Stay,
    Soft(ScoredAp),
    Hard(ScoredAp),
}

impl HandoffDecision {
    pub fn target(&self) -> Option<&ScoredAp> {
        match self {
            HandoffDecision::Stay => None,
            HandoffDecision::Soft(t) | HandoffDecision::Hard(t) => Some(t),
        }
    }

    pub fn kind(&self) -> Option<HandoffKind> {
        match self {
            HandoffDecision::Stay => None,
            HandoffDecision::Soft(_) => Some(HandoffKind::Soft),
            HandoffDecision::Hard(_) => Some(HandoffKind::Hard),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandoffError {
    #[error("node {0} orphaned: link broken and no candidates")]
    Orphaned(NodeId),
}

/// Current state of the upstream link as seen by the deciding node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkStatus {
    Up { metric_us: f64 },
    Broken,
}

/// The stay / soft / hard rule. A link that is up and within `theta` is kept
/// even when a better candidate exists.
pub fn decide(
    node: NodeId,
    upstream_band: Band,
    link: LinkStatus,
    candidates: &CandidateList,
    cfg: &HandoffConfig,
) -> Result<HandoffDecision, HandoffError> {
    if let LinkStatus::Up { metric_us } = link {
        if metric_us <= cfg.theta_us {
            return Ok(HandoffDecision::Stay);
        }
    }
    let Some(best) = candidates.best() else {
        return match link {
            LinkStatus::Broken => Err(HandoffError::Orphaned(node)),
            LinkStatus::Up { .. } => Ok(HandoffDecision::Stay),
        };
    };
    if let Some(same) = candidates.best_on(upstream_band) {
        if same.ap.metric.0 <= cfg.alpha * best.ap.metric.0 {
            return Ok(HandoffDecision::Soft(same.ap));
        }
    }
    Ok(HandoffDecision::Hard(best.ap))
}

/// What a started handoff changed.
#[derive(Clone, Debug, PartialEq)]
pub struct HandoffStart {
    pub kind: HandoffKind,
    pub old_parent: Option<NodeId>,
    /// Children told to disassociate (hard handoff only).
    pub disassociated: Vec<NodeId>,
    /// Serving channel the node will activate on completion.
    pub serving: Channel,
}

/// Tears down the node's current association and enters `Reassociating`.
/// For a hard handoff, both radios go idle and all children are detached
/// (they end up parentless in `Reassociating(node)` until they decide for
/// themselves). `new_serving` is only used for hard handoffs.
pub fn begin_handoff(
    nodes: &mut BTreeMap<NodeId, Node>,
    node: NodeId,
    kind: HandoffKind,
    target: NodeId,
    new_serving: Channel,
) -> HandoffStart {
    let old_parent = nodes.get(&node).and_then(|n| n.parent.map(|p| p.0));
    detach(nodes, node);
    let n = nodes.get_mut(&node).expect("handoff of unknown node");
    n.assoc = n.assoc.transition(AssocState::Reassociating(target)).unwrap_or(AssocState::Reassociating(target));
    if let Some(i) = n.radio_index(RadioRole::Upstream) {
        n.radios[i].deactivate();
    }
    match kind {
        HandoffKind::Soft => {
            let serving = n.serving_channel().unwrap_or(new_serving);
            HandoffStart { kind, old_parent, disassociated: Vec::new(), serving }
        }
        HandoffKind::Hard => {
            if let Some(i) = n.radio_index(RadioRole::Serving) {
                n.radios[i].deactivate();
            }
            let children: Vec<NodeId> = std::mem::take(&mut n.children).into_iter().collect();
            n.mac_table.clear();
            for c in &children {
                if let Some(child) = nodes.get_mut(c) {
                    child.parent = None;
                    if let Some(i) = child.radio_index(RadioRole::Upstream) {
                        child.radios[i].deactivate();
                    }
                    child.assoc = AssocState::Reassociating(node);
                }
            }
            HandoffStart { kind, old_parent, disassociated: children, serving: new_serving }
        }
    }
}

/// Band on which the node's upstream link will sit after a handoff of `kind`.
pub fn upstream_band_after(current: Band, kind: HandoffKind) -> Band {
    match kind {
        HandoffKind::Soft => current,
        HandoffKind::Hard => current.other(),
    }
}

/// Completes a pending handoff: the node's radios are set for `upstream` and
/// `serving` and it is adopted by `ap`.
pub fn finish_handoff(
    nodes: &mut BTreeMap<NodeId, Node>,
    node: NodeId,
    ap: NodeId,
    upstream: Channel,
    serving: Channel,
) -> Result<(), crate::formation::FormationError> {
    crate::formation::complete_association(nodes, node, ap, upstream, serving)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_tree, Mode};
    use crate::metric::LinkQualityMetric;

    fn cand(ap: u32, band: Band, m: f64) -> ScoredAp {
        ScoredAp { ap: NodeId(ap), band, channel: Channel::first(band), rssi_dbm: -50.0, metric: LinkQualityMetric(m) }
    }

    fn list(items: &[ScoredAp]) -> CandidateList {
        CandidateList::from_scan(items.to_vec(), 0.0, NodeId(99), &BTreeSet::new())
    }

    #[test]
    fn stays_when_link_good_enough() {
        let cfg = HandoffConfig { theta_us: 1500.0, ..Default::default() };
        let l = list(&[cand(1, Band::Band24, 700.0)]);
        let d = decide(NodeId(5), Band::Band24, LinkStatus::Up { metric_us: 900.0 }, &l, &cfg).unwrap();
        assert_eq!(d, HandoffDecision::Stay);
    }

    #[test]
    fn soft_when_same_band_within_alpha() {
        let cfg = HandoffConfig { theta_us: 1500.0, alpha: 1.3, ..Default::default() };
        let l = list(&[cand(1, Band::Band58, 800.0), cand(2, Band::Band24, 1000.0)]);
        let d = decide(NodeId(5), Band::Band24, LinkStatus::Up { metric_us: 2000.0 }, &l, &cfg).unwrap();
        assert_eq!(d, HandoffDecision::Soft(cand(2, Band::Band24, 1000.0)));
        // Just outside the factor: 1000 > 1.2 * 800.
        let cfg = HandoffConfig { alpha: 1.2, ..cfg };
        let d = decide(NodeId(5), Band::Band24, LinkStatus::Up { metric_us: 2000.0 }, &l, &cfg).unwrap();
        assert_eq!(d, HandoffDecision::Hard(cand(1, Band::Band58, 800.0)));
    }

    #[test]
    fn broken_link_forces_hard_to_only_candidate() {
        let l = list(&[cand(1, Band::Band58, 900.0)]);
        let d = decide(NodeId(5), Band::Band24, LinkStatus::Broken, &l, &HandoffConfig::default()).unwrap();
        assert_eq!(d, HandoffDecision::Hard(cand(1, Band::Band58, 900.0)));
    }

    #[test]
    fn broken_link_without_candidates_orphans() {
        let r = decide(NodeId(5), Band::Band24, LinkStatus::Broken, &CandidateList::default(), &HandoffConfig::default());
        assert_eq!(r, Err(HandoffError::Orphaned(NodeId(5))));
        let r = decide(NodeId(5), Band::Band24, LinkStatus::Up { metric_us: 1e9 }, &CandidateList::default(), &HandoffConfig::default());
        assert_eq!(r, Ok(HandoffDecision::Stay));
    }

    #[test]
    fn candidate_list_excludes_self_and_subtree_and_expires() {
        let sub: BTreeSet<NodeId> = [NodeId(3)].into();
        let mut l = CandidateList::from_scan(
            vec![cand(1, Band::Band24, 900.0), cand(3, Band::Band24, 500.0), cand(7, Band::Band58, 800.0)],
            0.0,
            NodeId(7),
            &sub,
        );
        assert_eq!(l.iter().map(|c| c.ap.ap).collect::<Vec<_>>(), vec![NodeId(1)]);
        l.insert(Candidate { ap: cand(2, Band::Band58, 600.0), seen_at: 1.5 }, NodeId(7), &sub);
        assert_eq!(l.best().unwrap().ap.ap, NodeId(2));
        l.expire(2.5, 2.0);
        assert_eq!(l.len(), 1);
        assert_eq!(l.best().unwrap().ap.ap, NodeId(2));
    }

    fn chain() -> BTreeMap<NodeId, Node> {
        // 0 (HW, 5.8/36) <- 1 (up 5.8, serve 2.4/1) <- 2, 3 (up 2.4, serve 5.8/36)
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId(0), Node::hardware_ap(NodeId(0), Channel::first(Band::Band58), 20.0, 11e6));
        for id in 1..=3 {
            nodes.insert(NodeId(id), Node::mesh(NodeId(id), Mode::DualBand, 20.0, 11e6));
        }
        crate::formation::complete_association(&mut nodes, NodeId(1), NodeId(0), Channel::first(Band::Band58), Channel::first(Band::Band24)).unwrap();
        for c in [2, 3] {
            crate::formation::complete_association(&mut nodes, NodeId(c), NodeId(1), Channel::first(Band::Band24), Channel::first(Band::Band58)).unwrap();
        }
        nodes
    }

    #[test]
    fn soft_handoff_keeps_subtree() {
        let mut nodes = chain();
        let before: Vec<_> = [2, 3].iter().map(|c| nodes[&NodeId(*c)].parent).collect();
        let start = begin_handoff(&mut nodes, NodeId(1), HandoffKind::Soft, NodeId(0), Channel::first(Band::Band24));
        assert!(start.disassociated.is_empty());
        assert!(validate_tree(&nodes, Mode::DualBand).is_empty());
        finish_handoff(&mut nodes, NodeId(1), NodeId(0), Channel::first(Band::Band58), start.serving).unwrap();
        let after: Vec<_> = [2, 3].iter().map(|c| nodes[&NodeId(*c)].parent).collect();
        assert_eq!(before, after);
        assert!(validate_tree(&nodes, Mode::DualBand).is_empty());
    }

    #[test]
    fn hard_handoff_disassociates_children() {
        let mut nodes = chain();
        let start = begin_handoff(&mut nodes, NodeId(1), HandoffKind::Hard, NodeId(0), Channel::first(Band::Band58));
        assert_eq!(start.disassociated, vec![NodeId(2), NodeId(3)]);
        assert!(validate_tree(&nodes, Mode::DualBand).is_empty(), "{:?}", validate_tree(&nodes, Mode::DualBand));
        let leaf = begin_handoff(&mut nodes, NodeId(2), HandoffKind::Hard, NodeId(0), Channel::first(Band::Band24));
        assert!(leaf.disassociated.is_empty());
    }
}
