use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use dualmesh::domain::{AssocState, Band, Channel, Mode, Node, NodeId};
use dualmesh::traffic::{flood_service_request, forward_downlink, tree_neighbors, uplink_path, DedupCache, RequestId};

/// Random tree under HW AP 0: node i > 0 attaches to a uniformly chosen
/// earlier node.
fn tree(parents: &[usize]) -> BTreeMap<NodeId, Node> {
    let mut nodes = BTreeMap::new();
    nodes.insert(NodeId(0), Node::hardware_ap(NodeId(0), Channel::first(Band::Band58), 20.0, 11e6));
    for (i, p) in parents.iter().enumerate() {
        let id = NodeId(i as u32 + 1);
        let parent = NodeId((*p % (i + 1)) as u32);
        let mut n = Node::mesh(id, Mode::DualBand, 20.0, 11e6);
        n.assoc = AssocState::Associated;
        n.parent = Some((parent, Band::Band24));
        nodes.insert(id, n);
        nodes.get_mut(&parent).unwrap().children.insert(id);
    }
    nodes
}

fn tree_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..1000, 1..30)
}

proptest! {
    #[test]
    fn service_request_forwards_at_most_once_per_node(
        parents in tree_strategy(),
        requester in 0usize..1000,
        providers in prop::collection::vec(0usize..1000, 0..4),
    ) {
        let nodes = tree(&parents);
        let n = nodes.len();
        let requester = NodeId((requester % n) as u32);
        let providers: BTreeSet<NodeId> = providers.iter().map(|p| NodeId((p % n) as u32)).filter(|p| *p != requester).collect();
        let neighbors = tree_neighbors(&nodes);
        let mut dedup: BTreeMap<NodeId, DedupCache> = BTreeMap::new();
        let out = flood_service_request(&neighbors, requester, &providers, RequestId { origin: requester, seq: 1 }, &mut dedup, 64, |_, _| 0.001, 0.0);
        prop_assert!(out.forwards.len() <= n);
        let forwarders: BTreeSet<NodeId> = out.forwards.iter().map(|f| f.node).collect();
        prop_assert_eq!(forwarders.len(), out.forwards.len());
        // On a tree every provider hears the request and replies once.
        let got: BTreeSet<NodeId> = out.replies.iter().map(|r| r.provider).collect();
        prop_assert_eq!(got.len(), out.replies.len());
        prop_assert_eq!(&got, &providers);
        for r in &out.replies {
            prop_assert_eq!(r.route.first(), Some(&requester));
            prop_assert_eq!(r.route.last(), Some(&r.provider));
        }
    }

    #[test]
    fn second_downlink_frame_is_duplicate_free(parents in tree_strategy(), dst in 0usize..1000) {
        let mut nodes = tree(&parents);
        let dst = NodeId((dst % nodes.len()) as u32);
        let first = forward_downlink(&mut nodes, NodeId(0), dst, 1.0);
        prop_assert!(first.delivered);
        let second = forward_downlink(&mut nodes, NodeId(0), dst, 2.0);
        prop_assert!(second.delivered);
        prop_assert!(!second.flooded);
        prop_assert_eq!(second.duplicate_deliveries(), 0);
        prop_assert_eq!(second.transmissions.len(), second.ack_path.len().saturating_sub(1));
        prop_assert_eq!(&second.ack_path, &first.ack_path);
    }

    #[test]
    fn relays_forward_what_they_receive(parents in tree_strategy(), dst in 0usize..1000, src in 0usize..1000) {
        let mut nodes = tree(&parents);
        let n = nodes.len();
        let dst = NodeId((dst % n) as u32);
        let src = NodeId((src % n) as u32);
        forward_downlink(&mut nodes, NodeId(0), dst, 1.0);
        let down = forward_downlink(&mut nodes, NodeId(0), dst, 2.0);
        let mut rx: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut tx: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (a, b) in &down.transmissions {
            *tx.entry(*a).or_default() += 1;
            *rx.entry(*b).or_default() += 1;
        }
        for relay in &down.ack_path[1..down.ack_path.len().saturating_sub(1).max(1)] {
            prop_assert_eq!(rx.get(relay), tx.get(relay), "relay {}", relay);
        }
        let up = uplink_path(&nodes, src).unwrap();
        prop_assert_eq!(up.first(), Some(&src));
        prop_assert_eq!(up.last(), Some(&NodeId(0)));
        let distinct: BTreeSet<_> = up.iter().collect();
        prop_assert_eq!(distinct.len(), up.len());
    }
}
