use dualmesh::bundled;
use dualmesh::domain::{validate_tree, AssocState, NodeId};
use dualmesh::engine::{run, Simulation};
use dualmesh::handoff::HandoffKind;
use dualmesh::scenario::{apply_override, derive_single_band, parse_scenario, Scenario};
use dualmesh::traffic::Destination;

fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn star() -> Scenario {
    bundled::load("fig1_dual").unwrap()
}

#[test]
fn empty_network_has_zero_throughput() {
    let s = parse_scenario("[hardware_ap]\nid = 0\nband = \"5.8\"\nchannel = 36\n[sim]\nduration_s = 5\n").unwrap();
    let out = run(&s).unwrap();
    assert_eq!(out.report.average_bps, 0.0);
    assert_eq!(out.report.node_count, 1);
}

#[test]
fn star_forms_under_the_software_ap() {
    let mut sim = Simulation::new(&star()).unwrap();
    sim.run_until(4.0).unwrap();
    let nodes = sim.nodes();
    assert_eq!(nodes[&NodeId(1)].parent.map(|p| p.0), Some(NodeId(0)));
    assert_eq!(nodes[&NodeId(2)].parent.map(|p| p.0), Some(NodeId(1)));
    assert_eq!(nodes[&NodeId(3)].parent.map(|p| p.0), Some(NodeId(1)));
    assert!(validate_tree(nodes, dualmesh::domain::Mode::DualBand).is_empty());
}

#[test]
fn edge_flows_match_hand_values() {
    let dual = run(&star()).unwrap();
    for id in [1, 2] {
        assert!(rel_eq(dual.report.flow_rates[&id], 2.75e6, 1e-9), "{:?}", dual.report.flow_rates);
    }
    // Two flows into the root over four nodes.
    assert!(rel_eq(dual.report.average_bps, 5.5e6 / 4.0, 1e-9));
    let single = run(&derive_single_band(&star()).unwrap()).unwrap();
    for id in [1, 2] {
        assert!(rel_eq(single.report.flow_rates[&id], 1.375e6, 1e-9), "{:?}", single.report.flow_rates);
    }
}

#[test]
fn same_seed_same_trace() {
    let a = run(&star()).unwrap();
    let b = run(&star()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.samples, b.samples);
}

#[test]
fn removing_the_software_ap_moves_edges_to_the_hardware_ap() {
    let mut s = star();
    s.dynamism = vec![parse_dyn("kind = \"remove_node\"\nat_s = 10\nid = 1\n")];
    s.sim.check_invariants = true;
    let mut sim = Simulation::new(&s).unwrap();
    sim.run_until(20.0).unwrap();
    for e in [2, 3] {
        let n = &sim.nodes()[&NodeId(e)];
        assert_eq!(n.assoc, AssocState::Associated);
        assert_eq!(n.parent.map(|p| p.0), Some(NodeId(0)));
    }
    assert!(sim.stats().link_breaks >= 2);
    while sim.step().unwrap() {}
    let out = sim.finish().unwrap();
    assert!(out.report.flow_rates[&1] > 0.0);
}

fn parse_dyn(body: &str) -> dualmesh::scenario::DynamismEvent {
    #[derive(serde::Deserialize)]
    struct W {
        dynamism: Vec<dualmesh::scenario::DynamismEvent>,
    }
    let w: W = toml::from_str(&format!("[[dynamism]]\n{body}")).unwrap();
    w.dynamism.into_iter().next().unwrap()
}

#[test]
fn broken_edge_link_is_detected_from_missed_beacons() {
    let mut s = star();
    s.dynamism = vec![parse_dyn("kind = \"set_attenuation\"\nat_s = 10\na = 1\nb = 2\ndb = inf\n")];
    let mut sim = Simulation::new(&s).unwrap();
    sim.run_until(10.15).unwrap();
    assert_eq!(sim.nodes()[&NodeId(2)].parent.map(|p| p.0), Some(NodeId(1)), "no loss before k beacons");
    sim.run_until(12.0).unwrap();
    let e1 = &sim.nodes()[&NodeId(2)];
    assert_eq!(e1.assoc, AssocState::Associated);
    assert_eq!(e1.parent.map(|p| p.0), Some(NodeId(0)));
    assert_eq!(sim.stats().hard_handoffs + sim.stats().orphans, 1);
}

#[test]
fn band_interferer_scales_2_4_capacity() {
    let base = star();
    let text = format!(
        "{}\n[[interferers]]\nid = 100\nband = \"2.4\"\nutilization = 0.0\n\n[[dynamism]]\nkind = \"set_interferer\"\nat_s = 20\nid = 100\nutilization = 0.3\n",
        dualmesh::scenario::serialize_scenario(&base)
    );
    let mut s: Scenario = toml::from_str(&text).unwrap();
    s.attenuation.default_db = Some(60.0);
    s.sim.window = Some(dualmesh::scenario::WindowSpec { start_s: 30.0, end_s: 60.0 });
    let out = run(&s).unwrap();
    for id in [1, 2] {
        assert!(rel_eq(out.report.flow_rates[&id], 2.75e6 * 0.7, 1e-9), "{:?}", out.report.flow_rates);
    }
}

const SUBTREE_HARD: &str = include_str!("data/subtree_hard.toml");

const SUBTREE_SOFT: &str = include_str!("data/subtree_soft.toml");

/// Runs to just before the scripted break, records the subtree of `inner`,
/// then runs to the end and counts re-associations inside that subtree.
fn subtree_reassociations(text: &str, inner: u32) -> (usize, u64, Vec<HandoffKind>) {
    let s = parse_scenario(text).unwrap();
    let mut sim = Simulation::new(&s).unwrap();
    sim.run_until(4.9).unwrap();
    let subtree = dualmesh::domain::descendants(sim.nodes(), NodeId(inner));
    let out = {
        while sim.step().unwrap() {}
        sim.finish().unwrap()
    };
    let count = subtree.iter().map(|n| out.stats.reassociations.get(n).copied().unwrap_or(0)).sum();
    let own: Vec<HandoffKind> = out.handoffs.iter().filter(|h| h.node == NodeId(inner)).map(|h| h.kind).collect();
    for n in out.final_nodes.values() {
        assert_eq!(n.assoc, AssocState::Associated, "{} not re-attached", n.id);
    }
    (subtree.len(), count, own)
}

#[test]
fn hard_handoff_reassociates_the_whole_subtree() {
    let (size, count, own) = subtree_reassociations(SUBTREE_HARD, 2);
    assert_eq!(size, 3);
    assert_eq!(own, vec![HandoffKind::Hard]);
    assert_eq!(count, size as u64);
}

#[test]
fn soft_handoff_leaves_the_subtree_alone() {
    let (size, count, own) = subtree_reassociations(SUBTREE_SOFT, 3);
    assert_eq!(size, 2);
    assert_eq!(own, vec![HandoffKind::Soft]);
    assert_eq!(count, 0);
}

#[test]
fn handoff_demo_soft_handoff_is_fast() {
    let out = run(&bundled::load("handoff_demo").unwrap()).unwrap();
    assert_eq!(out.handoffs.len(), 1);
    let h = &out.handoffs[0];
    assert_eq!((h.node, h.kind, h.to), (NodeId(3), HandoffKind::Soft, NodeId(2)));
    let latency = h.completed_s.unwrap() - h.started_s;
    assert!(latency <= 0.010 + 1e-9, "{latency}");
}

const SERVICES: &str = r#"
name = "services"
[hardware_ap]
id = 0
band = "5.8"
channel = 36
[[nodes]]
id = 1
[[nodes]]
id = 2
start_s = 0.5
[[nodes]]
id = 3
start_s = 0.5
[[nodes]]
id = 4
start_s = 1
[attenuation]
default_db = inf
link = [
  { a = 0, b = 1, db = 60 },
  { a = 1, b = 2, db = 60 },
  { a = 1, b = 3, db = 60 },
  { a = 2, b = 3, db = 98 },
  { a = 3, b = 4, db = 60 },
]
[[services]]
name = "printer"
providers = [2, 4]
[[traffic.flows]]
id = 1
src = 3
dst = "service:printer"
offered_bps = 1e6
start_s = 3
[[traffic.flows]]
id = 2
src = 2
dst = 4
offered_bps = 1e6
start_s = 3
[[dynamism]]
kind = "remove_node"
at_s = 8
id = 4
[sim]
duration_s = 12
check_invariants = true
"#;

#[test]
fn service_flow_uses_nearest_provider_and_rediscovers() {
    let s = parse_scenario(SERVICES).unwrap();
    let mut sim = Simulation::new(&s).unwrap();
    sim.run_until(6.0).unwrap();
    let flows: Vec<_> = sim.flows().cloned().collect();
    assert_eq!(flows[0].spec.dst, Destination::Service("printer".into()));
    assert_eq!(flows[0].path.as_deref(), Some(&[NodeId(3), NodeId(4)][..]));
    // Node-to-node flow climbs to the common ancestor and descends.
    assert_eq!(flows[1].path.as_deref(), Some(&[NodeId(2), NodeId(1), NodeId(3), NodeId(4)][..]));
    assert!(sim.stats().floods >= 1);
    sim.run_until(11.0).unwrap();
    let flows: Vec<_> = sim.flows().cloned().collect();
    assert_eq!(flows[0].path.as_deref(), Some(&[NodeId(3), NodeId(1), NodeId(2)][..]));
    assert_eq!(flows[1].path, None);
    assert_eq!(sim.stats().rediscoveries, 1);
    assert!(sim.stats().control_frames > 0);
}

#[test]
fn sweep_override_reaches_engine() {
    let s = bundled::load("interference_demo").unwrap();
    let a = run(&derive_single_band(&s).unwrap()).unwrap().report.average_bps;
    let busy = apply_override(&s, "interferers[0].utilization", "0.6").unwrap();
    let b = run(&derive_single_band(&busy).unwrap()).unwrap().report.average_bps;
    assert!(b < a);
}

#[test]
fn scale_50_keeps_a_valid_tree() {
    let s = bundled::load("scale_50").unwrap();
    assert!(s.sim.check_invariants);
    let out = run(&s).unwrap();
    assert_eq!(out.stats.joins, 49);
    assert!(out.report.average_bps > 0.0);
}
