//! Fluid max-min fair rate allocation over contention cliques.
//!
//! Each hop of a flow occupies its transmitter's channel for
//! `1 / (eta * bit_rate * (1 - e_f))` seconds per delivered bit. Within a
//! clique the hop airtimes of all flows plus the external utilization may not
//! exceed 1.

use std::collections::{BTreeMap, BTreeSet};

use crate::radio::{build_contention_cliques, AttenuationMatrix, ContentionClique, InterfererState, PropagationParams, Transmitter, TxKey};

/// One wireless hop of a flow path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopLink {
    pub tx: TxKey,
    pub bit_rate_bps: f64,
    pub frame_error_rate: f64,
}

impl HopLink {
    /// Seconds of channel time per delivered bit; infinite for a dead link.
    pub fn airtime_per_bit(&self, mac_efficiency: f64) -> f64 {
        let goodput = mac_efficiency * self.bit_rate_bps * (1.0 - self.frame_error_rate);
        if goodput > 0.0 {
            1.0 / goodput
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPath {
    pub id: u32,
    pub offered_bps: f64,
    pub hops: Vec<HopLink>,
}

/// Everything the solver needs at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RateInstance {
    pub transmitters: Vec<Transmitter>,
    pub interferers: Vec<InterfererState>,
    pub matrix: AttenuationMatrix,
    pub propagation: PropagationParams,
    pub mac_efficiency: f64,
    pub flows: Vec<FlowPath>,
}

/// Linear constraint `sum(coeff * rate) <= capacity`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub capacity: f64,
    pub coeffs: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateProblem {
    pub flow_ids: Vec<u32>,
    pub offered: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateAssignment {
    pub rates: BTreeMap<u32, f64>,
    /// Busy fraction of each constraint, external utilization included, in
    /// clique order followed by any stand-alone transmitter constraints.
    pub utilization: Vec<f64>,
}

impl RateAssignment {
    pub fn rate(&self, flow: u32) -> f64 {
        self.rates.get(&flow).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.rates.values().sum()
    }
}

/// Turns flow paths and cliques into airtime constraints. A hop whose
/// transmitter sits in no clique gets a private unit-capacity constraint.
pub fn build_problem(flows: &[FlowPath], cliques: &[ContentionClique], mac_efficiency: f64) -> RateProblem {
    let mut constraints: Vec<Constraint> = cliques
        .iter()
        .map(|q| {
            let mut coeffs = Vec::new();
            for (i, f) in flows.iter().enumerate() {
                let a: f64 = f.hops.iter().filter(|h| q.members.contains(&h.tx)).map(|h| h.airtime_per_bit(mac_efficiency)).sum();
                if a > 0.0 {
                    coeffs.push((i, a));
                }
            }
            Constraint { capacity: (1.0 - q.external_utilization).max(0.0), coeffs }
        })
        .collect();

    let covered: BTreeSet<TxKey> = cliques.iter().flat_map(|q| q.members.iter().copied()).collect();
    let mut loose: BTreeMap<TxKey, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        for h in f.hops.iter().filter(|h| !covered.contains(&h.tx)) {
            let entry = loose.entry(h.tx).or_default();
            match entry.iter_mut().find(|(j, _)| *j == i) {
                Some((_, a)) => *a += h.airtime_per_bit(mac_efficiency),
                None => entry.push((i, h.airtime_per_bit(mac_efficiency))),
            }
        }
    }
    constraints.extend(loose.into_values().map(|coeffs| Constraint { capacity: 1.0, coeffs }));

    RateProblem {
        flow_ids: flows.iter().map(|f| f.id).collect(),
        offered: flows.iter().map(|f| f.offered_bps.max(0.0)).collect(),
        constraints,
    }
}

const REL_EPS: f64 = 1e-12;

/// Progressive filling: raise every unfrozen flow together until a
/// constraint saturates or a flow reaches its offered rate, freeze the
/// affected flows, repeat.
pub fn progressive_fill(problem: &RateProblem) -> RateAssignment {
    let n = problem.offered.len();
    let mut rate = vec![0.0f64; n];
    let mut frozen: Vec<bool> = problem.offered.iter().map(|o| *o <= 0.0).collect();
    for c in &problem.constraints {
        for &(i, a) in &c.coeffs {
            if !a.is_finite() || c.capacity <= 0.0 {
                frozen[i] = true;
            }
        }
    }

    let used = |c: &Constraint, rate: &[f64]| -> f64 { c.coeffs.iter().map(|&(i, a)| if rate[i] > 0.0 { a * rate[i] } else { 0.0 }).sum() };

    while frozen.iter().any(|f| !f) {
        let mut delta = f64::INFINITY;
        for i in 0..n {
            if !frozen[i] {
                delta = delta.min(problem.offered[i] - rate[i]);
            }
        }
        for c in &problem.constraints {
            let slope: f64 = c.coeffs.iter().filter(|(i, _)| !frozen[*i]).map(|(_, a)| a).sum();
            if slope > 0.0 {
                delta = delta.min(((c.capacity - used(c, &rate)) / slope).max(0.0));
            }
        }
        if !delta.is_finite() {
            // Unconstrained and unbounded cannot happen with finite offered rates.
            break;
        }
        for i in 0..n {
            if !frozen[i] {
                rate[i] += delta;
            }
        }
        let mut progressed = false;
        for i in 0..n {
            if !frozen[i] && rate[i] >= problem.offered[i] * (1.0 - REL_EPS) {
                rate[i] = problem.offered[i];
                frozen[i] = true;
                progressed = true;
            }
        }
        for c in &problem.constraints {
            let slack = c.capacity - used(c, &rate);
            if slack <= c.capacity * 1e-12 + 1e-15 {
                for &(i, _) in &c.coeffs {
                    if !frozen[i] {
                        frozen[i] = true;
                        progressed = true;
                    }
                }
            }
        }
        if !progressed {
            break;
        }
    }

    RateAssignment {
        rates: problem.flow_ids.iter().copied().zip(rate.iter().copied()).collect(),
        utilization: problem.constraints.iter().map(|c| (1.0 - c.capacity) + used(c, &rate)).collect(),
    }
}

/// Max-min fair rates for `flows` sharing airtime in `cliques`.
pub fn solve_rates(flows: &[FlowPath], cliques: &[ContentionClique], mac_efficiency: f64) -> RateAssignment {
    progressive_fill(&build_problem(flows, cliques, mac_efficiency))
}

pub fn solve_instance(inst: &RateInstance) -> RateAssignment {
    let cliques = build_contention_cliques(&inst.transmitters, &inst.interferers, &inst.matrix, &inst.propagation);
    solve_rates(&inst.flows, &cliques, inst.mac_efficiency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Band, Channel, NodeId};
    use proptest::prelude::*;

    fn key(n: u32, r: u8) -> TxKey {
        TxKey { node: NodeId(n), radio: r }
    }

    fn hop(n: u32, r: u8) -> HopLink {
        HopLink { tx: key(n, r), bit_rate_bps: 11e6, frame_error_rate: 0.0 }
    }

    fn clique(ch: Channel, members: &[TxKey], ext: f64) -> ContentionClique {
        ContentionClique { channel: ch, members: members.iter().copied().collect(), interferers: BTreeSet::new(), external_utilization: ext }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn single_link_is_eta_r() {
        let c24 = Channel::first(Band::Band24);
        let flows = [FlowPath { id: 1, offered_bps: 10e6, hops: vec![hop(1, 0)] }];
        let r = solve_rates(&flows, &[clique(c24, &[key(1, 0)], 0.0)], 0.5);
        assert!(rel(r.rate(1), 5.5e6) < 1e-12);
    }

    #[test]
    fn single_band_shared_channel_relay() {
        // E1 -> SW -> HW and E2 -> SW -> HW all on one channel: 4 airtime uses.
        let c = Channel::first(Band::Band24);
        let flows = [
            FlowPath { id: 1, offered_bps: 20e6, hops: vec![hop(2, 0), hop(1, 0)] },
            FlowPath { id: 2, offered_bps: 20e6, hops: vec![hop(3, 0), hop(1, 0)] },
        ];
        let r = solve_rates(&flows, &[clique(c, &[key(1, 0), key(2, 0), key(3, 0)], 0.0)], 0.5);
        assert!(rel(r.rate(1), 1.375e6) < 1e-6);
        assert!(rel(r.rate(2), 1.375e6) < 1e-6);
        assert!(rel(r.utilization[0], 1.0) < 1e-9);
    }

    #[test]
    fn dual_band_splits_load_across_bands() {
        let c24 = Channel::first(Band::Band24);
        let c58 = Channel::first(Band::Band58);
        let flows = [
            FlowPath { id: 1, offered_bps: 20e6, hops: vec![hop(2, 0), hop(1, 0)] },
            FlowPath { id: 2, offered_bps: 20e6, hops: vec![hop(3, 0), hop(1, 0)] },
        ];
        let cliques = [clique(c24, &[key(2, 0), key(3, 0)], 0.0), clique(c58, &[key(1, 0)], 0.0)];
        let r = solve_rates(&flows, &cliques, 0.5);
        assert!(rel(r.rate(1), 2.75e6) < 1e-6);
        assert!(rel(r.rate(2), 2.75e6) < 1e-6);
    }

    #[test]
    fn offered_rate_caps_and_leftover_goes_to_others() {
        let c = Channel::first(Band::Band24);
        let flows = [
            FlowPath { id: 1, offered_bps: 1e6, hops: vec![hop(1, 0)] },
            FlowPath { id: 2, offered_bps: 20e6, hops: vec![hop(2, 0)] },
        ];
        let r = solve_rates(&flows, &[clique(c, &[key(1, 0), key(2, 0)], 0.0)], 0.5);
        assert_eq!(r.rate(1), 1e6);
        assert!(rel(r.rate(2), 4.5e6) < 1e-9);
    }

    #[test]
    fn external_utilization_scales_capacity() {
        let c = Channel::first(Band::Band24);
        let flows = [FlowPath { id: 1, offered_bps: 20e6, hops: vec![hop(1, 0)] }];
        let r = solve_rates(&flows, &[clique(c, &[key(1, 0)], 0.3)], 0.5);
        assert!(rel(r.rate(1), 0.7 * 5.5e6) < 1e-12);
        let r = solve_rates(&flows, &[clique(c, &[key(1, 0)], 1.0)], 0.5);
        assert_eq!(r.rate(1), 0.0);
    }

    #[test]
    fn dead_link_and_empty_inputs() {
        let c = Channel::first(Band::Band24);
        let dead = HopLink { frame_error_rate: 1.0, ..hop(1, 0) };
        let flows = [
            FlowPath { id: 1, offered_bps: 5e6, hops: vec![dead] },
            FlowPath { id: 2, offered_bps: 5e6, hops: vec![hop(2, 0)] },
        ];
        let r = solve_rates(&flows, &[clique(c, &[key(1, 0), key(2, 0)], 0.0)], 0.5);
        assert_eq!(r.rate(1), 0.0);
        assert!(rel(r.rate(2), 5e6) < 1e-12);
        assert!(solve_rates(&[], &[], 0.5).rates.is_empty());
    }

    #[test]
    fn uncovered_hop_gets_private_constraint() {
        let flows = [FlowPath { id: 7, offered_bps: 20e6, hops: vec![hop(1, 0)] }];
        let r = solve_rates(&flows, &[], 0.5);
        assert!(rel(r.rate(7), 5.5e6) < 1e-12);
    }

    #[test]
    fn moving_a_hop_can_lower_another_flow() {
        let problem = |cs: Vec<Constraint>| RateProblem { flow_ids: vec![0, 1, 2], offered: vec![10.0; 3], constraints: cs };
        let before = progressive_fill(&problem(vec![
            Constraint { capacity: 1.0, coeffs: vec![(0, 1.0), (1, 2.0)] },
            Constraint { capacity: 1.0, coeffs: vec![(1, 1.0), (2, 1.0)] },
        ]));
        let after = progressive_fill(&problem(vec![
            Constraint { capacity: 1.0, coeffs: vec![(0, 1.0)] },
            Constraint { capacity: 1.0, coeffs: vec![(1, 1.0), (2, 1.0)] },
            Constraint { capacity: 1.0, coeffs: vec![(1, 2.0)] },
        ]));
        assert!(rel(before.rate(2), 2.0 / 3.0) < 1e-9);
        assert!(rel(after.rate(2), 0.5) < 1e-9);
        assert!(after.rate(1) > before.rate(1));
    }

    #[derive(Debug, Clone)]
    struct RandomProblem {
        offered: Vec<f64>,
        constraints: Vec<(f64, Vec<(usize, f64)>)>,
    }

    fn random_problem() -> impl Strategy<Value = RandomProblem> {
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(1e5f64..2e7, n),
                prop::collection::vec(
                    (0.0f64..=1.0, prop::collection::vec((0..n, 1e-8f64..1e-6), 1..4)),
                    1..5,
                ),
            )
                .prop_map(|(offered, cs)| RandomProblem {
                    offered,
                    constraints: cs.into_iter().map(|(cap, mut co)| {
                        co.sort_by_key(|(i, _)| *i);
                        co.dedup_by_key(|(i, _)| *i);
                        (cap, co)
                    }).collect(),
                })
        })
    }

    fn to_problem(p: &RandomProblem) -> RateProblem {
        RateProblem {
            flow_ids: (0..p.offered.len() as u32).collect(),
            offered: p.offered.clone(),
            constraints: p.constraints.iter().map(|(cap, co)| Constraint { capacity: *cap, coeffs: co.clone() }).collect(),
        }
    }

    proptest! {
        #[test]
        fn feasible_and_work_conserving(p in random_problem()) {
            let problem = to_problem(&p);
            let r = progressive_fill(&problem);
            for c in &problem.constraints {
                let used: f64 = c.coeffs.iter().map(|&(i, a)| a * r.rate(i as u32)).sum();
                prop_assert!(c.capacity - used >= -1e-9);
            }
            for (i, off) in problem.offered.iter().enumerate() {
                let x = r.rate(i as u32);
                prop_assert!(x >= 0.0 && x <= off * (1.0 + 1e-12));
                if x < off * (1.0 - 1e-9) {
                    let saturated = problem.constraints.iter().any(|c| {
                        c.coeffs.iter().any(|(j, _)| *j == i)
                            && c.capacity - c.coeffs.iter().map(|&(j, a)| a * r.rate(j as u32)).sum::<f64>() <= 1e-9 * c.capacity.max(1e-9)
                    });
                    prop_assert!(saturated, "flow {i} below offered without a saturated constraint");
                }
            }
        }

        #[test]
        fn moving_a_hop_to_an_empty_channel_never_lowers_the_minimum(p in random_problem(), which in 0usize..5, pick in 0usize..4) {
            let base = to_problem(&p);
            let mut moved = base.clone();
            let k = which % moved.constraints.len();
            let c = &mut moved.constraints[k];
            if !c.coeffs.is_empty() {
                let hop = c.coeffs.remove(pick % c.coeffs.len());
                moved.constraints.push(Constraint { capacity: 1.0, coeffs: vec![hop] });
            }
            let min = |r: &RateAssignment| r.rates.values().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min(&progressive_fill(&moved)) >= min(&progressive_fill(&base)) * (1.0 - 1e-9));
        }
    }
}
