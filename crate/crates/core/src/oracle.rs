//! Brute-force reference for the rate solver. Shares no code with the solver
//! path: cliques come from exhaustive subset enumeration, the max-min point
//! from bisection on a common level followed by bottleneck freezing.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::Channel;
use crate::radio::TxKey;
use crate::solver::RateInstance;

/// Maximal mutually-sensing transmitter sets with their external load.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteClique {
    pub channel: Channel,
    pub members: BTreeSet<TxKey>,
    pub external_utilization: f64,
}

fn hears(tx_power: f64, att: f64, threshold: f64) -> bool {
    att.is_finite() && tx_power - att >= threshold
}

/// Enumerates every subset of each channel's transmitters and keeps the
/// maximal ones whose members all hear each other. Exponential; meant for
/// instances of a dozen transmitters or fewer.
pub fn enumerate_cliques(inst: &RateInstance) -> Vec<BruteClique> {
    let cs = inst.propagation.cs_threshold_dbm;
    let mut channels: Vec<Channel> = inst.transmitters.iter().map(|t| t.channel).collect();
    channels.sort();
    channels.dedup();

    let mut out = Vec::new();
    for ch in channels {
        let mut txs: Vec<_> = inst.transmitters.iter().filter(|t| t.channel == ch).collect();
        txs.sort_by_key(|t| t.key);
        txs.dedup_by_key(|t| t.key);
        let n = txs.len();
        assert!(n <= 20, "brute-force clique enumeration limited to 20 transmitters per channel");
        let pair = |i: usize, j: usize| {
            let att = inst.matrix.get(txs[i].key.node, txs[j].key.node);
            hears(txs[i].tx_power_dbm, att, cs) && hears(txs[j].tx_power_dbm, att, cs)
        };
        let is_clique = |mask: u32| {
            (0..n).all(|i| mask & (1 << i) == 0 || (i + 1..n).all(|j| mask & (1 << j) == 0 || pair(i, j)))
        };
        let cliques: Vec<u32> = (1u32..(1 << n)).filter(|m| is_clique(*m)).collect();
        for &m in &cliques {
            let maximal = cliques.iter().all(|&o| o == m || o & m != m);
            if !maximal {
                continue;
            }
            let members: BTreeSet<TxKey> = (0..n).filter(|i| m & (1 << i) != 0).map(|i| txs[i].key).collect();
            let mut ext = 0.0;
            for it in &inst.interferers {
                let on_channel = match it.channel {
                    Some(c) => c == ch,
                    None => it.band == ch.band,
                };
                let sensed = members.iter().any(|k| hears(it.tx_power_dbm, inst.matrix.get(it.id, k.node), cs));
                if it.utilization > 0.0 && on_channel && sensed {
                    ext += it.utilization;
                }
            }
            out.push(BruteClique { channel: ch, members, external_utilization: f64::min(ext, 1.0) });
        }
    }
    out
}

struct Row {
    capacity: f64,
    coeff: Vec<f64>,
}

fn rows(inst: &RateInstance, cliques: &[BruteClique]) -> Vec<Row> {
    let eta = inst.mac_efficiency;
    let cost = |rate: f64, ef: f64| 1.0 / (eta * rate * (1.0 - ef));
    let mut out: Vec<Row> = cliques
        .iter()
        .map(|q| Row {
            capacity: (1.0 - q.external_utilization).max(0.0),
            coeff: inst
                .flows
                .iter()
                .map(|f| f.hops.iter().filter(|h| q.members.contains(&h.tx)).map(|h| cost(h.bit_rate_bps, h.frame_error_rate)).sum())
                .collect(),
        })
        .collect();
    let known: BTreeSet<TxKey> = inst.transmitters.iter().map(|t| t.key).collect();
    let mut stray: BTreeMap<TxKey, Vec<f64>> = BTreeMap::new();
    for (i, f) in inst.flows.iter().enumerate() {
        for h in &f.hops {
            if !known.contains(&h.tx) {
                stray.entry(h.tx).or_insert_with(|| vec![0.0; inst.flows.len()])[i] += cost(h.bit_rate_bps, h.frame_error_rate);
            }
        }
    }
    out.extend(stray.into_values().map(|coeff| Row { capacity: 1.0, coeff }));
    out
}

/// Reference max-min fair rates, keyed by flow id.
pub fn max_min_rates(inst: &RateInstance) -> BTreeMap<u32, f64> {
    let rows = rows(inst, &enumerate_cliques(inst));
    let n = inst.flows.len();
    let offered: Vec<f64> = inst.flows.iter().map(|f| f.offered_bps.max(0.0)).collect();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        let dead = rows.iter().any(|r| r.coeff[i] > 0.0 && (!r.coeff[i].is_finite() || r.capacity <= 0.0));
        if dead || offered[i] == 0.0 {
            fixed[i] = Some(0.0);
        }
    }

    let level_rates = |fixed: &[Option<f64>], t: f64| -> Vec<f64> {
        (0..n).map(|i| fixed[i].unwrap_or_else(|| t.min(offered[i]))).collect()
    };
    let load = |r: &Row, x: &[f64]| -> f64 { (0..n).filter(|&i| x[i] > 0.0).map(|i| r.coeff[i] * x[i]).sum() };
    let feasible = |x: &[f64]| rows.iter().all(|r| load(r, x) <= r.capacity);

    while fixed.iter().any(|f| f.is_none()) {
        let top = (0..n).filter(|&i| fixed[i].is_none()).map(|i| offered[i]).fold(0.0, f64::max);
        if feasible(&level_rates(&fixed, top)) {
            for i in 0..n {
                fixed[i].get_or_insert(offered[i]);
            }
            break;
        }
        let (mut lo, mut hi) = (0.0, top);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if feasible(&level_rates(&fixed, mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = level_rates(&fixed, lo);
        let mut newly = Vec::new();
        for i in 0..n {
            if fixed[i].is_some() {
                continue;
            }
            let capped = offered[i] <= lo * (1.0 + 1e-12);
            let bottlenecked = rows.iter().any(|r| r.coeff[i] > 0.0 && r.capacity - load(r, &x) <= 1e-9 * r.capacity.max(1e-12));
            if capped || bottlenecked {
                newly.push(i);
            }
        }
        if newly.is_empty() {
            newly = (0..n).filter(|&i| fixed[i].is_none()).collect();
        }
        for i in newly {
            fixed[i] = Some(x[i]);
        }
    }

    inst.flows.iter().zip(fixed).map(|(f, x)| (f.id, x.unwrap_or(0.0))).collect()
}

/// Checks the bottleneck characterization of max-min fairness: every flow is
/// at its offered rate or crosses a saturated constraint in which no other
/// flow gets more.
pub fn verify_max_min(inst: &RateInstance, rates: &BTreeMap<u32, f64>, tol: f64) -> Result<(), String> {
    let rows = rows(inst, &enumerate_cliques(inst));
    let x: Vec<f64> = inst.flows.iter().map(|f| rates.get(&f.id).copied().unwrap_or(0.0)).collect();
    let load = |r: &Row| -> f64 { x.iter().zip(&r.coeff).filter(|(v, _)| **v > 0.0).map(|(v, a)| v * a).sum() };
    for (k, r) in rows.iter().enumerate() {
        if load(r) > r.capacity * (1.0 + tol) + tol {
            return Err(format!("constraint {k} over capacity: {} > {}", load(r), r.capacity));
        }
    }
    for (i, f) in inst.flows.iter().enumerate() {
        if x[i] >= f.offered_bps * (1.0 - tol) {
            continue;
        }
        let has_bottleneck = rows.iter().any(|r| {
            r.coeff[i] > 0.0
                && load(r) >= r.capacity * (1.0 - tol) - tol
                && (0..x.len()).all(|j| r.coeff[j] == 0.0 || x[j] <= x[i] * (1.0 + tol) + tol)
        });
        if !has_bottleneck {
            return Err(format!("flow {} at {} has no bottleneck", f.id, x[i]));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub flow: u32,
    pub solver_bps: f64,
    pub oracle_bps: f64,
}

pub fn within_relative(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-9
}

/// Compares solver output against the reference on every flow.
pub fn compare(inst: &RateInstance, solver: &BTreeMap<u32, f64>, tol: f64) -> Vec<Mismatch> {
    let reference = max_min_rates(inst);
    inst.flows
        .iter()
        .filter_map(|f| {
            let s = solver.get(&f.id).copied().unwrap_or(0.0);
            let o = reference[&f.id];
            (!within_relative(s, o, tol)).then_some(Mismatch { flow: f.id, solver_bps: s, oracle_bps: o })
        })
        .collect()
}
