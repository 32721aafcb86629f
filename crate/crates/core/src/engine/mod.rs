//! Deterministic discrete-event simulation of formation, handoff and traffic
//! over a fluid max-min rate model.

mod queue;
mod throughput;

pub use queue::{fmt_time, to_micros, to_secs, Event, EventKind, EventQueue, Micros};
pub use throughput::{throughput, DeliveryLog, Reception, ThroughputError, ThroughputReport, Window};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{descendants, validate_tree, AssocState, Band, Channel, Mode, Node, NodeId, RadioRole, Violation};
use crate::formation::{
    channel_assign, complete_association, detach, emit_beacon, plan_join, scan, score_scan, Beacon, ChannelPolicy, ScanEnv,
};
use crate::handoff::{begin_handoff, decide, refresh_candidates, Candidate, CandidateList, HandoffDecision, HandoffKind, LinkStatus};
use crate::metric::{link_quality, update_load, LinkObservation, LoadTracker, ScoredAp};
use crate::radio::{frame_error_rate, reachable, rssi, AttenuationMatrix, InterfererState, Transmitter, TxKey};
use crate::scenario::{scenario_hash, validate, DynamismEvent, FlowSpec, Scenario, ScenarioErrors};
use crate::solver::{solve_instance, FlowPath, HopLink, RateAssignment, RateInstance};
use crate::traffic::{
    flood_service_request, forward_downlink, route_intact, select_provider, tree_neighbors, uplink_path, DedupCache, Destination,
    RequestId, ServiceReply,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid scenario:\n{0}")]
    Scenario(#[from] ScenarioErrors),
    #[error("tree invariant violated at t={time_s}: {violations:?}")]
    Invariant { time_s: f64, violations: Vec<Violation> },
    #[error(transparent)]
    Throughput(#[from] ThroughputError),
}

/// One handoff from decision to completion.
#[derive(Clone, Debug, PartialEq)]
pub struct HandoffRecord {
    pub node: NodeId,
    pub kind: HandoffKind,
    pub from: Option<NodeId>,
    pub to: NodeId,
    pub started_s: f64,
    pub completed_s: Option<f64>,
    /// Caused by an ancestor's hard handoff or departure rather than by the
    /// node's own link.
    pub cascaded: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stats {
    pub events: u64,
    pub joins: u64,
    pub join_failures: u64,
    pub soft_handoffs: u64,
    pub hard_handoffs: u64,
    pub orphans: u64,
    pub link_breaks: u64,
    pub floods: u64,
    pub flood_duplicates: u64,
    pub discovery_requests: u64,
    pub discovery_forwards: u64,
    pub discovery_duplicates: u64,
    pub services_not_found: u64,
    pub rediscoveries: u64,
    pub control_frames: u64,
    pub rate_solves: u64,
    pub dropped_bits: f64,
    /// Completed re-associations (handoffs) per node.
    pub reassociations: BTreeMap<NodeId, u64>,
    pub relay_in_bits: BTreeMap<NodeId, f64>,
    pub relay_out_bits: BTreeMap<NodeId, f64>,
}

/// Per-flow delivered-rate sample: bits delivered in the last sample period
/// divided by its length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub time_s: f64,
    pub flow: u32,
    pub rate_bps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub spec: FlowSpec,
    pub active: bool,
    pub delivered_bits: f64,
    pub dropped_bits: f64,
    pub rate_bps: f64,
    /// Current data path, source first.
    pub path: Option<Vec<NodeId>>,
    pub service_route: Option<Vec<NodeId>>,
    discovering: Option<RequestId>,
    rediscovery_armed: bool,
    last_sample_bits: f64,
    segment: Option<(NodeId, f64, Micros)>,
}

impl FlowState {
    fn new(spec: FlowSpec) -> Self {
        FlowState {
            spec,
            active: false,
            delivered_bits: 0.0,
            dropped_bits: 0.0,
            rate_bps: 0.0,
            path: None,
            service_route: None,
            discovering: None,
            rediscovery_armed: true,
            last_sample_bits: 0.0,
            segment: None,
        }
    }

    pub fn hops(&self) -> Option<usize> {
        self.path.as_ref().map(|p| p.len().saturating_sub(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pending {
    target: NodeId,
    kind: Option<HandoffKind>,
    due: Micros,
}

#[derive(Clone, Debug)]
struct NodeRt {
    present: bool,
    load: LoadTracker,
    busy_now: f64,
    busy_integral: f64,
    candidates: CandidateList,
    missed: u32,
    pending: Option<Pending>,
    epoch: u64,
    upstream_band: Option<Band>,
    loops_started: bool,
    queued: bool,
    request_seq: u64,
    dedup: DedupCache,
}

#[derive(Clone, Debug)]
struct Discovery {
    started_s: f64,
    replies: Vec<ServiceReply>,
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub report: ThroughputReport,
    pub samples: Vec<Sample>,
    pub trace: Vec<String>,
    pub stats: Stats,
    pub handoffs: Vec<HandoffRecord>,
    pub flows: Vec<FlowState>,
    pub deliveries: DeliveryLog,
    pub final_nodes: BTreeMap<NodeId, Node>,
    pub final_instance: RateInstance,
}

pub struct Simulation {
    scenario: Scenario,
    mode: Mode,
    policy: ChannelPolicy,
    root: NodeId,
    nodes: BTreeMap<NodeId, Node>,
    rt: BTreeMap<NodeId, NodeRt>,
    matrix: AttenuationMatrix,
    interferers: BTreeMap<NodeId, InterfererState>,
    control: BTreeMap<u64, InterfererState>,
    next_frame: u64,
    flows: BTreeMap<u32, FlowState>,
    services: BTreeMap<String, BTreeSet<NodeId>>,
    discoveries: BTreeMap<RequestId, Discovery>,
    queue: EventQueue,
    now: Micros,
    end: Micros,
    formation_queue: VecDeque<NodeId>,
    token: Option<NodeId>,
    rates: RateAssignment,
    instance: RateInstance,
    hop_airtime: Vec<(Transmitter, f64)>,
    dirty: bool,
    notes: Vec<String>,
    trace: Vec<String>,
    samples: Vec<Sample>,
    deliveries: DeliveryLog,
    stats: Stats,
    handoffs: Vec<HandoffRecord>,
    rng: ChaCha8Rng,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, EngineError> {
        validate(scenario)?;
        let s = scenario.clone();
        let mode = s.mode;
        let hw = &s.hardware_ap;
        let root = hw.id;
        let mut nodes = BTreeMap::new();
        let mut ap = Node::hardware_ap(root, s.hardware_channel(), hw.tx_power_dbm, hw.bit_rate_bps);
        if mode == Mode::SingleBand {
            ap.radios[1].band = Band::Band24;
        }
        nodes.insert(root, ap);
        for n in &s.nodes {
            nodes.insert(n.id, Node::mesh(n.id, mode, n.tx_power_dbm, n.bit_rate_bps));
        }
        let alpha = s.protocol.load.ewma_alpha;
        let cap = s.protocol.traffic.dedup_capacity;
        let new_rt = |present: bool| NodeRt {
            present,
            load: LoadTracker::new(alpha),
            busy_now: 0.0,
            busy_integral: 0.0,
            candidates: CandidateList::default(),
            missed: 0,
            pending: None,
            epoch: 0,
            upstream_band: None,
            loops_started: false,
            queued: false,
            request_seq: 0,
            dedup: DedupCache::new(cap),
        };
        let mut rt: BTreeMap<NodeId, NodeRt> = nodes.keys().map(|id| (*id, new_rt(*id == root))).collect();
        for d in &s.dynamism {
            if let DynamismEvent::AddNode { id, .. } = d {
                rt.insert(*id, new_rt(false));
            }
        }

        let end = to_micros(s.sim.duration_s);
        let mut queue = EventQueue::default();
        queue.push(end, EventKind::SimEnd);
        queue.push(to_micros(s.protocol.load.sample_period_s), EventKind::MetricSample);
        let mut starts: Vec<(Micros, NodeId)> = s.nodes.iter().map(|n| (to_micros(n.start_s), n.id)).collect();
        starts.sort();
        for (t, id) in starts {
            queue.push(t, EventKind::NodeStart(id));
        }
        for (i, d) in s.dynamism.iter().enumerate() {
            queue.push(to_micros(d.at_s()), EventKind::Dynamism(i));
        }
        let mut flows = BTreeMap::new();
        for f in &s.traffic.flows {
            queue.push(to_micros(f.start_s), EventKind::FlowStart(f.id));
            if let Some(stop) = f.stop_s {
                queue.push(to_micros(stop), EventKind::FlowStop(f.id));
            }
            flows.insert(f.id, FlowState::new(f.clone()));
        }
        let services = s.services.iter().map(|v| (v.name.clone(), v.providers.iter().copied().collect())).collect();
        let interferers = s.interferer_states().into_iter().map(|i| (i.id, i)).collect();
        let matrix = s.attenuation_matrix();
        let instance = RateInstance {
            transmitters: Vec::new(),
            interferers: Vec::new(),
            matrix: matrix.clone(),
            propagation: s.protocol.propagation,
            mac_efficiency: s.protocol.engine.mac_efficiency,
            flows: Vec::new(),
        };
        Ok(Simulation {
            mode,
            policy: s.benchmark_channels,
            root,
            nodes,
            rt,
            matrix,
            interferers,
            control: BTreeMap::new(),
            next_frame: 0,
            flows,
            services,
            discoveries: BTreeMap::new(),
            queue,
            now: 0,
            end,
            formation_queue: VecDeque::new(),
            token: None,
            rates: RateAssignment::default(),
            instance,
            hop_airtime: Vec::new(),
            dirty: false,
            notes: Vec::new(),
            trace: Vec::new(),
            samples: Vec::new(),
            deliveries: DeliveryLog::default(),
            stats: Stats::default(),
            handoffs: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(s.sim.seed),
            finished: false,
            scenario: s,
        })
    }

    pub fn now_s(&self) -> f64 {
        to_secs(self.now)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Node> {
        &self.nodes
    }

    pub fn rates(&self) -> &RateAssignment {
        &self.rates
    }

    /// The solver input of the most recent rate computation.
    pub fn rate_instance(&self) -> &RateInstance {
        &self.instance
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowState> {
        self.flows.values()
    }

    pub fn handoffs(&self) -> &[HandoffRecord] {
        &self.handoffs
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn advertised_load(&self, node: NodeId) -> f64 {
        self.rt.get(&node).map_or(0.0, |r| r.load.utilization)
    }

    /// Engine-owned random stream, seeded from the scenario. The protocol
    /// model itself is fully deterministic and does not draw from it.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Processes the next event. Returns `false` once the run has ended.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.finished {
            return Ok(false);
        }
        let Some(ev) = self.queue.pop() else {
            self.advance(self.end);
            self.finished = true;
            return Ok(false);
        };
        self.advance(ev.time.min(self.end));
        self.stats.events += 1;
        self.notes.clear();
        let done = ev.kind == EventKind::SimEnd;
        self.handle(&ev.kind);
        if self.dirty {
            self.recompute();
        }
        let mut line = format!("t={} seq={} {}", fmt_time(ev.time), ev.seq, ev.kind);
        for n in &self.notes {
            line.push_str(" | ");
            line.push_str(n);
        }
        self.trace.push(line);
        if self.scenario.sim.check_invariants {
            let v = validate_tree(&self.nodes, self.mode);
            if !v.is_empty() {
                return Err(EngineError::Invariant { time_s: to_secs(ev.time), violations: v });
            }
        }
        if done {
            self.finished = true;
        }
        Ok(!done)
    }

    /// Runs every event with time `<= t_s`.
    pub fn run_until(&mut self, t_s: f64) -> Result<(), EngineError> {
        let t = to_micros(t_s);
        while self.queue.peek_time().is_some_and(|x| x <= t) && !self.finished {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput, EngineError> {
        while self.step()? {}
        self.finish()
    }

    pub fn finish(mut self) -> Result<RunOutput, EngineError> {
        let end = self.now;
        for f in self.flows.values_mut() {
            if let Some((node, rate, start)) = f.segment.take() {
                self.deliveries.push(Reception { node, flow: f.spec.id, start_s: to_secs(start), end_s: to_secs(end), rate_bps: rate });
            }
        }
        let w = self.scenario.sim.effective_window();
        let ids: Vec<NodeId> = self.scenario.declared_nodes().into_iter().collect();
        let report = throughput(&self.deliveries, Window { start_s: w.start_s, end_s: w.end_s }, &ids)?;
        Ok(RunOutput {
            scenario_name: self.scenario.name.clone(),
            scenario_hash: scenario_hash(&self.scenario),
            seed: self.scenario.sim.seed,
            mode: self.mode,
            report,
            samples: self.samples,
            trace: self.trace,
            stats: self.stats,
            handoffs: self.handoffs,
            flows: self.flows.into_values().collect(),
            deliveries: self.deliveries,
            final_nodes: self.nodes,
            final_instance: self.instance,
        })
    }

    fn p(&self) -> &crate::scenario::ProtocolParams {
        &self.scenario.protocol
    }

    fn schedule(&mut self, at: Micros, kind: EventKind) {
        if at <= self.end {
            self.queue.push(at.max(self.now), kind);
        }
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }

    /// Integrates delivered bits and channel busy time up to `to`.
    fn advance(&mut self, to: Micros) {
        if to <= self.now {
            return;
        }
        let dt = to_secs(to - self.now);
        for f in self.flows.values_mut() {
            if !f.active {
                continue;
            }
            match &f.path {
                Some(path) if f.rate_bps > 0.0 => {
                    let bits = f.rate_bps * dt;
                    f.delivered_bits += bits;
                    for w in path.windows(2) {
                        *self.stats.relay_out_bits.entry(w[0]).or_default() += bits;
                        *self.stats.relay_in_bits.entry(w[1]).or_default() += bits;
                    }
                    if f.rate_bps < f.spec.offered_bps && path.len() < 2 {
                        f.dropped_bits += (f.spec.offered_bps - f.rate_bps) * dt;
                    }
                }
                Some(_) => {}
                None => {
                    f.dropped_bits += f.spec.offered_bps * dt;
                    self.stats.dropped_bits += f.spec.offered_bps * dt;
                }
            }
        }
        for r in self.rt.values_mut() {
            r.busy_integral += r.busy_now * dt;
        }
        self.now = to;
    }

    fn handle(&mut self, kind: &EventKind) {
        match kind.clone() {
            EventKind::SimEnd => {}
            EventKind::NodeStart(n) => self.on_node_start(n),
            EventKind::ScanComplete(n) => self.on_scan_complete(n),
            EventKind::AssocComplete { node, ap, upstream, serving, kind, epoch } => {
                self.on_assoc_complete(node, ap, upstream, serving, kind, epoch)
            }
            EventKind::BeaconCheck(n) => self.on_beacon_check(n),
            EventKind::HandoffCheck(n) => self.on_handoff_check(n),
            EventKind::MetricSample => self.on_metric_sample(),
            EventKind::ControlFrame { node, channel, begin, frame } => self.on_control_frame(node, channel, begin, frame),
            EventKind::Dynamism(i) => self.on_dynamism(i),
            EventKind::FlowStart(id) => self.on_flow_start(id),
            EventKind::FlowStop(id) => {
                if let Some(f) = self.flows.get_mut(&id) {
                    f.active = false;
                    f.discovering = None;
                    self.dirty = true;
                }
            }
            EventKind::DiscoveryDone { flow, request } => self.on_discovery_done(flow, request),
        }
    }

    fn present(&self, n: NodeId) -> bool {
        self.rt.get(&n).is_some_and(|r| r.present) && self.nodes.contains_key(&n)
    }

    fn scan_bands(&self) -> Vec<Band> {
        match self.mode {
            Mode::DualBand => Band::ALL.to_vec(),
            Mode::SingleBand => vec![Band::Band24],
        }
    }

    fn beacons_on_air(&self) -> Vec<Beacon> {
        let name = self.scenario.name.clone();
        self.nodes
            .values()
            .filter(|n| self.present(n.id))
            .filter_map(|n| emit_beacon(n, self.advertised_load(n.id), &name))
            .collect()
    }

    fn all_interferers(&self) -> Vec<InterfererState> {
        self.interferers.values().chain(self.control.values()).copied().collect()
    }

    /// Busy fraction of `channel` as observed at `node`: sensed interferers
    /// plus sensed mesh transmissions.
    fn observed_busy(&self, node: NodeId, channel: &Channel) -> f64 {
        let prop = &self.p().propagation;
        let mut busy = 0.0;
        for i in self.all_interferers() {
            if i.utilization > 0.0 && i.occupies(channel) && prop.senses(rssi(i.tx_power_dbm, self.matrix.get(i.id, node))) {
                busy += i.utilization;
            }
        }
        for (t, share) in &self.hop_airtime {
            if t.channel == *channel && prop.senses(rssi(t.tx_power_dbm, self.matrix.get(t.key.node, node))) {
                busy += share;
            }
        }
        busy.min(1.0)
    }

    fn scan_for(&self, node: NodeId) -> crate::formation::ScanResult {
        let beacons = self.beacons_on_air();
        let env = ScanEnv { nodes: &self.nodes, matrix: &self.matrix, propagation: &self.p().propagation };
        let mut result = scan(&self.nodes[&node], &self.scan_bands(), &beacons, &env, |c| self.observed_busy(node, c));
        result.entries.retain(|e| self.present(e.beacon.ap));
        result
    }

    /// Scores `ap` serving on `channel` as seen from `node`.
    fn score(&self, node: NodeId, ap: NodeId, channel: Channel) -> Option<ScoredAp> {
        let n = self.nodes.get(&node)?;
        let a = self.nodes.get(&ap)?;
        let radio = n.radios.iter().find(|r| r.band == channel.band)?;
        let tx = a.radios.iter().find(|r| r.band == channel.band)?;
        let signal = rssi(tx.tx_power_dbm, self.matrix.get(ap, node));
        if !reachable(signal, &self.p().propagation) {
            return None;
        }
        let obs = LinkObservation {
            ap,
            band: channel.band,
            channel,
            rssi_dbm: signal.unwrap_or(f64::NEG_INFINITY),
            frame_error_rate: frame_error_rate(signal, &self.p().propagation),
            rate_bps: radio.bit_rate_bps.min(tx.bit_rate_bps),
            advertised_load: self.advertised_load(ap),
        };
        let metric = link_quality(&self.p().airtime, &obs).ok()?;
        Some(ScoredAp { ap, band: channel.band, channel, rssi_dbm: obs.rssi_dbm, metric })
    }

    fn scan_time(&self) -> Micros {
        let channels: usize = self.scan_bands().iter().map(|b| b.channels().len()).sum();
        to_micros(self.p().formation.scan_duration_s * channels as f64)
    }

    fn enqueue_join(&mut self, n: NodeId) {
        let rt = self.rt.get_mut(&n).expect("known node");
        if !rt.queued {
            rt.queued = true;
            self.formation_queue.push_back(n);
        }
        self.grant_token();
    }

    fn grant_token(&mut self) {
        while self.token.is_none() {
            let Some(n) = self.formation_queue.pop_front() else { return };
            self.rt.get_mut(&n).expect("known node").queued = false;
            if !self.present(n) || self.nodes[&n].assoc != AssocState::Scanning {
                continue;
            }
            self.token = Some(n);
            let at = self.now + self.scan_time();
            self.schedule(at, EventKind::ScanComplete(n));
        }
    }

    fn release_token(&mut self, n: NodeId) {
        if self.token == Some(n) {
            self.token = None;
            self.grant_token();
        }
    }

    fn on_node_start(&mut self, n: NodeId) {
        if !self.present(n) {
            if self.nodes.contains_key(&n) && self.rt.get(&n).is_some_and(|r| !r.present && r.epoch == 0) {
                self.rt.get_mut(&n).expect("known").present = true;
            } else if !self.nodes.contains_key(&n) {
                return;
            }
        }
        if self.nodes[&n].assoc == AssocState::Scanning {
            self.enqueue_join(n);
        }
    }

    fn on_scan_complete(&mut self, n: NodeId) {
        if self.token != Some(n) || !self.present(n) {
            return;
        }
        let result = self.scan_for(n);
        let plan = plan_join(&self.nodes[&n], &result, &self.p().airtime, self.mode, self.policy);
        match plan {
            Err(e) => {
                self.stats.join_failures += 1;
                self.note(format!("join failed: {e}"));
                self.release_token(n);
                let at = self.now + to_micros(self.p().formation.retry_backoff_s);
                self.schedule(at, EventKind::NodeStart(n));
            }
            Ok(plan) => {
                let scored = score_scan(&result, &self.p().airtime);
                let mut cands = refresh_candidates(&self.nodes, n, scored, self.now_s());
                cands.remove_ap(plan.target.ap);
                let node = self.nodes.get_mut(&n).expect("present");
                node.assoc = AssocState::Associating(plan.target.ap);
                let due = self.now + to_micros(self.p().formation.assoc_delay_s);
                let rt = self.rt.get_mut(&n).expect("present");
                rt.candidates = cands;
                rt.pending = Some(Pending { target: plan.target.ap, kind: None, due });
                let epoch = rt.epoch;
                self.note(format!("select ap={} ch={} metric={:.3}", plan.target.ap, plan.target.channel, plan.target.metric.0));
                self.schedule(
                    due,
                    EventKind::AssocComplete { node: n, ap: plan.target.ap, upstream: plan.target.channel, serving: plan.serving, kind: None, epoch },
                );
            }
        }
    }

    /// Whether `ap` can adopt a node right now, or when it will be able to.
    fn target_ready(&self, node: NodeId, ap: NodeId, upstream: Channel) -> Result<(), Option<Micros>> {
        if !self.present(ap) || descendants(&self.nodes, node).contains(&ap) || ap == node {
            return Err(None);
        }
        let a = &self.nodes[&ap];
        if a.is_beaconing() && a.serving_channel() == Some(upstream) && uplink_path(&self.nodes, ap).is_some() {
            return Ok(());
        }
        match self.rt[&ap].pending {
            Some(p) if p.due >= self.now => Err(Some(p.due)),
            _ => Err(None),
        }
    }

    fn on_assoc_complete(&mut self, n: NodeId, ap: NodeId, upstream: Channel, serving: Channel, kind: Option<HandoffKind>, epoch: u64) {
        if !self.present(n) || self.rt[&n].epoch != epoch {
            self.note("stale".into());
            return;
        }
        match self.target_ready(n, ap, upstream) {
            Ok(()) => {}
            Err(Some(due)) => {
                let at = due.max(self.now) + to_micros(self.p().formation.assoc_delay_s);
                self.note(format!("waiting for ap={ap}"));
                if let Some(p) = self.rt.get_mut(&n).expect("present").pending.as_mut() {
                    p.due = at;
                }
                self.schedule(at, EventKind::AssocComplete { node: n, ap, upstream, serving, kind, epoch });
                return;
            }
            Err(None) => {
                self.note(format!("ap={ap} unavailable"));
                self.rt.get_mut(&n).expect("present").pending = None;
                match kind {
                    None => {
                        let node = self.nodes.get_mut(&n).expect("present");
                        node.assoc = AssocState::Scanning;
                        self.stats.join_failures += 1;
                        self.release_token(n);
                        let at = self.now + to_micros(self.p().formation.retry_backoff_s);
                        self.schedule(at, EventKind::NodeStart(n));
                    }
                    Some(_) => {
                        self.rt.get_mut(&n).expect("present").candidates.remove_ap(ap);
                        self.recover(vec![(n, false)]);
                    }
                }
                return;
            }
        }

        let serving = self.fresh_serving(n, upstream, serving);
        complete_association(&mut self.nodes, n, ap, upstream, serving).expect("target checked ready");
        let now_s = self.now_s();
        let rt = self.rt.get_mut(&n).expect("present");
        rt.pending = None;
        rt.missed = 0;
        rt.upstream_band = Some(upstream.band);
        rt.candidates.remove_ap(ap);
        let start_loops = !rt.loops_started;
        rt.loops_started = true;
        match kind {
            None => {
                self.stats.joins += 1;
                self.note(format!("joined ap={ap} up={upstream} serve={serving}"));
                self.release_token(n);
            }
            Some(k) => {
                *self.stats.reassociations.entry(n).or_default() += 1;
                if let Some(r) = self.handoffs.iter_mut().rev().find(|r| r.node == n && r.completed_s.is_none()) {
                    r.completed_s = Some(now_s);
                }
                self.note(format!("{k:?} handoff complete ap={ap}"));
            }
        }
        if start_loops {
            let bi = to_micros(self.p().formation.beacon_interval_s);
            let ti = to_micros(self.p().handoff.scan_interval_s);
            self.schedule(self.now + bi, EventKind::BeaconCheck(n));
            self.schedule(self.now + ti, EventKind::HandoffCheck(n));
        }
        self.dirty = true;
    }

    /// A serving channel that does not collide with the new upstream channel
    /// when the benchmark assigns channels.
    fn fresh_serving(&self, n: NodeId, upstream: Channel, serving: Channel) -> Channel {
        match (self.mode, self.policy) {
            (Mode::SingleBand, ChannelPolicy::Assigned) if serving == upstream => {
                let util: BTreeMap<Channel, f64> =
                    Band::Band24.channels().iter().map(|&i| Channel { band: Band::Band24, index: i }).map(|c| (c, self.observed_busy(n, &c))).collect();
                channel_assign(Band::Band24, &util, Some(upstream))
            }
            _ => serving,
        }
    }

    fn parent_beacon_heard(&self, n: NodeId) -> bool {
        let node = &self.nodes[&n];
        let Some((p, _)) = node.parent else { return false };
        if !self.present(p) {
            return false;
        }
        let parent = &self.nodes[&p];
        let Some(serv) = parent.serving() else { return false };
        serv.channel.is_some()
            && serv.channel == node.upstream_channel()
            && reachable(rssi(serv.tx_power_dbm, self.matrix.get(p, n)), &self.p().propagation)
    }

    fn on_beacon_check(&mut self, n: NodeId) {
        if !self.present(n) {
            return;
        }
        let bi = to_micros(self.p().formation.beacon_interval_s);
        self.schedule(self.now + bi, EventKind::BeaconCheck(n));
        if self.rt[&n].pending.is_some() {
            return;
        }
        let state = self.nodes[&n].assoc;
        let heard = match state {
            AssocState::Associated => self.parent_beacon_heard(n),
            AssocState::Reassociating(_) => false,
            _ => return,
        };
        let k = self.p().handoff.k;
        let rt = self.rt.get_mut(&n).expect("present");
        if heard {
            rt.missed = 0;
            return;
        }
        rt.missed += 1;
        let missed = rt.missed;
        self.note(format!("beacon missed count={missed}"));
        if missed >= k {
            self.rt.get_mut(&n).expect("present").missed = 0;
            self.stats.link_breaks += 1;
            self.note("link broken".into());
            let cascaded = matches!(state, AssocState::Reassociating(_));
            self.recover(vec![(n, cascaded)]);
        }
    }

    fn refresh(&mut self, n: NodeId) {
        let result = self.scan_for(n);
        let scored = score_scan(&result, &self.p().airtime);
        let cands = refresh_candidates(&self.nodes, n, scored, self.now_s());
        self.rt.get_mut(&n).expect("present").candidates = cands;
    }

    fn current_link_metric(&self, n: NodeId) -> Option<f64> {
        let node = &self.nodes[&n];
        let (p, _) = node.parent?;
        let ch = node.upstream_channel()?;
        self.score(n, p, ch).map(|s| s.metric.0)
    }

    fn on_handoff_check(&mut self, n: NodeId) {
        if !self.present(n) {
            return;
        }
        let ti = to_micros(self.p().handoff.scan_interval_s);
        self.schedule(self.now + ti, EventKind::HandoffCheck(n));
        if self.nodes[&n].assoc != AssocState::Associated || self.rt[&n].pending.is_some() {
            return;
        }
        self.refresh(n);
        if !self.parent_beacon_heard(n) {
            return;
        }
        let Some(metric) = self.current_link_metric(n) else { return };
        let band = self.nodes[&n].parent.map(|p| p.1).expect("associated");
        let decision = decide(n, band, LinkStatus::Up { metric_us: metric }, &self.rt[&n].candidates, &self.p().handoff);
        if let Ok(d) = decision {
            if d != HandoffDecision::Stay {
                self.note(format!("metric {metric:.1} over threshold"));
                let mut work = VecDeque::new();
                self.start_handoff(n, d, false, &mut work);
                self.drain(work);
            }
        }
    }

    /// Candidates of `n` that could adopt it now or once their own pending
    /// association completes.
    fn usable_candidates(&self, n: NodeId) -> CandidateList {
        let subtree = descendants(&self.nodes, n);
        let mut list = self.rt[&n].candidates.clone();
        list.retain(|c| {
            let ap = c.ap.ap;
            if !self.present(ap) || subtree.contains(&ap) || ap == n {
                return false;
            }
            let a = &self.nodes[&ap];
            let serving_now = a.serving_channel() == Some(c.ap.channel) && (a.is_beaconing() || a.is_hardware_ap());
            let serving_soon = self.rt[&ap].pending.is_some();
            let audible = self.score(n, ap, c.ap.channel).is_some();
            (serving_now || serving_soon) && audible
        });
        list
    }

    /// Handles nodes that lost their upstream link: hand off to a candidate
    /// or orphan. Hard handoffs and orphaning push the affected children.
    fn recover(&mut self, initial: Vec<(NodeId, bool)>) {
        self.drain(initial.into_iter().collect());
    }

    fn drain(&mut self, mut work: VecDeque<(NodeId, bool)>) {
        while let Some((n, cascaded)) = work.pop_front() {
            if !self.present(n) {
                continue;
            }
            let cands = self.usable_candidates(n);
            let band = self.rt[&n].upstream_band.or(self.nodes[&n].parent.map(|p| p.1)).unwrap_or(Band::Band24);
            match decide(n, band, LinkStatus::Broken, &cands, &self.p().handoff) {
                Ok(d) => self.start_handoff(n, d, cascaded, &mut work),
                Err(_) => self.orphan(n, &mut work),
            }
        }
    }

    fn start_handoff(&mut self, n: NodeId, d: HandoffDecision, cascaded: bool, work: &mut VecDeque<(NodeId, bool)>) {
        let (kind, target) = match d {
            HandoffDecision::Stay => return,
            HandoffDecision::Soft(t) => (HandoffKind::Soft, t),
            HandoffDecision::Hard(t) => (HandoffKind::Hard, t),
        };
        let f = self.p().formation;
        let old_upstream = self.nodes[&n].upstream_channel();
        let old_serving = self.nodes[&n].serving_channel();
        let new_serving = match kind {
            HandoffKind::Soft => old_serving.unwrap_or_else(|| Channel::first(target.band.other())),
            HandoffKind::Hard => {
                let band = match self.mode {
                    Mode::DualBand => target.band.other(),
                    Mode::SingleBand => Band::Band24,
                };
                let util: BTreeMap<Channel, f64> =
                    band.channels().iter().map(|&i| Channel { band, index: i }).map(|c| (c, self.observed_busy(n, &c))).collect();
                match (self.mode, self.policy) {
                    (Mode::SingleBand, ChannelPolicy::Shared) => Channel::first(Band::Band24),
                    (Mode::SingleBand, ChannelPolicy::Assigned) => channel_assign(band, &util, Some(target.channel)),
                    (Mode::DualBand, _) => channel_assign(band, &util, None),
                }
            }
        };

        if kind == HandoffKind::Hard {
            if let (Some(ch), false) = (old_serving, self.nodes[&n].children.is_empty()) {
                self.control_frame(n, ch, self.p().traffic.control_frame_bits, self.now);
            }
        }
        let start = begin_handoff(&mut self.nodes, n, kind, target.ap, new_serving);
        let switch = if old_upstream == Some(target.channel) { 0 } else { to_micros(f.channel_switch_s) };
        let ready = match self.rt[&target.ap].pending {
            Some(p) => p.due.max(self.now),
            None => self.now,
        };
        let due = ready + to_micros(f.assoc_delay_s) + switch;
        let rt = self.rt.get_mut(&n).expect("present");
        rt.epoch += 1;
        rt.missed = 0;
        rt.pending = Some(Pending { target: target.ap, kind: Some(kind), due });
        rt.candidates.remove_ap(target.ap);
        let epoch = rt.epoch;
        match kind {
            HandoffKind::Soft => self.stats.soft_handoffs += 1,
            HandoffKind::Hard => self.stats.hard_handoffs += 1,
        }
        self.handoffs.push(HandoffRecord {
            node: n,
            kind,
            from: start.old_parent,
            to: target.ap,
            started_s: self.now_s(),
            completed_s: None,
            cascaded,
        });
        self.note(format!("{kind:?} handoff node={n} to={} ch={}", target.ap, target.channel));
        self.schedule(due, EventKind::AssocComplete { node: n, ap: target.ap, upstream: target.channel, serving: start.serving, kind: Some(kind), epoch });

        for c in start.disassociated {
            let subtree = descendants(&self.nodes, c);
            let scored = self.score(c, n, start.serving);
            let now_s = self.now_s();
            let rt = self.rt.get_mut(&c).expect("child");
            rt.epoch += 1;
            rt.pending = None;
            rt.missed = 0;
            if let Some(ap) = scored {
                rt.candidates.insert(Candidate { ap, seen_at: now_s }, c, &subtree);
            }
            work.push_back((c, true));
        }
        self.dirty = true;
    }

    fn orphan(&mut self, n: NodeId, work: &mut VecDeque<(NodeId, bool)>) {
        self.stats.orphans += 1;
        self.note(format!("node={n} orphaned"));
        if let Some(ch) = self.nodes[&n].serving_channel() {
            if !self.nodes[&n].children.is_empty() {
                self.control_frame(n, ch, self.p().traffic.control_frame_bits, self.now);
            }
        }
        detach(&mut self.nodes, n);
        let node = self.nodes.get_mut(&n).expect("present");
        node.assoc = AssocState::Scanning;
        for r in node.radios.iter_mut() {
            r.deactivate();
        }
        node.mac_table.clear();
        let children: Vec<NodeId> = std::mem::take(&mut node.children).into_iter().collect();
        for c in &children {
            if let Some(child) = self.nodes.get_mut(c) {
                child.parent = None;
                if let Some(i) = child.radio_index(RadioRole::Upstream) {
                    child.radios[i].deactivate();
                }
                child.assoc = AssocState::Reassociating(n);
            }
            let rt = self.rt.get_mut(c).expect("child");
            rt.epoch += 1;
            rt.pending = None;
            rt.candidates.remove_ap(n);
            work.push_back((*c, true));
        }
        let rt = self.rt.get_mut(&n).expect("present");
        rt.epoch += 1;
        rt.pending = None;
        rt.candidates = CandidateList::default();
        rt.missed = 0;
        if self.token == Some(n) {
            self.release_token(n);
        }
        self.enqueue_join(n);
        self.dirty = true;
    }

    fn control_frame(&mut self, node: NodeId, channel: Channel, bits: f64, at: Micros) {
        let Some(n) = self.nodes.get(&node) else { return };
        let Some(radio) = n.radios.iter().find(|r| r.band == channel.band) else { return };
        let dur = to_micros(bits / radio.bit_rate_bps).max(1);
        let frame = self.next_frame;
        self.next_frame += 1;
        self.stats.control_frames += 1;
        self.schedule(at, EventKind::ControlFrame { node, channel, begin: true, frame });
        self.schedule(at + dur, EventKind::ControlFrame { node, channel, begin: false, frame });
    }

    fn on_control_frame(&mut self, node: NodeId, channel: Channel, begin: bool, frame: u64) {
        if begin {
            let power = self
                .nodes
                .get(&node)
                .and_then(|n| n.radios.iter().find(|r| r.band == channel.band))
                .map_or(crate::scenario::DEFAULT_TX_POWER_DBM, |r| r.tx_power_dbm);
            self.control.insert(frame, InterfererState { id: node, band: channel.band, channel: Some(channel), utilization: 1.0, tx_power_dbm: power });
        } else {
            self.control.remove(&frame);
        }
        self.dirty = true;
    }

    fn on_metric_sample(&mut self) {
        let period = self.p().load.sample_period_s;
        let next = self.now + to_micros(period);
        if next <= self.end {
            self.schedule(next, EventKind::MetricSample);
        }
        for r in self.rt.values_mut() {
            let sample = (r.busy_integral / period).clamp(0.0, 1.0);
            r.busy_integral = 0.0;
            if let Ok(t) = update_load(r.load, sample) {
                r.load = t;
            }
        }
        let t = self.now_s();
        for f in self.flows.values_mut() {
            let delta = f.delivered_bits - f.last_sample_bits;
            f.last_sample_bits = f.delivered_bits;
            let started = to_micros(f.spec.start_s) < self.now;
            let running = f.spec.stop_s.is_none_or(|s| to_micros(s) + to_micros(period) > self.now);
            if started && running {
                self.samples.push(Sample { time_s: t, flow: f.spec.id, rate_bps: delta / period });
            }
        }
    }

    fn on_dynamism(&mut self, i: usize) {
        let d = self.scenario.dynamism[i].clone();
        match d {
            DynamismEvent::SetAttenuation { a, b, db, .. } => {
                self.matrix.set(a, b, db);
                self.note(format!("attenuation {a}-{b} = {db}"));
            }
            DynamismEvent::SetInterferer { id, utilization, .. } => {
                if let Some(it) = self.interferers.get_mut(&id) {
                    it.utilization = utilization;
                }
                self.note(format!("interferer {id} u={utilization}"));
            }
            DynamismEvent::AddNode { id, tx_power_dbm, bit_rate_bps, links, .. } => {
                for l in &links {
                    self.matrix.set(l.a, l.b, l.db);
                }
                self.nodes.insert(id, Node::mesh(id, self.mode, tx_power_dbm, bit_rate_bps));
                self.rt.get_mut(&id).expect("declared").present = true;
                self.note(format!("node {id} added"));
                self.enqueue_join(id);
            }
            DynamismEvent::RemoveNode { id, .. } => self.remove_node(id),
        }
        self.dirty = true;
    }

    fn remove_node(&mut self, id: NodeId) {
        if !self.present(id) {
            return;
        }
        self.note(format!("node {id} removed"));
        detach(&mut self.nodes, id);
        let node = self.nodes.remove(&id).expect("present");
        for c in node.children {
            if let Some(child) = self.nodes.get_mut(&c) {
                child.parent = None;
                if let Some(i) = child.radio_index(RadioRole::Upstream) {
                    child.radios[i].deactivate();
                }
                child.assoc = AssocState::Reassociating(id);
            }
        }
        let rt = self.rt.get_mut(&id).expect("declared");
        rt.present = false;
        rt.epoch += 1;
        rt.pending = None;
        rt.busy_now = 0.0;
        if self.token == Some(id) {
            self.release_token(id);
        }
    }

    fn on_flow_start(&mut self, id: u32) {
        let Some(f) = self.flows.get_mut(&id) else { return };
        f.active = true;
        if let Destination::Service(_) = f.spec.dst {
            self.start_discovery(id);
        }
        self.dirty = true;
    }

    /// Per-hop control-frame delay between tree neighbours.
    fn hop_delay(&self, a: NodeId, b: NodeId) -> f64 {
        match self.hop_link(a, b) {
            Some((_, h)) => {
                let good = h.bit_rate_bps * (1.0 - h.frame_error_rate);
                if good > 0.0 {
                    self.p().traffic.control_frame_bits / good
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        }
    }

    fn start_discovery(&mut self, flow: u32) {
        let f = &self.flows[&flow];
        let Destination::Service(name) = f.spec.dst.clone() else { return };
        let src = f.spec.src;
        let providers = self.services.get(&name).cloned().unwrap_or_default();
        self.stats.discovery_requests += 1;
        let Some(rt) = self.rt.get_mut(&src) else { return };
        rt.request_seq += 1;
        let request = RequestId { origin: src, seq: rt.request_seq };
        let now_s = self.now_s();
        let neighbors = if self.present(src) { tree_neighbors(&self.nodes) } else { BTreeMap::new() };
        let mut dedup: BTreeMap<NodeId, DedupCache> = BTreeMap::new();
        for (id, r) in &self.rt {
            dedup.insert(*id, r.dedup.clone());
        }
        let cap = self.p().traffic.dedup_capacity;
        let outcome = flood_service_request(&neighbors, src, &providers, request, &mut dedup, cap, |a, b| self.hop_delay(a, b), now_s);
        for (id, cache) in dedup {
            if let Some(r) = self.rt.get_mut(&id) {
                r.dedup = cache;
            }
        }
        self.stats.discovery_forwards += outcome.forwards.len() as u64;
        self.stats.discovery_duplicates += outcome.duplicates as u64;
        let bits = self.p().traffic.control_frame_bits;
        for fw in &outcome.forwards {
            let mut channels = BTreeSet::new();
            for t in &fw.targets {
                if let Some((tx, _)) = self.hop_link(fw.node, *t) {
                    channels.insert(tx.channel);
                }
            }
            for ch in channels {
                self.control_frame(fw.node, ch, bits, to_micros(fw.at_s));
            }
        }
        for &(from, to, at) in &outcome.reply_hops {
            if let Some((tx, _)) = self.hop_link(from, to) {
                let dur = self.hop_delay(from, to);
                self.control_frame(from, tx.channel, bits, to_micros(at - dur));
            }
        }
        self.note(format!("discovery flow={flow} req={}:{} replies={}", request.origin, request.seq, outcome.replies.len()));
        self.discoveries.insert(request, Discovery { started_s: now_s, replies: outcome.replies });
        if let Some(f) = self.flows.get_mut(&flow) {
            f.discovering = Some(request);
        }
        let at = self.now + to_micros(self.p().traffic.reply_window_s);
        self.schedule(at, EventKind::DiscoveryDone { flow, request });
    }

    fn on_discovery_done(&mut self, flow: u32, request: RequestId) {
        let Some(d) = self.discoveries.remove(&request) else { return };
        let window = self.p().traffic.reply_window_s;
        let Some(f) = self.flows.get_mut(&flow) else { return };
        if f.discovering != Some(request) {
            return;
        }
        f.discovering = None;
        match select_provider(&d.replies, d.started_s + window) {
            Some(r) => {
                f.service_route = Some(r.route.clone());
                f.rediscovery_armed = true;
                let msg = format!("provider={} hops={}", r.provider, r.hops());
                self.note(msg);
            }
            None => {
                self.stats.services_not_found += 1;
                self.note("service not found".into());
            }
        }
        self.dirty = true;
    }

    /// Transmitter and link parameters for a hop between tree neighbours.
    fn hop_link(&self, a: NodeId, b: NodeId) -> Option<(Transmitter, HopLink)> {
        let na = self.nodes.get(&a)?;
        let nb = self.nodes.get(&b)?;
        let (tx_idx, rx) = if na.parent.map(|p| p.0) == Some(b) && na.assoc == AssocState::Associated {
            (na.radio_index(RadioRole::Upstream)?, nb.serving()?)
        } else if nb.parent.map(|p| p.0) == Some(a) && nb.assoc == AssocState::Associated {
            (na.radio_index(RadioRole::Serving)?, nb.upstream()?)
        } else {
            return None;
        };
        let tx = &na.radios[tx_idx];
        let channel = tx.channel?;
        let signal = rssi(tx.tx_power_dbm, self.matrix.get(a, b));
        let key = TxKey { node: a, radio: tx_idx as u8 };
        Some((
            Transmitter { key, channel, tx_power_dbm: tx.tx_power_dbm },
            HopLink { tx: key, bit_rate_bps: tx.bit_rate_bps.min(rx.bit_rate_bps), frame_error_rate: frame_error_rate(signal, &self.p().propagation) },
        ))
    }

    fn node_path(&mut self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        if !self.present(src) || !self.present(dst) {
            return None;
        }
        let now = self.now_s();
        let mut up = vec![src];
        let mut cur = src;
        loop {
            if cur == dst {
                return Some(up);
            }
            if self.nodes[&cur].mac_table.lookup(dst).is_some() || cur == self.root {
                break;
            }
            let node = &self.nodes[&cur];
            if node.assoc != AssocState::Associated {
                return None;
            }
            let (p, _) = node.parent?;
            up.push(p);
            cur = p;
        }
        let mut origin = cur;
        loop {
            let out = forward_downlink(&mut self.nodes, origin, dst, now);
            if out.flooded {
                self.stats.floods += 1;
                self.stats.flood_duplicates += out.duplicate_deliveries() as u64;
            }
            if out.delivered {
                up.extend_from_slice(&out.ack_path[1..]);
                return Some(up);
            }
            if origin == self.root {
                return None;
            }
            while origin != self.root {
                let node = &self.nodes[&origin];
                if node.assoc != AssocState::Associated {
                    return None;
                }
                let (p, _) = node.parent?;
                up.push(p);
                origin = p;
            }
        }
    }

    fn resolve(&mut self, id: u32) -> Option<Vec<NodeId>> {
        let f = &self.flows[&id];
        if !f.active {
            return None;
        }
        let src = f.spec.src;
        match f.spec.dst.clone() {
            Destination::Internet => {
                if !self.present(src) {
                    return None;
                }
                uplink_path(&self.nodes, src)
            }
            Destination::Node(dst) => self.node_path(src, dst),
            Destination::Service(_) => {
                let route = f.service_route.clone();
                match route {
                    Some(r) if route_intact(&self.nodes, &r) && r.iter().all(|n| self.present(*n)) => Some(r),
                    Some(_) => {
                        self.note(format!("flow {id} route broken"));
                        let f = self.flows.get_mut(&id).expect("known");
                        f.service_route = None;
                        if f.rediscovery_armed && f.discovering.is_none() {
                            f.rediscovery_armed = false;
                            self.stats.rediscoveries += 1;
                            self.start_discovery(id);
                        }
                        None
                    }
                    None => None,
                }
            }
        }
    }

    fn recompute(&mut self) {
        self.dirty = false;
        self.stats.rate_solves += 1;
        let ids: Vec<u32> = self.flows.keys().copied().collect();
        let mut paths: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
        for id in &ids {
            if let Some(p) = self.resolve(*id) {
                paths.insert(*id, p);
            }
        }

        let mut flows = Vec::new();
        let mut transmitters: BTreeMap<TxKey, Transmitter> = BTreeMap::new();
        let mut usable: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
        for (id, path) in &paths {
            let mut hops = Vec::new();
            let mut ok = true;
            for w in path.windows(2) {
                match self.hop_link(w[0], w[1]) {
                    Some((t, h)) => {
                        transmitters.insert(t.key, t);
                        hops.push(h);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                flows.push(FlowPath { id: *id, offered_bps: self.flows[id].spec.offered_bps, hops });
                usable.insert(*id, path.clone());
            }
        }
        self.instance = RateInstance {
            transmitters: transmitters.values().copied().collect(),
            interferers: self.all_interferers(),
            matrix: self.matrix.clone(),
            propagation: self.p().propagation,
            mac_efficiency: self.p().engine.mac_efficiency,
            flows,
        };
        self.rates = solve_instance(&self.instance);

        let eta = self.p().engine.mac_efficiency;
        self.hop_airtime.clear();
        for fp in &self.instance.flows {
            let r = self.rates.rate(fp.id);
            if r > 0.0 {
                for h in &fp.hops {
                    self.hop_airtime.push((transmitters[&h.tx], r * h.airtime_per_bit(eta)));
                }
            }
        }
        let busy: Vec<(NodeId, f64)> = self
            .nodes
            .values()
            .map(|n| (n.id, n.serving_channel().map_or(0.0, |c| self.observed_busy(n.id, &c))))
            .collect();
        for (id, b) in busy {
            if let Some(r) = self.rt.get_mut(&id) {
                r.busy_now = b;
            }
        }

        let now = self.now;
        let root = self.root;
        for id in ids {
            let path = usable.get(&id).cloned();
            let rate = if path.is_some() { self.rates.rate(id) } else { 0.0 };
            let f = self.flows.get_mut(&id).expect("known");
            let dest = path.as_ref().map(|p| match f.spec.dst {
                Destination::Internet => root,
                _ => *p.last().expect("non-empty path"),
            });
            f.path = path;
            f.rate_bps = rate;
            let next = dest.filter(|_| rate > 0.0).map(|d| (d, rate));
            let same = match (&f.segment, next) {
                (Some((n, r, _)), Some((d, rate))) => *n == d && *r == rate,
                (None, None) => true,
                _ => false,
            };
            if !same {
                if let Some((node, r, start)) = f.segment.take() {
                    self.deliveries.push(Reception { node, flow: id, start_s: to_secs(start), end_s: to_secs(now), rate_bps: r });
                }
                f.segment = next.map(|(d, r)| (d, r, now));
            }
        }
    }
}

/// Validates and runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    Simulation::new(scenario)?.run()
}
