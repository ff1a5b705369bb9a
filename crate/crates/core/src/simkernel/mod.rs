//! Deterministic discrete-event engine hosting the baseband and routing
//! state of every node.
//!
//! Events are processed in `(time, insertion)` order. The only randomness is
//! optional flow jitter drawn from a seeded generator, so identical inputs
//! give identical traces.

mod event;
mod trace;

pub use event::{Event, EventKind, EventQueue, StaticRoute, Timer};
pub use trace::{Trace, TraceRecord};

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aodv::{
    check_destination, AodvConfig, AodvError, DataPacket, Forward, LoopViolation, NodeAodvState,
    Packet, PacketId, RerrNotice, RetryOutcome, RrepAction, RreqAction, RreqPacket,
};
use crate::baseband::{
    self, frame_for_payload, next_master_slot, slot_time, Enqueued, FrameKind, LinkQueues,
    PollState, PresenceSchedule, SLOT_US,
};
use crate::metrics::{DropReason, LossReport, Metrics};
use crate::topology::{NodeId, PiconetId, Scatternet};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkModel {
    /// Slotted TDD piconets with master polling and bridge windows.
    Baseband,
    /// Every link delivers after a fixed latency, FIFO per direction.
    Ideal { latency: Micros },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_nodes: usize,
    /// Scenario metadata only; links come from piconet membership.
    pub area: (u32, u32),
    pub queue_length: usize,
    pub routing: String,
    pub basic_rate: String,
    pub data_rate: String,
    pub seed: u64,
    pub until_ms: u64,
    pub aodv: AodvConfig,
    pub hop_limit: u8,
    pub bridge_window: u64,
    pub link_model: LinkModel,
    /// Upper bound of uniform jitter added to flow packet times; 0 = off.
    pub jitter: Micros,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_nodes: 20,
            area: (500, 400),
            queue_length: baseband::DEFAULT_QUEUE_CAPACITY,
            routing: "AODV".into(),
            basic_rate: "5MB".into(),
            data_rate: "10MB".into(),
            seed: 1,
            until_ms: 2000,
            aodv: AodvConfig::default(),
            hop_limit: 32,
            bridge_window: baseband::DEFAULT_BRIDGE_WINDOW,
            link_model: LinkModel::Baseband,
            jitter: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub start_ms: u64,
    pub stop_ms: u64,
    pub rate_pps: f64,
    pub payload: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("event at {at} us is before the current time {now} us")]
    TimeInPast { at: Micros, now: Micros },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("flow needs a positive rate, start < stop and distinct endpoints")]
    BadInterval,
    #[error("payload of {0} bytes exceeds a single 5-slot frame")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub events_processed: u64,
    pub end_time: Micros,
    pub loss: LossReport,
    pub average_delay_us: Option<f64>,
    pub loop_violations: Vec<LoopViolation>,
    pub scenario_errors: Vec<String>,
}

#[derive(Debug, Clone)]
struct NodeHost {
    aodv: NodeAodvState,
    static_routes: BTreeMap<NodeId, NodeId>,
}

#[derive(Debug, Clone, Default)]
struct PiconetMac {
    poll: PollState,
    active: bool,
}

pub struct Engine {
    config: SimConfig,
    topology: Scatternet,
    queue: EventQueue,
    now: Micros,
    nodes: BTreeMap<NodeId, NodeHost>,
    links: LinkQueues<Packet>,
    macs: BTreeMap<PiconetId, PiconetMac>,
    presence: PresenceSchedule,
    ideal_last: BTreeMap<(NodeId, NodeId), Micros>,
    flows: Vec<TrafficFlow>,
    next_packet: u64,
    metrics: Metrics,
    trace: Trace,
    rng: ChaCha8Rng,
    loop_check: bool,
    touched: BTreeSet<NodeId>,
    violations: Vec<LoopViolation>,
    scenario_errors: Vec<String>,
    events_processed: u64,
    halted: bool,
}

impl Engine {
    pub fn new(topology: Scatternet, config: SimConfig) -> Self {
        let nodes = topology
            .nodes()
            .map(|n| {
                (
                    n,
                    NodeHost {
                        aodv: NodeAodvState::new(n, config.aodv),
                        static_routes: BTreeMap::new(),
                    },
                )
            })
            .collect();
        Engine {
            links: LinkQueues::new(config.queue_length),
            presence: PresenceSchedule::new(config.bridge_window),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            topology,
            queue: EventQueue::default(),
            now: 0,
            nodes,
            macs: BTreeMap::new(),
            ideal_last: BTreeMap::new(),
            flows: Vec::new(),
            next_packet: 0,
            metrics: Metrics::new(),
            trace: Trace::new(true),
            loop_check: false,
            touched: BTreeSet::new(),
            violations: Vec::new(),
            scenario_errors: Vec::new(),
            events_processed: 0,
            halted: false,
        }
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.trace.set_enabled(on);
    }

    /// Checks loop freedom of every touched destination after each event.
    pub fn set_loop_checking(&mut self, on: bool) {
        self.loop_check = on;
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn topology(&self) -> &Scatternet {
        &self.topology
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn aodv(&self, node: NodeId) -> Option<&NodeAodvState> {
        self.nodes.get(&node).map(|h| &h.aodv)
    }

    pub fn aodv_mut(&mut self, node: NodeId) -> Option<&mut NodeAodvState> {
        self.nodes.get_mut(&node).map(|h| &mut h.aodv)
    }

    pub fn aodv_states(&self) -> impl Iterator<Item = &NodeAodvState> {
        self.nodes.values().map(|h| &h.aodv)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: Micros, kind: EventKind) -> Result<(), KernelError> {
        if time < self.now {
            return Err(KernelError::TimeInPast {
                at: time,
                now: self.now,
            });
        }
        self.queue.push(time, kind);
        Ok(())
    }

    /// Schedules every packet of `flow`, spaced `1/rate` apart over
    /// `[start, stop)`.
    pub fn attach_flow(&mut self, flow: TrafficFlow) -> Result<usize, KernelError> {
        for n in [flow.src, flow.dst] {
            if !self.topology.contains_node(n) {
                return Err(KernelError::UnknownNode(n));
            }
        }
        if flow.src == flow.dst
            || flow.start_ms >= flow.stop_ms
            || !(flow.rate_pps.is_finite() && flow.rate_pps > 0.0)
        {
            return Err(KernelError::BadInterval);
        }
        frame_for_payload(flow.payload as usize)
            .map_err(|_| KernelError::PayloadTooLarge(flow.payload as usize))?;
        let start = flow.start_ms * 1000;
        let stop = flow.stop_ms * 1000;
        if start < self.now {
            return Err(KernelError::TimeInPast {
                at: start,
                now: self.now,
            });
        }
        let idx = self.flows.len();
        self.flows.push(flow);
        let mut count = 0;
        for k in 0u64.. {
            let t = start + (k as f64 * 1e6 / flow.rate_pps).floor() as Micros;
            if t >= stop {
                break;
            }
            let jitter = if self.config.jitter > 0 {
                self.rng.random_range(0..=self.config.jitter)
            } else {
                0
            };
            self.queue
                .push(t + jitter, EventKind::FlowPacket { flow: idx });
            count += 1;
        }
        Ok(count)
    }

    pub fn apply_migration(
        &mut self,
        node: NodeId,
        to: PiconetId,
        at_ms: u64,
    ) -> Result<(), KernelError> {
        self.schedule(at_ms * 1000, EventKind::Migrate { node, pid: to })
    }

    pub fn apply_leave(
        &mut self,
        node: NodeId,
        from: PiconetId,
        at_ms: u64,
    ) -> Result<(), KernelError> {
        self.schedule(at_ms * 1000, EventKind::Leave { node, pid: from })
    }

    pub fn inject_static_routes(
        &mut self,
        assignments: Vec<StaticRoute>,
        at_ms: u64,
    ) -> Result<(), KernelError> {
        self.schedule(at_ms * 1000, EventKind::InjectStaticRoutes { assignments })
    }

    pub fn start_discovery(
        &mut self,
        node: NodeId,
        dest: NodeId,
        at: Micros,
    ) -> Result<(), KernelError> {
        self.schedule(at, EventKind::StartDiscovery { node, dest })
    }

    /// Processes every event with `time <= until_ms` and reports.
    pub fn run_until(&mut self, until_ms: u64) -> RunReport {
        let until = until_ms * 1000;
        while !self.halted && self.queue.peek_time().is_some_and(|t| t <= until) {
            let ev = self.queue.pop().expect("peeked");
            assert!(ev.time >= self.now, "event out of order");
            self.now = ev.time;
            self.dispatch(ev.kind);
            self.events_processed += 1;
            if self.loop_check && !self.touched.is_empty() {
                let dests = std::mem::take(&mut self.touched);
                for d in dests {
                    let v = check_destination(self.nodes.values().map(|h| &h.aodv), d, self.now);
                    self.violations.extend(v);
                }
            }
            self.touched.clear();
        }
        if !self.halted {
            self.now = self.now.max(until);
        }
        let loss = self.metrics.loss_report();
        assert!(loss.balances(), "packet conservation violated: {loss:?}");
        RunReport {
            events_processed: self.events_processed,
            end_time: self.now,
            average_delay_us: self.metrics.average_delay(),
            loss,
            loop_violations: self.violations.clone(),
            scenario_errors: self.scenario_errors.clone(),
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::SlotTick { pid } => self.on_slot_tick(pid),
            EventKind::SlaveReply {
                pid,
                master,
                slave,
                budget_end,
            } => self.on_slave_reply(pid, master, slave, budget_end),
            EventKind::FrameDelivery { from, to, packet } => self.on_delivery(from, to, packet),
            EventKind::TimerFire { node, timer } => self.on_timer(node, timer),
            EventKind::FlowPacket { flow } => self.on_flow_packet(flow),
            EventKind::StartDiscovery { node, dest } => self.on_start_discovery(node, dest),
            EventKind::Migrate { node, pid } => self.on_migrate(node, pid),
            EventKind::Leave { node, pid } => self.on_leave(node, pid),
            EventKind::InjectStaticRoutes { assignments } => self.on_static(assignments),
            EventKind::EndOfRun => self.halted = true,
        }
    }

    fn log(&mut self, node: NodeId, kind: &'static str, detail: impl FnOnce() -> String) {
        self.trace.log(self.now, node, kind, detail);
    }

    fn scenario_error(&mut self, node: NodeId, msg: String) {
        let now = self.now;
        self.trace
            .log(now, node, "ERROR", || format!("msg=\"{msg}\""));
        self.scenario_errors.push(format!("t={now} {msg}"));
    }

    fn neighbors(&self, node: NodeId) -> BTreeSet<NodeId> {
        self.topology.neighbors(node).unwrap_or_default()
    }

    fn host(&mut self, node: NodeId) -> &mut NodeHost {
        let aodv = self.config.aodv;
        self.nodes.entry(node).or_insert_with(|| NodeHost {
            aodv: NodeAodvState::new(node, aodv),
            static_routes: BTreeMap::new(),
        })
    }

    // ---- link layer ----

    fn send(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        if !self.topology.link_exists(from, to).unwrap_or(false) {
            self.link_failure(from, to, packet);
            return;
        }
        match self.config.link_model {
            LinkModel::Ideal { latency } => {
                let last = self.ideal_last.entry((from, to)).or_default();
                let t = (self.now + latency).max(*last);
                *last = t;
                self.queue
                    .push(t, EventKind::FrameDelivery { from, to, packet });
            }
            LinkModel::Baseband => {
                let kind = if packet.is_control() {
                    FrameKind::Control
                } else {
                    FrameKind::Data
                };
                let frame = match frame_for_payload(packet.size_bytes()) {
                    Ok(f) => f.with_kind(kind),
                    Err(e) => {
                        self.scenario_error(from, e.to_string());
                        return;
                    }
                };
                match self.links.enqueue(&self.topology, from, to, frame, packet) {
                    Ok(Enqueued::Accepted) => self.wake_link(from, to),
                    Ok(Enqueued::Dropped(p)) => {
                        self.drop_packet(from, &p, DropReason::QueueOverflow)
                    }
                    Err(_) => unreachable!("link checked above"),
                }
            }
        }
    }

    fn drop_packet(&mut self, node: NodeId, packet: &Packet, reason: DropReason) {
        match packet {
            Packet::Data(d) => self.drop_data(node, d, reason),
            p => self.log(node, "DROP", || format!("pkt={} reason={reason}", p.kind())),
        }
    }

    fn drop_data(&mut self, node: NodeId, d: &DataPacket, reason: DropReason) {
        let _ = self.metrics.record_drop(d.id.0, reason, self.now);
        self.log(node, "DROP", || {
            format!("pkt=DATA id={} reason={reason}", d.id.0)
        });
    }

    /// A frame could not use the link toward `to`: data is rerouted at
    /// `from`, control traffic is lost.
    fn link_failure(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        match packet {
            Packet::Data(d) => {
                if self
                    .nodes
                    .get(&from)
                    .and_then(|h| h.static_routes.get(&d.dst))
                    == Some(&to)
                {
                    self.drop_data(from, &d, DropReason::NoRoute);
                    return;
                }
                let now = self.now;
                if let Some(n) = self.host(from).aodv.handle_link_break(to, now) {
                    self.send_rerr(from, n);
                }
                self.touched.insert(d.dst);
                self.route_data(from, d, None);
            }
            p => self.log(from, "DROP", || {
                format!("pkt={} reason=NoLink to={to}", p.kind())
            }),
        }
    }

    fn wake_link(&mut self, a: NodeId, b: NodeId) {
        for pid in self.topology.shared_piconets(a, b) {
            let mac = self.macs.entry(pid).or_default();
            if !mac.active {
                mac.active = true;
                let slot = next_master_slot(self.now);
                self.queue
                    .push(slot_time(slot), EventKind::SlotTick { pid });
            }
        }
    }

    fn piconet_has_traffic(&self, pid: PiconetId) -> bool {
        let Some(p) = self.topology.piconet(pid) else {
            return false;
        };
        p.slaves.iter().any(|&s| {
            !self.links.is_empty_link(p.master, s) || !self.links.is_empty_link(s, p.master)
        })
    }

    fn on_slot_tick(&mut self, pid: PiconetId) {
        if !self.piconet_has_traffic(pid) {
            if let Some(m) = self.macs.get_mut(&pid) {
                m.active = false;
            }
            return;
        }
        let piconet = self.topology.piconet(pid).expect("has traffic").clone();
        let slot = self.now / SLOT_US;
        let next_tick = slot_time(slot + 2);
        let master_left = self
            .presence
            .remaining(&self.topology, piconet.master, pid, slot)
            .unwrap_or(0);
        if master_left < 2 {
            self.queue.push(next_tick, EventKind::SlotTick { pid });
            return;
        }
        let (topo, presence, links) = (&self.topology, self.presence, &self.links);
        let mac = self.macs.entry(pid).or_default();
        let master = piconet.master;
        let picked = mac.poll.next_poll(&piconet, |s| {
            presence.remaining(topo, s, pid, slot).unwrap_or(0) >= 2
                && !(links.is_empty_link(master, s) && links.is_empty_link(s, master))
        });
        let Some(slave) = picked else {
            self.queue.push(next_tick, EventKind::SlotTick { pid });
            return;
        };
        let slave_left = presence.remaining(topo, slave, pid, slot).unwrap_or(0);
        let budget = master_left.min(slave_left);
        let mut used = 1;
        if let Some(q) = self.links.get_mut(master, slave) {
            if q.front().is_some_and(|f| (f.slots as u64) < budget) {
                let (frame, packet) = q.pop().expect("front checked");
                used = frame.slots as u64;
                self.queue.push(
                    slot_time(slot + used),
                    EventKind::FrameDelivery {
                        from: master,
                        to: slave,
                        packet,
                    },
                );
            }
        }
        self.queue.push(
            slot_time(slot + used),
            EventKind::SlaveReply {
                pid,
                master,
                slave,
                budget_end: slot.saturating_add(budget),
            },
        );
    }

    fn on_slave_reply(&mut self, pid: PiconetId, master: NodeId, slave: NodeId, budget_end: u64) {
        let slot = self.now / SLOT_US;
        let mut used = 1;
        let linked = self.topology.link_exists(master, slave).unwrap_or(false);
        if let Some(q) = self.links.get_mut(slave, master).filter(|_| linked) {
            if q.front()
                .is_some_and(|f| slot + f.slots as u64 <= budget_end)
            {
                let (frame, packet) = q.pop().expect("front checked");
                used = frame.slots as u64;
                self.queue.push(
                    slot_time(slot + used),
                    EventKind::FrameDelivery {
                        from: slave,
                        to: master,
                        packet,
                    },
                );
            }
        }
        debug_assert_eq!((slot + used) % 2, 0);
        self.queue
            .push(slot_time(slot + used), EventKind::SlotTick { pid });
    }

    fn on_delivery(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        match packet {
            Packet::Data(d) => self.on_data(to, d, Some(from)),
            Packet::Rreq(r) => self.on_rreq(to, r, from),
            Packet::Rrep(r) => self.on_rrep(to, r, from),
            Packet::Rerr(e) => {
                let now = self.now;
                let notice = self.host(to).aodv.handle_rerr(&e, from, now);
                self.touched.extend(e.unreachable.iter().map(|u| u.0));
                self.log(to, "RERR_RX", || {
                    format!("from={from} n={}", e.unreachable.len())
                });
                if let Some(n) = notice {
                    let dests: Vec<NodeId> = n.packet.unreachable.iter().map(|u| u.0).collect();
                    self.send_rerr(to, n);
                    for d in dests {
                        let a = &self.host(to).aodv;
                        if a.has_buffered(d) && !a.discovering(d) {
                            self.start_discovery_now(to, d);
                        }
                    }
                }
            }
        }
    }

    // ---- routing ----

    fn on_flow_packet(&mut self, flow: usize) {
        let f = self.flows[flow];
        let id = self.next_packet;
        self.next_packet += 1;
        self.metrics
            .record_send(id, f.src, f.dst, f.payload as u32, self.now)
            .expect("fresh id");
        self.log(f.src, "SEND", || {
            format!("id={id} dst={} size={}", f.dst, f.payload)
        });
        let packet = DataPacket {
            id: PacketId(id),
            src: f.src,
            dst: f.dst,
            payload_bytes: f.payload,
            hop_limit: self.config.hop_limit,
        };
        self.on_data(f.src, packet, None);
    }

    fn on_data(&mut self, node: NodeId, packet: DataPacket, from: Option<NodeId>) {
        if packet.dst == node {
            let id = packet.id.0;
            if self.metrics.record_receive(id, self.now).is_ok() {
                let delay = self.metrics.get(id).and_then(|r| r.delay()).unwrap_or(0);
                self.log(node, "RECV", || {
                    format!("id={id} src={} delay_us={delay}", packet.src)
                });
            }
            return;
        }
        self.route_data(node, packet, from);
    }

    fn route_data(&mut self, node: NodeId, packet: DataPacket, from: Option<NodeId>) {
        if let Some(&next) = self
            .nodes
            .get(&node)
            .and_then(|h| h.static_routes.get(&packet.dst))
        {
            self.send_data(node, next, packet);
            return;
        }
        self.touched.insert(packet.dst);
        let now = self.now;
        match self.host(node).aodv.forward_data(packet, from, now) {
            Ok(Forward::Send { next_hop, packet }) => self.send_data(node, next_hop, packet),
            Ok(Forward::Buffered { rreq }) => {
                if let Some(r) = rreq {
                    self.broadcast_rreq(node, r, None, "RREQ_ORIG");
                }
            }
            Err(AodvError::BufferOverflow(_)) => {
                self.drop_data(node, &packet, DropReason::BufferOverflow)
            }
            Err(e) => self.scenario_error(node, e.to_string()),
        }
    }

    fn send_data(&mut self, node: NodeId, next: NodeId, mut packet: DataPacket) {
        if packet.hop_limit == 0 {
            self.drop_data(node, &packet, DropReason::LoopTtlExpired);
            return;
        }
        packet.hop_limit -= 1;
        self.log(node, "FWD", || format!("id={} to={next}", packet.id.0));
        self.send(node, next, Packet::Data(packet));
    }

    fn broadcast_rreq(
        &mut self,
        node: NodeId,
        rreq: RreqPacket,
        except: Option<NodeId>,
        kind: &'static str,
    ) {
        let targets: Vec<NodeId> = self
            .neighbors(node)
            .into_iter()
            .filter(|&n| Some(n) != except)
            .collect();
        self.log(node, kind, || {
            format!(
                "src={} bid={} dst={} dseq={} hops={} fanout={}",
                rreq.source_addr,
                rreq.broadcast_id,
                rreq.dest_addr,
                rreq.dest_seq,
                rreq.hop_cnt,
                targets.len()
            )
        });
        for t in targets {
            self.send(node, t, Packet::Rreq(rreq));
        }
        if rreq.source_addr == node {
            let timer = Timer::RreqRetry {
                dest: rreq.dest_addr,
                broadcast_id: rreq.broadcast_id,
            };
            let at = self.now + self.config.aodv.rreq_retry_interval;
            self.queue.push(at, EventKind::TimerFire { node, timer });
        }
    }

    fn start_discovery_now(&mut self, node: NodeId, dest: NodeId) {
        let now = self.now;
        match self.host(node).aodv.discover(dest, now) {
            Ok(Some(r)) => self.broadcast_rreq(node, r, None, "RREQ_ORIG"),
            Ok(None) => {}
            Err(e) => self.log(node, "DISCOVER_SKIP", || {
                format!("dst={dest} reason=\"{e}\"")
            }),
        }
    }

    fn on_start_discovery(&mut self, node: NodeId, dest: NodeId) {
        self.start_discovery_now(node, dest);
    }

    fn on_rreq(&mut self, node: NodeId, rreq: RreqPacket, from: NodeId) {
        let nbrs = self.neighbors(node);
        let now = self.now;
        match self.host(node).aodv.handle_rreq(&rreq, from, &nbrs, now) {
            Ok(RreqAction::Rebroadcast(r)) => self.broadcast_rreq(node, r, Some(from), "RREQ_FWD"),
            Ok(RreqAction::UnicastRrep {
                rrep,
                to,
                from_cache,
            }) => {
                let kind = if from_cache {
                    "RREP_CACHE"
                } else {
                    "RREP_DEST"
                };
                self.log(node, kind, || {
                    format!(
                        "src={} dst={} dseq={} hops={} to={to}",
                        rrep.source_addr, rrep.dest_addr, rrep.dest_seq, rrep.hop_cnt
                    )
                });
                self.send(node, to, Packet::Rrep(rrep));
            }
            Ok(RreqAction::Drop(why)) => self.log(node, "RREQ_DROP", || {
                format!(
                    "src={} bid={} why={why:?}",
                    rreq.source_addr, rreq.broadcast_id
                )
            }),
            Err(e) => self.log(node, "RREQ_DROP", || {
                format!("src={} why=\"{e}\"", rreq.source_addr)
            }),
        }
    }

    fn on_rrep(&mut self, node: NodeId, rrep: crate::aodv::RrepPacket, from: NodeId) {
        let now = self.now;
        let action = self.host(node).aodv.handle_rrep(&rrep, from, now);
        self.touched.insert(rrep.dest_addr);
        let detail = || {
            format!(
                "src={} dst={} dseq={} hops={} from={from}",
                rrep.source_addr,
                rrep.dest_addr,
                rrep.dest_seq,
                rrep.hop_cnt + 1
            )
        };
        match action {
            RrepAction::InstallAndForward { rrep: fwd, to } => {
                self.log(node, "RREP_INSTALL", detail);
                self.send(node, to, Packet::Rrep(fwd));
                self.flush(node, rrep.dest_addr);
            }
            RrepAction::InstallOnly => {
                self.log(node, "RREP_INSTALL", detail);
                self.flush(node, rrep.dest_addr);
            }
            RrepAction::ForwardOnly { rrep: fwd, to } => {
                self.log(node, "RREP_RELAY", detail);
                self.send(node, to, Packet::Rrep(fwd));
            }
            RrepAction::Discard(why) => {
                let d = detail();
                self.log(node, "RREP_DISCARD", || format!("{d} why={why:?}"));
            }
        }
    }

    fn flush(&mut self, node: NodeId, dest: NodeId) {
        let waiting = self.host(node).aodv.take_buffered(dest);
        for b in waiting {
            self.route_data(node, b.packet, b.from);
        }
    }

    fn send_rerr(&mut self, node: NodeId, notice: RerrNotice) {
        self.log(node, "RERR_TX", || {
            let list: Vec<String> = notice
                .packet
                .unreachable
                .iter()
                .map(|(d, s)| format!("{d}:{s}"))
                .collect();
            format!(
                "unreachable={} to={}",
                list.join(","),
                notice.recipients.len()
            )
        });
        for r in notice.recipients {
            self.send(node, r, Packet::Rerr(notice.packet.clone()));
        }
    }

    fn on_timer(&mut self, node: NodeId, timer: Timer) {
        let Timer::RreqRetry { dest, broadcast_id } = timer;
        let now = self.now;
        match self
            .host(node)
            .aodv
            .on_discovery_timeout(dest, broadcast_id, now)
        {
            RetryOutcome::Idle => {}
            RetryOutcome::Retry(r) => self.broadcast_rreq(node, r, None, "RREQ_RETRY"),
            RetryOutcome::GiveUp(packets) => {
                for b in packets {
                    self.drop_data(node, &b.packet, DropReason::NoRoute);
                }
            }
        }
    }

    // ---- scenario events ----

    fn on_migrate(&mut self, node: NodeId, pid: PiconetId) {
        match self.topology.migrate_as_slave(node, pid) {
            Ok(()) => {
                self.host(node);
                self.log(node, "MIGRATE", || format!("to={pid}"));
            }
            Err(e) => self.scenario_error(node, format!("migrate to {pid}: {e}")),
        }
    }

    fn on_leave(&mut self, node: NodeId, pid: PiconetId) {
        let outcome = match self.topology.leave(node, pid) {
            Ok(o) => o,
            Err(e) => {
                self.scenario_error(node, format!("leave {pid}: {e}"));
                return;
            }
        };
        self.log(node, "LEAVE", || {
            format!("from={pid} dissolved={}", outcome.dissolved)
        });
        for (a, b) in outcome.broken_links {
            for (x, y) in [(a, b), (b, a)] {
                self.log(x, "LINK_BREAK", || format!("peer={y}"));
                let now = self.now;
                if let Some(n) = self.host(x).aodv.handle_link_break(y, now) {
                    self.touched
                        .extend(n.packet.unreachable.iter().map(|u| u.0));
                    self.send_rerr(x, n);
                }
                let stranded: Vec<Packet> = self
                    .links
                    .get_mut(x, y)
                    .map(|q| q.drain().map(|(_, p)| p).collect())
                    .unwrap_or_default();
                for p in stranded {
                    self.link_failure(x, y, p);
                }
            }
        }
    }

    fn on_static(&mut self, assignments: Vec<StaticRoute>) {
        for a in assignments {
            if self
                .topology
                .link_exists(a.node, a.next_hop)
                .unwrap_or(false)
            {
                self.host(a.node).static_routes.insert(a.dest, a.next_hop);
                self.log(a.node, "STATIC", || {
                    format!("dst={} via={}", a.dest, a.next_hop)
                });
            } else {
                self.scenario_error(
                    a.node,
                    format!(
                        "static route via {}: {}",
                        a.next_hop,
                        AodvError::NotANeighbor(a.next_hop)
                    ),
                );
            }
        }
    }
}

/// Worst-case slots for one control frame to cross a link in an otherwise
/// idle scatternet: every piconet gets one focus window per cycle and a
/// slave may need one cycle per co-slave ahead of it in the poll order.
pub fn hop_latency_bound(topology: &Scatternet, window_slots: u64) -> Micros {
    let piconets = topology.piconets().count().max(1) as u64;
    slot_time(piconets * window_slots * crate::topology::MAX_SLAVES as u64)
}

/// Upper bound on request-out plus reply-back time across the scatternet.
pub fn discovery_round_trip_bound(topology: &Scatternet, window_slots: u64) -> Micros {
    2 * topology.diameter().max(1) as Micros * hop_latency_bound(topology, window_slots)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Scatternet {
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &[NodeId(2)]).unwrap();
        t
    }

    fn flow(src: u32, dst: u32, start: u64, stop: u64, rate: f64) -> TrafficFlow {
        TrafficFlow {
            src: NodeId(src),
            dst: NodeId(dst),
            start_ms: start,
            stop_ms: stop,
            rate_pps: rate,
            payload: 64,
        }
    }

    #[test]
    fn schedule_rules() {
        let mut e = Engine::new(pair(), SimConfig::default());
        e.schedule(
            0,
            EventKind::StartDiscovery {
                node: NodeId(1),
                dest: NodeId(2),
            },
        )
        .unwrap();
        e.run_until(5);
        assert_eq!(
            e.schedule(4999, EventKind::EndOfRun),
            Err(KernelError::TimeInPast {
                at: 4999,
                now: 5000
            })
        );
        assert!(e.schedule(5000, EventKind::EndOfRun).is_ok());
    }

    #[test]
    fn empty_run_returns_immediately() {
        let mut e = Engine::new(pair(), SimConfig::default());
        let r = e.run_until(1000);
        assert_eq!(r.events_processed, 0);
        assert_eq!(r.loss, LossReport::default());
    }

    #[test]
    fn flow_packet_count() {
        let mut e = Engine::new(pair(), SimConfig::default());
        assert_eq!(e.attach_flow(flow(1, 2, 500, 1500, 100.0)), Ok(100));
        assert_eq!(
            e.attach_flow(flow(1, 2, 500, 1500, 0.0)),
            Err(KernelError::BadInterval)
        );
        assert_eq!(
            e.attach_flow(flow(1, 2, 1500, 500, 10.0)),
            Err(KernelError::BadInterval)
        );
        assert_eq!(
            e.attach_flow(flow(1, 9, 500, 1500, 10.0)),
            Err(KernelError::UnknownNode(NodeId(9)))
        );
        let mut big = flow(1, 2, 0, 10, 1.0);
        big.payload = 340;
        assert_eq!(e.attach_flow(big), Err(KernelError::PayloadTooLarge(340)));
    }

    #[test]
    fn pair_delivers_over_baseband() {
        let mut e = Engine::new(pair(), SimConfig::default());
        e.attach_flow(flow(2, 1, 0, 100, 100.0)).unwrap();
        let r = e.run_until(500);
        assert_eq!(r.loss.sent, 10);
        assert_eq!(r.loss.received, 10);
        assert!(r.loss.balances());
        // every frame lands on a slot boundary
        for rec in e.metrics().records() {
            assert_eq!(rec.t_recv.unwrap() % SLOT_US, 0);
        }
    }

    #[test]
    fn migration_errors_are_recorded() {
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &(2..=8).map(NodeId).collect::<Vec<_>>())
            .unwrap();
        t.add_piconet(NodeId(10), &[NodeId(11)]).unwrap();
        let mut e = Engine::new(t, SimConfig::default());
        e.apply_migration(NodeId(10), PiconetId(1), 1).unwrap();
        e.apply_migration(NodeId(11), PiconetId(2), 2).unwrap();
        let r = e.run_until(10);
        assert_eq!(r.scenario_errors.len(), 2);
        assert!(r.scenario_errors[0].contains("already has 7 slaves"));
        assert!(r.scenario_errors[1].contains("already a member"));
        assert_eq!(e.topology().piconet(PiconetId(1)).unwrap().slaves.len(), 7);
    }

    #[test]
    fn migration_adds_neighbor() {
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &[NodeId(2)]).unwrap();
        t.add_piconet(NodeId(17), &[NodeId(18)]).unwrap();
        let mut e = Engine::new(t, SimConfig::default());
        e.apply_migration(NodeId(1), PiconetId(2), 500).unwrap();
        e.run_until(499);
        assert!(!e
            .topology()
            .neighbors(NodeId(17))
            .unwrap()
            .contains(&NodeId(1)));
        e.run_until(500);
        assert!(e
            .topology()
            .neighbors(NodeId(17))
            .unwrap()
            .contains(&NodeId(1)));
    }

    #[test]
    fn leave_reroutes_around_break() {
        // 1 masters {2,3}; 4 masters {2,3}: two disjoint 2-hop paths 1->x->4
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &[NodeId(2), NodeId(3)]).unwrap();
        t.add_piconet(NodeId(4), &[NodeId(2), NodeId(3)]).unwrap();
        let cfg = SimConfig {
            link_model: LinkModel::Ideal { latency: 1000 },
            ..SimConfig::default()
        };
        let mut e = Engine::new(t, cfg);
        e.set_loop_checking(true);
        e.attach_flow(flow(1, 4, 0, 400, 50.0)).unwrap();
        e.apply_leave(NodeId(2), PiconetId(1), 200).unwrap();
        let r = e.run_until(1000);
        assert!(r.loop_violations.is_empty());
        assert_eq!(r.loss.sent, 20);
        assert_eq!(r.loss.received, 20, "{:?}", r.loss);
        let route = e.aodv(NodeId(1)).unwrap().route(NodeId(4)).unwrap();
        assert_eq!(route.next_hop, NodeId(3));
        let kinds: Vec<_> = e.trace().records().iter().map(|r| r.kind).collect();
        assert!(kinds.contains(&"LINK_BREAK"));
    }

    #[test]
    fn unreachable_destination_gives_up() {
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &[NodeId(2)]).unwrap();
        t.add_piconet(NodeId(5), &[NodeId(6)]).unwrap();
        let mut e = Engine::new(t, SimConfig::default());
        e.attach_flow(flow(1, 6, 0, 50, 100.0)).unwrap();
        let r = e.run_until(3000);
        assert_eq!(r.loss.dropped[&DropReason::NoRoute], 5);
        let retries = e
            .trace()
            .records()
            .iter()
            .filter(|r| r.kind == "RREQ_RETRY")
            .count();
        assert_eq!(retries, 2);
    }

    #[test]
    fn delay_includes_discovery_buffering() {
        // 1 -> 2 -> 3 over 1 ms links; discovery takes 4 ms round trip
        let mut t = Scatternet::new();
        t.add_piconet(NodeId(1), &[NodeId(2)]).unwrap();
        t.add_piconet(NodeId(2), &[NodeId(3)]).unwrap();
        let cfg = SimConfig {
            link_model: LinkModel::Ideal { latency: 1000 },
            ..SimConfig::default()
        };
        let mut e = Engine::new(t, cfg);
        e.attach_flow(flow(1, 3, 0, 30, 100.0)).unwrap();
        let r = e.run_until(100);
        let delays: Vec<u64> = e.metrics().records().map(|p| p.delay().unwrap()).collect();
        assert_eq!(delays, vec![6000, 2000, 2000]);
        assert!((r.average_delay_us.unwrap() - 10_000.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn end_of_run_halts() {
        let mut e = Engine::new(pair(), SimConfig::default());
        e.attach_flow(flow(1, 2, 0, 100, 100.0)).unwrap();
        e.schedule(50_000, EventKind::EndOfRun).unwrap();
        let r = e.run_until(1000);
        assert_eq!(r.end_time, 50_000);
        assert!(r.loss.sent <= 6);
    }
}
