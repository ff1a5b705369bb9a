//! Per-node on-demand distance-vector routing.
//!
//! Each node floods route requests, records the reverse path toward the
//! requester, answers from its own table when the cached destination
//! sequence number is fresh enough, and installs forward routes from the
//! replies that travel back. Routes are ordered by freshness first and hop
//! count second.
//!
//! A route that is invalidated or expires raises the node's known sequence
//! number for that destination past the lost route. A later route is only
//! accepted if it is at least that fresh, so a node never re-attaches to a
//! neighbor that still points back through it.

mod loops;
mod packets;

pub use loops::{check_destination, LoopViolation, ViolationKind};
pub use packets::{
    DataPacket, Packet, PacketId, RerrPacket, RrepPacket, RreqPacket, SeqNum, RREP_BYTES,
    RREQ_BYTES,
};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::topology::NodeId;
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AodvConfig {
    pub route_lifetime: Micros,
    /// How long reverse paths and seen-request records are kept.
    pub reverse_timeout: Micros,
    pub active_timeout: Micros,
    pub rreq_retries: u32,
    pub rreq_retry_interval: Micros,
    pub buffer_capacity: usize,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            route_lifetime: 3_000_000,
            reverse_timeout: 1_000_000,
            active_timeout: 3_000_000,
            rreq_retries: 2,
            rreq_retry_interval: 500_000,
            buffer_capacity: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AodvError {
    #[error("a usable route to {0} already exists")]
    RouteAlreadyKnown(NodeId),
    #[error("{0} is not a neighbor")]
    NotANeighbor(NodeId),
    #[error("no route candidates")]
    NoCandidates,
    #[error("route discovery buffer full, packet {0:?} dropped")]
    BufferOverflow(PacketId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: SeqNum,
    /// Neighbor -> last time it originated or relayed traffic for this route.
    pub active_neighbors: BTreeMap<NodeId, Micros>,
    pub expiry: Micros,
    pub valid: bool,
}

impl RouteEntry {
    pub fn usable(&self, now: Micros) -> bool {
        self.valid && now < self.expiry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReversePath {
    pub prev_hop: NodeId,
    pub hop_count: u32,
    pub expires: Micros,
    /// Best (seq, hops) already relayed toward the source for this request.
    forwarded: Option<(SeqNum, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RreqDrop {
    Duplicate,
    OwnRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RreqAction {
    Rebroadcast(RreqPacket),
    /// `from_cache` is false when this node is the destination.
    UnicastRrep {
        rrep: RrepPacket,
        to: NodeId,
        from_cache: bool,
    },
    Drop(RreqDrop),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    NoReversePath,
    Stale,
    SelfAddressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrepAction {
    InstallAndForward {
        rrep: RrepPacket,
        to: NodeId,
    },
    /// Route installed at the requesting source, or a better reply was
    /// already relayed.
    InstallOnly,
    /// Not installed because the local route is at least as good, but the
    /// reply is the best seen for this request so it is relayed.
    ForwardOnly {
        rrep: RrepPacket,
        to: NodeId,
    },
    Discard(DiscardReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteCandidate {
    pub dest_seq: SeqNum,
    pub hop_count: u32,
    pub next_hop: NodeId,
}

/// Freshest candidate, then fewest hops, then lowest next-hop id.
pub fn select_route(candidates: &[RouteCandidate]) -> Result<NodeId, AodvError> {
    candidates
        .iter()
        .min_by(|a, b| {
            b.dest_seq
                .cmp(&a.dest_seq)
                .then(a.hop_count.cmp(&b.hop_count))
                .then(a.next_hop.cmp(&b.next_hop))
        })
        .map(|c| c.next_hop)
        .ok_or(AodvError::NoCandidates)
}

/// `(seq_a, hops_a)` strictly preferred over `(seq_b, hops_b)`.
pub fn fresher(seq_a: SeqNum, hops_a: u32, seq_b: SeqNum, hops_b: u32) -> bool {
    seq_a > seq_b || (seq_a == seq_b && hops_a < hops_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferedPacket {
    pub packet: DataPacket,
    /// Neighbor the packet came from; `None` if originated here.
    pub from: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Forward {
    Send {
        next_hop: NodeId,
        packet: DataPacket,
    },
    /// Queued until a route appears. Carries the request to broadcast when
    /// this packet started a new discovery.
    Buffered { rreq: Option<RreqPacket> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerrNotice {
    pub packet: RerrPacket,
    pub recipients: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryOutcome {
    /// Discovery already finished or was superseded.
    Idle,
    Retry(RreqPacket),
    GiveUp(Vec<BufferedPacket>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Discovery {
    broadcast_id: u64,
    attempts: u32,
}

#[derive(Debug, Clone)]
pub struct NodeAodvState {
    id: NodeId,
    config: AodvConfig,
    own_seq: SeqNum,
    broadcast_id: u64,
    route_table: BTreeMap<NodeId, RouteEntry>,
    seen_rreqs: BTreeMap<(NodeId, u64), Micros>,
    reverse_paths: BTreeMap<NodeId, ReversePath>,
    known_seq: BTreeMap<NodeId, SeqNum>,
    pending_buffer: VecDeque<BufferedPacket>,
    discoveries: BTreeMap<NodeId, Discovery>,
}

impl NodeAodvState {
    pub fn new(id: NodeId, config: AodvConfig) -> Self {
        NodeAodvState {
            id,
            config,
            own_seq: SeqNum(0),
            broadcast_id: 0,
            route_table: BTreeMap::new(),
            seen_rreqs: BTreeMap::new(),
            reverse_paths: BTreeMap::new(),
            known_seq: BTreeMap::new(),
            pending_buffer: VecDeque::new(),
            discoveries: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &AodvConfig {
        &self.config
    }

    pub fn own_seq(&self) -> SeqNum {
        self.own_seq
    }

    /// Last broadcast id used; 0 before the first request.
    pub fn broadcast_id(&self) -> u64 {
        self.broadcast_id
    }

    pub fn route(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.route_table.get(&dest)
    }

    pub fn usable_route(&self, dest: NodeId, now: Micros) -> Option<&RouteEntry> {
        self.route_table.get(&dest).filter(|e| e.usable(now))
    }

    pub fn routes(&self) -> impl Iterator<Item = &RouteEntry> {
        self.route_table.values()
    }

    pub fn reverse_path(&self, source: NodeId, now: Micros) -> Option<&ReversePath> {
        self.reverse_paths.get(&source).filter(|r| now < r.expires)
    }

    /// Freshest sequence number this node knows for `dest`.
    pub fn known_seq(&self, dest: NodeId) -> SeqNum {
        let from_table = self.route_table.get(&dest).map(|e| e.dest_seq);
        self.known_seq
            .get(&dest)
            .copied()
            .max(from_table)
            .unwrap_or_default()
    }

    pub fn buffered(&self) -> usize {
        self.pending_buffer.len()
    }

    pub fn has_buffered(&self, dest: NodeId) -> bool {
        self.pending_buffer.iter().any(|b| b.packet.dst == dest)
    }

    pub fn discovering(&self, dest: NodeId) -> bool {
        self.discoveries.contains_key(&dest)
    }

    /// Installs a route directly, bypassing discovery.
    pub fn preload_route(&mut self, entry: RouteEntry) {
        self.learn(entry.destination, entry.dest_seq);
        self.route_table.insert(entry.destination, entry);
    }

    fn learn(&mut self, dest: NodeId, seq: SeqNum) {
        let k = self.known_seq.entry(dest).or_default();
        *k = (*k).max(seq);
    }

    fn install(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u32,
        seq: SeqNum,
        expiry: Micros,
    ) {
        self.learn(dest, seq);
        let active = self
            .route_table
            .remove(&dest)
            .map(|e| e.active_neighbors)
            .unwrap_or_default();
        self.route_table.insert(
            dest,
            RouteEntry {
                destination: dest,
                next_hop,
                hop_count,
                dest_seq: seq,
                active_neighbors: active,
                expiry,
                valid: true,
            },
        );
        self.discoveries.remove(&dest);
    }

    /// Would a reply `(seq, hops)` for `dest` be accepted into the table?
    fn accepts(&self, dest: NodeId, seq: SeqNum, hops: u32, now: Micros) -> bool {
        match self.usable_route(dest, now) {
            Some(e) => fresher(seq, hops, e.dest_seq, e.hop_count),
            None => seq >= self.known_seq(dest),
        }
    }

    /// Starts a new route request for `dest`.
    pub fn originate_rreq(&mut self, dest: NodeId, now: Micros) -> Result<RreqPacket, AodvError> {
        self.expire_routes(now);
        if self.usable_route(dest, now).is_some() {
            return Err(AodvError::RouteAlreadyKnown(dest));
        }
        self.broadcast_id += 1;
        self.own_seq = self.own_seq.next();
        self.seen_rreqs.insert(
            (self.id, self.broadcast_id),
            now + self.config.reverse_timeout,
        );
        Ok(RreqPacket {
            source_addr: self.id,
            source_seq: self.own_seq,
            broadcast_id: self.broadcast_id,
            dest_addr: dest,
            dest_seq: self.known_seq(dest),
            hop_cnt: 0,
        })
    }

    /// Begins discovery for `dest` unless one is already running.
    pub fn discover(&mut self, dest: NodeId, now: Micros) -> Result<Option<RreqPacket>, AodvError> {
        if self.discoveries.contains_key(&dest) {
            return Ok(None);
        }
        let rreq = self.originate_rreq(dest, now)?;
        self.discoveries.insert(
            dest,
            Discovery {
                broadcast_id: rreq.broadcast_id,
                attempts: 1,
            },
        );
        Ok(Some(rreq))
    }

    pub fn handle_rreq(
        &mut self,
        rreq: &RreqPacket,
        prev_hop: NodeId,
        neighbors: &BTreeSet<NodeId>,
        now: Micros,
    ) -> Result<RreqAction, AodvError> {
        if !neighbors.contains(&prev_hop) {
            return Err(AodvError::NotANeighbor(prev_hop));
        }
        self.expire_routes(now);
        if rreq.source_addr == self.id {
            return Ok(RreqAction::Drop(RreqDrop::OwnRequest));
        }
        let key = (rreq.source_addr, rreq.broadcast_id);
        if self.seen_rreqs.contains_key(&key) {
            return Ok(RreqAction::Drop(RreqDrop::Duplicate));
        }
        let timeout = now + self.config.reverse_timeout;
        self.seen_rreqs.insert(key, timeout);
        self.learn(rreq.source_addr, rreq.source_seq);
        let mut reverse = ReversePath {
            prev_hop,
            hop_count: rreq.hop_cnt + 1,
            expires: timeout,
            forwarded: None,
        };

        if rreq.dest_addr == self.id {
            self.own_seq = self.own_seq.max(rreq.dest_seq);
            self.reverse_paths.insert(rreq.source_addr, reverse);
            return Ok(RreqAction::UnicastRrep {
                rrep: RrepPacket {
                    source_addr: rreq.source_addr,
                    dest_addr: self.id,
                    dest_seq: self.own_seq,
                    hop_cnt: 0,
                    lifetime: self.config.route_lifetime,
                },
                to: prev_hop,
                from_cache: false,
            });
        }

        if let Some(entry) = self
            .route_table
            .get_mut(&rreq.dest_addr)
            .filter(|e| e.usable(now) && e.dest_seq >= rreq.dest_seq)
        {
            entry.active_neighbors.insert(prev_hop, now);
            reverse.forwarded = Some((entry.dest_seq, entry.hop_count + 1));
            let rrep = RrepPacket {
                source_addr: rreq.source_addr,
                dest_addr: rreq.dest_addr,
                dest_seq: entry.dest_seq,
                hop_cnt: entry.hop_count,
                lifetime: entry.expiry - now,
            };
            self.reverse_paths.insert(rreq.source_addr, reverse);
            return Ok(RreqAction::UnicastRrep {
                rrep,
                to: prev_hop,
                from_cache: true,
            });
        }

        self.reverse_paths.insert(rreq.source_addr, reverse);
        Ok(RreqAction::Rebroadcast(RreqPacket {
            hop_cnt: rreq.hop_cnt + 1,
            ..*rreq
        }))
    }

    pub fn handle_rrep(&mut self, rrep: &RrepPacket, prev_hop: NodeId, now: Micros) -> RrepAction {
        self.expire_routes(now);
        let dest = rrep.dest_addr;
        if dest == self.id {
            return RrepAction::Discard(DiscardReason::SelfAddressed);
        }
        let hops = rrep.hop_cnt + 1;
        let accept = self.accepts(dest, rrep.dest_seq, hops, now);
        let expiry = now + rrep.lifetime;

        if rrep.source_addr == self.id {
            if !accept {
                return RrepAction::Discard(DiscardReason::Stale);
            }
            self.install(dest, prev_hop, hops, rrep.dest_seq, expiry);
            return RrepAction::InstallOnly;
        }

        let Some(reverse) = self.reverse_path(rrep.source_addr, now).copied() else {
            return RrepAction::Discard(DiscardReason::NoReversePath);
        };
        if accept {
            self.install(dest, prev_hop, hops, rrep.dest_seq, expiry);
        }
        // a rejected reply is still relayable when the local route is at
        // least as good as what it advertises
        let relayable = accept || self.usable_route(dest, now).is_some();
        let improves = reverse
            .forwarded
            .is_none_or(|(s, h)| fresher(rrep.dest_seq, hops, s, h));
        if relayable && improves {
            if let Some(r) = self.reverse_paths.get_mut(&rrep.source_addr) {
                r.forwarded = Some((rrep.dest_seq, hops));
            }
            if let Some(e) = self.route_table.get_mut(&dest) {
                e.active_neighbors.insert(reverse.prev_hop, now);
            }
            let fwd = RrepPacket {
                hop_cnt: hops,
                ..*rrep
            };
            return if accept {
                RrepAction::InstallAndForward {
                    rrep: fwd,
                    to: reverse.prev_hop,
                }
            } else {
                RrepAction::ForwardOnly {
                    rrep: fwd,
                    to: reverse.prev_hop,
                }
            };
        }
        if accept {
            RrepAction::InstallOnly
        } else {
            RrepAction::Discard(DiscardReason::Stale)
        }
    }

    /// Drops expired routes, reverse paths and request records. Returns the
    /// destinations whose routes were removed.
    pub fn expire_routes(&mut self, now: Micros) -> Vec<NodeId> {
        let dead: Vec<NodeId> = self
            .route_table
            .values()
            .filter(|e| e.expiry <= now)
            .map(|e| e.destination)
            .collect();
        for d in &dead {
            let e = self.route_table.remove(d).expect("listed above");
            // invalidated entries already carry the bumped number
            let floor = if e.valid {
                e.dest_seq.next()
            } else {
                e.dest_seq
            };
            self.learn(*d, floor);
        }
        self.reverse_paths.retain(|_, r| r.expires > now);
        self.seen_rreqs.retain(|_, t| *t > now);
        dead
    }

    fn invalidate(
        &mut self,
        dest: NodeId,
        seq: SeqNum,
        now: Micros,
    ) -> Option<(SeqNum, Vec<NodeId>)> {
        let active_timeout = self.config.active_timeout;
        let e = self.route_table.get_mut(&dest)?;
        let seq = seq.max(e.dest_seq.next());
        e.dest_seq = seq;
        e.valid = false;
        e.expiry = now;
        let active = e
            .active_neighbors
            .iter()
            .filter(|&(_, &t)| t + active_timeout > now)
            .map(|(&n, _)| n)
            .collect();
        self.learn(dest, seq);
        Some((seq, active))
    }

    /// Invalidates every route through `dead_neighbor` and builds the
    /// error report for their active neighbors.
    pub fn handle_link_break(&mut self, dead_neighbor: NodeId, now: Micros) -> Option<RerrNotice> {
        let affected: Vec<(NodeId, SeqNum)> = self
            .route_table
            .values()
            .filter(|e| e.next_hop == dead_neighbor && e.usable(now))
            .map(|e| (e.destination, e.dest_seq.next()))
            .collect();
        self.notify(affected, Some(dead_neighbor), now)
    }

    /// Invalidates routes reported unreachable by `from` that use it as
    /// next hop, and builds the report to pass on.
    pub fn handle_rerr(
        &mut self,
        rerr: &RerrPacket,
        from: NodeId,
        now: Micros,
    ) -> Option<RerrNotice> {
        self.expire_routes(now);
        let mut affected = Vec::new();
        for &(dest, seq) in &rerr.unreachable {
            if self
                .usable_route(dest, now)
                .is_some_and(|e| e.next_hop == from)
            {
                affected.push((dest, seq));
            } else {
                self.learn(dest, seq);
            }
        }
        self.notify(affected, Some(from), now)
    }

    fn notify(
        &mut self,
        affected: Vec<(NodeId, SeqNum)>,
        exclude: Option<NodeId>,
        now: Micros,
    ) -> Option<RerrNotice> {
        let mut unreachable = Vec::new();
        let mut recipients = BTreeSet::new();
        for (dest, seq) in affected {
            if let Some((seq, active)) = self.invalidate(dest, seq, now) {
                unreachable.push((dest, seq));
                recipients.extend(active);
            }
        }
        recipients.remove(&self.id);
        if let Some(x) = exclude {
            recipients.remove(&x);
        }
        (!unreachable.is_empty()).then_some(RerrNotice {
            packet: RerrPacket { unreachable },
            recipients,
        })
    }

    /// Routes a data packet originated here (`from == None`) or relayed
    /// from a neighbor.
    pub fn forward_data(
        &mut self,
        packet: DataPacket,
        from: Option<NodeId>,
        now: Micros,
    ) -> Result<Forward, AodvError> {
        self.expire_routes(now);
        let lifetime = self.config.route_lifetime;
        if let Some(e) = self
            .route_table
            .get_mut(&packet.dst)
            .filter(|e| e.usable(now))
        {
            e.expiry = e.expiry.max(now + lifetime);
            if let Some(f) = from {
                e.active_neighbors.insert(f, now);
            }
            return Ok(Forward::Send {
                next_hop: e.next_hop,
                packet,
            });
        }
        if self.pending_buffer.len() >= self.config.buffer_capacity {
            return Err(AodvError::BufferOverflow(packet.id));
        }
        self.pending_buffer
            .push_back(BufferedPacket { packet, from });
        let rreq = self.discover(packet.dst, now)?;
        Ok(Forward::Buffered { rreq })
    }

    /// Removes and returns buffered packets for `dest` in arrival order.
    pub fn take_buffered(&mut self, dest: NodeId) -> Vec<BufferedPacket> {
        let (out, keep): (Vec<_>, Vec<_>) = self
            .pending_buffer
            .drain(..)
            .partition(|b| b.packet.dst == dest);
        self.pending_buffer = keep.into();
        out
    }

    /// Retry timer for the discovery identified by `broadcast_id`.
    pub fn on_discovery_timeout(
        &mut self,
        dest: NodeId,
        broadcast_id: u64,
        now: Micros,
    ) -> RetryOutcome {
        self.expire_routes(now);
        let Some(d) = self.discoveries.get(&dest).copied() else {
            return RetryOutcome::Idle;
        };
        if d.broadcast_id != broadcast_id {
            return RetryOutcome::Idle;
        }
        if self.usable_route(dest, now).is_some() {
            self.discoveries.remove(&dest);
            return RetryOutcome::Idle;
        }
        if d.attempts <= self.config.rreq_retries {
            let rreq = self
                .originate_rreq(dest, now)
                .expect("no usable route checked above");
            self.discoveries.insert(
                dest,
                Discovery {
                    broadcast_id: rreq.broadcast_id,
                    attempts: d.attempts + 1,
                },
            );
            return RetryOutcome::Retry(rreq);
        }
        self.discoveries.remove(&dest);
        RetryOutcome::GiveUp(self.take_buffered(dest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: Micros = 1000;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn state(i: u32) -> NodeAodvState {
        NodeAodvState::new(n(i), AodvConfig::default())
    }

    fn nbrs(ids: &[u32]) -> BTreeSet<NodeId> {
        ids.iter().copied().map(NodeId).collect()
    }

    fn entry(dest: u32, next: u32, hops: u32, seq: u64, expiry: Micros) -> RouteEntry {
        RouteEntry {
            destination: n(dest),
            next_hop: n(next),
            hop_count: hops,
            dest_seq: SeqNum(seq),
            active_neighbors: BTreeMap::new(),
            expiry,
            valid: true,
        }
    }

    fn rreq(src: u32, bid: u64, dest: u32, dseq: u64, hops: u32) -> RreqPacket {
        RreqPacket {
            source_addr: n(src),
            source_seq: SeqNum(1),
            broadcast_id: bid,
            dest_addr: n(dest),
            dest_seq: SeqNum(dseq),
            hop_cnt: hops,
        }
    }

    fn rrep(src: u32, dest: u32, seq: u64, hops: u32) -> RrepPacket {
        RrepPacket {
            source_addr: n(src),
            dest_addr: n(dest),
            dest_seq: SeqNum(seq),
            hop_cnt: hops,
            lifetime: 3000 * MS,
        }
    }

    fn data(id: u64, src: u32, dst: u32) -> DataPacket {
        DataPacket {
            id: PacketId(id),
            src: n(src),
            dst: n(dst),
            payload_bytes: 64,
            hop_limit: 32,
        }
    }

    #[test]
    fn first_and_second_request_counters() {
        let mut s = state(0);
        let r1 = s.originate_rreq(n(9), 0).unwrap();
        assert_eq!(
            (r1.broadcast_id, r1.hop_cnt, r1.dest_seq),
            (1, 0, SeqNum(0))
        );
        assert_eq!(r1.source_seq, SeqNum(1));
        let r2 = s.originate_rreq(n(9), 10).unwrap();
        assert_eq!(r2.broadcast_id, 2);
        assert_eq!(r2.source_seq, SeqNum(2));
    }

    #[test]
    fn request_carries_heard_sequence_number() {
        let mut s = state(0);
        let mut heard = rreq(9, 1, 5, 0, 0);
        heard.source_seq = SeqNum(7);
        s.handle_rreq(&heard, n(1), &nbrs(&[1]), 0).unwrap();
        let r = s.originate_rreq(n(9), MS).unwrap();
        assert_eq!(r.dest_seq, SeqNum(7));
    }

    #[test]
    fn originate_with_route_is_an_error() {
        let mut s = state(0);
        s.preload_route(entry(9, 1, 2, 3, 1000 * MS));
        assert_eq!(
            s.originate_rreq(n(9), 0),
            Err(AodvError::RouteAlreadyKnown(n(9)))
        );
    }

    #[test]
    fn duplicate_request_dropped() {
        let mut s = state(4);
        let r = rreq(0, 3, 9, 0, 0);
        assert!(matches!(
            s.handle_rreq(&r, n(1), &nbrs(&[1, 2]), 0).unwrap(),
            RreqAction::Rebroadcast(_)
        ));
        assert_eq!(
            s.handle_rreq(&r, n(2), &nbrs(&[1, 2]), MS).unwrap(),
            RreqAction::Drop(RreqDrop::Duplicate)
        );
    }

    #[test]
    fn non_neighbor_rejected() {
        let mut s = state(4);
        assert_eq!(
            s.handle_rreq(&rreq(0, 1, 9, 0, 0), n(7), &nbrs(&[1]), 0),
            Err(AodvError::NotANeighbor(n(7)))
        );
    }

    #[test]
    fn fresh_cache_answers() {
        let mut s = state(4);
        s.preload_route(entry(9, 5, 2, 7, 10_000 * MS));
        match s
            .handle_rreq(&rreq(0, 1, 9, 5, 1), n(1), &nbrs(&[1, 5]), 0)
            .unwrap()
        {
            RreqAction::UnicastRrep {
                rrep,
                to,
                from_cache,
            } => {
                assert_eq!(rrep.dest_seq, SeqNum(7));
                assert_eq!(rrep.hop_cnt, 2);
                assert_eq!(to, n(1));
                assert!(from_cache);
            }
            other => panic!("{other:?}"),
        }
        // the requester became an active neighbor of the cached route
        assert!(s.route(n(9)).unwrap().active_neighbors.contains_key(&n(1)));
        assert_eq!(s.reverse_path(n(0), 0).unwrap().prev_hop, n(1));
    }

    #[test]
    fn stale_cache_rebroadcasts() {
        let mut s = state(4);
        s.preload_route(entry(9, 5, 2, 3, 10_000 * MS));
        match s
            .handle_rreq(&rreq(0, 1, 9, 5, 2), n(1), &nbrs(&[1, 5]), 0)
            .unwrap()
        {
            RreqAction::Rebroadcast(r) => assert_eq!(r.hop_cnt, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn destination_answers_with_raised_sequence() {
        let mut s = state(9);
        match s
            .handle_rreq(&rreq(0, 1, 9, 4, 0), n(1), &nbrs(&[1]), 0)
            .unwrap()
        {
            RreqAction::UnicastRrep {
                rrep, from_cache, ..
            } => {
                assert_eq!(rrep.dest_seq, SeqNum(4));
                assert_eq!(rrep.hop_cnt, 0);
                assert!(!from_cache);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.own_seq(), SeqNum(4));
    }

    #[test]
    fn own_request_echo_dropped() {
        let mut s = state(0);
        let r = s.originate_rreq(n(9), 0).unwrap();
        assert_eq!(
            s.handle_rreq(&r, n(1), &nbrs(&[1]), MS).unwrap(),
            RreqAction::Drop(RreqDrop::OwnRequest)
        );
    }

    /// Reply handling at the requesting source for an existing route
    /// `(old_seq, old_hops)` and a reply that installs as `(new_seq, new_hops)`.
    fn source_update(old_seq: u64, old_hops: u32, new_seq: u64, new_hops: u32) -> RrepAction {
        let mut s = state(0);
        s.preload_route(entry(9, 1, old_hops, old_seq, 10_000 * MS));
        s.handle_rrep(&rrep(0, 9, new_seq, new_hops - 1), n(2), 0)
    }

    #[test]
    fn reply_replacement_rule() {
        assert_eq!(source_update(5, 2, 7, 2), RrepAction::InstallOnly);
        assert_eq!(source_update(7, 2, 7, 1), RrepAction::InstallOnly);
        assert_eq!(
            source_update(7, 1, 5, 1),
            RrepAction::Discard(DiscardReason::Stale)
        );
    }

    #[test]
    fn reply_replacement_grid() {
        // brute force over (seq cmp) x (hop cmp): replace iff seq greater,
        // or seq equal and hops smaller
        for (ds, dh) in cmp_grid() {
            let old = (5u64, 3u32);
            let new = ((old.0 as i64 + ds) as u64, (old.1 as i32 + dh) as u32);
            let replaced = source_update(old.0, old.1, new.0, new.1) == RrepAction::InstallOnly;
            let rule = ds > 0 || (ds == 0 && dh < 0);
            assert_eq!(replaced, rule, "seq {ds:+}, hops {dh:+}");
        }
    }

    fn cmp_grid() -> Vec<(i64, i32)> {
        let mut v = Vec::new();
        for ds in [-1, 0, 1] {
            for dh in [-1, 0, 1] {
                v.push((ds, dh));
            }
        }
        v
    }

    #[test]
    fn intermediate_installs_and_forwards() {
        let mut s = state(3);
        s.handle_rreq(&rreq(0, 1, 9, 0, 0), n(0), &nbrs(&[0, 4]), 0)
            .unwrap();
        let act = s.handle_rrep(&rrep(0, 9, 7, 1), n(4), 2 * MS);
        match act {
            RrepAction::InstallAndForward { rrep, to } => {
                assert_eq!(to, n(0));
                assert_eq!(rrep.hop_cnt, 2);
            }
            other => panic!("{other:?}"),
        }
        let e = s.route(n(9)).unwrap();
        assert_eq!((e.next_hop, e.hop_count, e.dest_seq), (n(4), 2, SeqNum(7)));
        // a worse reply for the same request is neither installed nor relayed
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 5, 0), n(4), 3 * MS),
            RrepAction::Discard(DiscardReason::Stale)
        );
    }

    #[test]
    fn reply_without_reverse_path() {
        let mut s = state(3);
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 7, 1), n(4), 0),
            RrepAction::Discard(DiscardReason::NoReversePath)
        );
        s.handle_rreq(&rreq(0, 1, 9, 0, 0), n(0), &nbrs(&[0, 4]), 0)
            .unwrap();
        // reverse path timed out
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 7, 1), n(4), 1000 * MS),
            RrepAction::Discard(DiscardReason::NoReversePath)
        );
        assert!(s.route(n(9)).is_none());
    }

    #[test]
    fn select_route_cases() {
        let c = |s, h, nh| RouteCandidate {
            dest_seq: SeqNum(s),
            hop_count: h,
            next_hop: n(nh),
        };
        // B=2, C=3, A=1
        assert_eq!(
            select_route(&[c(5, 2, 2), c(7, 2, 3), c(3, 1, 1)]),
            Ok(n(3))
        );
        assert_eq!(select_route(&[c(7, 3, 2), c(7, 2, 3)]), Ok(n(3)));
        assert_eq!(select_route(&[c(1, 1, 4)]), Ok(n(4)));
        assert_eq!(select_route(&[c(7, 2, 5), c(7, 2, 4)]), Ok(n(4)));
        assert_eq!(select_route(&[]), Err(AodvError::NoCandidates));
    }

    #[test]
    fn expiry_boundary_and_refresh() {
        let mut s = state(0);
        s.preload_route(entry(9, 4, 1, 2, 1000 * MS));
        assert_eq!(s.expire_routes(1001 * MS), vec![n(9)]);
        assert!(s.route(n(9)).is_none());
        // an expired route raises the floor past its number
        assert_eq!(s.known_seq(n(9)), SeqNum(3));

        let mut s = state(0);
        s.preload_route(entry(9, 4, 1, 2, 1000 * MS));
        // relayed traffic at 900 ms extends the route
        let f = s.forward_data(data(1, 0, 9), Some(n(7)), 900 * MS).unwrap();
        assert_eq!(
            f,
            Forward::Send {
                next_hop: n(4),
                packet: data(1, 0, 9)
            }
        );
        assert!(s.expire_routes(1001 * MS).is_empty());
        assert!(s.usable_route(n(9), 1001 * MS).is_some());
        assert!(state(0).expire_routes(0).is_empty());
    }

    #[test]
    fn link_break_invalidates_and_reports() {
        let mut s = state(3);
        for d in [9, 10] {
            let mut e = entry(d, 4, 2, 5, 10_000 * MS);
            e.active_neighbors.insert(n(0), 0);
            s.preload_route(e);
        }
        s.preload_route(entry(11, 5, 1, 1, 10_000 * MS));
        let notice = s.handle_link_break(n(4), MS).unwrap();
        assert_eq!(
            notice.packet.unreachable,
            vec![(n(9), SeqNum(6)), (n(10), SeqNum(6))]
        );
        assert_eq!(notice.recipients, nbrs(&[0]));
        let e = s.route(n(9)).unwrap();
        assert!(!e.valid);
        assert_eq!(e.dest_seq, SeqNum(6));
        assert_eq!(e.expiry, MS);
        assert!(s.usable_route(n(11), MS).is_some());
        assert!(s.handle_link_break(n(8), MS).is_none());
        // removal later does not bump a second time
        s.expire_routes(2 * MS);
        assert_eq!(s.known_seq(n(9)), SeqNum(6));
    }

    #[test]
    fn error_propagates_only_through_matching_next_hop() {
        let mut s = state(0);
        let mut e = entry(9, 3, 3, 5, 10_000 * MS);
        e.active_neighbors.insert(n(8), 0);
        s.preload_route(e);
        s.preload_route(entry(10, 2, 1, 5, 10_000 * MS));
        let rerr = RerrPacket {
            unreachable: vec![(n(9), SeqNum(6)), (n(10), SeqNum(6))],
        };
        let out = s.handle_rerr(&rerr, n(3), MS).unwrap();
        assert_eq!(out.packet.unreachable, vec![(n(9), SeqNum(6))]);
        assert_eq!(out.recipients, nbrs(&[8]));
        assert!(s.usable_route(n(10), MS).is_some());
        assert_eq!(s.known_seq(n(10)), SeqNum(6));
    }

    #[test]
    fn buffering_and_discovery() {
        let mut s = state(0);
        match s.forward_data(data(0, 0, 9), None, 0).unwrap() {
            Forward::Buffered { rreq: Some(r) } => assert_eq!(r.dest_addr, n(9)),
            other => panic!("{other:?}"),
        }
        // discovery already running
        assert_eq!(
            s.forward_data(data(1, 0, 9), None, 0).unwrap(),
            Forward::Buffered { rreq: None }
        );
        for i in 2..50 {
            s.forward_data(data(i, 0, 9), None, 0).unwrap();
        }
        assert_eq!(s.buffered(), 50);
        assert_eq!(
            s.forward_data(data(50, 0, 9), None, 0),
            Err(AodvError::BufferOverflow(PacketId(50)))
        );
        assert_eq!(s.buffered(), 50);
        let out = s.take_buffered(n(9));
        assert_eq!(out.len(), 50);
        assert_eq!(out[0].packet.id, PacketId(0));
    }

    #[test]
    fn retries_then_give_up() {
        let mut s = state(0);
        s.forward_data(data(0, 0, 9), None, 0).unwrap();
        let mut bid = s.broadcast_id();
        for attempt in 0..2 {
            match s.on_discovery_timeout(n(9), bid, (attempt + 1) * 500 * MS) {
                RetryOutcome::Retry(r) => bid = r.broadcast_id,
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(bid, 3);
        // stale timer ignored
        assert_eq!(
            s.on_discovery_timeout(n(9), 1, 1500 * MS),
            RetryOutcome::Idle
        );
        match s.on_discovery_timeout(n(9), bid, 1500 * MS) {
            RetryOutcome::GiveUp(p) => assert_eq!(p.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(!s.discovering(n(9)));
    }

    #[test]
    fn reply_at_source_ends_discovery() {
        let mut s = state(0);
        s.forward_data(data(0, 0, 9), None, 0).unwrap();
        let bid = s.broadcast_id();
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 1, 2), n(1), MS),
            RrepAction::InstallOnly
        );
        assert!(!s.discovering(n(9)));
        assert_eq!(
            s.on_discovery_timeout(n(9), bid, 500 * MS),
            RetryOutcome::Idle
        );
        assert_eq!(s.take_buffered(n(9)).len(), 1);
    }

    #[test]
    fn reply_below_floor_rejected_after_break() {
        let mut s = state(0);
        s.preload_route(entry(9, 3, 2, 5, 10_000 * MS));
        s.handle_link_break(n(3), MS);
        // same number as the lost route: stale
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 5, 0), n(2), 2 * MS),
            RrepAction::Discard(DiscardReason::Stale)
        );
        assert_eq!(
            s.handle_rrep(&rrep(0, 9, 6, 4), n(2), 2 * MS),
            RrepAction::InstallOnly
        );
    }
}
