use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::aodv::Packet;
use crate::topology::{NodeId, PiconetId};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaticRoute {
    pub node: NodeId,
    pub dest: NodeId,
    pub next_hop: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    RreqRetry { dest: NodeId, broadcast_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// Master decision point of a piconet (always an even slot).
    SlotTick {
        pid: PiconetId,
    },
    /// Slave-to-master half of a poll exchange. `budget_end` is the first
    /// slot the pair can no longer share.
    SlaveReply {
        pid: PiconetId,
        master: NodeId,
        slave: NodeId,
        budget_end: u64,
    },
    FrameDelivery {
        from: NodeId,
        to: NodeId,
        packet: Packet,
    },
    TimerFire {
        node: NodeId,
        timer: Timer,
    },
    FlowPacket {
        flow: usize,
    },
    StartDiscovery {
        node: NodeId,
        dest: NodeId,
    },
    Migrate {
        node: NodeId,
        pid: PiconetId,
    },
    Leave {
        node: NodeId,
        pid: PiconetId,
    },
    InjectStaticRoutes {
        assignments: Vec<StaticRoute>,
    },
    EndOfRun,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: Micros,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(time, insertion counter)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Micros, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, kind }));
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.heap.peek().map(|e| e.0.time)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
