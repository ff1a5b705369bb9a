//! Slotted TDD baseband: slot clock, ACL frame sizing, master polling,
//! per-link drop-tail queues and bridge presence windows.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::topology::{NodeId, Piconet, PiconetId, Scatternet};
use crate::Micros;

pub const SLOT_US: Micros = 625;
pub const ACCESS_CODE_BITS: u32 = 72;
pub const HEADER_BITS: u32 = 54;
pub const CRC_BITS: u32 = 16;
pub const MAX_PAYLOAD: usize = 339;
pub const DEFAULT_QUEUE_CAPACITY: usize = 50;
pub const DEFAULT_BRIDGE_WINDOW: u64 = 8;

/// Payload capacity of each ACL slot class.
pub const SLOT_CLASSES: [(u8, usize); 3] = [(1, 27), (3, 183), (5, MAX_PAYLOAD)];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BasebandError {
    #[error("payload of {0} bytes exceeds a single 5-slot frame")]
    PayloadTooLarge(usize),
    #[error("no link between {0} and {1}")]
    NoSuchLink(NodeId, NodeId),
}

pub fn slot_time(slot: u64) -> Micros {
    slot * SLOT_US
}

/// First even (master-to-slave) slot starting at or after `t`.
pub fn next_master_slot(t: Micros) -> u64 {
    let slot = t.div_ceil(SLOT_US);
    slot + (slot & 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Poll,
    Data,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketFrame {
    pub kind: FrameKind,
    pub payload_bytes: u16,
    pub slots: u8,
}

impl PacketFrame {
    /// Empty single-slot POLL/NULL frame.
    pub fn poll() -> Self {
        PacketFrame {
            kind: FrameKind::Poll,
            payload_bytes: 0,
            slots: 1,
        }
    }

    pub fn with_kind(mut self, kind: FrameKind) -> Self {
        self.kind = kind;
        self
    }

    /// Bits on air. Poll frames carry no payload and no CRC.
    pub fn air_bits(&self) -> u32 {
        match self.kind {
            FrameKind::Poll => ACCESS_CODE_BITS + HEADER_BITS,
            _ => ACCESS_CODE_BITS + HEADER_BITS + CRC_BITS + 8 * self.payload_bytes as u32,
        }
    }
}

/// Smallest slot class whose capacity fits `payload_bytes`.
pub fn frame_for_payload(payload_bytes: usize) -> Result<PacketFrame, BasebandError> {
    SLOT_CLASSES
        .iter()
        .find(|(_, cap)| payload_bytes <= *cap)
        .map(|&(slots, _)| PacketFrame {
            kind: FrameKind::Data,
            payload_bytes: payload_bytes as u16,
            slots,
        })
        .ok_or(BasebandError::PayloadTooLarge(payload_bytes))
}

pub fn transmit_duration(frame: &PacketFrame) -> Micros {
    frame.slots as Micros * SLOT_US
}

/// Poll order for one piconet: the eligible slave polled longest ago goes
/// first, ties broken by slave order. With every slave always eligible this
/// is plain round robin. A bridge that is eligible only in some windows is
/// served as soon as it shows up instead of waiting for the pointer to come
/// round while it happens to be present.
#[derive(Debug, Clone, Default)]
pub struct PollState {
    served: BTreeMap<NodeId, u64>,
    polls: u64,
}

impl PollState {
    /// `None` when no slave is eligible.
    pub fn next_poll(
        &mut self,
        piconet: &Piconet,
        mut eligible: impl FnMut(NodeId) -> bool,
    ) -> Option<NodeId> {
        let pick = piconet
            .slaves
            .iter()
            .copied()
            .filter(|&s| eligible(s))
            .min_by_key(|s| self.served.get(s).copied().unwrap_or(0))?;
        self.polls += 1;
        self.served.insert(pick, self.polls);
        Some(pick)
    }
}

/// Drop-tail FIFO of frames from `owner` to `peer`.
#[derive(Debug, Clone)]
pub struct LinkQueue<T> {
    pub owner: NodeId,
    pub peer: NodeId,
    frames: VecDeque<(PacketFrame, T)>,
    capacity: usize,
    drops: u64,
}

impl<T> LinkQueue<T> {
    pub fn new(owner: NodeId, peer: NodeId, capacity: usize) -> Self {
        LinkQueue {
            owner,
            peer,
            frames: VecDeque::new(),
            capacity,
            drops: 0,
        }
    }

    /// Appends the frame unless the queue is full. A rejected frame is
    /// handed back so the caller can account for it.
    pub fn enqueue(&mut self, frame: PacketFrame, item: T) -> Result<(), T> {
        if self.frames.len() >= self.capacity {
            self.drops += 1;
            return Err(item);
        }
        self.frames.push_back((frame, item));
        Ok(())
    }

    pub fn front(&self) -> Option<&PacketFrame> {
        self.frames.front().map(|(f, _)| f)
    }

    pub fn pop(&mut self) -> Option<(PacketFrame, T)> {
        self.frames.pop_front()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (PacketFrame, T)> + '_ {
        self.frames.drain(..)
    }
}

/// Outcome of [`LinkQueues::enqueue`].
#[derive(Debug)]
pub enum Enqueued<T> {
    Accepted,
    Dropped(T),
}

impl<T> Enqueued<T> {
    pub fn accepted(&self) -> bool {
        matches!(self, Enqueued::Accepted)
    }
}

/// All directed link queues of a scatternet.
#[derive(Debug, Clone)]
pub struct LinkQueues<T> {
    queues: BTreeMap<(NodeId, NodeId), LinkQueue<T>>,
    capacity: usize,
}

impl<T> LinkQueues<T> {
    pub fn new(capacity: usize) -> Self {
        LinkQueues {
            queues: BTreeMap::new(),
            capacity,
        }
    }

    pub fn enqueue(
        &mut self,
        topology: &Scatternet,
        from: NodeId,
        to: NodeId,
        frame: PacketFrame,
        item: T,
    ) -> Result<Enqueued<T>, BasebandError> {
        if !topology.link_exists(from, to).unwrap_or(false) {
            return Err(BasebandError::NoSuchLink(from, to));
        }
        let cap = self.capacity;
        let q = self
            .queues
            .entry((from, to))
            .or_insert_with(|| LinkQueue::new(from, to, cap));
        Ok(match q.enqueue(frame, item) {
            Ok(()) => Enqueued::Accepted,
            Err(item) => Enqueued::Dropped(item),
        })
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> Option<&LinkQueue<T>> {
        self.queues.get(&(from, to))
    }

    pub fn get_mut(&mut self, from: NodeId, to: NodeId) -> Option<&mut LinkQueue<T>> {
        self.queues.get_mut(&(from, to))
    }

    pub fn is_empty_link(&self, from: NodeId, to: NodeId) -> bool {
        self.queues.get(&(from, to)).is_none_or(|q| q.is_empty())
    }

    pub fn total_drops(&self) -> u64 {
        self.queues.values().map(|q| q.drops()).sum()
    }
}

/// Decides where each bridge node spends each presence window.
///
/// Windows are `window_slots` long and start on even slots. Window `w`
/// focuses piconet `w mod P` (in id order): every member of the focused
/// piconet attends it. A bridge that is not a member of the focused piconet
/// rotates through its own memberships. Nodes with a single membership are
/// always present.
#[derive(Debug, Clone, Copy)]
pub struct PresenceSchedule {
    pub window_slots: u64,
}

impl Default for PresenceSchedule {
    fn default() -> Self {
        PresenceSchedule {
            window_slots: DEFAULT_BRIDGE_WINDOW,
        }
    }
}

impl PresenceSchedule {
    pub fn new(window_slots: u64) -> Self {
        assert!(window_slots >= 2 && window_slots.is_multiple_of(2));
        PresenceSchedule { window_slots }
    }

    pub fn piconet_at(&self, topology: &Scatternet, node: NodeId, slot: u64) -> Option<PiconetId> {
        let roles = topology.memberships(node)?;
        match roles.len() {
            0 => None,
            1 => roles.keys().next().copied(),
            k => {
                let w = slot / self.window_slots;
                let pids: Vec<PiconetId> = topology.piconets().map(|p| p.pid).collect();
                let focus = pids[(w % pids.len() as u64) as usize];
                if roles.contains_key(&focus) {
                    return Some(focus);
                }
                let idx = (w / pids.len() as u64) % k as u64;
                roles.keys().nth(idx as usize).copied()
            }
        }
    }

    /// Slots left (including `slot`) before `node` leaves `pid`, or `None`
    /// if the node is elsewhere. Non-bridges never leave.
    pub fn remaining(
        &self,
        topology: &Scatternet,
        node: NodeId,
        pid: PiconetId,
        slot: u64,
    ) -> Option<u64> {
        let roles = topology.memberships(node)?;
        if !roles.contains_key(&pid) {
            return None;
        }
        if roles.len() == 1 {
            return Some(u64::MAX);
        }
        (self.piconet_at(topology, node, slot)? == pid)
            .then(|| (slot / self.window_slots + 1) * self.window_slots - slot)
    }
}
