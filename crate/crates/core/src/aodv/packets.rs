use std::fmt;

use crate::topology::NodeId;
use crate::Micros;

/// Destination sequence number. Plain integer ordering, no wraparound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeqNum(pub u64);

impl SeqNum {
    pub fn next(self) -> SeqNum {
        SeqNum(self.0 + 1)
    }
}

impl fmt::Display for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId(pub u64);

/// Route request. `hop_cnt` counts the links crossed before the last one;
/// a receiver is `hop_cnt + 1` hops from the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RreqPacket {
    pub source_addr: NodeId,
    pub source_seq: SeqNum,
    pub broadcast_id: u64,
    pub dest_addr: NodeId,
    pub dest_seq: SeqNum,
    pub hop_cnt: u32,
}

/// Route reply, unicast back along the reverse path. Same hop convention
/// as [`RreqPacket`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrepPacket {
    pub source_addr: NodeId,
    pub dest_addr: NodeId,
    pub dest_seq: SeqNum,
    pub hop_cnt: u32,
    pub lifetime: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerrPacket {
    pub unreachable: Vec<(NodeId, SeqNum)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataPacket {
    pub id: PacketId,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_bytes: u16,
    /// Remaining forwards before the packet is discarded.
    pub hop_limit: u8,
}

pub const RREQ_BYTES: usize = 24;
pub const RREP_BYTES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Data(DataPacket),
    Rreq(RreqPacket),
    Rrep(RrepPacket),
    Rerr(RerrPacket),
}

impl Packet {
    pub fn size_bytes(&self) -> usize {
        match self {
            Packet::Data(d) => d.payload_bytes as usize,
            Packet::Rreq(_) => RREQ_BYTES,
            Packet::Rrep(_) => RREP_BYTES,
            Packet::Rerr(e) => 4 + 8 * e.unreachable.len(),
        }
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, Packet::Data(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Data(_) => "DATA",
            Packet::Rreq(_) => "RREQ",
            Packet::Rrep(_) => "RREP",
            Packet::Rerr(_) => "RERR",
        }
    }
}
