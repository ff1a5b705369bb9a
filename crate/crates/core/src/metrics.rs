//! Per-packet lifecycle records and the delay, throughput and loss series
//! computed from them.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::topology::NodeId;
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    QueueOverflow,
    NoRoute,
    LoopTtlExpired,
    BufferOverflow,
}

impl DropReason {
    pub const ALL: [DropReason; 4] = [
        DropReason::QueueOverflow,
        DropReason::NoRoute,
        DropReason::LoopTtlExpired,
        DropReason::BufferOverflow,
    ];
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("unknown packet {0}")]
    UnknownPacket(u64),
    #[error("packet {0} already delivered or dropped")]
    DoubleTerminal(u64),
    #[error("packet {0} already sent")]
    DuplicatePacket(u64),
    #[error("interval must be positive")]
    BadInterval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_bytes: u32,
    pub t_send: Micros,
    pub t_recv: Option<Micros>,
    pub drop: Option<(DropReason, Micros)>,
}

impl PacketRecord {
    pub fn delay(&self) -> Option<Micros> {
        self.t_recv.map(|r| r - self.t_send)
    }

    pub fn in_flight(&self) -> bool {
        self.t_recv.is_none() && self.drop.is_none()
    }
}

/// Contiguous fixed-width buckets starting at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub interval_ms: u64,
    pub buckets: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn total(&self) -> f64 {
        self.buckets.iter().map(|(_, v)| v).sum()
    }

    /// `time_ms,value` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_ms,value\n");
        for (t, v) in &self.buckets {
            s.push_str(&format!("{t},{v:.3}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThroughputUnit {
    Packets,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LossReport {
    pub sent: u64,
    pub received: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    pub in_flight: u64,
}

impl LossReport {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn balances(&self) -> bool {
        self.sent == self.received + self.dropped_total() + self.in_flight
    }

    /// Dropped fraction of sent packets; packets still in flight are not losses.
    pub fn loss_ratio(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.dropped_total() as f64 / self.sent as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    records: BTreeMap<u64, PacketRecord>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_send(
        &mut self,
        id: u64,
        src: NodeId,
        dst: NodeId,
        payload_bytes: u32,
        t: Micros,
    ) -> Result<(), MetricsError> {
        if self.records.contains_key(&id) {
            return Err(MetricsError::DuplicatePacket(id));
        }
        self.records.insert(
            id,
            PacketRecord {
                id,
                src,
                dst,
                payload_bytes,
                t_send: t,
                t_recv: None,
                drop: None,
            },
        );
        Ok(())
    }

    fn open(&mut self, id: u64) -> Result<&mut PacketRecord, MetricsError> {
        let r = self
            .records
            .get_mut(&id)
            .ok_or(MetricsError::UnknownPacket(id))?;
        if !r.in_flight() {
            return Err(MetricsError::DoubleTerminal(id));
        }
        Ok(r)
    }

    pub fn record_receive(&mut self, id: u64, t: Micros) -> Result<(), MetricsError> {
        let r = self.open(id)?;
        r.t_recv = Some(t.max(r.t_send));
        Ok(())
    }

    pub fn record_drop(
        &mut self,
        id: u64,
        reason: DropReason,
        t: Micros,
    ) -> Result<(), MetricsError> {
        self.open(id)?.drop = Some((reason, t));
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&PacketRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &PacketRecord> {
        self.records.values()
    }

    /// Mean end-to-end delay of delivered packets, in microseconds.
    pub fn average_delay(&self) -> Option<f64> {
        let (sum, n) = self
            .records
            .values()
            .filter_map(PacketRecord::delay)
            .fold((0u128, 0u64), |(s, n), d| (s + d as u128, n + 1));
        (n > 0).then(|| sum as f64 / n as f64)
    }

    fn bucket_count(interval_us: Micros, horizon: Micros, last_event: Option<Micros>) -> usize {
        let end = last_event.map_or(horizon, |t| horizon.max(t + 1));
        end.div_ceil(interval_us) as usize
    }

    /// Received packets (or bytes) per bucket over `[0, horizon)`, extended
    /// to cover the last receive.
    pub fn throughput_series(
        &self,
        interval_ms: u64,
        horizon: Micros,
        unit: ThroughputUnit,
    ) -> Result<MetricSeries, MetricsError> {
        if interval_ms == 0 {
            return Err(MetricsError::BadInterval);
        }
        let iv = interval_ms * 1000;
        let recvs: Vec<(Micros, u32)> = self
            .records
            .values()
            .filter_map(|r| r.t_recv.map(|t| (t, r.payload_bytes)))
            .collect();
        let n = Self::bucket_count(iv, horizon, recvs.iter().map(|r| r.0).max());
        let mut values = vec![0.0; n];
        for (t, bytes) in recvs {
            values[(t / iv) as usize] += match unit {
                ThroughputUnit::Packets => 1.0,
                ThroughputUnit::Bytes => bytes as f64,
            };
        }
        Ok(Self::series(interval_ms, values))
    }

    /// Mean delay (ms) of packets received in each bucket; 0 when none.
    pub fn delay_series(
        &self,
        interval_ms: u64,
        horizon: Micros,
    ) -> Result<MetricSeries, MetricsError> {
        if interval_ms == 0 {
            return Err(MetricsError::BadInterval);
        }
        let iv = interval_ms * 1000;
        let recvs: Vec<(Micros, Micros)> = self
            .records
            .values()
            .filter_map(|r| Some((r.t_recv?, r.delay()?)))
            .collect();
        let n = Self::bucket_count(iv, horizon, recvs.iter().map(|r| r.0).max());
        let mut sums = vec![(0u128, 0u64); n];
        for (t, d) in recvs {
            let b = &mut sums[(t / iv) as usize];
            b.0 += d as u128;
            b.1 += 1;
        }
        let values = sums
            .into_iter()
            .map(|(s, c)| {
                if c == 0 {
                    0.0
                } else {
                    s as f64 / c as f64 / 1000.0
                }
            })
            .collect();
        Ok(Self::series(interval_ms, values))
    }

    /// Dropped packets per bucket, by drop time.
    pub fn loss_series(
        &self,
        interval_ms: u64,
        horizon: Micros,
    ) -> Result<MetricSeries, MetricsError> {
        if interval_ms == 0 {
            return Err(MetricsError::BadInterval);
        }
        let iv = interval_ms * 1000;
        let drops: Vec<Micros> = self
            .records
            .values()
            .filter_map(|r| r.drop.map(|d| d.1))
            .collect();
        let n = Self::bucket_count(iv, horizon, drops.iter().copied().max());
        let mut values = vec![0.0; n];
        for t in drops {
            values[(t / iv) as usize] += 1.0;
        }
        Ok(Self::series(interval_ms, values))
    }

    fn series(interval_ms: u64, values: Vec<f64>) -> MetricSeries {
        MetricSeries {
            interval_ms,
            buckets: values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i as u64 * interval_ms, v))
                .collect(),
        }
    }

    pub fn loss_report(&self) -> LossReport {
        let mut rep = LossReport::default();
        for r in self.records.values() {
            rep.sent += 1;
            match (r.t_recv, r.drop) {
                (Some(_), _) => rep.received += 1,
                (None, Some((reason, _))) => *rep.dropped.entry(reason).or_default() += 1,
                (None, None) => rep.in_flight += 1,
            }
        }
        rep
    }
}
