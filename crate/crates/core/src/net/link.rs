//! Per-pair latency and per-node egress serialization. Only the sender's
//! uplink is modeled; ingress is unconstrained.

use std::collections::VecDeque;

use crate::digest::{Digest, NodeId};
use crate::time::SimTime;

/// Bulk transfers go out in pieces of this size so control traffic can
/// slip in between them.
pub const BULK_CHUNK_BYTES: u64 = 64 * 1024;

/// Seeded, symmetric one-way latency drawn uniformly from `[min, max]`.
#[derive(Clone, Copy, Debug)]
pub struct Latency {
    pub min: SimTime,
    pub max: SimTime,
    seed: u64,
}

impl Latency {
    pub fn new(min: SimTime, max: SimTime, seed: u64) -> Latency {
        assert!(min <= max);
        Latency { min, max, seed }
    }

    pub fn between(&self, a: NodeId, b: NodeId) -> SimTime {
        let (lo, hi) = (a.min(b), a.max(b));
        let h = Digest::builder()
            .tag("latency")
            .u64(self.seed)
            .u64(lo.0 as u64)
            .u64(hi.0 as u64)
            .finish()
            .prefix_u64();
        let span = self.max.0 - self.min.0;
        SimTime(self.min.0 + ((h as u128 * (span as u128 + 1)) >> 64) as u64)
    }
}

pub fn serialization_time(bytes: u64, bandwidth_bps: u64) -> SimTime {
    SimTime(((bytes as u128 * 8 * 1_000_000).div_ceil(bandwidth_bps as u128)) as u64)
}

/// Unqueued transfer time over one link.
pub fn transfer_time(bytes: u64, latency: SimTime, bandwidth_bps: u64) -> SimTime {
    latency + serialization_time(bytes, bandwidth_bps)
}

struct BulkJob<P> {
    remaining: u64,
    payload: P,
}

enum Piece<P> {
    Control(P),
    Chunk,
    LastChunk(P),
}

/// One node's uplink. Control messages take priority over bulk data; bulk
/// messages leave in FIFO order, one chunk at a time.
///
/// The owner calls [`Egress::start_next`] whenever the link may be idle and
/// schedules a wake-up after the returned duration, then calls
/// [`Egress::finish`] to collect the message that finished, if any.
pub struct Egress<P> {
    bandwidth_bps: u64,
    control: VecDeque<(u64, P)>,
    bulk: VecDeque<BulkJob<P>>,
    current: Option<Piece<P>>,
}

impl<P> Egress<P> {
    pub fn new(bandwidth_bps: u64) -> Self {
        Egress {
            bandwidth_bps,
            control: VecDeque::new(),
            bulk: VecDeque::new(),
            current: None,
        }
    }

    pub fn push_control(&mut self, bytes: u64, p: P) {
        self.control.push_back((bytes, p));
    }

    pub fn push_bulk(&mut self, bytes: u64, p: P) {
        self.bulk.push_back(BulkJob {
            remaining: bytes.max(1),
            payload: p,
        });
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some()
    }

    pub fn queued_bulk_bytes(&self) -> u64 {
        self.bulk.iter().map(|j| j.remaining).sum()
    }

    /// Starts the next piece if the link is idle, returning how long it takes.
    pub fn start_next(&mut self) -> Option<SimTime> {
        if self.current.is_some() {
            return None;
        }
        let bytes = if let Some((bytes, p)) = self.control.pop_front() {
            self.current = Some(Piece::Control(p));
            bytes
        } else {
            let job = self.bulk.front_mut()?;
            let n = job.remaining.min(BULK_CHUNK_BYTES);
            job.remaining -= n;
            if job.remaining == 0 {
                let job = self.bulk.pop_front().expect("front exists");
                self.current = Some(Piece::LastChunk(job.payload));
            } else {
                self.current = Some(Piece::Chunk);
            }
            n
        };
        Some(serialization_time(bytes, self.bandwidth_bps))
    }

    /// Ends the piece in progress; returns the message if it is now fully sent.
    pub fn finish(&mut self) -> Option<P> {
        match self.current.take()? {
            Piece::Control(p) | Piece::LastChunk(p) => Some(p),
            Piece::Chunk => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBPS_25: u64 = 25_000_000;

    /// Runs the link until both queues drain, returning each message's
    /// completion time.
    fn drain<P>(e: &mut Egress<P>, start: SimTime) -> Vec<(SimTime, P)> {
        let mut now = start;
        let mut done = Vec::new();
        while let Some(d) = e.start_next() {
            now += d;
            if let Some(p) = e.finish() {
                done.push((now, p));
            }
        }
        done
    }

    #[test]
    fn zero_bytes_is_pure_latency() {
        assert_eq!(
            transfer_time(0, SimTime::from_millis(40), MBPS_25),
            SimTime::from_millis(40)
        );
    }

    #[test]
    fn one_megabyte_at_25_mbps() {
        let t = transfer_time(1_000_000, SimTime::from_millis(20), MBPS_25);
        assert!(t >= SimTime::from_millis(320) + SimTime::from_millis(20));
        assert_eq!(serialization_time(1_000_000, MBPS_25), SimTime::from_millis(320));
    }

    #[test]
    fn simultaneous_sends_queue() {
        // Oracle: a FIFO single server finishes the k-th equal job at k * s.
        let mut e = Egress::new(MBPS_25);
        e.push_bulk(1_000_000, 'a');
        e.push_bulk(1_000_000, 'b');
        let done = drain(&mut e, SimTime::ZERO);
        // Per-chunk rounding adds at most 1 us per chunk.
        let s = SimTime::from_millis(320);
        assert_eq!(done[0].1, 'a');
        assert!(done[0].0 >= s && done[0].0 <= s + SimTime(16));
        assert_eq!(done[1].1, 'b');
        assert!(done[1].0 >= SimTime::from_millis(640));
    }

    #[test]
    fn control_overtakes_bulk_within_one_chunk() {
        let mut e = Egress::new(MBPS_25);
        e.push_bulk(1_000_000, "body");
        let first = e.start_next().unwrap();
        e.push_control(200, "vote");
        assert!(e.finish().is_none());
        let mut now = first;
        now += e.start_next().unwrap();
        assert_eq!(e.finish(), Some("vote"));
        assert!(now <= serialization_time(BULK_CHUNK_BYTES + 200, MBPS_25));
        let rest = drain(&mut e, now);
        assert_eq!(rest.len(), 1);
        let total = serialization_time(1_000_000, MBPS_25) + serialization_time(200, MBPS_25);
        assert!(rest[0].0 >= total && rest[0].0 <= total + SimTime(20));
    }

    #[test]
    fn latency_is_symmetric_and_in_range() {
        let l = Latency::new(SimTime::from_millis(20), SimTime::from_millis(100), 7);
        let mut lo = SimTime::MAX;
        let mut hi = SimTime::ZERO;
        for a in 0..40 {
            for b in 0..40 {
                let x = l.between(NodeId(a), NodeId(b));
                assert_eq!(x, l.between(NodeId(b), NodeId(a)));
                assert!(x >= l.min && x <= l.max);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        assert!(lo < SimTime::from_millis(25) && hi > SimTime::from_millis(95));
    }
}
