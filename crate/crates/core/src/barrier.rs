//! Simulated elapsed-time barrier. A node may enter tournament `t + 1` only
//! by holding a certificate chained to its certificate for `t`, issued at
//! least `tau` later. A single trusted oracle ticks every `tau` and hands out
//! bootstrap certificates to nodes that join late or fall behind.

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, NodeId};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub tournament_no: u64,
    pub node: NodeId,
    pub issued_at: SimTime,
    pub wait: SimTime,
    pub prev_cert_hash: Digest,
    pub cert_hash: Digest,
}

pub fn cert_hash(prev: &Digest, tournament_no: u64, node: NodeId) -> Digest {
    Digest::builder()
        .tag("barrier")
        .digest(prev)
        .u64(tournament_no)
        .u64(node.0 as u64)
        .finish()
}

/// The certificate for the tournament after `prev`, issued `tau + skew`
/// after it. Skew only ever delays issuance.
pub fn wait_certificate(prev: &BarrierCertificate, tau: SimTime, skew: SimTime) -> BarrierCertificate {
    let t = prev.tournament_no + 1;
    BarrierCertificate {
        tournament_no: t,
        node: prev.node,
        issued_at: prev.issued_at + tau + skew,
        wait: tau,
        prev_cert_hash: prev.cert_hash,
        cert_hash: cert_hash(&prev.cert_hash, t, prev.node),
    }
}

pub fn verify_certificate(cert: &BarrierCertificate, prev: &BarrierCertificate) -> bool {
    cert.tournament_no == prev.tournament_no + 1
        && cert.node == prev.node
        && cert.prev_cert_hash == prev.cert_hash
        && cert.cert_hash == cert_hash(&prev.cert_hash, cert.tournament_no, cert.node)
        && cert.issued_at >= prev.issued_at + cert.wait
}

/// The trusted time source. Tournament `t` starts at `genesis + (t - 1) * tau`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Oracle {
    pub genesis_time: SimTime,
    pub tau: SimTime,
    pub genesis_hash: Digest,
}

impl Oracle {
    pub fn new(genesis_time: SimTime, tau: SimTime, seed: u64) -> Oracle {
        Oracle {
            genesis_time,
            tau,
            genesis_hash: Digest::builder().tag("oracle-genesis").u64(seed).finish(),
        }
    }

    pub fn slot_start(&self, t: u64) -> SimTime {
        self.genesis_time + SimTime(self.tau.0 * t.saturating_sub(1))
    }

    /// The tournament running at `now`; 0 before the first slot.
    pub fn current_tournament(&self, now: SimTime) -> u64 {
        if now < self.genesis_time {
            0
        } else {
            (now - self.genesis_time).0 / self.tau.0 + 1
        }
    }

    /// The oracle's own chain value that bootstrap certificates for `t + 1` hang off.
    pub fn anchor(&self, t: u64) -> Digest {
        Digest::builder()
            .tag("oracle")
            .digest(&self.genesis_hash)
            .u64(t)
            .finish()
    }

    /// Certificate for tournament `t`, issued at the slot start shifted by the
    /// node's clock offset.
    pub fn bootstrap(&self, node: NodeId, t: u64, offset_us: i64) -> BarrierCertificate {
        let start = self.slot_start(t);
        let issued_at = SimTime(start.0.saturating_add_signed(offset_us));
        let prev = self.anchor(t - 1);
        BarrierCertificate {
            tournament_no: t,
            node,
            issued_at,
            wait: self.tau,
            prev_cert_hash: prev,
            cert_hash: cert_hash(&prev, t, node),
        }
    }

    pub fn verify_bootstrap(&self, cert: &BarrierCertificate) -> bool {
        cert.tournament_no >= 1
            && cert.prev_cert_hash == self.anchor(cert.tournament_no - 1)
            && cert.cert_hash == cert_hash(&cert.prev_cert_hash, cert.tournament_no, cert.node)
    }
}

/// Jumps a node to the oracle's current slot. Tournaments in between are
/// skipped; the node cannot play them retroactively.
pub fn resync(node: NodeId, oracle: &Oracle, now: SimTime, offset_us: i64) -> BarrierCertificate {
    let t = oracle.current_tournament(now).max(1);
    oracle.bootstrap(node, t, offset_us)
}

/// Counts messages from tournaments ahead of the node's own.
#[derive(Clone, Debug, Default)]
pub struct ResyncTrigger {
    ahead: u32,
    threshold: u32,
}

impl ResyncTrigger {
    pub fn new(threshold: u32) -> Self {
        ResyncTrigger { ahead: 0, threshold }
    }

    /// True once enough messages from later tournaments have been seen.
    pub fn observe(&mut self, msg_tournament: u64, my_tournament: u64) -> bool {
        if msg_tournament > my_tournament {
            self.ahead += 1;
        }
        self.ahead >= self.threshold
    }

    pub fn reset(&mut self) {
        self.ahead = 0;
    }
}
