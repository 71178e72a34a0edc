use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::NodeId;
use crate::net::Ring;

/// Where a node stands in the current tournament.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// Between tournaments, or not yet admitted by the barrier.
    Idle,
    Seeking {
        round: u32,
    },
    AwaitingValidator {
        round: u32,
    },
    Qualified,
    Eliminated,
}

impl Status {
    /// Round the node is currently playing, if any.
    pub fn round(self) -> Option<u32> {
        match self {
            Status::Seeking { round } | Status::AwaitingValidator { round } => Some(round),
            _ => None,
        }
    }
}

/// Everyone but `me`, in a seeded random order.
pub fn probe_order<R: Rng + ?Sized>(ring: &Ring, me: NodeId, rng: &mut R) -> Vec<NodeId> {
    let mut v: Vec<NodeId> = ring.members().filter(|&m| m != me).collect();
    v.sort_unstable();
    v.shuffle(rng);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeReply {
    Accept,
    /// The responder is still behind the prober and may become eligible.
    RetryLater,
    /// Same tournament but not available.
    Refuse,
    /// More than one tournament apart; the message is not processed.
    Stale,
}

/// How a node at `(my_t, status)` answers a probe for `(t, round)`.
/// `free` is false once the node has accepted someone else for the round.
pub fn probe_response(my_t: u64, status: Status, free: bool, t: u64, round: u32) -> ProbeReply {
    if my_t.abs_diff(t) > 1 {
        return ProbeReply::Stale;
    }
    if my_t + 1 == t {
        return ProbeReply::RetryLater;
    }
    if my_t != t {
        return ProbeReply::Refuse;
    }
    match status {
        Status::Seeking { round: r } if r == round && free => ProbeReply::Accept,
        Status::Seeking { round: r } | Status::AwaitingValidator { round: r } if r < round => ProbeReply::RetryLater,
        Status::Idle => ProbeReply::RetryLater,
        _ => ProbeReply::Refuse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn order_covers_everyone_else() {
        let ring = Ring::new(20, 1);
        let mut o = probe_order(&ring, NodeId(4), &mut ChaCha8Rng::seed_from_u64(2));
        o.sort();
        assert_eq!(o, (0..20).filter(|&i| i != 4).map(NodeId).collect::<Vec<_>>());
    }

    #[test]
    fn responses() {
        let seek = |round| Status::Seeking { round };
        assert_eq!(probe_response(5, seek(2), true, 5, 2), ProbeReply::Accept);
        assert_eq!(probe_response(5, seek(2), false, 5, 2), ProbeReply::Refuse);
        assert_eq!(probe_response(5, seek(1), true, 5, 2), ProbeReply::RetryLater);
        assert_eq!(
            probe_response(5, Status::AwaitingValidator { round: 1 }, true, 5, 2),
            ProbeReply::RetryLater
        );
        assert_eq!(probe_response(5, seek(3), true, 5, 2), ProbeReply::Refuse);
        assert_eq!(probe_response(5, Status::Eliminated, true, 5, 2), ProbeReply::Refuse);
        assert_eq!(probe_response(5, Status::Qualified, true, 5, 1), ProbeReply::Refuse);
        // One tournament behind the prober: will catch up shortly.
        assert_eq!(probe_response(4, Status::Qualified, true, 5, 1), ProbeReply::RetryLater);
        // One ahead of the prober.
        assert_eq!(probe_response(6, seek(1), true, 5, 1), ProbeReply::Refuse);
        assert_eq!(probe_response(7, seek(1), true, 5, 1), ProbeReply::Stale);
        assert_eq!(probe_response(3, seek(1), true, 5, 1), ProbeReply::Stale);
    }
}
