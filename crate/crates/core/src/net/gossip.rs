use rand::seq::SliceRandom;
use rand::Rng;
use smallvec::SmallVec;

use crate::digest::NodeId;

use super::Ring;

/// Two random routing-table entries plus the ring successor, without
/// repeats and never `me`.
pub fn gossip_targets<R: Rng + ?Sized>(
    me: NodeId,
    routing_table: &[NodeId],
    ring: &Ring,
    rng: &mut R,
) -> SmallVec<[NodeId; 3]> {
    let succ = ring.successor(me);
    let mut out: SmallVec<[NodeId; 3]> = SmallVec::new();
    let picks: SmallVec<[NodeId; 2]> = routing_table.choose_multiple(rng, 2).copied().collect();
    for n in picks.into_iter().chain(std::iter::once(succ)) {
        if n != me && !out.contains(&n) {
            out.push(n);
        }
    }
    out
}
