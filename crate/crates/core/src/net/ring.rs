use rand::seq::SliceRandom;
use rand::Rng;

use crate::digest::{Digest, NodeId};

/// Every participant placed on a 64-bit identifier circle.
#[derive(Clone, Debug)]
pub struct Ring {
    /// `(position, node)` ascending by position.
    order: Vec<(u64, NodeId)>,
    /// Index into `order` for each node.
    slot_of: Vec<usize>,
}

impl Ring {
    /// Places nodes `0..n` at positions derived from `seed` and their id.
    pub fn new(n: u32, seed: u64) -> Ring {
        let mut order: Vec<(u64, NodeId)> = (0..n)
            .map(|i| {
                let pos = Digest::builder()
                    .tag("ring")
                    .u64(seed)
                    .u64(i as u64)
                    .finish()
                    .prefix_u64();
                (pos, NodeId(i))
            })
            .collect();
        order.sort_unstable();
        let mut slot_of = vec![0; n as usize];
        for (k, (_, id)) in order.iter().enumerate() {
            slot_of[id.index()] = k;
        }
        Ring { order, slot_of }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, node: NodeId) -> u64 {
        self.order[self.slot_of[node.index()]].0
    }

    /// Share of the key space that maps to `node`.
    pub fn arc_fraction(&self, node: NodeId) -> f64 {
        let k = self.slot_of[node.index()];
        let pos = self.order[k].0;
        let prev = self.order[(k + self.order.len() - 1) % self.order.len()].0;
        if self.order.len() == 1 {
            1.0
        } else {
            pos.wrapping_sub(prev) as f64 / 2f64.powi(64)
        }
    }

    /// Node ids in ring order.
    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.order.iter().map(|&(_, id)| id)
    }

    pub fn successor(&self, node: NodeId) -> NodeId {
        let k = (self.slot_of[node.index()] + 1) % self.order.len();
        self.order[k].1
    }

    /// First node at or after the key's position, wrapping past the top.
    pub fn lookup(&self, key: &Digest) -> NodeId {
        self.lookup_pos(key.prefix_u64())
    }

    pub fn lookup_pos(&self, pos: u64) -> NodeId {
        let k = self.order.partition_point(|&(p, _)| p < pos);
        self.order[k % self.order.len()].1
    }

    /// The responsible node for `key`, walking clockwise past any in `skip`.
    pub fn lookup_skipping(&self, key: &Digest, skip: &[NodeId]) -> Option<NodeId> {
        let start = self.order.partition_point(|&(p, _)| p < key.prefix_u64());
        (0..self.order.len())
            .map(|i| self.order[(start + i) % self.order.len()].1)
            .find(|n| !skip.contains(n))
    }

    /// `ceil(log2 n)` distinct peers other than `node`, or everyone else if fewer.
    pub fn routing_table<R: Rng + ?Sized>(&self, node: NodeId, rng: &mut R) -> Vec<NodeId> {
        let n = self.order.len();
        let want = (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize;
        let mut others: Vec<NodeId> = self.members().filter(|&m| m != node).collect();
        others.sort_unstable();
        others.shuffle(rng);
        others.truncate(want.min(n.saturating_sub(1)));
        others.sort_unstable();
        others
    }
}
