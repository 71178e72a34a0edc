//! Proposal, body dissemination, convergence and confirmation.

use std::sync::Arc;

use crate::bucketing::{fill_block_filtered, remove_confirmed, select_bucket};
use crate::digest::{BlockHash, CBlockHash, Digest, NodeId};
use crate::error::LedgerError;
use crate::ledger::{
    build_cblock, confirmed_by_counts, select_heaviest_cblock, validate_block, Block, CBlock, SpendLookup,
    BLOCK_HEADER_BYTES,
};

use super::msg::Msg;
use super::{Emitted, Ev, Parked, Sim, Want};

/// How many earlier tournaments a proposer looks back for blocks to converge.
const CONVERGE_LOOKBACK: u64 = 8;

impl Sim {
    /// Called when the node qualifies: converge what it has, then propose.
    pub(super) fn propose(&mut self, me: NodeId) {
        let t = self.nodes[me.index()].t;
        self.converge(me, t);
        let n = &mut self.nodes[me.index()];
        let Some(win) = n.final_win.clone() else {
            return;
        };
        let now = self.q.now();
        n.pool.set_horizon(now);
        let announced = n.announced.entry(t).or_default().clone();
        let Ok(bucket) = select_bucket(&mut self.rng, &n.pool, &announced) else {
            return;
        };
        self.gossip(
            me,
            Msg::Header {
                t,
                bucket,
                proposer: me,
            },
        );
        let n = &mut self.nodes[me.index()];
        n.announced.entry(t).or_default().insert(bucket);
        n.headers_seen.insert(header_key(t, bucket, me));

        let prev = n.tip;
        let budget = self.cfg.block_bytes.saturating_sub(BLOCK_HEADER_BYTES);
        let (store, registry) = (&n.store, &self.registry);
        let txs = fill_block_filtered(bucket, &n.pool, budget, |tx| {
            tx.inputs
                .iter()
                .any(|&i| registry.spenders(i).iter().any(|b| store.chain_contains(&prev, b)))
        });
        if txs.is_empty() {
            return;
        }
        let block = Arc::new(Block::new(prev, bucket, t, me, (*win).clone(), txs));
        let ok = validate_block(&block, &n.store, &self.registry, &self.rules).is_ok();
        debug_assert!(ok, "proposer built an invalid block");
        if !ok {
            return;
        }
        self.valid_blocks.insert(block.hash, true);
        self.registry.register(&block);
        self.emitted.insert(
            block.hash,
            Emitted {
                t,
                at: now,
                txs: block.txs.len(),
            },
        );
        self.record(me, "block", block.hash.0, t);
        let _ = self.nodes[me.index()].store.insert_block(block.clone());
        self.gossip(me, Msg::Offer { id: block.hash.0 });
    }

    /// Builds the C-Block for the most recent earlier tournament that has blocks.
    fn converge(&mut self, me: NodeId, t: u64) {
        let lowest = t.saturating_sub(CONVERGE_LOOKBACK).max(1);
        for tt in (lowest..t).rev() {
            let n = &self.nodes[me.index()];
            let blocks = n.store.blocks_of_tournament(tt);
            if blocks.is_empty() {
                continue;
            }
            match build_cblock(tt, &blocks, &n.store) {
                Ok(cb) => {
                    let cb = Arc::new(cb);
                    if !n.store.has_cblock(&cb.hash) {
                        self.verified_cblocks.insert(cb.hash);
                        let _ = self.nodes[me.index()].store.insert_verified_cblock(cb.clone());
                        self.record(me, "cblock", cb.hash.0, tt);
                        self.release(me, cb.hash.0);
                        self.update_view(me);
                        self.gossip(me, Msg::Offer { id: cb.hash.0 });
                    }
                    return;
                }
                Err(LedgerError::EmptySlot(_)) => continue,
                Err(_) => return,
            }
        }
    }

    pub(super) fn on_header(&mut self, me: NodeId, t: u64, bucket: u32, proposer: NodeId) {
        let n = &mut self.nodes[me.index()];
        if !n.headers_seen.insert(header_key(t, bucket, proposer)) {
            return;
        }
        if t + 1 >= n.t {
            n.announced.entry(t).or_default().insert(bucket);
        }
        self.gossip(me, Msg::Header { t, bucket, proposer });
    }

    pub(super) fn on_offer(&mut self, me: NodeId, from: NodeId, id: Digest) {
        let n = &self.nodes[me.index()];
        if n.store.has_block(&BlockHash(id)) || n.store.has_cblock(&CBlockHash(id)) {
            return;
        }
        self.want(me, id, from);
    }

    fn want(&mut self, me: NodeId, id: Digest, from: NodeId) {
        let n = &mut self.nodes[me.index()];
        let ask = match n.wanted.get_mut(&id) {
            Some(w) => {
                if !w.offerers.contains(&from) {
                    w.offerers.push(from);
                }
                if w.idle {
                    w.idle = false;
                    w.attempt += 1;
                    Some(w.attempt)
                } else {
                    None
                }
            }
            None => {
                n.wanted.insert(
                    id,
                    Want {
                        offerers: vec![from],
                        attempt: 0,
                        idle: false,
                    },
                );
                Some(0)
            }
        };
        if let Some(attempt) = ask {
            self.send(me, from, Msg::Request { id });
            let at = self.q.now() + self.body_timeout;
            self.q.schedule(at, me, Ev::BodyTimeout { id, attempt });
        }
    }

    pub(super) fn body_timeout(&mut self, me: NodeId, id: Digest, attempt: u32) {
        let n = &mut self.nodes[me.index()];
        let Some(w) = n.wanted.get_mut(&id) else {
            return;
        };
        if w.attempt != attempt || w.idle {
            return;
        }
        let next = attempt as usize + 1;
        if next >= w.offerers.len() {
            // Asked everyone that offered; wait for a new offer.
            w.idle = true;
            return;
        }
        w.attempt += 1;
        let to = w.offerers[next];
        self.send(me, to, Msg::Request { id });
        let at = self.q.now() + self.body_timeout;
        self.q.schedule(
            at,
            me,
            Ev::BodyTimeout {
                id,
                attempt: attempt + 1,
            },
        );
    }

    pub(super) fn on_request(&mut self, me: NodeId, from: NodeId, id: Digest) {
        let n = &self.nodes[me.index()];
        let msg = if let Some(b) = n.store.block(&BlockHash(id)) {
            let parent = n.store.cblock(&b.prev_cblock).filter(|c| !c.is_genesis()).cloned();
            Msg::Body {
                block: Some(b.clone()),
                cblock: parent,
            }
        } else if let Some(c) = n.store.cblock(&CBlockHash(id)) {
            Msg::Body {
                block: None,
                cblock: Some(c.clone()),
            }
        } else {
            return;
        };
        self.send(me, from, msg);
    }

    pub(super) fn receive_block(&mut self, me: NodeId, b: Arc<Block>, from: NodeId) {
        let n = &mut self.nodes[me.index()];
        n.wanted.remove(&b.hash.0);
        if n.store.has_block(&b.hash) {
            return;
        }
        if !n.store.has_cblock(&b.prev_cblock) {
            let now = self.q.now();
            n.pending.park(b.prev_cblock.0, Parked::Block(b.clone(), from), now);
            let parent = b.prev_cblock.0;
            self.want(me, parent, from);
            return;
        }
        let valid = match self.valid_blocks.get(&b.hash) {
            Some(&v) => v,
            None => {
                let v = validate_block(&b, &n.store, &self.registry, &self.rules).is_ok();
                self.valid_blocks.insert(b.hash, v);
                v
            }
        };
        if !valid {
            return;
        }
        if n.t <= b.tournament_no + 1 {
            n.announced.entry(b.tournament_no).or_default().insert(b.bucket_id);
        }
        let _ = n.store.insert_block(b.clone());
        self.release(me, b.hash.0);
        self.gossip(me, Msg::Offer { id: b.hash.0 });
    }

    pub(super) fn receive_cblock(&mut self, me: NodeId, cb: Arc<CBlock>, from: NodeId) {
        let n = &mut self.nodes[me.index()];
        n.wanted.remove(&cb.hash.0);
        if n.store.has_cblock(&cb.hash) {
            return;
        }
        let now = self.q.now();
        let missing = if !n.store.has_cblock(&cb.prev_cblock) {
            Some(cb.prev_cblock.0)
        } else {
            cb.included.iter().find(|h| !n.store.has_block(h)).map(|h| h.0)
        };
        if let Some(m) = missing {
            n.pending.park(m, Parked::CBlock(cb, from), now);
            self.want(me, m, from);
            return;
        }
        let ok = if self.verified_cblocks.contains(&cb.hash) {
            n.store.insert_verified_cblock(cb.clone()).is_ok()
        } else if n.store.insert_cblock(cb.clone()).is_ok() {
            self.verified_cblocks.insert(cb.hash);
            true
        } else {
            false
        };
        if !ok {
            return;
        }
        self.release(me, cb.hash.0);
        self.update_view(me);
        self.gossip(me, Msg::Offer { id: cb.hash.0 });
    }

    pub(super) fn release(&mut self, me: NodeId, key: Digest) {
        let items = self.nodes[me.index()].pending.release(&key);
        for it in items {
            match it {
                Parked::Block(b, from) => self.receive_block(me, b, from),
                Parked::CBlock(c, from) => self.receive_cblock(me, c, from),
            }
        }
    }

    pub(super) fn after_foul(&mut self, me: NodeId) {
        self.update_view(me);
    }

    /// Re-selects the heaviest tip and extends the confirmed prefix.
    fn update_view(&mut self, me: NodeId) {
        let now = self.q.now();
        let (delta, f) = (self.delta, self.cfg.f_min as u64);
        let honest = self.nodes[me.index()].behavior.is_honest();
        let n = &mut self.nodes[me.index()];
        let Ok(tip) = select_heaviest_cblock(n.store.tips(), &n.store) else {
            return;
        };
        n.tip = tip;
        let Ok(chain) = n.store.chain(&tip) else {
            return;
        };
        let tip_cum = n.store.cum_blocks(&tip).unwrap_or(0);
        let tip_t = chain.last().map_or(0, |c| c.tournament_no);
        // The deepest C-Block that passes confirms everything before it too.
        let mut deepest = 0;
        for (i, c) in chain.iter().enumerate().skip(1) {
            let ahead = tip_cum - n.store.cum_blocks(&c.hash).unwrap_or(tip_cum);
            if confirmed_by_counts(ahead / delta, tip_t - c.tournament_no, f) {
                deepest = i;
            }
        }
        let fresh = &chain[1..=deepest];
        let common = n
            .confirmed
            .iter()
            .zip(chain[1..].iter())
            .take_while(|(a, b)| **a == b.hash)
            .count();
        if common < n.confirmed.len() {
            n.confirmed.truncate(common);
            if honest {
                self.confirmed_reorgs += 1;
            }
            let t = n.t;
            self.record(me, "reorg", tip.0, t);
        }
        let n = &mut self.nodes[me.index()];
        if fresh.len() <= n.confirmed.len() {
            return;
        }
        for c in &fresh[n.confirmed.len()..] {
            for h in &c.included {
                if let Some(b) = n.store.block(h) {
                    remove_confirmed(&mut n.pool, b);
                }
                if honest {
                    let s = self.confirm.entry(*h).or_default();
                    s.sum_us += now.0 as u128;
                    s.count += 1;
                }
            }
            n.confirmed.push(c.hash);
        }
    }
}

fn header_key(t: u64, bucket: u32, proposer: NodeId) -> Digest {
    Digest::builder()
        .tag("header")
        .u64(t)
        .u64(bucket as u64)
        .u64(proposer.0 as u64)
        .finish()
}
