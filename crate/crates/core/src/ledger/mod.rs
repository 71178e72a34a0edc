//! The converging DAG: blocks, C-Blocks, the per-node store, fork choice,
//! total ordering and confirmation.
//!
//! Every slot's blocks reference exactly one previous C-Block. A C-Block
//! collects a non-conflicting, bucket-distinct subset of one tournament's
//! blocks that all share the same parent, so the C-Blocks themselves form a
//! tree rooted at genesis and each root-to-tip path is a serial chain.

mod builder;
mod export;
mod ops;
mod pending;
mod validate;

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::bucketing::Transaction;
use crate::colosseum::PoWin;
use crate::digest::{BlockHash, CBlockHash, Digest, NodeId, SpendRef, TxHash};
use crate::error::LedgerError;

pub use builder::build_cblock;
pub use export::{ledger_to_dot, ledger_to_json, LedgerDump};
pub(crate) use ops::confirmed_by_counts;
pub use ops::{
    block_weight, chain_weight, compute_delta, full_confirmations, is_confirmed, select_heaviest_cblock, total_order,
    Confirmations,
};
pub use pending::PendingBuffer;
pub use validate::{validate_block, BlockRules, Violation};

/// Bytes charged to every block for its header and attached PoWin.
pub const BLOCK_HEADER_BYTES: u64 = 512;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub hash: BlockHash,
    pub prev_cblock: CBlockHash,
    pub bucket_id: u32,
    pub tournament_no: u64,
    pub proposer: NodeId,
    pub powin: PoWin,
    pub txs: Vec<Arc<Transaction>>,
    pub byte_size: u64,
    #[serde(skip)]
    index: OnceLock<BlockIndex>,
}

#[derive(Clone, Debug, Default)]
struct BlockIndex {
    tx_hashes: Vec<TxHash>,
    inputs: Vec<SpendRef>,
}

impl PartialEq for Block {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

impl Eq for Block {}

impl Block {
    pub fn new(
        prev_cblock: CBlockHash,
        bucket_id: u32,
        tournament_no: u64,
        proposer: NodeId,
        powin: PoWin,
        txs: Vec<Arc<Transaction>>,
    ) -> Block {
        let byte_size = BLOCK_HEADER_BYTES + txs.iter().map(|t| t.byte_size as u64).sum::<u64>();
        let mut b = Block {
            hash: BlockHash::default(),
            prev_cblock,
            bucket_id,
            tournament_no,
            proposer,
            powin,
            txs,
            byte_size,
            index: OnceLock::new(),
        };
        b.hash = b.compute_hash();
        b
    }

    pub fn compute_hash(&self) -> BlockHash {
        let mut h = Digest::builder()
            .tag("block")
            .digest(&self.prev_cblock.0)
            .u64(self.bucket_id as u64)
            .u64(self.tournament_no)
            .u64(self.proposer.0 as u64)
            .digest(&self.powin.auth_tag)
            .u64(self.byte_size)
            .u64(self.txs.len() as u64);
        for t in &self.txs {
            h = h.digest(&t.hash.0);
        }
        BlockHash(h.finish())
    }

    /// Header plus transaction bytes, recomputed from content.
    pub fn content_size(&self) -> u64 {
        BLOCK_HEADER_BYTES + self.txs.iter().map(|t| t.byte_size as u64).sum::<u64>()
    }

    fn index(&self) -> &BlockIndex {
        self.index.get_or_init(|| {
            let mut tx_hashes: Vec<TxHash> = self.txs.iter().map(|t| t.hash).collect();
            tx_hashes.sort_unstable();
            let mut inputs: Vec<SpendRef> = self.txs.iter().flat_map(|t| t.inputs.iter().copied()).collect();
            inputs.sort_unstable();
            BlockIndex { tx_hashes, inputs }
        })
    }

    /// Sorted transaction hashes (may contain duplicates if the block is malformed).
    pub fn sorted_tx_hashes(&self) -> &[TxHash] {
        &self.index().tx_hashes
    }

    /// Sorted spend references of every transaction in the block.
    pub fn sorted_inputs(&self) -> &[SpendRef] {
        &self.index().inputs
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CBlock {
    pub hash: CBlockHash,
    pub tournament_no: u64,
    pub prev_cblock: CBlockHash,
    /// Ascending by hash; this is the intra-slot order.
    pub included: Vec<BlockHash>,
}

impl CBlock {
    pub fn genesis() -> CBlock {
        CBlock {
            hash: CBlockHash(Digest::builder().tag("cdag-genesis").finish()),
            tournament_no: 0,
            prev_cblock: CBlockHash(Digest::ZERO),
            included: Vec::new(),
        }
    }

    /// Sorts `included` and seals the hash.
    pub fn new(tournament_no: u64, prev_cblock: CBlockHash, mut included: Vec<BlockHash>) -> CBlock {
        included.sort_unstable();
        included.dedup();
        let mut c = CBlock {
            hash: CBlockHash::default(),
            tournament_no,
            prev_cblock,
            included,
        };
        c.hash = c.compute_hash();
        c
    }

    pub fn compute_hash(&self) -> CBlockHash {
        let mut h = Digest::builder()
            .tag("cblock")
            .u64(self.tournament_no)
            .digest(&self.prev_cblock.0)
            .u64(self.included.len() as u64);
        for b in &self.included {
            h = h.digest(&b.0);
        }
        CBlockHash(h.finish())
    }

    pub fn is_genesis(&self) -> bool {
        self.tournament_no == 0 && self.included.is_empty()
    }
}

/// Where a C-Block sits in the tree.
#[derive(Clone, Debug)]
pub(crate) struct CBlockNode {
    pub cblock: Arc<CBlock>,
    pub depth: u32,
    /// Blocks included from genesis up to and including this C-Block.
    pub cum_blocks: u64,
}

/// Finds the blocks that spend a given input, across some universe of blocks.
pub trait SpendLookup {
    fn spenders(&self, input: SpendRef) -> &[BlockHash];
}

/// Append-only index of every block ever registered, keyed by spend reference.
#[derive(Default, Debug, Clone)]
pub struct SpendRegistry {
    map: FxHashMap<SpendRef, SmallVec<[BlockHash; 1]>>,
}

impl SpendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, block: &Block) {
        for tx in &block.txs {
            for &i in &tx.inputs {
                let e = self.map.entry(i).or_default();
                if !e.contains(&block.hash) {
                    e.push(block.hash);
                }
            }
        }
    }
}

impl SpendLookup for SpendRegistry {
    fn spenders(&self, input: SpendRef) -> &[BlockHash] {
        self.map.get(&input).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// One node's view of the ledger.
#[derive(Debug, Clone)]
pub struct LedgerStore {
    alpha: u32,
    genesis: CBlockHash,
    blocks: FxHashMap<BlockHash, Arc<Block>>,
    cblocks: FxHashMap<CBlockHash, CBlockNode>,
    children: FxHashMap<CBlockHash, u32>,
    tips: BTreeSet<CBlockHash>,
    fouls: FxHashMap<(u64, NodeId), u32>,
    included_in: FxHashMap<BlockHash, SmallVec<[CBlockHash; 1]>>,
    by_tournament: FxHashMap<u64, Vec<BlockHash>>,
    spend_index: Option<SpendRegistry>,
}

impl LedgerStore {
    /// A store that maintains its own spend index, so it can act as the
    /// `SpendLookup` for its own validation.
    pub fn new(alpha: u32) -> Self {
        let mut s = Self::without_spend_index(alpha);
        s.spend_index = Some(SpendRegistry::new());
        s
    }

    /// A store whose validation relies on an external `SpendLookup`.
    pub fn without_spend_index(alpha: u32) -> Self {
        let g = CBlock::genesis();
        let genesis = g.hash;
        let mut cblocks = FxHashMap::default();
        cblocks.insert(
            genesis,
            CBlockNode {
                cblock: Arc::new(g),
                depth: 0,
                cum_blocks: 0,
            },
        );
        let mut tips = BTreeSet::new();
        tips.insert(genesis);
        LedgerStore {
            alpha,
            genesis,
            blocks: FxHashMap::default(),
            cblocks,
            children: FxHashMap::default(),
            tips,
            fouls: FxHashMap::default(),
            included_in: FxHashMap::default(),
            by_tournament: FxHashMap::default(),
            spend_index: None,
        }
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn genesis(&self) -> CBlockHash {
        self.genesis
    }

    pub fn block(&self, h: &BlockHash) -> Option<&Arc<Block>> {
        self.blocks.get(h)
    }

    pub fn cblock(&self, h: &CBlockHash) -> Option<&Arc<CBlock>> {
        self.cblocks.get(h).map(|n| &n.cblock)
    }

    pub fn has_block(&self, h: &BlockHash) -> bool {
        self.blocks.contains_key(h)
    }

    pub fn has_cblock(&self, h: &CBlockHash) -> bool {
        self.cblocks.contains_key(h)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn cblock_count(&self) -> usize {
        self.cblocks.len()
    }

    pub fn tips(&self) -> &BTreeSet<CBlockHash> {
        &self.tips
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }

    pub fn cblocks(&self) -> impl Iterator<Item = &Arc<CBlock>> {
        self.cblocks.values().map(|n| &n.cblock)
    }

    /// Stored blocks of one tournament, in hash order.
    pub fn blocks_of_tournament(&self, t: u64) -> Vec<Arc<Block>> {
        let mut v: Vec<Arc<Block>> = self
            .by_tournament
            .get(&t)
            .map(|hs| hs.iter().filter_map(|h| self.blocks.get(h).cloned()).collect())
            .unwrap_or_default();
        v.sort_by_key(|b| b.hash);
        v
    }

    pub(crate) fn node(&self, h: &CBlockHash) -> Option<&CBlockNode> {
        self.cblocks.get(h)
    }

    /// C-Blocks that include the given block.
    pub fn including(&self, b: &BlockHash) -> &[CBlockHash] {
        self.included_in.get(b).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Stores a block whose parent C-Block is already known.
    pub fn insert_block(&mut self, block: Arc<Block>) -> Result<bool, LedgerError> {
        if !self.cblocks.contains_key(&block.prev_cblock) {
            return Err(LedgerError::UnknownCBlock(block.prev_cblock));
        }
        if self.blocks.contains_key(&block.hash) {
            return Ok(false);
        }
        if let Some(ix) = self.spend_index.as_mut() {
            ix.register(&block);
        }
        self.by_tournament
            .entry(block.tournament_no)
            .or_default()
            .push(block.hash);
        self.blocks.insert(block.hash, block);
        Ok(true)
    }

    /// Stores a C-Block after checking the three convergence rules and that
    /// its parent and every included block are already present.
    pub fn insert_cblock(&mut self, cb: Arc<CBlock>) -> Result<bool, LedgerError> {
        if self.cblocks.contains_key(&cb.hash) {
            return Ok(false);
        }
        self.check_cblock(&cb)?;
        self.link_cblock(cb);
        Ok(true)
    }

    /// As [`LedgerStore::insert_cblock`] for a C-Block that already passed
    /// [`LedgerStore::check_cblock`] elsewhere. The rules only look at
    /// content-addressed blocks, so only presence is checked here.
    pub fn insert_verified_cblock(&mut self, cb: Arc<CBlock>) -> Result<bool, LedgerError> {
        if self.cblocks.contains_key(&cb.hash) {
            return Ok(false);
        }
        if !self.cblocks.contains_key(&cb.prev_cblock) {
            return Err(LedgerError::UnknownCBlock(cb.prev_cblock));
        }
        if let Some(h) = cb.included.iter().find(|h| !self.blocks.contains_key(h)) {
            return Err(LedgerError::NotFound(*h));
        }
        self.link_cblock(cb);
        Ok(true)
    }

    /// Blocks included from genesis up to and including `h`.
    pub fn cum_blocks(&self, h: &CBlockHash) -> Option<u64> {
        self.cblocks.get(h).map(|n| n.cum_blocks)
    }

    fn link_cblock(&mut self, cb: Arc<CBlock>) {
        let parent = &self.cblocks[&cb.prev_cblock];
        let node = CBlockNode {
            depth: parent.depth + 1,
            cum_blocks: parent.cum_blocks + cb.included.len() as u64,
            cblock: cb.clone(),
        };
        for b in &cb.included {
            self.included_in.entry(*b).or_default().push(cb.hash);
        }
        *self.children.entry(cb.prev_cblock).or_default() += 1;
        self.tips.remove(&cb.prev_cblock);
        if !self.children.contains_key(&cb.hash) {
            self.tips.insert(cb.hash);
        }
        self.cblocks.insert(cb.hash, node);
    }

    /// Convergence rules for a non-genesis C-Block against this store.
    pub fn check_cblock(&self, cb: &CBlock) -> Result<(), LedgerError> {
        let corrupt = |m: String| Err(LedgerError::CorruptStore(m));
        if cb.hash != cb.compute_hash() {
            return corrupt(format!("C-Block {} hash mismatch", cb.hash));
        }
        let Some(parent) = self.cblocks.get(&cb.prev_cblock) else {
            return Err(LedgerError::UnknownCBlock(cb.prev_cblock));
        };
        if cb.included.is_empty() {
            return corrupt(format!("C-Block {} includes no blocks", cb.hash));
        }
        if !cb.included.windows(2).all(|w| w[0] < w[1]) {
            return corrupt(format!("C-Block {} is not sorted", cb.hash));
        }
        if cb.tournament_no <= parent.cblock.tournament_no {
            return corrupt(format!("C-Block {} does not advance the tournament", cb.hash));
        }
        let mut blocks = Vec::with_capacity(cb.included.len());
        for h in &cb.included {
            let b = self.blocks.get(h).ok_or(LedgerError::NotFound(*h))?;
            if b.prev_cblock != cb.prev_cblock {
                return corrupt(format!("block {h} does not share the C-Block parent"));
            }
            if b.tournament_no != cb.tournament_no {
                return corrupt(format!("block {h} is from another tournament"));
            }
            blocks.push(b);
        }
        let mut buckets = BTreeSet::new();
        for b in &blocks {
            if !buckets.insert(b.bucket_id) {
                return corrupt(format!("C-Block {} repeats bucket {}", cb.hash, b.bucket_id));
            }
        }
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                if crate::bucketing::conflicts(a, b) != crate::bucketing::Conflict::None {
                    return corrupt(format!("blocks {} and {} conflict", a.hash, b.hash));
                }
            }
        }
        Ok(())
    }

    /// Path from genesis to `tip`, inclusive.
    pub fn chain(&self, tip: &CBlockHash) -> Result<Vec<Arc<CBlock>>, LedgerError> {
        let mut out = Vec::new();
        let mut cur = *tip;
        loop {
            let n = self.cblocks.get(&cur).ok_or_else(|| {
                if cur == *tip {
                    LedgerError::UnknownCBlock(cur)
                } else {
                    LedgerError::CorruptStore(format!("dangling ancestor {cur}"))
                }
            })?;
            out.push(n.cblock.clone());
            if cur == self.genesis {
                break;
            }
            cur = n.cblock.prev_cblock;
        }
        out.reverse();
        Ok(out)
    }

    /// Whether `anc` lies on the path from genesis to `tip` (inclusive).
    pub fn is_ancestor_or_self(&self, anc: &CBlockHash, tip: &CBlockHash) -> bool {
        let (Some(a), Some(mut n)) = (self.cblocks.get(anc), self.cblocks.get(tip)) else {
            return false;
        };
        while n.depth > a.depth {
            match self.cblocks.get(&n.cblock.prev_cblock) {
                Some(p) => n = p,
                None => return false,
            }
        }
        n.cblock.hash == *anc
    }

    /// The C-Block on the chain ending at `tip` that includes `block`.
    pub fn including_on_chain(&self, block: &BlockHash, tip: &CBlockHash) -> Option<CBlockHash> {
        self.including(block)
            .iter()
            .find(|c| self.is_ancestor_or_self(c, tip))
            .copied()
    }

    pub fn chain_contains(&self, tip: &CBlockHash, block: &BlockHash) -> bool {
        self.including_on_chain(block, tip).is_some()
    }

    /// Records a foul against the block `proposer` produced (or will produce)
    /// in `tournament_no`.
    pub fn record_foul(&mut self, tournament_no: u64, proposer: NodeId) {
        *self.fouls.entry((tournament_no, proposer)).or_default() += 1;
    }

    pub fn fouls_for(&self, tournament_no: u64, proposer: NodeId) -> u32 {
        self.fouls.get(&(tournament_no, proposer)).copied().unwrap_or(0)
    }

    pub fn fouls(&self, block: &BlockHash) -> Result<u32, LedgerError> {
        let b = self.blocks.get(block).ok_or(LedgerError::NotFound(*block))?;
        Ok(self.fouls_for(b.tournament_no, b.proposer))
    }
}

impl SpendLookup for LedgerStore {
    fn spenders(&self, input: SpendRef) -> &[BlockHash] {
        match &self.spend_index {
            Some(ix) => ix.spenders(input),
            None => &[],
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::bucketing::{bucket_of, Transaction};

    pub const B: u32 = 8;

    /// A transaction in bucket `bucket` spending `input`, plus optional extra inputs.
    pub fn tx_in_bucket(bucket: u32, input: u64, extra: &[u64]) -> Arc<Transaction> {
        let mut nonce = 0u64;
        loop {
            let mut inputs: Vec<SpendRef> = vec![SpendRef(input)];
            inputs.extend(extra.iter().map(|&e| SpendRef(e)));
            let t = Transaction::new(inputs, nonce.to_le_bytes().to_vec(), 350);
            if bucket_of(&t.hash, B).unwrap() == bucket {
                return Arc::new(t);
            }
            nonce += 1;
        }
    }

    pub fn powin_for(t: u64, proposer: NodeId, alpha: u32) -> PoWin {
        let other = NodeId(proposer.0 + 1000);
        PoWin::seal(
            t,
            alpha,
            (proposer, Digest::of(b"prev-a")),
            (other, Digest::of(b"prev-b")),
            proposer,
            NodeId(proposer.0 + 2000),
        )
    }

    pub fn block(prev: CBlockHash, t: u64, bucket: u32, proposer: u32, inputs: &[u64], alpha: u32) -> Arc<Block> {
        let txs = inputs.iter().map(|&i| tx_in_bucket(bucket, i, &[])).collect();
        Arc::new(Block::new(
            prev,
            bucket,
            t,
            NodeId(proposer),
            powin_for(t, NodeId(proposer), alpha),
            txs,
        ))
    }

    /// Converges `blocks` onto `prev` and stores everything.
    pub fn converge(store: &mut LedgerStore, t: u64, prev: CBlockHash, blocks: &[Arc<Block>]) -> CBlockHash {
        for b in blocks {
            store.insert_block(b.clone()).unwrap();
        }
        let cb = CBlock::new(t, prev, blocks.iter().map(|b| b.hash).collect());
        let h = cb.hash;
        store.insert_cblock(Arc::new(cb)).unwrap();
        h
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn genesis_is_the_only_tip_initially() {
        let s = LedgerStore::new(4);
        assert_eq!(s.tips().iter().copied().collect::<Vec<_>>(), vec![s.genesis()]);
        assert!(s.cblock(&s.genesis()).unwrap().is_genesis());
    }

    #[test]
    fn tips_track_children() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let a = converge(&mut s, 1, g, &[block(g, 1, 0, 1, &[1], 4)]);
        let b = converge(&mut s, 1, g, &[block(g, 1, 1, 2, &[2], 4)]);
        assert_eq!(s.tips().len(), 2);
        let c = converge(&mut s, 2, a, &[block(a, 2, 0, 3, &[3], 4)]);
        let tips: Vec<_> = s.tips().iter().copied().collect();
        assert!(tips.contains(&b) && tips.contains(&c) && !tips.contains(&a));
        assert!(s.is_ancestor_or_self(&a, &c));
        assert!(!s.is_ancestor_or_self(&b, &c));
    }

    #[test]
    fn insert_rejects_rule_violations() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let x = block(g, 1, 2, 1, &[10], 4);
        let y = block(g, 1, 2, 2, &[11], 4);
        s.insert_block(x.clone()).unwrap();
        s.insert_block(y.clone()).unwrap();
        let same_bucket = CBlock::new(1, g, vec![x.hash, y.hash]);
        assert!(matches!(
            s.insert_cblock(Arc::new(same_bucket)),
            Err(LedgerError::CorruptStore(_))
        ));

        let z = block(g, 1, 3, 3, &[10], 4);
        s.insert_block(z.clone()).unwrap();
        let double_spend = CBlock::new(1, g, vec![x.hash, z.hash]);
        assert!(s.insert_cblock(Arc::new(double_spend)).is_err());

        let missing = CBlock::new(1, g, vec![BlockHash(Digest::of(b"nope"))]);
        assert!(matches!(
            s.insert_cblock(Arc::new(missing)),
            Err(LedgerError::NotFound(_))
        ));
    }

    #[test]
    fn block_with_unknown_parent_is_refused() {
        let mut s = LedgerStore::new(4);
        let ghost = CBlockHash(Digest::of(b"ghost"));
        assert_eq!(
            s.insert_block(block(ghost, 1, 0, 1, &[1], 4)),
            Err(LedgerError::UnknownCBlock(ghost))
        );
    }
}
