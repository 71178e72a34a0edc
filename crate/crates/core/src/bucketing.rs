//! Transaction buckets: hash-mod-B partitioning of the unconfirmed pool,
//! single-bucket block filling and block-to-block conflict classification.
//!
//! A [`TxFeed`] is the arrival-ordered record of every transaction a run
//! produces. A [`TxPool`] is one node's view of a feed: it sees entries up to
//! its time horizon and keeps its own removal state, so many nodes can share
//! one feed without copying it.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::digest::{Digest, SpendRef, TxHash};
use crate::error::BucketError;
use crate::ledger::Block;
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub hash: TxHash,
    /// Sorted, deduplicated.
    pub inputs: SmallVec<[SpendRef; 2]>,
    pub byte_size: u32,
    pub payload: Vec<u8>,
}

impl Transaction {
    pub fn new(inputs: Vec<SpendRef>, payload: Vec<u8>, byte_size: u32) -> Transaction {
        let mut inputs: SmallVec<[SpendRef; 2]> = inputs.into();
        inputs.sort_unstable();
        inputs.dedup();
        let mut h = Digest::builder().tag("tx").u64(inputs.len() as u64);
        for i in &inputs {
            h = h.u64(i.0);
        }
        let hash = TxHash(h.bytes(&payload).finish());
        Transaction {
            hash,
            inputs,
            byte_size,
            payload,
        }
    }

    pub fn shares_input(&self, other: &Transaction) -> bool {
        sorted_overlap(&self.inputs, &other.inputs)
    }
}

/// The hash read as a big-endian unsigned integer, reduced mod `b`.
pub fn bucket_of(hash: &TxHash, b: u32) -> Result<u32, BucketError> {
    if b == 0 {
        return Err(BucketError::InvalidParameter("bucket count must be positive".into()));
    }
    let b = b as u128;
    let mut r: u128 = 0;
    for limb in hash.0 .0.chunks_exact(8) {
        let v = u64::from_be_bytes(limb.try_into().expect("8-byte chunk")) as u128;
        r = ((r << 64) | v) % b;
    }
    Ok(r as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conflict {
    None,
    /// The blocks share at least one transaction.
    Intersecting,
    /// No shared transaction, but two transactions spend the same input.
    DoubleSpend,
}

pub fn conflicts(a: &Block, b: &Block) -> Conflict {
    if sorted_overlap(a.sorted_tx_hashes(), b.sorted_tx_hashes()) {
        Conflict::Intersecting
    } else if sorted_overlap(a.sorted_inputs(), b.sorted_inputs()) {
        Conflict::DoubleSpend
    } else {
        Conflict::None
    }
}

fn sorted_overlap<T: Ord>(a: &[T], b: &[T]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

#[derive(Clone, Debug)]
struct FeedEntry {
    at: SimTime,
    tx: Arc<Transaction>,
}

/// Append-only, per-bucket arrival queues of every transaction seen in a run.
#[derive(Clone, Debug)]
pub struct TxFeed {
    b: u32,
    buckets: Vec<Vec<FeedEntry>>,
    locate: FxHashMap<TxHash, (u32, u32)>,
    by_input: FxHashMap<SpendRef, SmallVec<[TxHash; 2]>>,
}

impl TxFeed {
    pub fn new(b: u32) -> Result<TxFeed, BucketError> {
        if b == 0 {
            return Err(BucketError::InvalidParameter("bucket count must be positive".into()));
        }
        Ok(TxFeed {
            b,
            buckets: vec![Vec::new(); b as usize],
            locate: FxHashMap::default(),
            by_input: FxHashMap::default(),
        })
    }

    pub fn bucket_count(&self) -> u32 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.locate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locate.is_empty()
    }

    /// Appends `tx` arriving at `at`. Arrival times within a bucket are kept
    /// non-decreasing by clamping to the bucket's last arrival. Returns false
    /// for a transaction already present.
    pub fn push(&mut self, tx: Arc<Transaction>, at: SimTime) -> bool {
        if self.locate.contains_key(&tx.hash) {
            return false;
        }
        let bucket = bucket_of(&tx.hash, self.b).expect("b > 0");
        let q = &mut self.buckets[bucket as usize];
        let at = q.last().map_or(at, |l| l.at.max(at));
        self.locate.insert(tx.hash, (bucket, q.len() as u32));
        for &i in &tx.inputs {
            self.by_input.entry(i).or_default().push(tx.hash);
        }
        q.push(FeedEntry { at, tx });
        true
    }

    pub fn get(&self, h: &TxHash) -> Option<&Arc<Transaction>> {
        self.locate
            .get(h)
            .map(|&(b, i)| &self.buckets[b as usize][i as usize].tx)
    }

    /// Transactions that spend `input`.
    pub fn spenders_of(&self, input: SpendRef) -> &[TxHash] {
        self.by_input.get(&input).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// One node's unconfirmed transactions.
#[derive(Clone, Debug)]
pub struct TxPool {
    feed: Arc<TxFeed>,
    /// Entries below the head of each bucket are gone from this pool.
    heads: Vec<u32>,
    /// Removed entries at or past their bucket's head, packed as `bucket << 32 | index`.
    removed: FxHashSet<u64>,
    horizon: SimTime,
}

fn pack(bucket: u32, idx: u32) -> u64 {
    (bucket as u64) << 32 | idx as u64
}

impl TxPool {
    /// An empty standalone pool.
    pub fn new(b: u32) -> Result<TxPool, BucketError> {
        Ok(TxPool::from_feed(Arc::new(TxFeed::new(b)?)))
    }

    /// A view over a shared feed, seeing everything until a horizon is set.
    pub fn from_feed(feed: Arc<TxFeed>) -> TxPool {
        let b = feed.b as usize;
        TxPool {
            feed,
            heads: vec![0; b],
            removed: FxHashSet::default(),
            horizon: SimTime::MAX,
        }
    }

    pub fn bucket_count(&self) -> u32 {
        self.feed.b
    }

    pub fn feed(&self) -> &Arc<TxFeed> {
        &self.feed
    }

    /// Adds a transaction. Copies the feed first if it is shared.
    pub fn insert(&mut self, tx: Arc<Transaction>) -> bool {
        Arc::make_mut(&mut self.feed).push(tx, SimTime::ZERO)
    }

    /// Only entries that arrived at or before `t` are visible.
    pub fn set_horizon(&mut self, t: SimTime) {
        self.horizon = t;
    }

    fn visible_end(&self, bucket: u32) -> usize {
        let q = &self.feed.buckets[bucket as usize];
        q.partition_point(|e| e.at <= self.horizon)
    }

    fn is_live(&self, bucket: u32, idx: u32) -> bool {
        idx >= self.heads[bucket as usize] && !self.removed.contains(&pack(bucket, idx))
    }

    /// Visible transactions of one bucket in arrival order.
    pub fn bucket_iter(&self, bucket: u32) -> impl Iterator<Item = &Arc<Transaction>> + '_ {
        let (start, end) = if bucket < self.feed.b {
            (self.heads[bucket as usize] as usize, self.visible_end(bucket))
        } else {
            (0, 0)
        };
        let q = &self.feed.buckets[..];
        (start..end.max(start)).filter_map(move |i| {
            if self.removed.contains(&pack(bucket, i as u32)) {
                None
            } else {
                Some(&q[bucket as usize][i].tx)
            }
        })
    }

    pub fn bucket_len(&self, bucket: u32) -> usize {
        self.bucket_iter(bucket).count()
    }

    /// Heads always rest on a live entry or the end, so emptiness is one comparison.
    pub fn bucket_is_empty(&self, bucket: u32) -> bool {
        bucket >= self.feed.b || self.heads[bucket as usize] as usize >= self.visible_end(bucket)
    }

    pub fn len(&self) -> usize {
        (0..self.feed.b).map(|b| self.bucket_len(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.feed.b).all(|b| self.bucket_is_empty(b))
    }

    pub fn contains(&self, h: &TxHash) -> bool {
        match self.feed.locate.get(h) {
            Some(&(b, i)) => self.is_live(b, i) && self.feed.buckets[b as usize][i as usize].at <= self.horizon,
            None => false,
        }
    }

    pub fn non_empty_buckets(&self) -> Vec<u32> {
        (0..self.feed.b).filter(|&b| !self.bucket_is_empty(b)).collect()
    }

    fn remove_entry(&mut self, bucket: u32, idx: u32) -> bool {
        if !self.is_live(bucket, idx) {
            return false;
        }
        self.removed.insert(pack(bucket, idx));
        let q = &self.feed.buckets[bucket as usize];
        let head = &mut self.heads[bucket as usize];
        while (*head as usize) < q.len() && self.removed.remove(&pack(bucket, *head)) {
            *head += 1;
        }
        true
    }

    /// Removes one transaction and every other pooled transaction sharing an
    /// input with it. Returns how many entries left the pool.
    pub fn remove_with_conflicts(&mut self, tx: &Transaction) -> usize {
        let mut n = 0;
        if let Some(&(b, i)) = self.feed.locate.get(&tx.hash) {
            n += self.remove_entry(b, i) as usize;
        }
        let feed = self.feed.clone();
        for &input in &tx.inputs {
            for h in feed.spenders_of(input) {
                if let Some(&(b, i)) = feed.locate.get(h) {
                    n += self.remove_entry(b, i) as usize;
                }
            }
        }
        n
    }
}

/// Uniform choice among non-empty buckets not yet announced this slot,
/// falling back to any non-empty bucket when all of them are announced.
pub fn select_bucket<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &TxPool,
    announced: &BTreeSet<u32>,
) -> Result<u32, BucketError> {
    let non_empty = pool.non_empty_buckets();
    if non_empty.is_empty() {
        return Err(BucketError::NoTransactions);
    }
    let fresh: Vec<u32> = non_empty.iter().copied().filter(|b| !announced.contains(b)).collect();
    let from = if fresh.is_empty() { &non_empty } else { &fresh };
    Ok(from[rng.gen_range(0..from.len())])
}

/// FIFO prefix of `bucket` that fits in `max_bytes`, skipping transactions
/// that share an input with one already taken.
pub fn fill_block(bucket: u32, pool: &TxPool, max_bytes: u64) -> Vec<Arc<Transaction>> {
    fill_block_filtered(bucket, pool, max_bytes, |_| false)
}

/// As [`fill_block`], also skipping transactions for which `skip` holds.
pub fn fill_block_filtered<F>(bucket: u32, pool: &TxPool, max_bytes: u64, mut skip: F) -> Vec<Arc<Transaction>>
where
    F: FnMut(&Transaction) -> bool,
{
    let mut out = Vec::new();
    let mut used = 0u64;
    let mut spent: FxHashSet<SpendRef> = FxHashSet::default();
    for tx in pool.bucket_iter(bucket) {
        if tx.inputs.iter().any(|i| spent.contains(i)) || skip(tx) {
            continue;
        }
        if used + tx.byte_size as u64 > max_bytes {
            break;
        }
        used += tx.byte_size as u64;
        spent.extend(tx.inputs.iter().copied());
        out.push(tx.clone());
    }
    out
}

/// Drops a confirmed block's transactions and their double-spend shadows.
pub fn remove_confirmed(pool: &mut TxPool, block: &Block) -> usize {
    block.txs.iter().map(|t| pool.remove_with_conflicts(t)).sum()
}
