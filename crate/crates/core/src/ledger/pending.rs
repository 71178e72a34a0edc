use std::collections::BTreeMap;

use crate::time::SimTime;

/// Items that arrived before something they depend on, keyed by the missing
/// dependency. An item waiting on several things is parked under one of them
/// and re-parked by the caller on release if others are still missing.
#[derive(Debug, Clone)]
pub struct PendingBuffer<K: Ord, T> {
    waiting: BTreeMap<K, Vec<(SimTime, T)>>,
    len: usize,
}

impl<K: Ord, T> Default for PendingBuffer<K, T> {
    fn default() -> Self {
        PendingBuffer {
            waiting: BTreeMap::new(),
            len: 0,
        }
    }
}

impl<K: Ord + Clone, T> PendingBuffer<K, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn park(&mut self, missing: K, item: T, now: SimTime) {
        self.waiting.entry(missing).or_default().push((now, item));
        self.len += 1;
    }

    /// Everything waiting on `key`, in arrival order.
    pub fn release(&mut self, key: &K) -> Vec<T> {
        match self.waiting.remove(key) {
            Some(v) => {
                self.len -= v.len();
                v.into_iter().map(|(_, t)| t).collect()
            }
            None => Vec::new(),
        }
    }

    pub fn is_waiting_on(&self, key: &K) -> bool {
        self.waiting.contains_key(key)
    }

    /// Drops items parked for longer than `ttl`. Returns how many were dropped.
    pub fn evict(&mut self, now: SimTime, ttl: SimTime) -> usize {
        let cutoff = now.saturating_sub(ttl);
        let mut dropped = 0;
        self.waiting.retain(|_, v| {
            let before = v.len();
            v.retain(|(at, _)| *at >= cutoff);
            dropped += before - v.len();
            !v.is_empty()
        });
        self.len -= dropped;
        dropped
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
