use std::collections::BTreeSet;

use crate::digest::{BlockHash, CBlockHash};
use crate::error::LedgerError;

use super::LedgerStore;

/// Maximum expected number of blocks per tournament, `floor(n / 2^alpha)`.
pub fn compute_delta(n: u64, alpha: u32) -> Result<u64, LedgerError> {
    if n == 0 || alpha == 0 {
        return Err(LedgerError::InvalidParameter(format!(
            "n = {n} and alpha = {alpha} must both be at least 1"
        )));
    }
    if alpha >= 64 || (1u64 << alpha) > n {
        return Err(LedgerError::InvalidParameter(format!(
            "alpha = {alpha} exceeds log2(n) for n = {n}"
        )));
    }
    Ok(n >> alpha)
}

/// `max(0, alpha - fouls)`.
pub fn block_weight(block: &BlockHash, store: &LedgerStore, alpha: u32) -> Result<u64, LedgerError> {
    let fouls = store.fouls(block)?;
    Ok(alpha.saturating_sub(fouls) as u64)
}

/// Sum of block weights over every C-Block from genesis to `tip`.
pub fn chain_weight(tip: &CBlockHash, store: &LedgerStore) -> Result<u64, LedgerError> {
    let alpha = store.alpha();
    let mut total = 0u64;
    let mut cur = *tip;
    loop {
        let n = store.node(&cur).ok_or_else(|| {
            if cur == *tip {
                LedgerError::UnknownCBlock(cur)
            } else {
                LedgerError::CorruptStore(format!("dangling ancestor {cur}"))
            }
        })?;
        for b in &n.cblock.included {
            total += block_weight(b, store, alpha)
                .map_err(|_| LedgerError::CorruptStore(format!("included block {b} missing")))?;
        }
        if cur == store.genesis() {
            return Ok(total);
        }
        cur = n.cblock.prev_cblock;
    }
}

/// Tip with the greatest chain weight; equal weights go to the smaller hash.
pub fn select_heaviest_cblock(tips: &BTreeSet<CBlockHash>, store: &LedgerStore) -> Result<CBlockHash, LedgerError> {
    let mut best: Option<(u64, CBlockHash)> = None;
    // BTreeSet iterates ascending, so a strict `>` keeps the smallest hash on ties.
    for t in tips {
        let w = chain_weight(t, store)?;
        if best.is_none_or(|(bw, _)| w > bw) {
            best = Some((w, *t));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| LedgerError::InvalidParameter("no tips to choose from".into()))
}

/// Every block on the chain ending at `tip`: C-Blocks in chain order, and
/// within a C-Block, ascending hash.
pub fn total_order(tip: &CBlockHash, store: &LedgerStore) -> Result<Vec<BlockHash>, LedgerError> {
    let chain = store.chain(tip)?;
    Ok(chain.iter().flat_map(|c| c.included.iter().copied()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Confirmations {
    pub count: u64,
    pub tournaments_spanned: u64,
    pub blocks_ahead: u64,
}

/// Full-confirmations of `block` as seen from `tip`. Only blocks in strictly
/// later C-Blocks count as being ahead of it.
pub fn full_confirmations(
    block: &BlockHash,
    tip: &CBlockHash,
    store: &LedgerStore,
    delta: u64,
) -> Result<Confirmations, LedgerError> {
    if delta == 0 {
        return Err(LedgerError::InvalidParameter("delta must be positive".into()));
    }
    let tip_node = store.node(tip).ok_or(LedgerError::UnknownCBlock(*tip))?;
    let holder = store
        .including_on_chain(block, tip)
        .ok_or(LedgerError::NotInChain(*block, *tip))?;
    let holder_node = store
        .node(&holder)
        .ok_or_else(|| LedgerError::CorruptStore(format!("missing C-Block {holder}")))?;
    let b = store.block(block).ok_or(LedgerError::NotFound(*block))?;
    let blocks_ahead = tip_node.cum_blocks - holder_node.cum_blocks;
    Ok(Confirmations {
        count: blocks_ahead / delta,
        tournaments_spanned: tip_node.cblock.tournament_no.saturating_sub(b.tournament_no),
        blocks_ahead,
    })
}

/// Confirmed iff some `x >= f_min` has `count >= x` and `spanned < 2x`.
/// Taking `x = count` is the most permissive choice, so the test reduces to
/// `count >= f_min && spanned < 2 * count`.
pub fn is_confirmed(
    block: &BlockHash,
    tip: &CBlockHash,
    store: &LedgerStore,
    delta: u64,
    f_min: u64,
) -> Result<bool, LedgerError> {
    let c = full_confirmations(block, tip, store, delta)?;
    Ok(confirmed_by_counts(c.count, c.tournaments_spanned, f_min))
}

pub(crate) fn confirmed_by_counts(count: u64, spanned: u64, f_min: u64) -> bool {
    count >= f_min.max(1) && spanned < 2 * count
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::fixtures::*;
    use super::super::{Block, CBlock};
    use super::*;
    use crate::digest::Digest;

    #[test]
    fn delta_examples() {
        assert_eq!(compute_delta(16, 4).unwrap(), 1);
        assert_eq!(compute_delta(300, 4).unwrap(), 18);
        assert_eq!(compute_delta(64, 3).unwrap(), 8);
        assert!(compute_delta(16, 5).is_err());
        assert!(compute_delta(16, 0).is_err());
        assert!(compute_delta(0, 1).is_err());
    }

    #[test]
    fn weight_clamps_at_zero() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let b = block(g, 1, 0, 7, &[1], 4);
        s.insert_block(b.clone()).unwrap();
        assert_eq!(block_weight(&b.hash, &s, 4).unwrap(), 4);
        s.record_foul(1, b.proposer);
        assert_eq!(block_weight(&b.hash, &s, 4).unwrap(), 3);
        for _ in 0..5 {
            s.record_foul(1, b.proposer);
        }
        assert_eq!(block_weight(&b.hash, &s, 4).unwrap(), 0);
        let missing = BlockHash(Digest::of(b"x"));
        assert_eq!(block_weight(&missing, &s, 4), Err(LedgerError::NotFound(missing)));
    }

    fn three(s: &mut LedgerStore, t: u64, prev: CBlockHash, base: u64) -> CBlockHash {
        let bs: Vec<_> = (0..3)
            .map(|i| block(prev, t, i as u32, 10 * t as u32 + i as u32, &[base + i], 4))
            .collect();
        converge(s, t, prev, &bs)
    }

    #[test]
    fn chain_weight_examples() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        assert_eq!(chain_weight(&g, &s).unwrap(), 0);
        let c1 = three(&mut s, 1, g, 100);
        let c2 = three(&mut s, 2, c1, 200);
        assert_eq!(chain_weight(&c2, &s).unwrap(), 24);
    }

    #[test]
    fn chain_weight_with_a_foul_matches_independent_walk() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let c1 = three(&mut s, 1, g, 100);
        let middle = s.cblock(&c1).unwrap().included[1];
        let p = s.block(&middle).unwrap().proposer;
        s.record_foul(1, p);
        // Oracle: walk included blocks and count 4 minus fouls by hand.
        let oracle: u64 = s
            .cblock(&c1)
            .unwrap()
            .included
            .iter()
            .map(|h| {
                let b = s.block(h).unwrap();
                4 - s.fouls_for(b.tournament_no, b.proposer).min(4) as u64
            })
            .sum();
        assert_eq!(oracle, 11);
        assert_eq!(chain_weight(&c1, &s).unwrap(), 11);
    }

    #[test]
    fn heaviest_tip_and_tie_break() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let heavy1 = three(&mut s, 1, g, 100);
        let heavy = three(&mut s, 2, heavy1, 200);
        let light1 = three(&mut s, 1, g, 300);
        let lb: Vec<_> = (0..2)
            .map(|i| block(light1, 2, i, 90 + i, &[400 + i as u64], 4))
            .collect();
        let light = converge(&mut s, 2, light1, &lb);
        assert_eq!(chain_weight(&heavy, &s).unwrap(), 24);
        assert_eq!(chain_weight(&light, &s).unwrap(), 20);
        assert_eq!(select_heaviest_cblock(s.tips(), &s).unwrap(), heavy);

        let single: BTreeSet<_> = [light].into_iter().collect();
        assert_eq!(select_heaviest_cblock(&single, &s).unwrap(), light);
        assert!(select_heaviest_cblock(&BTreeSet::new(), &s).is_err());

        let mut t = LedgerStore::new(4);
        let g = t.genesis();
        let a = three(&mut t, 1, g, 1);
        let b = three(&mut t, 1, g, 50);
        let expect = a.min(b);
        assert_eq!(select_heaviest_cblock(t.tips(), &t).unwrap(), expect);
        // A replica built in a different insertion order agrees.
        let mut u = LedgerStore::new(4);
        for cb in [b, a] {
            let c = t.cblock(&cb).unwrap().clone();
            for h in &c.included {
                u.insert_block(t.block(h).unwrap().clone()).unwrap();
            }
            u.insert_cblock(c).unwrap();
        }
        assert_eq!(select_heaviest_cblock(u.tips(), &u).unwrap(), expect);
    }

    #[test]
    fn total_order_examples() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        assert!(total_order(&g, &s).unwrap().is_empty());
        let a: Vec<_> = (0..2).map(|i| block(g, 1, i, i, &[10 + i as u64], 4)).collect();
        let c1 = converge(&mut s, 1, g, &a);
        let b: Vec<_> = (0..2).map(|i| block(c1, 2, i, i, &[20 + i as u64], 4)).collect();
        let c2 = converge(&mut s, 2, c1, &b);
        let mut first: Vec<_> = a.iter().map(|x| x.hash).collect();
        first.sort();
        let mut second: Vec<_> = b.iter().map(|x| x.hash).collect();
        second.sort();
        let expect: Vec<_> = first.into_iter().chain(second).collect();
        assert_eq!(total_order(&c2, &s).unwrap(), expect);
    }

    /// Chain of C-Blocks with the given block counts, all foul-free.
    fn chain_with(counts: &[usize]) -> (LedgerStore, Vec<CBlockHash>, Vec<Vec<Arc<Block>>>) {
        let mut s = LedgerStore::new(3);
        let mut prev = s.genesis();
        let mut hs = vec![];
        let mut all = vec![];
        let mut input = 0u64;
        for (i, &k) in counts.iter().enumerate() {
            let t = i as u64 + 1;
            let bs: Vec<_> = (0..k)
                .map(|j| {
                    input += 1;
                    block(prev, t, j as u32, j as u32, &[input], 3)
                })
                .collect();
            prev = converge(&mut s, t, prev, &bs);
            hs.push(prev);
            all.push(bs);
        }
        (s, hs, all)
    }

    #[test]
    fn full_confirmation_examples() {
        let (s, hs, bs) = chain_with(&[1, 4]);
        let c = full_confirmations(&bs[0][0].hash, &hs[1], &s, 4).unwrap();
        assert_eq!((c.count, c.blocks_ahead), (1, 4));

        let (s, hs, bs) = chain_with(&[1, 3]);
        assert_eq!(full_confirmations(&bs[0][0].hash, &hs[1], &s, 4).unwrap().count, 0);

        // 11 blocks over 3 later slots.
        let (s, hs, bs) = chain_with(&[2, 4, 4, 3]);
        let c = full_confirmations(&bs[0][1].hash, &hs[3], &s, 4).unwrap();
        // Oracle: sum of later C-Block sizes, counted from the fixture directly.
        let ahead: usize = bs[1..].iter().map(|v| v.len()).sum();
        assert_eq!(ahead, 11);
        assert_eq!((c.count, c.tournaments_spanned), (2, 3));
    }

    #[test]
    fn not_in_chain_is_reported() {
        let (mut s, hs, _) = chain_with(&[2]);
        let g = s.genesis();
        let stray = block(g, 1, 7, 9, &[999], 3);
        s.insert_block(stray.clone()).unwrap();
        assert_eq!(
            full_confirmations(&stray.hash, &hs[0], &s, 1),
            Err(LedgerError::NotInChain(stray.hash, hs[0]))
        );
    }

    #[test]
    fn confirmation_rule_boundaries() {
        assert!(confirmed_by_counts(3, 5, 3));
        assert!(!confirmed_by_counts(3, 6, 3));
        assert!(!confirmed_by_counts(2, 2, 3));
        // More confirmations buy more room.
        assert!(confirmed_by_counts(4, 7, 3));
    }

    #[test]
    fn steady_slots_confirm_on_the_third_successor() {
        let (s, hs, bs) = chain_with(&[4, 4, 4, 4, 4]);
        let target = bs[0][2].hash;
        let confirmed_at: Vec<bool> = hs.iter().map(|t| is_confirmed(&target, t, &s, 4, 3).unwrap()).collect();
        // Oracle: recount blocks strictly after slot 1 at each tip.
        let oracle: Vec<bool> = (0..hs.len())
            .map(|k| {
                let ahead: usize = bs[1..=k].iter().map(|v| v.len()).sum();
                let count = (ahead / 4) as u64;
                count >= 3 && (k as u64) < 2 * count
            })
            .collect();
        assert_eq!(confirmed_at, oracle);
        assert_eq!(confirmed_at, vec![false, false, false, true, true]);
    }

    #[test]
    fn genesis_only_chain_is_empty_cblock() {
        let g = CBlock::genesis();
        assert!(g.included.is_empty());
        assert_eq!(g.tournament_no, 0);
    }
}
