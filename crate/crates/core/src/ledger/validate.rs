use serde::Serialize;

use crate::bucketing::bucket_of;
use crate::digest::{BlockHash, CBlockHash, SpendRef, TxHash};

use super::{Block, LedgerStore, SpendLookup};

/// Per-run limits a block is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRules {
    pub alpha: u32,
    pub buckets: u32,
    pub max_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    UnknownParent(CBlockHash),
    /// The parent C-Block is not from an earlier tournament.
    ParentNotEarlier(CBlockHash),
    BucketMismatch {
        tx: TxHash,
        expected: u32,
        actual: u32,
    },
    InternalConflict(SpendRef),
    DuplicateTx(TxHash),
    AncestorDoubleSpend {
        input: SpendRef,
        prior: BlockHash,
    },
    BadPoWin(&'static str),
    Oversize {
        size: u64,
        max: u64,
    },
    SizeMismatch {
        declared: u64,
        actual: u64,
    },
    BadHash,
}

/// Every check a receiving node applies before storing a block.
///
/// `spends` must know every block stored in `store`; blocks it knows beyond
/// that are ignored because only spenders on the parent's chain count.
pub fn validate_block(
    block: &Block,
    store: &LedgerStore,
    spends: &dyn SpendLookup,
    rules: &BlockRules,
) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();

    if block.hash != block.compute_hash() {
        v.push(Violation::BadHash);
    }
    match store.cblock(&block.prev_cblock) {
        None => v.push(Violation::UnknownParent(block.prev_cblock)),
        Some(p) if p.tournament_no >= block.tournament_no => v.push(Violation::ParentNotEarlier(block.prev_cblock)),
        Some(_) => {}
    }

    if block.bucket_id >= rules.buckets {
        v.push(Violation::BucketMismatch {
            tx: TxHash::default(),
            expected: block.bucket_id,
            actual: block.bucket_id,
        });
    } else {
        for tx in &block.txs {
            let actual = bucket_of(&tx.hash, rules.buckets).expect("buckets > 0");
            if actual != block.bucket_id {
                v.push(Violation::BucketMismatch {
                    tx: tx.hash,
                    expected: block.bucket_id,
                    actual,
                });
            }
        }
    }

    for w in block.sorted_tx_hashes().windows(2) {
        if w[0] == w[1] {
            v.push(Violation::DuplicateTx(w[0]));
        }
    }
    let inputs = block.sorted_inputs();
    for w in inputs.windows(2) {
        if w[0] == w[1] {
            v.push(Violation::InternalConflict(w[0]));
        }
    }

    if store.has_cblock(&block.prev_cblock) {
        let mut last = None;
        for &input in inputs {
            if last == Some(input) {
                continue;
            }
            last = Some(input);
            for prior in spends.spenders(input) {
                if *prior != block.hash && store.chain_contains(&block.prev_cblock, prior) {
                    v.push(Violation::AncestorDoubleSpend { input, prior: *prior });
                }
            }
        }
    }

    let p = &block.powin;
    if !p.is_well_formed() {
        v.push(Violation::BadPoWin("certificate does not verify"));
    }
    if p.round != rules.alpha {
        v.push(Violation::BadPoWin("certificate is not for the final round"));
    }
    if p.winner != block.proposer {
        v.push(Violation::BadPoWin("proposer did not win the certificate"));
    }
    if p.tournament_no != block.tournament_no {
        v.push(Violation::BadPoWin("certificate is from another tournament"));
    }

    let actual = block.content_size();
    if block.byte_size != actual {
        v.push(Violation::SizeMismatch {
            declared: block.byte_size,
            actual,
        });
    }
    if block.byte_size > rules.max_bytes {
        v.push(Violation::Oversize {
            size: block.byte_size,
            max: rules.max_bytes,
        });
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::fixtures::*;
    use super::super::Block;
    use super::*;
    use crate::colosseum::PoWin;
    use crate::digest::{Digest, NodeId};

    fn rules() -> BlockRules {
        BlockRules {
            alpha: 4,
            buckets: B,
            max_bytes: 1_000_000,
        }
    }

    fn kinds(r: Result<(), Vec<Violation>>) -> Vec<Violation> {
        r.err().unwrap_or_default()
    }

    #[test]
    fn well_formed_block_passes() {
        let s = LedgerStore::new(4);
        let b = block(s.genesis(), 1, 3, 5, &[1, 2], 4);
        assert_eq!(validate_block(&b, &s, &s, &rules()), Ok(()));
    }

    #[test]
    fn ancestor_double_spend() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let c1 = converge(&mut s, 1, g, &[block(g, 1, 0, 1, &[77], 4)]);
        let again = block(c1, 2, 4, 2, &[77], 4);
        let v = kinds(validate_block(&again, &s, &s, &rules()));
        assert!(matches!(
            v[..],
            [Violation::AncestorDoubleSpend {
                input: SpendRef(77),
                ..
            }]
        ));

        // The same spend on a sibling branch is not an ancestor.
        let sibling = block(g, 1, 4, 3, &[77], 4);
        assert_eq!(validate_block(&sibling, &s, &s, &rules()), Ok(()));
    }

    #[test]
    fn bucket_mismatch() {
        let s = LedgerStore::new(4);
        let g = s.genesis();
        let good = block(g, 1, 2, 1, &[1], 4);
        let wrong = Block::new(g, 3, 1, NodeId(1), powin_for(1, NodeId(1), 4), good.txs.clone());
        let v = kinds(validate_block(&wrong, &s, &s, &rules()));
        assert!(matches!(
            v[..],
            [Violation::BucketMismatch {
                expected: 3,
                actual: 2,
                ..
            }]
        ));
    }

    #[test]
    fn internal_conflict_unknown_parent_and_size() {
        let s = LedgerStore::new(4);
        let g = s.genesis();
        let txs = vec![tx_in_bucket(1, 5, &[]), tx_in_bucket(1, 5, &[6])];
        let b = Arc::new(Block::new(g, 1, 1, NodeId(1), powin_for(1, NodeId(1), 4), txs));
        assert_eq!(
            kinds(validate_block(&b, &s, &s, &rules())),
            vec![Violation::InternalConflict(SpendRef(5))]
        );

        let ghost = CBlockHash(Digest::of(b"ghost"));
        let orphan = block(ghost, 1, 0, 1, &[1], 4);
        assert_eq!(
            kinds(validate_block(&orphan, &s, &s, &rules())),
            vec![Violation::UnknownParent(ghost)]
        );

        let small = BlockRules {
            max_bytes: 600,
            ..rules()
        };
        let big = block(g, 1, 0, 1, &[1], 4);
        assert_eq!(
            kinds(validate_block(&big, &s, &s, &small)),
            vec![Violation::Oversize { size: 862, max: 600 }]
        );
    }

    #[test]
    fn powin_checks() {
        let s = LedgerStore::new(4);
        let g = s.genesis();
        let txs = block(g, 1, 0, 1, &[1], 4).txs.clone();
        let short = PoWin::seal(
            1,
            3,
            (NodeId(1), Digest::ZERO),
            (NodeId(2), Digest::ZERO),
            NodeId(1),
            NodeId(3),
        );
        let b = Block::new(g, 0, 1, NodeId(1), short, txs.clone());
        assert_eq!(kinds(validate_block(&b, &s, &s, &rules())).len(), 1);

        let stolen = powin_for(1, NodeId(9), 4);
        let b = Block::new(g, 0, 1, NodeId(1), stolen, txs.clone());
        assert!(kinds(validate_block(&b, &s, &s, &rules()))
            .contains(&Violation::BadPoWin("proposer did not win the certificate")));

        let mut forged = powin_for(1, NodeId(1), 4);
        forged.round = 4;
        forged.tournament_no = 2;
        let b = Block::new(g, 0, 1, NodeId(1), forged, txs);
        assert!(
            kinds(validate_block(&b, &s, &s, &rules())).contains(&Violation::BadPoWin("certificate does not verify"))
        );
    }

    #[test]
    fn tampered_hash_and_stale_parent() {
        let mut s = LedgerStore::new(4);
        let g = s.genesis();
        let mut b = (*block(g, 1, 0, 1, &[1], 4)).clone();
        b.bucket_id = 1;
        assert!(kinds(validate_block(&b, &s, &s, &rules())).contains(&Violation::BadHash));

        let c1 = converge(&mut s, 1, g, &[block(g, 1, 0, 1, &[2], 4)]);
        let same_slot = block(c1, 1, 1, 2, &[3], 4);
        assert!(kinds(validate_block(&same_slot, &s, &s, &rules())).contains(&Violation::ParentNotEarlier(c1)));
    }
}
