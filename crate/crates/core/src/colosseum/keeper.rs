use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::digest::{Digest, NodeId};
use crate::net::Ring;

use super::powin::PoWin;

/// The `k` nodes that hold `player`'s state for tournament `t`.
///
/// Ring successors of `digest(player, t, i)` for `i = 0..k`, skipping the
/// player and repeats; if fewer than `k` distinct nodes came out, the walk
/// continues clockwise from the last one.
pub fn keepers_for(player: NodeId, tournament_no: u64, k: u32, ring: &Ring) -> Vec<NodeId> {
    let want = (k as usize).min(ring.len().saturating_sub(1));
    let mut out: Vec<NodeId> = Vec::with_capacity(want);
    let mut last = player;
    for i in 0..k as u64 {
        let key = Digest::builder()
            .tag("keeper")
            .u64(player.0 as u64)
            .u64(tournament_no)
            .u64(i)
            .finish();
        let n = ring.lookup(&key);
        last = n;
        if n != player && !out.contains(&n) {
            out.push(n);
        }
        if out.len() == want {
            return out;
        }
    }
    let mut cur = last;
    while out.len() < want {
        cur = ring.successor(cur);
        if cur != player && !out.contains(&cur) {
            out.push(cur);
        }
    }
    out
}

/// Proof that a player broke the tournament rules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    /// Two different certificates for the same round, not both won by the subject.
    DualPoWin(PoWin, PoWin),
    /// The subject lost `loss` and still played a later round.
    LostEarlier { loss: PoWin, later: PoWin },
}

impl Evidence {
    pub fn verify(&self, subject: NodeId, tournament_no: u64) -> bool {
        let ok = |p: &PoWin| p.is_well_formed() && p.involves(subject) && p.tournament_no == tournament_no;
        match self {
            Evidence::DualPoWin(a, b) => {
                ok(a)
                    && ok(b)
                    && a.id() != b.id()
                    && a.round == b.round
                    && !(a.winner == subject && b.winner == subject)
            }
            Evidence::LostEarlier { loss, later } => {
                ok(loss) && ok(later) && loss.winner != subject && later.round > loss.round
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeReason {
    MultiPlay,
    LostEarlier,
    /// The certificate does not link to the round-entry sentinel or to a
    /// known previous-round win.
    BrokenLink,
    /// The previous-round win never arrived.
    MissingPrior,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Verdict {
    Positive,
    Negative {
        reason: NegativeReason,
        evidence: Option<Evidence>,
    },
    /// Waiting for the previous-round certificate; re-check at the deadline.
    Defer,
    /// Already stored.
    Duplicate,
    /// Malformed, or not about this record's subject and tournament.
    Ignore,
}

/// One keeper's view of one player in one tournament.
#[derive(Clone, Debug, Default)]
pub struct KeeperRecord {
    pub subject: NodeId,
    pub tournament_no: u64,
    /// Every distinct certificate seen, by round. More than one per round
    /// only happens through multi-play or a validator re-pair.
    pub stored_powins: BTreeMap<u32, SmallVec<[PoWin; 1]>>,
    pub votes_cast: Vec<(Digest, bool)>,
}

impl KeeperRecord {
    pub fn new(subject: NodeId, tournament_no: u64) -> Self {
        KeeperRecord {
            subject,
            tournament_no,
            ..Default::default()
        }
    }

    pub fn contains(&self, p: &PoWin) -> bool {
        self.stored_powins
            .get(&p.round)
            .is_some_and(|v| v.iter().any(|q| q.id() == p.id()))
    }

    /// A certificate the subject won, by id.
    pub fn win(&self, round: u32, id: &Digest) -> Option<&PoWin> {
        self.stored_powins
            .get(&round)?
            .iter()
            .find(|q| q.id() == *id && q.winner == self.subject)
    }

    /// The result for a match, for a player that timed out on its validator.
    pub fn result_of(&self, match_id: &Digest) -> Option<&PoWin> {
        self.stored_powins.values().flatten().find(|p| p.match_id == *match_id)
    }
}

/// Stores `powin` and decides how the keeper votes on it.
pub fn keeper_verify(rec: &mut KeeperRecord, powin: &PoWin) -> Verdict {
    let s = rec.subject;
    if !powin.is_well_formed() || !powin.involves(s) || powin.tournament_no != rec.tournament_no {
        return Verdict::Ignore;
    }
    if rec.contains(powin) {
        return Verdict::Duplicate;
    }
    let r = powin.round;
    let same_round = rec.stored_powins.entry(r).or_default();
    let clash = same_round
        .iter()
        .find(|q| !(q.winner == s && powin.winner == s))
        .cloned();
    same_round.push(powin.clone());
    if let Some(other) = clash {
        return Verdict::Negative {
            reason: NegativeReason::MultiPlay,
            evidence: Some(Evidence::DualPoWin(other, powin.clone())),
        };
    }

    let earliest_loss = rec
        .stored_powins
        .values()
        .flatten()
        .filter(|p| p.winner != s)
        .min_by_key(|p| p.round);
    if let Some(loss) = earliest_loss {
        if let Some(later) = rec.stored_powins.range(loss.round + 1..).flat_map(|(_, v)| v).next() {
            return Verdict::Negative {
                reason: NegativeReason::LostEarlier,
                evidence: Some(Evidence::LostEarlier {
                    loss: loss.clone(),
                    later: later.clone(),
                }),
            };
        }
    }

    let linked = powin.prev_of(s).expect("subject is a player");
    if r == 1 {
        return if linked == PoWin::entry_sentinel(rec.tournament_no, s) {
            Verdict::Positive
        } else {
            Verdict::Negative {
                reason: NegativeReason::BrokenLink,
                evidence: None,
            }
        };
    }
    if rec.win(r - 1, &linked).is_some() {
        Verdict::Positive
    } else {
        Verdict::Defer
    }
}

/// Re-check of a deferred certificate once its deadline has passed.
pub fn keeper_recheck(rec: &KeeperRecord, powin: &PoWin) -> Verdict {
    let s = rec.subject;
    let linked = powin.prev_of(s).unwrap_or(Digest::ZERO);
    if rec.win(powin.round - 1, &linked).is_some() {
        Verdict::Positive
    } else {
        Verdict::Negative {
            reason: NegativeReason::MissingPrior,
            evidence: None,
        }
    }
}

/// A declared foul against one match of one player.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoulNotice {
    pub subject: NodeId,
    pub tournament_no: u64,
    pub match_id: Digest,
    pub negative_votes: u32,
    pub total_keepers: u32,
    /// Keepers that voted against the match, with their vote tags.
    pub voters: Vec<(NodeId, Digest)>,
    pub evidence: Option<Evidence>,
}

pub fn vote_tag(keeper: NodeId, subject: NodeId, tournament_no: u64, match_id: &Digest) -> Digest {
    Digest::builder()
        .tag("vote")
        .u64(keeper.0 as u64)
        .u64(subject.0 as u64)
        .u64(tournament_no)
        .digest(match_id)
        .finish()
}

/// Strictly more than two thirds of the keepers voted against the match.
pub fn exceeds_two_thirds(negatives: u32, total: u32) -> bool {
    total > 0 && 3 * negatives as u64 > 2 * total as u64
}

pub fn tally_fouls(
    subject: NodeId,
    tournament_no: u64,
    match_id: Digest,
    voters: Vec<(NodeId, Digest)>,
    total_keepers: u32,
    evidence: Option<Evidence>,
) -> Option<FoulNotice> {
    let negative_votes = voters.len() as u32;
    if exceeds_two_thirds(negative_votes, total_keepers) || evidence.is_some() {
        Some(FoulNotice {
            subject,
            tournament_no,
            match_id,
            negative_votes,
            total_keepers,
            voters,
            evidence,
        })
    } else {
        None
    }
}

impl FoulNotice {
    /// Whether an honest node applies this notice: valid evidence always
    /// counts; otherwise the votes must come from distinct designated keepers
    /// and exceed two thirds.
    pub fn is_actionable(&self, keepers: &[NodeId]) -> bool {
        if let Some(e) = &self.evidence {
            if e.verify(self.subject, self.tournament_no) {
                return true;
            }
        }
        let mut counted: Vec<NodeId> = Vec::new();
        for (k, tag) in &self.voters {
            if keepers.contains(k)
                && !counted.contains(k)
                && *tag == vote_tag(*k, self.subject, self.tournament_no, &self.match_id)
            {
                counted.push(*k);
            }
        }
        exceeds_two_thirds(counted.len() as u32, keepers.len() as u32)
    }
}
