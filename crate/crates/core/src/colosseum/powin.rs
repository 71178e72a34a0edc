use serde::{Deserialize, Serialize};

use crate::digest::{Digest, NodeId};

/// Proof-of-Win: the validator's certificate for one match.
///
/// `auth_tag` binds every other field and doubles as the certificate's
/// identity; a round-r certificate links to both players' round-(r-1)
/// certificates through `prev_powin_hashes`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoWin {
    pub match_id: Digest,
    pub tournament_no: u64,
    pub round: u32,
    /// Ordered `(smaller id, larger id)`.
    pub players: (NodeId, NodeId),
    pub winner: NodeId,
    pub validator: NodeId,
    /// Aligned with `players`.
    pub prev_powin_hashes: (Digest, Digest),
    pub auth_tag: Digest,
}

pub fn match_id(tournament_no: u64, round: u32, a: NodeId, b: NodeId) -> Digest {
    let (lo, hi) = ordered(a, b);
    Digest::builder()
        .tag("match")
        .u64(tournament_no)
        .u64(round as u64)
        .u64(lo.0 as u64)
        .u64(hi.0 as u64)
        .finish()
}

pub(crate) fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl PoWin {
    /// Placeholder that a round-1 certificate links to in place of a
    /// previous-round certificate.
    pub fn entry_sentinel(tournament_no: u64, player: NodeId) -> Digest {
        Digest::builder()
            .tag("round-entry")
            .u64(tournament_no)
            .u64(player.0 as u64)
            .finish()
    }

    /// Builds a certificate and seals it. `prev` is given per player, in any order.
    pub fn seal(
        tournament_no: u64,
        round: u32,
        a: (NodeId, Digest),
        b: (NodeId, Digest),
        winner: NodeId,
        validator: NodeId,
    ) -> PoWin {
        let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        let mut p = PoWin {
            match_id: match_id(tournament_no, round, first.0, second.0),
            tournament_no,
            round,
            players: (first.0, second.0),
            winner,
            validator,
            prev_powin_hashes: (first.1, second.1),
            auth_tag: Digest::ZERO,
        };
        p.auth_tag = p.compute_tag();
        p
    }

    pub fn compute_tag(&self) -> Digest {
        Digest::builder()
            .tag("powin")
            .digest(&self.match_id)
            .u64(self.tournament_no)
            .u64(self.round as u64)
            .u64(self.players.0 .0 as u64)
            .u64(self.players.1 .0 as u64)
            .u64(self.winner.0 as u64)
            .u64(self.validator.0 as u64)
            .digest(&self.prev_powin_hashes.0)
            .digest(&self.prev_powin_hashes.1)
            .finish()
    }

    pub fn id(&self) -> Digest {
        self.auth_tag
    }

    /// Tag, match id and winner membership all check out.
    pub fn is_well_formed(&self) -> bool {
        self.round >= 1
            && self.players.0 < self.players.1
            && (self.winner == self.players.0 || self.winner == self.players.1)
            && self.validator != self.players.0
            && self.validator != self.players.1
            && self.match_id == match_id(self.tournament_no, self.round, self.players.0, self.players.1)
            && self.auth_tag == self.compute_tag()
    }

    pub fn involves(&self, node: NodeId) -> bool {
        self.players.0 == node || self.players.1 == node
    }

    pub fn opponent_of(&self, node: NodeId) -> NodeId {
        if self.players.0 == node {
            self.players.1
        } else {
            self.players.0
        }
    }

    pub fn prev_of(&self, node: NodeId) -> Option<Digest> {
        if self.players.0 == node {
            Some(self.prev_powin_hashes.0)
        } else if self.players.1 == node {
            Some(self.prev_powin_hashes.1)
        } else {
            None
        }
    }

    /// True when `self` is a valid round-(r+1) continuation of `prev` for `player`.
    pub fn links_to(&self, player: NodeId, prev: &PoWin) -> bool {
        prev.round + 1 == self.round
            && prev.tournament_no == self.tournament_no
            && prev.winner == player
            && self.prev_of(player) == Some(prev.id())
    }
}
