use serde::{Deserialize, Serialize};

use crate::barrier::BarrierCertificate;
use crate::digest::{Digest, NodeId};
use crate::error::ColosseumError;
use crate::net::Ring;

use super::powin::{match_id, PoWin};

/// What a player sends its validator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameProposal {
    pub match_id: Digest,
    pub tournament_no: u64,
    pub round: u32,
    pub player: NodeId,
    pub opponent: NodeId,
    /// The player's previous-round PoWin id, or the round-entry sentinel.
    pub prev_powin: Digest,
    pub cert_hash: Digest,
    pub proposal: Digest,
}

pub fn proposal_digest(match_id: &Digest, node: NodeId, cert_hash: &Digest) -> Digest {
    Digest::builder()
        .tag("proposal")
        .digest(match_id)
        .u64(node.0 as u64)
        .digest(cert_hash)
        .finish()
}

/// Binds the proposal to the slot's barrier certificate, so it cannot be
/// computed before the slot starts.
pub fn make_game_proposal(
    match_id: &Digest,
    node: NodeId,
    cert: Option<&BarrierCertificate>,
) -> Result<Digest, ColosseumError> {
    let cert = cert.ok_or(ColosseumError::NotInSlot)?;
    Ok(proposal_digest(match_id, node, &cert.cert_hash))
}

/// The validator both players independently agree on.
pub fn validator_for(match_id: &Digest, ring: &Ring, players: (NodeId, NodeId)) -> NodeId {
    let key = Digest::builder().tag("validator").digest(match_id).finish();
    ring.lookup_skipping(&key, &[players.0, players.1]).unwrap_or(players.0)
}

fn check(p: &GameProposal, other: &GameProposal) -> Result<(), ColosseumError> {
    let bad = Err(ColosseumError::BadProposal(p.player));
    if p.opponent != other.player
        || p.player == p.opponent
        || p.tournament_no != other.tournament_no
        || p.round != other.round
        || p.round == 0
        || p.match_id != match_id(p.tournament_no, p.round, p.player, p.opponent)
        || p.match_id != other.match_id
        || p.proposal != proposal_digest(&p.match_id, p.player, &p.cert_hash)
    {
        return bad;
    }
    Ok(())
}

/// Larger proposal wins; equal proposals go to the smaller id.
pub fn pick_winner(a: (NodeId, &Digest), b: (NodeId, &Digest)) -> NodeId {
    match a.1.cmp(b.1) {
        std::cmp::Ordering::Greater => a.0,
        std::cmp::Ordering::Less => b.0,
        std::cmp::Ordering::Equal => a.0.min(b.0),
    }
}

pub fn adjudicate(validator: NodeId, a: &GameProposal, b: &GameProposal) -> Result<PoWin, ColosseumError> {
    check(a, b)?;
    check(b, a)?;
    if validator == a.player || validator == b.player {
        return Err(ColosseumError::BadProposal(validator));
    }
    let winner = pick_winner((a.player, &a.proposal), (b.player, &b.proposal));
    Ok(PoWin::seal(
        a.tournament_no,
        a.round,
        (a.player, a.prev_powin),
        (b.player, b.prev_powin),
        winner,
        validator,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::Oracle;
    use crate::time::SimTime;

    fn proposal(t: u64, round: u32, me: NodeId, them: NodeId, cert: &BarrierCertificate) -> GameProposal {
        let m = match_id(t, round, me, them);
        GameProposal {
            match_id: m,
            tournament_no: t,
            round,
            player: me,
            opponent: them,
            prev_powin: PoWin::entry_sentinel(t, me),
            cert_hash: cert.cert_hash,
            proposal: make_game_proposal(&m, me, Some(cert)).unwrap(),
        }
    }

    fn oracle() -> Oracle {
        Oracle::new(SimTime::ZERO, SimTime::from_secs_f64(20.0), 4)
    }

    #[test]
    fn proposals_are_deterministic_and_distinct() {
        let o = oracle();
        let c = o.bootstrap(NodeId(1), 1, 0);
        let m = match_id(1, 1, NodeId(1), NodeId(2));
        let p1 = make_game_proposal(&m, NodeId(1), Some(&c)).unwrap();
        assert_eq!(p1, make_game_proposal(&m, NodeId(1), Some(&c)).unwrap());
        assert_ne!(p1, make_game_proposal(&m, NodeId(2), Some(&c)).unwrap());
        assert_eq!(make_game_proposal(&m, NodeId(1), None), Err(ColosseumError::NotInSlot));
    }

    #[test]
    fn larger_proposal_wins() {
        let o = oracle();
        let (a, b) = (NodeId(4), NodeId(9));
        let pa = proposal(1, 1, a, b, &o.bootstrap(a, 1, 0));
        let pb = proposal(1, 1, b, a, &o.bootstrap(b, 1, 0));
        let w = adjudicate(NodeId(0), &pa, &pb).unwrap();
        let expect = if pa.proposal > pb.proposal { a } else { b };
        assert_eq!(w.winner, expect);
        assert!(w.is_well_formed());
        assert_eq!(adjudicate(NodeId(0), &pb, &pa).unwrap(), w);
    }

    #[test]
    fn digest_comparison_rule() {
        let (lo, hi) = (Digest::from_u128(0x0a), Digest::from_u128(0x0b));
        assert_eq!(pick_winner((NodeId(1), &lo), (NodeId(2), &hi)), NodeId(2));
        assert_eq!(pick_winner((NodeId(2), &hi), (NodeId(1), &lo)), NodeId(2));
        assert_eq!(pick_winner((NodeId(5), &lo), (NodeId(3), &lo)), NodeId(3));
    }

    #[test]
    fn malformed_proposal_voids_the_match() {
        let o = oracle();
        let (a, b) = (NodeId(1), NodeId(2));
        let pa = proposal(1, 1, a, b, &o.bootstrap(a, 1, 0));
        let mut pb = proposal(1, 1, b, a, &o.bootstrap(b, 1, 0));
        pb.proposal = Digest::of(b"made up");
        assert_eq!(adjudicate(NodeId(0), &pa, &pb), Err(ColosseumError::BadProposal(b)));
    }

    #[test]
    fn winner_side_is_fair() {
        let o = oracle();
        let mut first_wins = 0u32;
        let n = 10_000u32;
        for i in 0..n {
            let (a, b) = (NodeId(2 * i), NodeId(2 * i + 1));
            let pa = proposal(7, 1, a, b, &o.bootstrap(a, 7, 0));
            let pb = proposal(7, 1, b, a, &o.bootstrap(b, 7, 0));
            if adjudicate(NodeId(u32::MAX), &pa, &pb).unwrap().winner == a {
                first_wins += 1;
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first_wins as f64 - 5000.0).abs() <= 5.0 * sigma, "{first_wins}");
    }

    #[test]
    fn validator_choice() {
        let ring = Ring::new(32, 5);
        let m = match_id(3, 2, NodeId(4), NodeId(8));
        let v = validator_for(&m, &ring, (NodeId(4), NodeId(8)));
        assert_eq!(v, validator_for(&m, &ring, (NodeId(8), NodeId(4))));
        assert!(v != NodeId(4) && v != NodeId(8));

        // Players outside the ring are never skipped, so each node should
        // validate in proportion to the key-space arc it owns.
        let n = 10_000u32;
        let mut counts = vec![0f64; 32];
        for i in 0..n {
            let (a, b) = (NodeId(1000 + i), NodeId(50_000 + i));
            let m = match_id(i as u64, 1, a, b);
            counts[validator_for(&m, &ring, (a, b)).index()] += 1.0;
        }
        for node in ring.members() {
            let p = ring.arc_fraction(node);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[node.index()] - n as f64 * p).abs() <= 5.0 * sigma + 1.0);
        }
    }
}
