//! Barrier, pairing, validation and keeper handlers.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::barrier::{resync, wait_certificate};
use crate::colosseum::{
    adjudicate, exceeds_two_thirds, keeper_recheck as recheck, keeper_verify, make_game_proposal, match_id,
    probe_order, probe_response, resolve_repair, validator_delivery, validator_for, vote_tag, Evidence, FoulNotice,
    GameProposal, KeeperMode, KeeperRecord, PoWin, ProbeReply, RepairOutcome, Status, Verdict,
};
use crate::digest::{Digest, NodeId};

use super::msg::Msg;
use super::{Ev, Match, Repair, Seek, Sim, PROBE_WAVE};

/// Co-keepers a keeper passes a fresh result on to.
const KEEPER_GOSSIP: usize = 3;

fn foul_key(subject: NodeId, t: u64, m: &Digest) -> Digest {
    Digest::builder()
        .tag("foul")
        .u64(subject.0 as u64)
        .u64(t)
        .digest(m)
        .finish()
}

impl Sim {
    pub(super) fn slot_start(&mut self, me: NodeId, t: u64) {
        let n = &mut self.nodes[me.index()];
        let Some(cert) = n.next_cert.take_if(|c| c.tournament_no == t) else {
            return;
        };
        let drift = self.tau.scale(self.cfg.drift_ppm as f64 / 1e6);
        let next = wait_certificate(&cert, self.tau, drift);
        let at = next.issued_at;
        n.next_cert = Some(next);
        n.cert = Some(cert);
        n.t = t;
        n.resync.reset();
        n.prev_win = None;
        n.final_win = None;
        n.matches.clear();
        n.repair = None;
        n.watch = None;
        n.shunned.clear();
        self.q.schedule(at, me, Ev::SlotStart { t: t + 1 });
        self.record(me, "slot", Digest::ZERO, t);
        self.begin_seek(me, 1);
    }

    /// Counts later-tournament traffic and jumps ahead once it is clear
    /// the node has fallen behind the oracle.
    pub(super) fn observe_ahead(&mut self, me: NodeId, msg_t: u64) {
        let n = &mut self.nodes[me.index()];
        if n.t == 0 || !n.resync.observe(msg_t, n.t) {
            return;
        }
        n.resync.reset();
        let now = self.q.now();
        let cert = resync(me, &self.oracle, now, n.offset_us);
        if cert.tournament_no <= n.t {
            return;
        }
        let t = cert.tournament_no;
        let cert = crate::barrier::BarrierCertificate { issued_at: now, ..cert };
        n.next_cert = Some(cert);
        self.record(me, "resync", Digest::ZERO, t);
        self.q.schedule(now, me, Ev::SlotStart { t });
    }

    fn begin_seek(&mut self, me: NodeId, round: u32) {
        let now = self.q.now();
        let order = probe_order(&self.ring, me, &mut self.rng);
        let n = &mut self.nodes[me.index()];
        if n.status.round() != Some(round) || n.repair.is_none() {
            n.round_started = now;
        }
        n.status = Status::Seeking { round };
        n.epoch += 1;
        n.seek = Seek {
            order,
            ..Seek::default()
        };
        let epoch = n.epoch;
        let at = now + self.tau.scale(self.cfg.pairing_timeout);
        self.q.schedule(at, me, Ev::PairDeadline { epoch });
        self.send_wave(me);
    }

    /// True while the node is still looking for an opponent this round.
    fn wants_match(&self, me: NodeId) -> bool {
        let n = &self.nodes[me.index()];
        match n.status {
            Status::Seeking { .. } => true,
            Status::AwaitingValidator { .. } => n.behavior.multi_play && n.matches.len() < 2,
            _ => false,
        }
    }

    pub(super) fn send_wave(&mut self, me: NodeId) {
        if !self.wants_match(me) {
            return;
        }
        let budget = self.cfg.probe_budget;
        let n = &mut self.nodes[me.index()];
        let round = n.status.round().expect("seeking");
        let (t, prev) = (n.t, n.prev_win.as_deref().cloned());
        let cert_hash = n.cert.as_ref().map_or(Digest::ZERO, |c| c.cert_hash);
        let mut out = Vec::new();
        while n.seek.outstanding < PROBE_WAVE && n.seek.next < n.seek.order.len() {
            if budget > 0 && n.seek.sent >= budget {
                break;
            }
            let to = n.seek.order[n.seek.next];
            n.seek.next += 1;
            if n.shunned.contains(&to) {
                continue;
            }
            out.push(to);
            n.seek.outstanding += 1;
            n.seek.sent += 1;
        }
        let idle = n.seek.outstanding == 0 && !n.seek.retry.is_empty();
        let epoch = n.epoch;
        for to in out {
            let msg = Msg::Probe {
                t,
                round,
                prev: prev.clone(),
                cert_hash,
            };
            self.send(me, to, msg);
        }
        if idle {
            // Everyone left asked us to retry; give them a moment to catch up.
            let at = self.q.now() + self.tau.scale(0.01);
            self.q.schedule(at, me, Ev::ProbeWave { epoch });
        }
    }

    pub(super) fn on_probe(
        &mut self,
        me: NodeId,
        from: NodeId,
        t: u64,
        round: u32,
        prev: Option<PoWin>,
        _cert_hash: Digest,
    ) {
        let linked = match (&prev, round) {
            (None, 1) => true,
            (Some(p), r) if r > 1 => p.is_well_formed() && p.winner == from && p.round == r - 1 && p.tournament_no == t,
            _ => false,
        };
        let wants = self.wants_match(me);
        let n = &self.nodes[me.index()];
        let status = match n.status {
            Status::AwaitingValidator { round } if wants => Status::Seeking { round },
            s => s,
        };
        let busy_with = n.matches.iter().any(|m| m.opponent == from) || n.shunned.contains(&from);
        let mut reply = probe_response(n.t, status, !busy_with, t, round);
        if reply == ProbeReply::Accept && !linked {
            reply = ProbeReply::Refuse;
        }
        if reply == ProbeReply::Accept {
            self.pair_with(me, from);
        }
        self.send(me, from, Msg::ProbeReply { t, round, reply });
    }

    pub(super) fn on_probe_reply(&mut self, me: NodeId, from: NodeId, t: u64, round: u32, reply: ProbeReply) {
        let wants = self.wants_match(me);
        let n = &mut self.nodes[me.index()];
        if n.t != t || n.status.round() != Some(round) {
            if reply == ProbeReply::Accept {
                self.send(me, from, Msg::Cancel { t, round });
            }
            return;
        }
        n.seek.outstanding = n.seek.outstanding.saturating_sub(1);
        match reply {
            ProbeReply::Accept => {
                if n.matches.iter().any(|m| m.opponent == from) {
                    // Both sides probed each other; the pairing already stands.
                } else if wants && !n.shunned.contains(&from) {
                    self.pair_with(me, from);
                } else {
                    n.shunned.push(from);
                    self.send(me, from, Msg::Cancel { t, round });
                }
            }
            ProbeReply::RetryLater => n.seek.retry.push(from),
            ProbeReply::Refuse | ProbeReply::Stale => {}
        }
        self.send_wave(me);
    }

    fn pair_with(&mut self, me: NodeId, opp: NodeId) {
        let n = &mut self.nodes[me.index()];
        let round = n.status.round().expect("pairing outside a round");
        let t = n.t;
        let id = match_id(t, round, me, opp);
        let prev_powin = n.prev_win.as_ref().map_or(PoWin::entry_sentinel(t, me), |p| p.id());
        let cert = n.cert.clone();
        n.matches.push(Match {
            id,
            opponent: opp,
            result: None,
        });
        n.status = Status::AwaitingValidator { round };
        let proposal = GameProposal {
            match_id: id,
            tournament_no: t,
            round,
            player: me,
            opponent: opp,
            prev_powin,
            cert_hash: cert.as_ref().map_or(Digest::ZERO, |c| c.cert_hash),
            proposal: make_game_proposal(&id, me, cert.as_ref()).unwrap_or(Digest::ZERO),
        };
        let v = validator_for(&id, &self.ring, (me, opp));
        self.record(me, "pair", id, t);
        self.send(me, v, Msg::Proposal(proposal));
        let at = self.q.now() + self.tau.scale(self.cfg.validator_timeout);
        self.q.schedule(at, me, Ev::ValidatorTimeout { t, match_id: id });
    }

    pub(super) fn on_cancel(&mut self, me: NodeId, from: NodeId, t: u64, round: u32) {
        let n = &mut self.nodes[me.index()];
        if n.t != t || n.status.round() != Some(round) {
            return;
        }
        // The match id is fixed per pair and round, so a cancelled pair
        // never re-forms; the validator may still hold one proposal.
        n.shunned.push(from);
        let before = n.matches.len();
        n.matches.retain(|m| !(m.opponent == from && m.result.is_none()));
        if n.matches.len() < before && n.matches.is_empty() {
            n.status = Status::Seeking { round };
            self.send_wave(me);
        }
    }

    pub(super) fn on_proposal(&mut self, me: NodeId, p: GameProposal) {
        let Some(other) = self.nodes[me.index()].inbox.remove(&p.match_id) else {
            self.nodes[me.index()].inbox.insert(p.match_id, p);
            return;
        };
        if other.player == p.player {
            self.nodes[me.index()].inbox.insert(p.match_id, p);
            return;
        }
        let Ok(powin) = adjudicate(me, &other, &p) else {
            return;
        };
        let powin = Arc::new(powin);
        let mode = self.nodes[me.index()].behavior.validator_mode(&mut self.rng);
        let late = self.tau.scale(self.cfg.validator_delay);
        let coin = self.rng.gen();
        let Some(d) = validator_delivery(mode, late, coin) else {
            return;
        };
        self.record(me, "powin", powin.id(), powin.tournament_no);
        let players = [powin.players.0, powin.players.1];
        for (i, &pl) in players.iter().enumerate() {
            if d.players[i] {
                self.send_later(me, pl, Msg::PoWin(powin.clone()), d.delay);
            }
        }
        if d.keepers {
            for &pl in &players {
                for k in self.some_keepers(pl, powin.tournament_no, me) {
                    self.send_later(me, k, Msg::PoWin(powin.clone()), d.delay);
                }
            }
        }
    }

    pub(super) fn on_powin(&mut self, me: NodeId, p: Arc<PoWin>) {
        if !p.is_well_formed() {
            return;
        }
        if p.involves(me) {
            self.player_result(me, p.clone());
        }
        for s in [p.players.0, p.players.1] {
            if s != me && self.keepers(s, p.tournament_no).contains(&me) {
                self.keeper_receive(me, s, p.clone());
            }
        }
    }

    /// A result for one of this node's own matches.
    pub(super) fn player_result(&mut self, me: NodeId, p: Arc<PoWin>) {
        if !p.is_well_formed() || !p.involves(me) {
            return;
        }
        let won = p.winner == me;
        let n = &mut self.nodes[me.index()];
        if n.reported.insert(p.id()) && (won || !n.behavior.multi_play) {
            for k in self.some_keepers(me, p.tournament_no, me) {
                self.send(me, k, Msg::PoWin(p.clone()));
            }
        }
        let n = &mut self.nodes[me.index()];
        if p.tournament_no != n.t {
            return;
        }
        if n.watch == Some(p.match_id) {
            n.watch = None;
            if !won && matches!(n.status, Status::Seeking { .. } | Status::AwaitingValidator { .. }) {
                self.eliminate(me);
            }
            return;
        }
        let Some(round) = n.status.round() else {
            return;
        };
        if p.round != round {
            return;
        }
        let mut known = false;
        if let Some(r) = n.repair.as_mut().filter(|r| r.first == p.match_id) {
            known = r.first_result.is_none();
            r.first_result = Some(p.clone());
        }
        if let Some(m) = n.matches.iter_mut().find(|m| m.id == p.match_id && m.result.is_none()) {
            known = true;
            m.result = Some(p.clone());
        }
        if !known {
            return;
        }
        if n.behavior.is_honest() {
            let spent = self.q.now().saturating_sub(n.round_started).as_secs_f64();
            self.round_time.0 += spent;
            self.round_time.1 += 1;
        }
        self.decide(me);
    }

    fn decide(&mut self, me: NodeId) {
        let n = &self.nodes[me.index()];
        let as_bool = |p: &Option<Arc<PoWin>>| p.as_ref().map(|p| p.winner == me);
        if n.behavior.multi_play {
            if let Some(w) = n
                .matches
                .iter()
                .filter_map(|m| m.result.clone())
                .find(|p| p.winner == me)
            {
                self.advance(me, w);
            } else if !n.matches.is_empty() && n.matches.iter().all(|m| m.result.is_some()) {
                self.eliminate(me);
            }
            return;
        }
        let current = n.matches.first().and_then(|m| m.result.clone());
        match &n.repair {
            None => match current {
                Some(p) if p.winner == me => self.advance(me, p),
                Some(_) => self.eliminate(me),
                None => {}
            },
            Some(r) => {
                let first = r.first_result.clone();
                if matches!(n.status, Status::Seeking { .. }) {
                    // Not re-paired yet: the late result settles the round.
                    match first {
                        Some(p) if p.winner == me => self.advance(me, p),
                        Some(_) => self.eliminate(me),
                        None => {}
                    }
                    return;
                }
                match resolve_repair(as_bool(&first), as_bool(&current)) {
                    RepairOutcome::Proceed => {
                        let unresolved = first.is_none().then_some(r.first);
                        let win = current.or(first).expect("proceed needs a win");
                        self.advance(me, win);
                        self.nodes[me.index()].watch = unresolved;
                    }
                    RepairOutcome::Stop => self.eliminate(me),
                    RepairOutcome::Wait => {}
                }
            }
        }
    }

    fn advance(&mut self, me: NodeId, win: Arc<PoWin>) {
        let alpha = self.cfg.alpha;
        let n = &mut self.nodes[me.index()];
        let round = n.status.round().unwrap_or(win.round);
        n.matches.clear();
        n.shunned.clear();
        n.repair = None;
        n.watch = None;
        if round >= alpha {
            n.status = Status::Qualified;
            n.final_win = Some(win.clone());
            let t = n.t;
            *self.qualifiers.entry(t).or_default() += 1;
            self.record(me, "qualified", win.id(), t);
            self.propose(me);
        } else {
            n.prev_win = Some(win);
            self.begin_seek(me, round + 1);
        }
    }

    fn eliminate(&mut self, me: NodeId) {
        let n = &mut self.nodes[me.index()];
        n.status = Status::Eliminated;
        n.matches.clear();
        n.repair = None;
        n.epoch += 1;
        let t = n.t;
        self.record(me, "eliminated", Digest::ZERO, t);
    }

    pub(super) fn pair_deadline(&mut self, me: NodeId, epoch: u64) {
        let n = &self.nodes[me.index()];
        if n.epoch == epoch && matches!(n.status, Status::Seeking { .. }) {
            self.eliminate(me);
        }
    }

    pub(super) fn validator_timeout(&mut self, me: NodeId, t: u64, id: Digest) {
        let n = &mut self.nodes[me.index()];
        let Some(round) = n.status.round() else {
            return;
        };
        if n.t != t {
            return;
        }
        let Some(pos) = n.matches.iter().position(|m| m.id == id && m.result.is_none()) else {
            return;
        };
        let m = n.matches.remove(pos);
        n.shunned.push(m.opponent);
        self.record(me, "timeout", id, t);
        let n = &mut self.nodes[me.index()];
        if n.behavior.multi_play {
            if n.matches.is_empty() {
                n.status = Status::Seeking { round };
                self.send_wave(me);
            }
            return;
        }
        if n.repair.is_some() {
            // The re-paired match stalled as well.
            self.eliminate(me);
            return;
        }
        n.repair = Some(Repair {
            first: id,
            first_result: None,
        });
        for (subject, k) in self
            .some_keepers(me, t, me)
            .into_iter()
            .map(|k| (me, k))
            .chain(
                self.some_keepers(m.opponent, t, me)
                    .into_iter()
                    .map(|k| (m.opponent, k)),
            )
            .collect::<Vec<_>>()
        {
            self.send(
                me,
                k,
                Msg::Query {
                    subject,
                    t,
                    match_id: id,
                },
            );
        }
        self.begin_seek(me, round);
    }

    pub(super) fn on_query(&mut self, me: NodeId, from: NodeId, subject: NodeId, t: u64, id: Digest) {
        let found = self.nodes[me.index()]
            .records
            .get(&(subject, t))
            .and_then(|r| r.result_of(&id))
            .cloned();
        if let Some(p) = found {
            self.send(
                me,
                from,
                Msg::QueryReply {
                    match_id: id,
                    powin: Some(Arc::new(p)),
                },
            );
        }
    }

    fn keeper_receive(&mut self, me: NodeId, s: NodeId, p: Arc<PoWin>) {
        let b = self.nodes[me.index()].behavior;
        if b.keeper_has(KeeperMode::NoStore) {
            return;
        }
        let t = p.tournament_no;
        let n = &mut self.nodes[me.index()];
        if n.t.abs_diff(t) > 1 {
            return;
        }
        let rec = n.records.entry((s, t)).or_insert_with(|| KeeperRecord::new(s, t));
        let verdict = keeper_verify(rec, &p);
        if matches!(verdict, Verdict::Duplicate | Verdict::Ignore) {
            return;
        }
        let ks = self.keepers(s, t);
        let co: Vec<NodeId> = ks.iter().copied().filter(|&k| k != me).collect();
        for k in co
            .choose_multiple(&mut self.rng, KEEPER_GOSSIP)
            .copied()
            .collect::<Vec<_>>()
        {
            self.send(me, k, Msg::PoWin(p.clone()));
        }
        if b.keeper_has(KeeperMode::FalseAlert) {
            let notice = FoulNotice {
                subject: s,
                tournament_no: t,
                match_id: p.match_id,
                negative_votes: ks.len() as u32,
                total_keepers: ks.len() as u32,
                voters: vec![(me, vote_tag(me, s, t, &p.match_id))],
                evidence: None,
            };
            self.gossip(me, Msg::Foul(Arc::new(notice)));
        }
        if b.keeper_has(KeeperMode::NoVerify) {
            return;
        }
        if b.keeper_has(KeeperMode::VoteAgainst) {
            self.cast_negative(me, s, t, p.match_id, None);
        }
        match verdict {
            Verdict::Negative { evidence, .. } => self.cast_negative(me, s, t, p.match_id, evidence),
            Verdict::Defer => {
                let at = self.q.now() + self.tau.scale(self.cfg.validator_timeout);
                self.q.schedule(
                    at,
                    me,
                    Ev::KeeperRecheck {
                        subject: s,
                        t,
                        powin: p.id(),
                    },
                );
            }
            _ => {}
        }
    }

    pub(super) fn keeper_recheck(&mut self, me: NodeId, s: NodeId, t: u64, id: Digest) {
        let Some(rec) = self.nodes[me.index()].records.get(&(s, t)) else {
            return;
        };
        let Some(p) = rec.stored_powins.values().flatten().find(|p| p.id() == id) else {
            return;
        };
        if let Verdict::Negative { .. } = recheck(rec, p) {
            let m = p.match_id;
            self.cast_negative(me, s, t, m, None);
        }
    }

    fn cast_negative(&mut self, me: NodeId, s: NodeId, t: u64, m: Digest, evidence: Option<Evidence>) {
        let n = &mut self.nodes[me.index()];
        let Some(rec) = n.records.get_mut(&(s, t)) else {
            return;
        };
        if rec.votes_cast.iter().any(|(id, _)| *id == m) {
            return;
        }
        rec.votes_cast.push((m, false));
        let tag = vote_tag(me, s, t, &m);
        self.record(me, "vote", m, t);
        let evidence = evidence.map(Arc::new);
        let ks = self.keepers(s, t);
        for &k in ks.iter().filter(|&&k| k != me) {
            self.send(
                me,
                k,
                Msg::Vote {
                    subject: s,
                    t,
                    match_id: m,
                    tag,
                    evidence: evidence.clone(),
                },
            );
        }
        self.add_vote(me, s, t, m, me, tag, evidence);
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn on_vote(
        &mut self,
        me: NodeId,
        from: NodeId,
        s: NodeId,
        t: u64,
        m: Digest,
        tag: Digest,
        evidence: Option<Arc<Evidence>>,
    ) {
        let ks = self.keepers(s, t);
        if !ks.contains(&me) || !ks.contains(&from) || tag != vote_tag(from, s, t, &m) {
            return;
        }
        if self.nodes[me.index()].behavior.keeper_has(KeeperMode::NoStore) {
            return;
        }
        self.add_vote(me, s, t, m, from, tag, evidence);
    }

    #[allow(clippy::too_many_arguments)]
    fn add_vote(
        &mut self,
        me: NodeId,
        s: NodeId,
        t: u64,
        m: Digest,
        voter: NodeId,
        tag: Digest,
        evidence: Option<Arc<Evidence>>,
    ) {
        let key = foul_key(s, t, &m);
        let total = self.keepers(s, t).len() as u32;
        let n = &mut self.nodes[me.index()];
        let tally = n.tallies.entry(key).or_default();
        if !tally.voters.iter().any(|(v, _)| *v == voter) {
            tally.voters.push((voter, tag));
        }
        let voters = tally.voters.clone();
        let evidence = evidence.filter(|e| e.verify(s, t));
        if evidence.is_none() && !exceeds_two_thirds(voters.len() as u32, total) {
            return;
        }
        let notice = FoulNotice {
            subject: s,
            tournament_no: t,
            match_id: m,
            negative_votes: voters.len() as u32,
            total_keepers: total,
            voters,
            evidence: evidence.map(|e| (*e).clone()),
        };
        self.on_foul(me, Arc::new(notice));
    }

    /// Applies and floods a foul notice the first time an actionable copy arrives.
    pub(super) fn on_foul(&mut self, me: NodeId, notice: Arc<FoulNotice>) {
        let key = foul_key(notice.subject, notice.tournament_no, &notice.match_id);
        if self.nodes[me.index()].fouls_seen.contains(&key) {
            return;
        }
        let ks = self.keepers(notice.subject, notice.tournament_no);
        if !notice.is_actionable(&ks) {
            return;
        }
        let n = &mut self.nodes[me.index()];
        n.fouls_seen.insert(key);
        n.store.record_foul(notice.tournament_no, notice.subject);
        if n.behavior.is_honest() && !self.fouls_counted.contains(&key) {
            self.fouls_counted.insert(key);
            self.fouls_declared += 1;
            self.record(me, "foul", notice.match_id, notice.tournament_no);
        }
        self.gossip(me, Msg::Foul(notice));
        self.after_foul(me);
    }
}
