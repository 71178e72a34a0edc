use std::sync::Arc;

use crate::colosseum::{Evidence, FoulNotice, GameProposal, PoWin, ProbeReply};
use crate::digest::{Digest, NodeId};
use crate::ledger::{Block, CBlock};
use crate::net::MsgKind;

#[derive(Clone, Debug)]
pub(crate) enum Msg {
    Probe {
        t: u64,
        round: u32,
        prev: Option<PoWin>,
        cert_hash: Digest,
    },
    ProbeReply {
        t: u64,
        round: u32,
        reply: ProbeReply,
    },
    Cancel {
        t: u64,
        round: u32,
    },
    Proposal(GameProposal),
    PoWin(Arc<PoWin>),
    Vote {
        subject: NodeId,
        t: u64,
        match_id: Digest,
        tag: Digest,
        evidence: Option<Arc<Evidence>>,
    },
    Foul(Arc<FoulNotice>),
    Query {
        subject: NodeId,
        t: u64,
        match_id: Digest,
    },
    QueryReply {
        match_id: Digest,
        powin: Option<Arc<PoWin>>,
    },
    Header {
        t: u64,
        bucket: u32,
        proposer: NodeId,
    },
    Offer {
        id: Digest,
    },
    Request {
        id: Digest,
    },
    Body {
        block: Option<Arc<Block>>,
        cblock: Option<Arc<CBlock>>,
    },
}

fn cblock_bytes(c: &CBlock) -> u64 {
    64 + 32 * c.included.len() as u64
}

impl Msg {
    pub fn kind(&self) -> MsgKind {
        match self {
            Msg::Probe { .. } => MsgKind::PairProbe,
            Msg::ProbeReply { .. } => MsgKind::PairReply,
            Msg::Cancel { .. } => MsgKind::PairCancel,
            Msg::Proposal(_) => MsgKind::GameProposal,
            Msg::PoWin(_) => MsgKind::PoWinMsg,
            Msg::Vote { .. } => MsgKind::KeeperVote,
            Msg::Foul(_) => MsgKind::FoulAlert,
            Msg::Query { .. } => MsgKind::ResultQuery,
            Msg::QueryReply { .. } => MsgKind::ResultReply,
            Msg::Header { .. } => MsgKind::HeaderAnnounce,
            Msg::Offer { .. } => MsgKind::BodyOffer,
            Msg::Request { .. } => MsgKind::BodyRequest,
            Msg::Body { .. } => MsgKind::BlockBody,
        }
    }

    pub fn byte_size(&self) -> u64 {
        let base = self.kind().fixed_size().unwrap_or(0);
        match self {
            Msg::Body { block, cblock } => {
                block.as_ref().map_or(0, |b| b.byte_size) + cblock.as_deref().map_or(0, cblock_bytes)
            }
            Msg::Vote { evidence: Some(_), .. } => base + 840,
            Msg::Foul(n) => base + 40 * n.voters.len() as u64,
            _ => base,
        }
    }

    /// Tournament the message belongs to, for the barrier's staleness rule.
    pub fn tournament(&self) -> Option<u64> {
        match self {
            Msg::Probe { t, .. } | Msg::ProbeReply { t, .. } | Msg::Cancel { t, .. } => Some(*t),
            Msg::Proposal(p) => Some(p.tournament_no),
            _ => None,
        }
    }
}
