use serde::{Deserialize, Serialize};

/// Wire categories. Every kind has a fixed size except block bodies and
/// transactions, whose size is their content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgKind {
    TxGossip,
    HeaderAnnounce,
    BodyOffer,
    BodyRequest,
    BlockBody,
    PoWinMsg,
    KeeperVote,
    FoulAlert,
    BarrierSync,
    PairProbe,
    PairReply,
    PairCancel,
    GameProposal,
    ResultQuery,
    ResultReply,
}

impl MsgKind {
    /// Size in bytes on the wire, or `None` for content-sized kinds.
    pub fn fixed_size(self) -> Option<u64> {
        Some(match self {
            MsgKind::TxGossip | MsgKind::BlockBody => return None,
            MsgKind::HeaderAnnounce => 640,
            MsgKind::BodyOffer | MsgKind::BodyRequest => 96,
            MsgKind::PoWinMsg => 420,
            MsgKind::KeeperVote => 160,
            MsgKind::FoulAlert => 1_200,
            MsgKind::BarrierSync => 160,
            // A probe carries the prober's previous-round PoWin and certificate.
            MsgKind::PairProbe => 560,
            MsgKind::PairReply | MsgKind::PairCancel => 96,
            MsgKind::GameProposal => 240,
            MsgKind::ResultQuery => 96,
            MsgKind::ResultReply => 460,
        })
    }

    /// Goes through the bulk lane of the sender's uplink.
    pub fn is_bulk(self) -> bool {
        matches!(self, MsgKind::BlockBody)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::TxGossip => "tx_gossip",
            MsgKind::HeaderAnnounce => "header_announce",
            MsgKind::BodyOffer => "body_offer",
            MsgKind::BodyRequest => "body_request",
            MsgKind::BlockBody => "block_body",
            MsgKind::PoWinMsg => "powin",
            MsgKind::KeeperVote => "keeper_vote",
            MsgKind::FoulAlert => "foul_alert",
            MsgKind::BarrierSync => "barrier_sync",
            MsgKind::PairProbe => "pair_probe",
            MsgKind::PairReply => "pair_reply",
            MsgKind::PairCancel => "pair_cancel",
            MsgKind::GameProposal => "game_proposal",
            MsgKind::ResultQuery => "result_query",
            MsgKind::ResultReply => "result_reply",
        }
    }
}
