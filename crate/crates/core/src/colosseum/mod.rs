mod adversary;
mod game;
mod keeper;
mod pairing;
mod powin;
mod timeout;

pub use adversary::{
    assign_behaviors, validator_delivery, AdversarySpec, Behavior, Delivery, KeeperMode, Role, Selector, ValidatorMode,
};
pub use game::{adjudicate, make_game_proposal, pick_winner, proposal_digest, validator_for, GameProposal};
pub use keeper::{
    exceeds_two_thirds, keeper_recheck, keeper_verify, keepers_for, tally_fouls, vote_tag, Evidence, FoulNotice,
    KeeperRecord, NegativeReason, Verdict,
};
pub use pairing::{probe_order, probe_response, ProbeReply, Status};
pub use powin::{match_id, PoWin};
pub use timeout::{resolve_repair, RepairOutcome};
