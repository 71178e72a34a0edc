mod event;
mod gossip;
mod link;
mod message;
mod ring;

pub use event::{Event, EventQueue};
pub use gossip::gossip_targets;
pub use link::{serialization_time, transfer_time, Egress, Latency, BULK_CHUNK_BYTES};
pub use message::MsgKind;
pub use ring::Ring;
