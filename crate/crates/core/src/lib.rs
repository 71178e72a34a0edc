pub mod barrier;
pub mod bucketing;
pub mod colosseum;
pub mod config;
pub mod digest;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod net;
pub mod sim;
pub mod time;
