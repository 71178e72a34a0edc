use std::path::PathBuf;

use thiserror::Error;

use crate::digest::{BlockHash, CBlockHash};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown block {0}")]
    NotFound(BlockHash),
    #[error("unknown C-Block {0}")]
    UnknownCBlock(CBlockHash),
    #[error("store is corrupt: {0}")]
    CorruptStore(String),
    #[error("no usable block for tournament {0}")]
    EmptySlot(u64),
    #[error("block {0} is not on the chain ending at {1}")]
    NotInChain(BlockHash, CBlockHash),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BucketError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("transaction pool is empty")]
    NoTransactions,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ColosseumError {
    #[error("no barrier certificate for the current slot")]
    NotInSlot,
    #[error("proposal from {0} failed verification")]
    BadProposal(crate::digest::NodeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("alpha = {alpha} must satisfy 1 <= alpha < log2(n) for n = {n}")]
    Alpha { n: u32, alpha: u32 },
    #[error("keeper replication {k} must be below node count {n}")]
    Keepers { n: u32, k: u32 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
