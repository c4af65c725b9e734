use thiserror::Error;

use crate::device::Address;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("address {address} out of range (chip has {limit} addresses)")]
    OutOfBounds { address: u64, limit: u64 },

    #[error("cell {address} is past its endurance limit and can no longer store data reliably")]
    WornOut { address: Address },

    #[error("encoding wore out {} cell(s), first at {}", .addresses.len(), .addresses.first().copied().unwrap_or_default())]
    EncodeWearOut { addresses: Vec<Address> },

    #[error("format error: {0}")]
    Format(String),

    #[error("profile fit failed: {0}")]
    Fit(String),

    #[error("fresh and stressed replica means never separate below {max_stress} pairs (replica size {replica_size})")]
    NotSeparable { replica_size: usize, max_stress: u64 },

    #[error("all values identical; no two-cluster structure")]
    SingleCluster,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
