use thiserror::Error;

use crate::geometry::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("address {addr:#x} does not fit in {addr_bits} bits")]
    AddressOutOfRange { addr: u64, addr_bits: u32 },

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("isolation domain id {0} exceeds the 4-bit range")]
    InvalidIdid(u32),

    #[error("access kind {0} cannot be serviced by a lookup")]
    UnsupportedKind(&'static str),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("statistics: {0}")]
    Statistics(String),
}
