//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejection sampling could not place a femtocell under the distance
    /// constraints within the retry budget.
    #[error("topology infeasible: no constraint-satisfying placement found in {retries} attempts")]
    TopologyInfeasible { retries: u32 },

    /// Invalid configuration: bad parameter ranges, shape mismatches,
    /// unparseable scenario files.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A discrete action space grew past its guardrail.
    #[error("action space too large: {cardinality} joint actions exceeds the cap of {cap}")]
    ActionSpaceOverflow { cardinality: u128, cap: u128 },

    /// Exhaustive search found no allocation meeting the macrocell band.
    #[error(
        "oracle infeasible: no allocation keeps the macrocell capacity in band \
         ({evaluated} candidates evaluated)"
    )]
    OracleInfeasible { evaluated: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for configuration problems,
    /// 2 for infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TopologyInfeasible { .. } | Error::OracleInfeasible { .. } => 2,
            _ => 1,
        }
    }
}
