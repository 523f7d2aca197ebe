//! Training-free proxies and ranking statistics.

mod saliency;
mod stats;

pub(crate) use saliency::ratio;
pub use saliency::{compute_saliency, Factor, SaliencyTable};
pub use stats::{kendall_tau, mbr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::supernet::SupernetError;

#[derive(Debug, Error)]
pub enum ZeroCostError {
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error("non-finite saliency in {0}")]
    NonFinite(String),
    #[error("architecture does not fit the table: {0}")]
    Arch(String),
    #[error("{0}")]
    Contract(String),
}

impl From<AutodiffError> for ZeroCostError {
    fn from(e: AutodiffError) -> Self {
        ZeroCostError::Supernet(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    Snip,
    SnipNorm,
}

#[cfg(test)]
mod tests;
