//! Search-space model: factor grids, concrete architectures, analytic
//! resource accounting and isomer grouping.

mod arch;
mod isomer;
pub mod mbconv;
mod range;
mod resources;
mod space;

pub use arch::{ArchConfig, BlockConfig};
pub use isomer::{
    all_isomer_keys, arch_from_blocks, enumerate_isomer_groups, enumerate_isomers, enumerate_slice,
    enumerate_space, isomer_exemplar, isomer_key, space_cardinality, IsomerKey, DEFAULT_ENUMERATION_CAP,
};
pub use range::{expand_range, FactorRange};
pub use resources::{
    count_flops, count_params, flops_extrema, flops_with_tokens, params_extrema, resources, Metric,
    ResourceReport,
};
pub use space::{hidden_dim, SearchSpaceSpec, SpecHash};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("malformed range ({lo}, {hi}, {step}): {reason}")]
    MalformedRange { lo: f64, hi: f64, step: f64, reason: String },
    #[error("invalid search space: {0}")]
    InvalidSpec(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("config: {0}")]
    Parse(String),
    #[error("enumeration of {count} architectures exceeds the cap of {cap}")]
    Overflow { count: String, cap: u64 },
}
