//! Closed-form resource accounting for ViT subnets.
//!
//! Parameters count every weight and bias of: patch embedding, positional
//! embedding, class token, per-block Q/K/V and output projections, the
//! two-layer MLP, two layer-norms per block, the final layer-norm and the
//! classifier head.
//!
//! FLOPs are reported as multiply-accumulate counts of the matmuls in patch
//! embedding, Q/K/V projections, attention scores and attention-weighted
//! values (full token length), output projection, MLP and classifier. This is
//! the convention under which DeiT-Ti is quoted at 1.2G; softmax, norms and
//! activations are ignored.

use serde::{Deserialize, Serialize};

use super::{ArchConfig, SearchSpaceSpec, SpaceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub params: u64,
    pub flops: u64,
}

/// Which resource a constraint grid is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Params,
    Flops,
}

impl Metric {
    pub fn of(&self, report: &ResourceReport) -> u64 {
        match self {
            Metric::Params => report.params,
            Metric::Flops => report.flops,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "params" => Ok(Metric::Params),
            "flops" => Ok(Metric::Flops),
            other => Err(format!("unknown metric `{other}` (expected params or flops)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Params => "params",
            Metric::Flops => "flops",
        })
    }
}

pub fn count_params(arch: &ArchConfig, spec: &SearchSpaceSpec) -> Result<u64, SpaceError> {
    arch.validate(spec)?;
    let e = arch.embed_dim as u64;
    let tokens = spec.tokens() as u64;
    let classes = spec.num_classes as u64;
    let patch_dim = spec.patch_dim() as u64;

    let mut total = patch_dim * e + e; // patch embedding
    total += tokens * e; // positional embedding
    total += e; // class token
    for block in &arch.blocks {
        let q = block.qkv_dim as u64;
        let hidden = block.hidden(arch.embed_dim) as u64;
        total += 3 * (e * q + q);
        total += q * e + e;
        total += e * hidden + hidden + hidden * e + e;
        total += 2 * 2 * e;
    }
    total += 2 * e; // final norm
    total += e * classes + classes;
    Ok(total)
}

pub fn count_flops(arch: &ArchConfig, spec: &SearchSpaceSpec) -> Result<u64, SpaceError> {
    arch.validate(spec)?;
    Ok(flops_with_tokens(arch, spec.tokens(), spec.patch_dim(), spec.num_classes))
}

/// FLOP tally for an explicit token count (patch tokens plus one class token).
pub fn flops_with_tokens(arch: &ArchConfig, tokens: usize, patch_dim: usize, classes: usize) -> u64 {
    let e = arch.embed_dim as u64;
    let t = tokens as u64;
    let patches = t.saturating_sub(1);
    let mut total = patches * patch_dim as u64 * e;
    for block in &arch.blocks {
        let q = block.qkv_dim as u64;
        let hidden = block.hidden(arch.embed_dim) as u64;
        let per_token = 3 * e * q + t * q + t * q + q * e + 2 * e * hidden;
        total += t * per_token;
    }
    total += e * classes as u64;
    total
}

pub fn resources(arch: &ArchConfig, spec: &SearchSpaceSpec) -> Result<ResourceReport, SpaceError> {
    Ok(ResourceReport { params: count_params(arch, spec)?, flops: count_flops(arch, spec)? })
}

/// Smallest and largest parameter counts over the whole space.
///
/// Parameters grow monotonically in every factor, so the extrema sit at the
/// all-minimum and all-maximum architectures.
pub fn params_extrema(spec: &SearchSpaceSpec) -> Result<(u64, u64), SpaceError> {
    Ok((count_params(&ArchConfig::minimal(spec), spec)?, count_params(&ArchConfig::maximal(spec), spec)?))
}

pub fn flops_extrema(spec: &SearchSpaceSpec) -> Result<(u64, u64), SpaceError> {
    Ok((count_flops(&ArchConfig::minimal(spec), spec)?, count_flops(&ArchConfig::maximal(spec), spec)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::BlockConfig;

    fn tiny_arch(embed: usize, depth: usize, qkv: usize, ratio: f64, heads: usize) -> ArchConfig {
        ArchConfig::homogeneous(embed, depth, BlockConfig { qkv_dim: qkv, mlp_ratio: ratio, heads })
    }

    // Frozen from an independent per-component spreadsheet tally.
    #[test]
    fn tiny_extreme_params() {
        let spec = SearchSpaceSpec::tiny();
        let min = count_params(&tiny_arch(192, 12, 192, 3.5, 3), &spec).unwrap();
        let max = count_params(&tiny_arch(240, 14, 256, 4.0, 4), &spec).unwrap();
        assert_eq!(min, 5_273_896);
        assert_eq!(max, 10_409_752);
        assert!((min as f64 - 5.27e6).abs() / 5.27e6 < 0.02);
        assert!((max as f64 - 1.04e7).abs() / 1.04e7 < 0.02);
    }

    #[test]
    fn deit_tiny_flops() {
        let spec = SearchSpaceSpec::tiny();
        let arch = tiny_arch(192, 12, 192, 4.0, 3);
        let flops = count_flops(&arch, &spec).unwrap() as f64;
        assert!((flops - 1.2e9).abs() / 1.2e9 <= 0.10, "{flops}");
    }

    #[test]
    fn hand_counted_toy_flops() {
        // embed 8, one block (qkv 8, ratio 2 -> hidden 16), 4 tokens = 3 patches + cls,
        // 12-dim patches, 5 classes.
        let arch = tiny_arch(8, 1, 8, 2.0, 1);
        let patch = 3 * 12 * 8;
        let qkv = 4 * 3 * 8 * 8;
        let scores = 4 * 4 * 8;
        let values = 4 * 4 * 8;
        let proj = 4 * 8 * 8;
        let mlp = 4 * (8 * 16 + 16 * 8);
        let head = 8 * 5;
        assert_eq!(
            flops_with_tokens(&arch, 4, 12, 5),
            (patch + qkv + scores + values + proj + mlp + head) as u64
        );
    }

    #[test]
    fn reorder_invariance() {
        let spec = SearchSpaceSpec::tiny();
        let mut a = ArchConfig::minimal(&spec);
        a.blocks[0] = BlockConfig { qkv_dim: 256, mlp_ratio: 4.0, heads: 4 };
        let mut b = a.clone();
        b.blocks.reverse();
        assert_eq!(resources(&a, &spec).unwrap(), resources(&b, &spec).unwrap());
    }

    #[test]
    fn invalid_arch_rejected() {
        let spec = SearchSpaceSpec::tiny();
        let arch = tiny_arch(100, 12, 192, 3.5, 3);
        assert!(count_params(&arch, &spec).is_err());
        assert!(count_flops(&arch, &spec).is_err());
    }
}
