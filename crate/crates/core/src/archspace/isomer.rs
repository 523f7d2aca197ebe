//! Isomer grouping and exact space counting.
//!
//! Architectures are grouped by `(embed, depth)` plus the per-factor totals
//! over their blocks. With two choices per factor this coincides with the set
//! of block reorderings; with three or more choices it is coarser (e.g. heads
//! 3+5 and 4+4 share a key).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::{ArchConfig, BlockConfig, SearchSpaceSpec, SpaceError};

/// Default ceiling on explicitly materialized architectures.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Totals are rounded to this many decimals so that summation order never
/// changes the key.
const RATIO_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IsomerKey {
    pub embed_dim: usize,
    pub depth: usize,
    pub total_heads: usize,
    pub total_mlp_ratio: f64,
    pub total_qkv_dim: usize,
}

impl IsomerKey {
    fn ratio_units(&self) -> i64 {
        (self.total_mlp_ratio * RATIO_SCALE).round() as i64
    }

    fn tuple(&self) -> (usize, usize, usize, i64, usize) {
        (self.embed_dim, self.depth, self.total_heads, self.ratio_units(), self.total_qkv_dim)
    }
}

impl IsomerKey {
    /// Per-factor totals in grid steps above the all-minimum assignment,
    /// as `(qkv, mlp, heads)`.
    pub fn index_totals(&self, spec: &SearchSpaceSpec) -> Result<(usize, usize, usize), SpaceError> {
        let d = self.depth as f64;
        let steps = |total: f64, r: &super::FactorRange, name: &str| {
            let s = (total - r.lo() * d) / r.step();
            let k = s.round();
            let max = (r.len() - 1) as f64 * d;
            if (s - k).abs() > 1e-6 || k < 0.0 || k > max {
                return Err(SpaceError::InvalidArch(format!(
                    "{name} total {total} is not reachable with depth {}",
                    self.depth
                )));
            }
            Ok(k as usize)
        };
        Ok((
            steps(self.total_qkv_dim as f64, &spec.qkv_dim, "qkv_dim")?,
            steps(self.total_mlp_ratio, &spec.mlp_ratio, "mlp_ratio")?,
            steps(self.total_heads as f64, &spec.heads, "heads")?,
        ))
    }
}

impl PartialEq for IsomerKey {
    fn eq(&self, other: &Self) -> bool {
        self.tuple() == other.tuple()
    }
}

impl Eq for IsomerKey {}

impl Hash for IsomerKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tuple().hash(state);
    }
}

impl PartialOrd for IsomerKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IsomerKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.tuple().cmp(&other.tuple())
    }
}

fn round_ratio(total: f64) -> f64 {
    (total * RATIO_SCALE).round() / RATIO_SCALE
}

pub fn isomer_key(arch: &ArchConfig) -> IsomerKey {
    IsomerKey {
        embed_dim: arch.embed_dim,
        depth: arch.depth,
        total_heads: arch.blocks.iter().map(|b| b.heads).sum(),
        total_mlp_ratio: round_ratio(arch.blocks.iter().map(|b| b.mlp_ratio).sum()),
        total_qkv_dim: arch.blocks.iter().map(|b| b.qkv_dim).sum(),
    }
}

/// Totals of one `(embed, depth)` slice, in grid-index units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct IndexTotals {
    qkv: usize,
    mlp: usize,
    heads: usize,
}

fn key_from_index_totals(spec: &SearchSpaceSpec, embed: usize, depth: usize, t: IndexTotals) -> IsomerKey {
    let d = depth as f64;
    IsomerKey {
        embed_dim: embed,
        depth,
        total_heads: (spec.heads.lo() * d + spec.heads.step() * t.heads as f64).round() as usize,
        total_mlp_ratio: round_ratio(spec.mlp_ratio.lo() * d + spec.mlp_ratio.step() * t.mlp as f64),
        total_qkv_dim: (spec.qkv_dim.lo() * d + spec.qkv_dim.step() * t.qkv as f64).round() as usize,
    }
}

fn check_slice(spec: &SearchSpaceSpec, embed: usize, depth: usize) -> Result<(), SpaceError> {
    if !spec.embed_dim.contains(embed as f64) {
        return Err(SpaceError::InvalidArch(format!("embed_dim {embed} is outside the space")));
    }
    if !spec.depth.contains(depth as f64) {
        return Err(SpaceError::InvalidArch(format!("depth {depth} is outside the space")));
    }
    Ok(())
}

/// Partitions every per-block assignment of an `(embed, depth)` slice by isomer key.
///
/// Counting is a dynamic program over blocks, so no architecture is materialized
/// and cardinalities are exact at any size. Groups are returned in key order.
pub fn enumerate_isomer_groups(
    spec: &SearchSpaceSpec,
    embed: usize,
    depth: usize,
) -> Result<Vec<(IsomerKey, BigUint)>, SpaceError> {
    check_slice(spec, embed, depth)?;
    let (nq, nm, nh) = (spec.qkv_dim.len(), spec.mlp_ratio.len(), spec.heads.len());
    let mut counts: BTreeMap<IndexTotals, BigUint> = BTreeMap::new();
    counts.insert(IndexTotals { qkv: 0, mlp: 0, heads: 0 }, BigUint::one());
    for _ in 0..depth {
        let mut next: BTreeMap<IndexTotals, BigUint> = BTreeMap::new();
        for (t, c) in &counts {
            for q in 0..nq {
                for m in 0..nm {
                    for h in 0..nh {
                        let key = IndexTotals { qkv: t.qkv + q, mlp: t.mlp + m, heads: t.heads + h };
                        *next.entry(key).or_insert_with(BigUint::zero) += c;
                    }
                }
            }
        }
        counts = next;
    }
    let mut groups: Vec<(IsomerKey, BigUint)> =
        counts.into_iter().map(|(t, c)| (key_from_index_totals(spec, embed, depth, t), c)).collect();
    groups.sort_by_key(|g| g.0);
    Ok(groups)
}

/// Every isomer key of the space, slice by slice.
pub fn all_isomer_keys(spec: &SearchSpaceSpec) -> Result<Vec<IsomerKey>, SpaceError> {
    let mut keys = Vec::new();
    for embed in spec.embed_choices() {
        for depth in spec.depth_choices() {
            keys.extend(enumerate_isomer_groups(spec, embed, depth)?.into_iter().map(|(k, _)| k));
        }
    }
    Ok(keys)
}

/// Exact size of the space: sum over embed and depth choices of `combos^depth`.
pub fn space_cardinality(spec: &SearchSpaceSpec) -> BigUint {
    let combos = BigUint::from(spec.per_block_combinations());
    let per_embed: BigUint = spec.depth_choices().into_iter().map(|d| combos.pow(d as u32)).sum();
    per_embed * BigUint::from(spec.embed_choices().len())
}

/// Materializes every architecture of one slice, refusing above `cap`.
pub fn enumerate_slice(
    spec: &SearchSpaceSpec,
    embed: usize,
    depth: usize,
    cap: u64,
) -> Result<Vec<ArchConfig>, SpaceError> {
    check_slice(spec, embed, depth)?;
    let choices = spec.block_choices();
    let total = BigUint::from(choices.len()).pow(depth as u32);
    match total.to_u64() {
        Some(n) if n <= cap => {}
        _ => return Err(SpaceError::Overflow { count: total.to_string(), cap }),
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; depth];
    loop {
        out.push(ArchConfig { embed_dim: embed, depth, blocks: idx.iter().map(|&i| choices[i]).collect() });
        // odometer increment, last block fastest
        let mut pos = depth;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < choices.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Materializes the whole space, refusing above `cap`.
pub fn enumerate_space(spec: &SearchSpaceSpec, cap: u64) -> Result<Vec<ArchConfig>, SpaceError> {
    let total = space_cardinality(spec);
    match total.to_u64() {
        Some(n) if n <= cap => {}
        _ => return Err(SpaceError::Overflow { count: total.to_string(), cap }),
    }
    let mut out = Vec::new();
    for embed in spec.embed_choices() {
        for depth in spec.depth_choices() {
            out.extend(enumerate_slice(spec, embed, depth, cap)?);
        }
    }
    Ok(out)
}

/// Materializes the members of one isomer group, refusing above `cap`.
pub fn enumerate_isomers(
    spec: &SearchSpaceSpec,
    key: &IsomerKey,
    cap: u64,
) -> Result<Vec<ArchConfig>, SpaceError> {
    Ok(enumerate_slice(spec, key.embed_dim, key.depth, cap)?
        .into_iter()
        .filter(|a| isomer_key(a) == *key)
        .collect())
}

/// One member of the group `key`, filling the lowest blocks first.
pub fn isomer_exemplar(spec: &SearchSpaceSpec, key: &IsomerKey) -> Result<ArchConfig, SpaceError> {
    check_slice(spec, key.embed_dim, key.depth)?;
    let (mut q, mut m, mut h) = key.index_totals(spec)?;
    let take = |left: &mut usize, n: usize| {
        let k = (*left).min(n - 1);
        *left -= k;
        k
    };
    let blocks = (0..key.depth)
        .map(|_| BlockConfig {
            qkv_dim: spec.qkv_dim.value(take(&mut q, spec.qkv_dim.len())).round() as usize,
            mlp_ratio: spec.mlp_ratio.value(take(&mut m, spec.mlp_ratio.len())),
            heads: spec.heads.value(take(&mut h, spec.heads.len())).round() as usize,
        })
        .collect();
    Ok(arch_from_blocks(key.embed_dim, blocks))
}

/// Builds a homogeneous-embed architecture from explicit per-block choices.
pub fn arch_from_blocks(embed: usize, blocks: Vec<BlockConfig>) -> ArchConfig {
    ArchConfig { embed_dim: embed, depth: blocks.len(), blocks }
}
