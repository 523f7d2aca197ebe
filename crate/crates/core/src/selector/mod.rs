//! Two-step zero-cost selection: one representative per isomer key, then
//! top-N per resource bucket.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{
    all_isomer_keys, resources, ArchConfig, BlockConfig, IsomerKey, Metric, SearchSpaceSpec, SpaceError,
};
use crate::zerocost::{ratio, SaliencyTable, ZeroCostError};

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    ZeroCost(#[from] ZeroCostError),
    #[error("no stored architecture fits a budget of {0}")]
    NoFit(f64),
}

/// Distributes `total` units over `n_layers` layers, each within `lo..=hi`.
///
/// Every layer starts at `lo`; each remaining unit goes to the layer whose
/// next unit has the largest `marginal(layer, current)`. Equal marginals go
/// to the lowest layer index.
pub fn greedy_allocate(
    marginal: impl Fn(usize, usize) -> f64,
    n_layers: usize,
    total: usize,
    lo: usize,
    hi: usize,
) -> Result<Vec<usize>, SelectorError> {
    if lo > hi || total < n_layers * lo || total > n_layers * hi {
        return Err(SelectorError::Contract(format!(
            "cannot place {total} units over {n_layers} layers within [{lo}, {hi}]"
        )));
    }
    let mut alloc = vec![lo; n_layers];
    for _ in 0..total - n_layers * lo {
        let mut best: Option<(usize, f64)> = None;
        for (l, &k) in alloc.iter().enumerate() {
            if k == hi {
                continue;
            }
            let m = marginal(l, k);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((l, m));
            }
        }
        alloc[best.expect("feasible").0] += 1;
    }
    Ok(alloc)
}

/// Highest normalized-SNIP member of an isomer group, built without search.
///
/// Q/K/V widths and MLP ratios are allocated greedily on their normalized
/// per-block saliency increments. Heads own no parameters, so they are
/// allocated on the saliency of their head-group columns.
pub fn build_isomer_representative(
    table: &SaliencyTable,
    key: &IsomerKey,
) -> Result<ArchConfig, SelectorError> {
    let spec = table.spec();
    let (tq, tm, th) = key.index_totals(spec)?;
    let (e, d) = (key.embed_dim, key.depth);
    let qkv = spec.qkv_dim.int_values();
    let mlp = spec.mlp_ratio.values();
    let heads = spec.heads.int_values();
    let lo_block = |q: usize, r: f64| BlockConfig { qkv_dim: q, mlp_ratio: r, heads: heads[0] };
    let norm = |l: usize, gain: f64| ratio(gain, table.layer_total(l));

    let q_alloc = greedy_allocate(
        |l, k| {
            let up = table.block_saliency(l, e, &lo_block(qkv[k + 1], mlp[0]));
            let now = table.block_saliency(l, e, &lo_block(qkv[k], mlp[0]));
            norm(l, up - now)
        },
        d,
        tq,
        0,
        qkv.len() - 1,
    )?;
    let m_alloc = greedy_allocate(
        |l, k| {
            let up = table.block_saliency(l, e, &lo_block(qkv[0], mlp[k + 1]));
            let now = table.block_saliency(l, e, &lo_block(qkv[0], mlp[k]));
            norm(l, up - now)
        },
        d,
        tm,
        0,
        mlp.len() - 1,
    )?;
    let h_alloc = greedy_allocate(
        |l, k| {
            let up = table.head_group_saliency(l, e, heads[k + 1]);
            let now = table.head_group_saliency(l, e, heads[k]);
            norm(l, up - now)
        },
        d,
        th,
        0,
        heads.len() - 1,
    )?;
    let arch = ArchConfig {
        embed_dim: e,
        depth: d,
        blocks: (0..d)
            .map(|l| BlockConfig {
                qkv_dim: qkv[q_alloc[l]],
                mlp_ratio: mlp[m_alloc[l]],
                heads: heads[h_alloc[l]],
            })
            .collect(),
    };
    arch.validate(spec)?;
    Ok(arch)
}

/// Resource buckets `a, a + eps, ..., b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGrid {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    buckets: Vec<f64>,
}

impl ConstraintGrid {
    /// `b` is appended when `b - a` is not a whole number of steps.
    pub fn new(a: f64, b: f64, eps: f64) -> Result<Self, SelectorError> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(SelectorError::Contract(format!("margin must be positive, got {eps}")));
        }
        if a > b || !a.is_finite() || !b.is_finite() {
            return Err(SelectorError::Contract(format!("grid bounds out of order: {a} > {b}")));
        }
        let mut buckets = Vec::new();
        let mut k = 0u64;
        loop {
            let c = a + k as f64 * eps;
            if c > b + eps * 1e-9 {
                break;
            }
            buckets.push(c.min(b));
            k += 1;
        }
        if *buckets.last().expect("a <= b") < b {
            buckets.push(b);
        }
        Ok(Self { a, b, eps, buckets })
    }

    pub fn buckets(&self) -> &[f64] {
        &self.buckets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub arch: ArchConfig,
    pub params: u64,
    pub flops: u64,
    pub snip: f64,
    pub snip_norm: f64,
}

impl Member {
    pub fn resource(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Params => self.params,
            Metric::Flops => self.flops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Strict upper bound on the metric for every member.
    pub c: f64,
    pub empty: bool,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub saliency_seed: u64,
    pub saliency_batch: usize,
}

/// The pre-selected architectures, bucketed by resource bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferredSpace {
    pub version: u32,
    pub metric: Metric,
    pub n: usize,
    pub buckets: Vec<Bucket>,
    pub provenance: Provenance,
}

pub const PREFERRED_SPACE_VERSION: u32 = 1;

impl PreferredSpace {
    /// Distinct members in first-appearance order.
    pub fn members(&self) -> Vec<&Member> {
        let mut seen = std::collections::HashSet::new();
        self.buckets.iter().flat_map(|b| &b.members).filter(|m| seen.insert(m.id.clone())).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(|b| b.members.is_empty())
    }

    /// Top member of the largest non-empty bucket whose bound is at most
    /// `budget`.
    pub fn specialize(&self, budget: f64) -> Result<&Member, SelectorError> {
        self.buckets
            .iter()
            .rfind(|b| b.c <= budget && !b.members.is_empty())
            .map(|b| &b.members[0])
            .ok_or(SelectorError::NoFit(budget))
    }

    /// Highest raw-SNIP stored member strictly under `budget`.
    pub fn specialize_fine(&self, budget: f64) -> Result<&Member, SelectorError> {
        let mut best: Option<&Member> = None;
        for m in self.members() {
            if (m.resource(self.metric) as f64) < budget && best.is_none_or(|b| m.snip > b.snip) {
                best = Some(m);
            }
        }
        best.ok_or(SelectorError::NoFit(budget))
    }
}

/// Scores one architecture for inclusion in a preferred space.
pub fn score_member(table: &SaliencyTable, arch: ArchConfig) -> Result<Member, SelectorError> {
    let r = resources(&arch, table.spec())?;
    Ok(Member {
        id: arch.id(),
        params: r.params,
        flops: r.flops,
        snip: table.snip_score(&arch)?,
        snip_norm: table.snip_norm_score(&arch)?,
        arch,
    })
}

/// Representatives of every isomer key, in key order.
pub fn representatives(table: &SaliencyTable) -> Result<Vec<Member>, SelectorError> {
    let keys = all_isomer_keys(table.spec())?;
    let build = |k: &IsomerKey| build_isomer_representative(table, k).and_then(|a| score_member(table, a));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        keys.par_iter().map(build).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        keys.iter().map(build).collect()
    }
}

/// Keeps the top `n` candidates by raw SNIP under each bucket bound.
pub fn bucketize(candidates: &[Member], grid: &ConstraintGrid, n: usize, metric: Metric) -> Vec<Bucket> {
    let mut ranked: Vec<&Member> = candidates.iter().collect();
    ranked.sort_by(|a, b| b.snip.total_cmp(&a.snip).then_with(|| a.id.cmp(&b.id)));
    grid.buckets()
        .iter()
        .map(|&c| {
            let members: Vec<Member> = ranked
                .iter()
                .filter(|m| (m.resource(metric) as f64) < c)
                .take(n)
                .map(|m| (*m).clone())
                .collect();
            Bucket { c, empty: members.is_empty(), members }
        })
        .collect()
}

pub fn select_preferred(
    table: &SaliencyTable,
    grid: &ConstraintGrid,
    n: usize,
    metric: Metric,
) -> Result<PreferredSpace, SelectorError> {
    if n == 0 {
        return Err(SelectorError::Contract("N must be at least 1".into()));
    }
    let reps = representatives(table)?;
    Ok(PreferredSpace {
        version: PREFERRED_SPACE_VERSION,
        metric,
        n,
        buckets: bucketize(&reps, grid, n, metric),
        provenance: provenance(table),
    })
}

pub fn provenance(table: &SaliencyTable) -> Provenance {
    Provenance {
        spec_hash: table.spec().hash().to_hex(),
        saliency_seed: table.seed(),
        saliency_batch: table.batch(),
    }
}

/// Default grid spanning the space's resource range in ten steps.
pub fn default_grid(spec: &SearchSpaceSpec, metric: Metric) -> Result<ConstraintGrid, SelectorError> {
    let (lo, hi) = match metric {
        Metric::Params => crate::archspace::params_extrema(spec)?,
        Metric::Flops => crate::archspace::flops_extrema(spec)?,
    };
    let eps = ((hi - lo) as f64 / 10.0).max(1.0);
    ConstraintGrid::new(lo as f64 + eps, hi as f64 + 1.0, eps)
}

#[cfg(test)]
mod tests;
