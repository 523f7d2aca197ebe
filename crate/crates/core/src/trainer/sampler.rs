use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::{ArchConfig, BlockConfig, SearchSpaceSpec};
use crate::selector::PreferredSpace;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Uniform over the distinct preferred architectures.
    UniformPreferred,
    /// Uniform over `(embed, depth)` groups, then uniform within the group.
    BalancedPreferred,
    /// Uniform over the whole search space.
    RedundantUniform,
    /// Embed, depth and every per-block factor drawn independently.
    RedundantResample,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "uniform_preferred" => Ok(Self::UniformPreferred),
            "balanced_preferred" => Ok(Self::BalancedPreferred),
            "redundant_uniform" => Ok(Self::RedundantUniform),
            "redundant_resample" => Ok(Self::RedundantResample),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

/// Draws training architectures.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
    spec: SearchSpaceSpec,
    members: Vec<ArchConfig>,
    groups: Vec<Vec<usize>>,
    depth_weights: Option<WeightedIndex<f64>>,
}

impl Sampler {
    pub fn new(
        kind: SamplerKind,
        spec: &SearchSpaceSpec,
        preferred: Option<&PreferredSpace>,
    ) -> Result<Self, TrainError> {
        let members: Vec<ArchConfig> =
            preferred.map(|p| p.members().into_iter().map(|m| m.arch.clone()).collect()).unwrap_or_default();
        Self::from_members(kind, spec, members)
    }

    pub fn from_members(
        kind: SamplerKind,
        spec: &SearchSpaceSpec,
        members: Vec<ArchConfig>,
    ) -> Result<Self, TrainError> {
        let preferred = matches!(kind, SamplerKind::UniformPreferred | SamplerKind::BalancedPreferred);
        if preferred && members.is_empty() {
            return Err(TrainError::Config("the preferred space has no members".into()));
        }
        let mut by_group: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, m) in members.iter().enumerate() {
            by_group.entry((m.embed_dim, m.depth)).or_default().push(i);
        }
        // P(depth = d) proportional to combos^d makes the space draw uniform.
        let depth_weights = (kind == SamplerKind::RedundantUniform).then(|| {
            let combos = spec.per_block_combinations() as f64;
            let w: Vec<f64> = spec.depth_choices().iter().map(|&d| combos.powi(d as i32)).collect();
            WeightedIndex::new(w).expect("positive weights")
        });
        Ok(Self {
            kind,
            spec: spec.clone(),
            members,
            groups: by_group.into_values().collect(),
            depth_weights,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    /// Group memberships as indices into the member list.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn members(&self) -> &[ArchConfig] {
        &self.members
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ArchConfig {
        match self.kind {
            SamplerKind::UniformPreferred => self.members.choose(rng).expect("nonempty").clone(),
            SamplerKind::BalancedPreferred => {
                let g = self.groups.choose(rng).expect("nonempty");
                self.members[*g.choose(rng).expect("nonempty group")].clone()
            }
            SamplerKind::RedundantUniform => {
                let embed = *self.spec.embed_choices().choose(rng).expect("nonempty");
                let depths = self.spec.depth_choices();
                let depth = depths[self.depth_weights.as_ref().expect("built").sample(rng)];
                let choices = self.spec.block_choices();
                ArchConfig {
                    embed_dim: embed,
                    depth,
                    blocks: (0..depth).map(|_| *choices.choose(rng).expect("nonempty")).collect(),
                }
            }
            SamplerKind::RedundantResample => {
                let s = &self.spec;
                let embed = *s.embed_choices().choose(rng).expect("nonempty");
                let depth = *s.depth_choices().choose(rng).expect("nonempty");
                let (q, m, h) = (s.qkv_dim.int_values(), s.mlp_ratio.values(), s.heads.int_values());
                ArchConfig {
                    embed_dim: embed,
                    depth,
                    blocks: (0..depth)
                        .map(|_| BlockConfig {
                            qkv_dim: *q.choose(rng).expect("nonempty"),
                            mlp_ratio: *m.choose(rng).expect("nonempty"),
                            heads: *h.choose(rng).expect("nonempty"),
                        })
                        .collect(),
                }
            }
        }
    }
}
