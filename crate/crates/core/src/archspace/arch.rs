use std::fmt;

use serde::{Deserialize, Serialize};

use super::{hidden_dim, SearchSpaceSpec, SpaceError};

/// Per-block variable factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub qkv_dim: usize,
    pub mlp_ratio: f64,
    pub heads: usize,
}

impl BlockConfig {
    pub fn hidden(&self, embed: usize) -> usize {
        hidden_dim(embed, self.mlp_ratio)
    }

    /// Column ranges of each head inside the first `qkv_dim` projection columns.
    ///
    /// Widths differ by at most one when `qkv_dim` is not a multiple of `heads`;
    /// the leading heads take the extra column.
    pub fn head_ranges(&self) -> Vec<(usize, usize)> {
        let base = self.qkv_dim / self.heads;
        let extra = self.qkv_dim % self.heads;
        let mut start = 0;
        (0..self.heads)
            .map(|h| {
                let width = base + usize::from(h < extra);
                let r = (start, start + width);
                start += width;
                r
            })
            .collect()
    }
}

/// One concrete subnet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub blocks: Vec<BlockConfig>,
}

impl ArchConfig {
    pub fn homogeneous(embed_dim: usize, depth: usize, block: BlockConfig) -> Self {
        Self { embed_dim, depth, blocks: vec![block; depth] }
    }

    /// Every factor at its upper bound.
    pub fn maximal(spec: &SearchSpaceSpec) -> Self {
        Self::homogeneous(
            spec.max_embed(),
            spec.max_depth(),
            BlockConfig { qkv_dim: spec.max_qkv(), mlp_ratio: spec.max_mlp_ratio(), heads: spec.max_heads() },
        )
    }

    /// Every factor at its lower bound.
    pub fn minimal(spec: &SearchSpaceSpec) -> Self {
        Self::homogeneous(
            spec.embed_dim.lo().round() as usize,
            spec.depth.lo().round() as usize,
            BlockConfig {
                qkv_dim: spec.qkv_dim.lo().round() as usize,
                mlp_ratio: spec.mlp_ratio.lo(),
                heads: spec.heads.lo().round() as usize,
            },
        )
    }

    pub fn validate(&self, spec: &SearchSpaceSpec) -> Result<(), SpaceError> {
        let bad = |msg: String| Err(SpaceError::InvalidArch(msg));
        if !spec.embed_dim.contains(self.embed_dim as f64) {
            return bad(format!("embed_dim {} is outside the space", self.embed_dim));
        }
        if !spec.depth.contains(self.depth as f64) {
            return bad(format!("depth {} is outside the space", self.depth));
        }
        if self.blocks.len() != self.depth {
            return bad(format!("depth {} but {} block configs", self.depth, self.blocks.len()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !spec.qkv_dim.contains(b.qkv_dim as f64) {
                return bad(format!("block {i}: qkv_dim {} is outside the space", b.qkv_dim));
            }
            if !spec.mlp_ratio.contains(b.mlp_ratio) {
                return bad(format!("block {i}: mlp_ratio {} is outside the space", b.mlp_ratio));
            }
            if !spec.heads.contains(b.heads as f64) {
                return bad(format!("block {i}: heads {} is outside the space", b.heads));
            }
            if b.heads == 0 || b.heads > b.qkv_dim {
                return bad(format!("block {i}: {} heads do not fit in qkv_dim {}", b.heads, b.qkv_dim));
            }
        }
        Ok(())
    }

    /// Compact, stable identifier used in CSV reports.
    pub fn id(&self) -> String {
        let mut s = format!("e{}-d{}", self.embed_dim, self.depth);
        for b in &self.blocks {
            s.push_str(&format!(":q{}r{}h{}", b.qkv_dim, b.mlp_ratio, b.heads));
        }
        s
    }

    /// Inverse of [`ArchConfig::id`].
    pub fn parse_id(id: &str) -> Option<Self> {
        let mut parts = id.split(':');
        let head = parts.next()?;
        let (e, d) = head.strip_prefix('e')?.split_once("-d")?;
        let embed_dim = e.parse().ok()?;
        let depth = d.parse().ok()?;
        let mut blocks = Vec::new();
        for p in parts {
            let rest = p.strip_prefix('q')?;
            let (q, rest) = rest.split_once('r')?;
            let (r, h) = rest.split_once('h')?;
            blocks.push(BlockConfig {
                qkv_dim: q.parse().ok()?,
                mlp_ratio: r.parse().ok()?,
                heads: h.parse().ok()?,
            });
        }
        (blocks.len() == depth).then_some(Self { embed_dim, depth, blocks })
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}
