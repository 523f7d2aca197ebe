use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BlockConfig, FactorRange, SpaceError};

fn default_channels() -> usize {
    3
}

/// The architecture family: per-factor value grids plus the fixed input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceSpec {
    pub embed_dim: FactorRange,
    pub qkv_dim: FactorRange,
    pub mlp_ratio: FactorRange,
    pub heads: FactorRange,
    pub depth: FactorRange,
    pub patch_size: usize,
    pub image_resolution: usize,
    pub num_classes: usize,
    #[serde(default = "default_channels")]
    pub in_channels: usize,
}

/// SHA-256 of the canonical JSON form of a [`SearchSpaceSpec`].
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpecHash(pub [u8; 32]);

impl SpecHash {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Self(out))
    }
}

impl fmt::Debug for SpecHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpecHash({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for SpecHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl SearchSpaceSpec {
    /// Supernet-Tiny of the AutoFormer-style ViT space (224px, patch 16, 1000 classes).
    pub fn tiny() -> Self {
        Self::imagenet(
            (192.0, 240.0, 24.0),
            (192.0, 256.0, 64.0),
            (3.5, 4.0, 0.5),
            (3.0, 4.0, 1.0),
            (12.0, 14.0, 1.0),
        )
    }

    pub fn small() -> Self {
        Self::imagenet(
            (320.0, 448.0, 64.0),
            (320.0, 448.0, 64.0),
            (3.0, 4.0, 0.5),
            (5.0, 7.0, 1.0),
            (12.0, 14.0, 1.0),
        )
    }

    pub fn base() -> Self {
        Self::imagenet(
            (528.0, 624.0, 48.0),
            (512.0, 640.0, 64.0),
            (3.0, 4.0, 0.5),
            (8.0, 10.0, 1.0),
            (14.0, 16.0, 1.0),
        )
    }

    /// Desk-scale space: 32px inputs, patch 4, 10 classes.
    pub fn toy() -> Self {
        Self {
            embed_dim: range(32.0, 64.0, 16.0),
            qkv_dim: range(32.0, 64.0, 32.0),
            mlp_ratio: range(3.5, 4.0, 0.5),
            heads: range(2.0, 4.0, 2.0),
            depth: range(2.0, 4.0, 1.0),
            patch_size: 4,
            image_resolution: 32,
            num_classes: 10,
            in_channels: 3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            "base" => Some(Self::base()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    fn imagenet(
        embed: (f64, f64, f64),
        qkv: (f64, f64, f64),
        mlp: (f64, f64, f64),
        heads: (f64, f64, f64),
        depth: (f64, f64, f64),
    ) -> Self {
        Self {
            embed_dim: range(embed.0, embed.1, embed.2),
            qkv_dim: range(qkv.0, qkv.1, qkv.2),
            mlp_ratio: range(mlp.0, mlp.1, mlp.2),
            heads: range(heads.0, heads.1, heads.2),
            depth: range(depth.0, depth.1, depth.2),
            patch_size: 16,
            image_resolution: 224,
            num_classes: 1000,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let invalid = |msg: String| Err(SpaceError::InvalidSpec(msg));
        for (name, r) in [
            ("embed_dim", &self.embed_dim),
            ("qkv_dim", &self.qkv_dim),
            ("heads", &self.heads),
            ("depth", &self.depth),
        ] {
            if !r.is_integral() {
                return invalid(format!("{name} must range over integers"));
            }
            if r.lo() < 1.0 {
                return invalid(format!("{name} lower bound must be at least 1"));
            }
        }
        if self.mlp_ratio.lo() <= 0.0 {
            return invalid("mlp_ratio must be positive".into());
        }
        if self.patch_size == 0 || self.image_resolution == 0 {
            return invalid("patch_size and image_resolution must be positive".into());
        }
        if !self.image_resolution.is_multiple_of(self.patch_size) {
            return invalid(format!(
                "image_resolution {} is not divisible by patch_size {}",
                self.image_resolution, self.patch_size
            ));
        }
        if self.num_classes < 2 {
            return invalid("num_classes must be at least 2".into());
        }
        if self.in_channels == 0 {
            return invalid("in_channels must be positive".into());
        }
        if self.qkv_dim.lo() < self.heads.hi() {
            return invalid(format!(
                "smallest qkv_dim {} cannot host {} heads",
                self.qkv_dim.lo(),
                self.heads.hi()
            ));
        }
        Ok(())
    }

    /// Parses the triplet text format and validates it.
    pub fn from_toml_str(text: &str) -> Result<Self, SpaceError> {
        let spec: Self = toml::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpaceError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SpaceError::Parse(msg) => SpaceError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes to toml")
    }

    pub fn hash(&self) -> SpecHash {
        let canonical = serde_json::to_vec(self).expect("spec serializes to json");
        SpecHash(Sha256::digest(&canonical).into())
    }

    pub fn patches(&self) -> usize {
        let side = self.image_resolution / self.patch_size;
        side * side
    }

    /// Patch tokens plus the class token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }

    pub fn embed_choices(&self) -> Vec<usize> {
        self.embed_dim.int_values()
    }

    pub fn depth_choices(&self) -> Vec<usize> {
        self.depth.int_values()
    }

    pub fn max_embed(&self) -> usize {
        self.embed_dim.hi().round() as usize
    }

    pub fn max_depth(&self) -> usize {
        self.depth.hi().round() as usize
    }

    pub fn max_qkv(&self) -> usize {
        self.qkv_dim.hi().round() as usize
    }

    pub fn max_heads(&self) -> usize {
        self.heads.hi().round() as usize
    }

    pub fn max_mlp_ratio(&self) -> f64 {
        self.mlp_ratio.hi()
    }

    /// Widest MLP hidden layer any subnet can request.
    pub fn max_hidden(&self) -> usize {
        hidden_dim(self.max_embed(), self.max_mlp_ratio())
    }

    /// Column width of one attention-head unit in the maximal Q/K/V projections.
    pub fn head_unit(&self) -> usize {
        (self.max_qkv() / self.max_heads()).max(1)
    }

    /// Every per-block factor combination, qkv-major then mlp then heads.
    pub fn block_choices(&self) -> Vec<BlockConfig> {
        let mut out = Vec::new();
        for qkv in self.qkv_dim.int_values() {
            for ratio in self.mlp_ratio.values() {
                for heads in self.heads.int_values() {
                    out.push(BlockConfig { qkv_dim: qkv, mlp_ratio: ratio, heads });
                }
            }
        }
        out
    }

    pub fn per_block_combinations(&self) -> usize {
        self.qkv_dim.len() * self.mlp_ratio.len() * self.heads.len()
    }
}

/// MLP hidden width: `embed * ratio` rounded half-up.
pub fn hidden_dim(embed: usize, ratio: f64) -> usize {
    (embed as f64 * ratio + 0.5 + 1e-9).floor() as usize
}

fn range(lo: f64, hi: f64, step: f64) -> FactorRange {
    FactorRange::new(lo, hi, step).expect("preset range is well formed")
}
