//! Weight-entangled ViT supernet.
//!
//! Every parameter is stored once at its maximal size. A subnet is a list of
//! [`Region`]s, each the leading `rows x cols` block of one stored tensor, so
//! overlapping subnets read and write the same entries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::archspace::{ArchConfig, BlockConfig, SearchSpaceSpec, SpaceError};
use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum SupernetError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("slice: {0}")]
    Slice(String),
    #[error("input: {0}")]
    Input(String),
}

/// Per-block tensors in storage order.
pub const BLOCK_PARAMS: [&str; 16] = [
    "norm1.g", "norm1.b", "q.w", "q.b", "k.w", "k.b", "v.w", "v.b", "proj.w", "proj.b", "norm2.g", "norm2.b",
    "fc1.w", "fc1.b", "fc2.w", "fc2.b",
];

const PATCH_W: usize = 0;
const PATCH_B: usize = 1;
const CLS: usize = 2;
const POS: usize = 3;
const STEM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Norm1G,
    Norm1B,
    QW,
    QB,
    KW,
    KB,
    VW,
    VB,
    ProjW,
    ProjB,
    Norm2G,
    Norm2B,
    Fc1W,
    Fc1B,
    Fc2W,
    Fc2B,
}

const KINDS: [Kind; 16] = [
    Kind::Norm1G,
    Kind::Norm1B,
    Kind::QW,
    Kind::QB,
    Kind::KW,
    Kind::KB,
    Kind::VW,
    Kind::VB,
    Kind::ProjW,
    Kind::ProjB,
    Kind::Norm2G,
    Kind::Norm2B,
    Kind::Fc1W,
    Kind::Fc1B,
    Kind::Fc2W,
    Kind::Fc2B,
];

/// Where a stored tensor sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    PatchWeight,
    PatchBias,
    ClassToken,
    PosEmbed,
    Block { layer: usize, slot: usize },
    NormGain,
    NormBias,
    HeadWeight,
    HeadBias,
}

impl ParamRole {
    pub fn layer(&self) -> Option<usize> {
        match self {
            ParamRole::Block { layer, .. } => Some(*layer),
            _ => None,
        }
    }

    /// Dense weight matrices; these receive weight decay.
    pub fn is_matrix(&self) -> bool {
        match self {
            ParamRole::PatchWeight | ParamRole::HeadWeight => true,
            ParamRole::Block { slot, .. } => BLOCK_PARAMS[*slot].ends_with(".w"),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor<T>,
}

/// Leading block of one stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub param: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }
}

/// Maximal-size parameters shared by every subnet.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetWeights<T> {
    spec: SearchSpaceSpec,
    seed: u64,
    params: Vec<NamedTensor<T>>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

impl<T: Real> SupernetWeights<T> {
    /// Deterministic initialization: truncated normal (std 0.02) for weights,
    /// class and positional tokens; zeros for biases; unit norm gains.
    pub fn init(spec: &SearchSpaceSpec, seed: u64) -> Result<Self, SupernetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = layout(spec);
        let params = layout
            .into_iter()
            .map(|(name, role, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = match role {
                    ParamRole::NormGain => vec![T::one(); n],
                    ParamRole::Block { slot, .. } if BLOCK_PARAMS[slot].ends_with(".g") => {
                        vec![T::one(); n]
                    }
                    ParamRole::PatchWeight
                    | ParamRole::HeadWeight
                    | ParamRole::ClassToken
                    | ParamRole::PosEmbed => {
                        (0..n).map(|_| T::from_f64(trunc_normal(&mut rng, 0.02))).collect()
                    }
                    ParamRole::Block { slot, .. } if BLOCK_PARAMS[slot].ends_with(".w") => {
                        (0..n).map(|_| T::from_f64(trunc_normal(&mut rng, 0.02))).collect()
                    }
                    _ => vec![T::zero(); n],
                };
                NamedTensor { name, role, tensor: Tensor::new(shape, data).expect("layout shape") }
            })
            .collect();
        Ok(Self { spec: spec.clone(), seed, params })
    }

    /// Rebuilds weights from stored tensors, checking names and shapes.
    pub fn from_parts(
        spec: &SearchSpaceSpec,
        seed: u64,
        tensors: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, SupernetError> {
        spec.validate()?;
        let layout = layout(spec);
        if layout.len() != tensors.len() {
            return Err(SupernetError::Input(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        let params = layout
            .into_iter()
            .zip(tensors)
            .map(|((name, role, shape), (got_name, tensor))| {
                if name != got_name || shape != tensor.shape() {
                    return Err(SupernetError::Input(format!(
                        "expected {name} {shape:?}, got {got_name} {:?}",
                        tensor.shape()
                    )));
                }
                Ok(NamedTensor { name, role, tensor })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { spec: spec.clone(), seed, params })
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.params[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.params[index].tensor
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|p| p.tensor.len() as u64).sum()
    }

    pub fn cast<U: Real>(&self) -> SupernetWeights<U> {
        SupernetWeights {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| NamedTensor { name: p.name.clone(), role: p.role, tensor: p.tensor.cast() })
                .collect(),
        }
    }

    /// Copy of the leading block addressed by `region`.
    pub fn read_region(&self, region: &Region) -> Tensor<T> {
        self.params[region.param].tensor.leading_block(region.rows, region.cols)
    }

    /// Sets every classifier weight and bias to zero.
    pub fn zero_classifier(&mut self) {
        for p in &mut self.params {
            if matches!(p.role, ParamRole::HeadWeight | ParamRole::HeadBias) {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

/// Names, roles and maximal shapes in storage order.
fn layout(spec: &SearchSpaceSpec) -> Vec<(String, ParamRole, Vec<usize>)> {
    let (e, q, h) = (spec.max_embed(), spec.max_qkv(), spec.max_hidden());
    let mut out = vec![
        ("patch.w".to_string(), ParamRole::PatchWeight, vec![spec.patch_dim(), e]),
        ("patch.b".to_string(), ParamRole::PatchBias, vec![e]),
        ("cls".to_string(), ParamRole::ClassToken, vec![e]),
        ("pos".to_string(), ParamRole::PosEmbed, vec![spec.tokens(), e]),
    ];
    for layer in 0..spec.max_depth() {
        for (slot, kind) in KINDS.iter().enumerate() {
            let shape = match kind {
                Kind::QW | Kind::KW | Kind::VW => vec![e, q],
                Kind::QB | Kind::KB | Kind::VB => vec![q],
                Kind::ProjW => vec![q, e],
                Kind::Fc1W => vec![e, h],
                Kind::Fc1B => vec![h],
                Kind::Fc2W => vec![h, e],
                _ => vec![e],
            };
            out.push((
                format!("blocks.{layer}.{}", BLOCK_PARAMS[slot]),
                ParamRole::Block { layer, slot },
                shape,
            ));
        }
    }
    out.push(("norm.g".to_string(), ParamRole::NormGain, vec![e]));
    out.push(("norm.b".to_string(), ParamRole::NormBias, vec![e]));
    out.push(("head.w".to_string(), ParamRole::HeadWeight, vec![e, spec.num_classes]));
    out.push(("head.b".to_string(), ParamRole::HeadBias, vec![spec.num_classes]));
    out
}

fn block_param(layer: usize, kind: Kind) -> usize {
    STEM + layer * KINDS.len() + kind as usize
}

/// The slices of the supernet one architecture inherits.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetView {
    pub arch: ArchConfig,
    pub regions: Vec<Region>,
}

impl SubnetView {
    pub fn param_count(&self) -> u64 {
        self.regions.iter().map(|r| r.len() as u64).sum()
    }

    pub fn region_of(&self, param: usize) -> Option<&Region> {
        self.regions.iter().find(|r| r.param == param)
    }
}

/// Describes the leading-index slices `arch` inherits; nothing is copied.
pub fn slice_subnet(spec: &SearchSpaceSpec, arch: &ArchConfig) -> Result<SubnetView, SupernetError> {
    arch.validate(spec).map_err(|e| SupernetError::Slice(e.to_string()))?;
    let e = arch.embed_dim;
    let classes = spec.num_classes;
    let vec = |param, cols| Region { param, rows: 1, cols };
    let mat = |param, rows, cols| Region { param, rows, cols };
    let mut regions =
        vec![mat(PATCH_W, spec.patch_dim(), e), vec(PATCH_B, e), vec(CLS, e), mat(POS, spec.tokens(), e)];
    for (layer, b) in arch.blocks.iter().enumerate() {
        regions.extend(block_regions(layer, e, b));
    }
    let tail = STEM + spec.max_depth() * KINDS.len();
    regions.push(vec(tail, e));
    regions.push(vec(tail + 1, e));
    regions.push(mat(tail + 2, e, classes));
    regions.push(vec(tail + 3, classes));
    Ok(SubnetView { arch: arch.clone(), regions })
}

/// Slices of block `layer` configured as `block` in an `embed`-wide subnet.
pub fn block_regions(layer: usize, embed: usize, block: &BlockConfig) -> [Region; 16] {
    let (e, q, h) = (embed, block.qkv_dim, block.hidden(embed));
    KINDS.map(|kind| {
        let param = block_param(layer, kind);
        let (rows, cols) = match kind {
            Kind::QW | Kind::KW | Kind::VW => (e, q),
            Kind::QB | Kind::KB | Kind::VB => (1, q),
            Kind::ProjW => (q, e),
            Kind::Fc1W => (e, h),
            Kind::Fc1B => (1, h),
            Kind::Fc2W => (h, e),
            _ => (1, e),
        };
        Region { param, rows, cols }
    })
}

/// Splits `[batch, channels, res, res]` images into `[batch * patches, patch_dim]`
/// rows, each flattened channel-major then row then column.
pub fn patchify<T: Real>(
    images: &[f32],
    batch: usize,
    channels: usize,
    res: usize,
    patch: usize,
) -> Result<Tensor<T>, SupernetError> {
    if images.len() != batch * channels * res * res {
        return Err(SupernetError::Input(format!(
            "{} values for {batch} images of {channels}x{res}x{res}",
            images.len()
        )));
    }
    if patch == 0 || !res.is_multiple_of(patch) {
        return Err(SupernetError::Input(format!("patch {patch} does not tile {res}")));
    }
    let side = res / patch;
    let pd = channels * patch * patch;
    let mut out = Vec::with_capacity(batch * side * side * pd);
    for b in 0..batch {
        let img = &images[b * channels * res * res..][..channels * res * res];
        for py in 0..side {
            for px in 0..side {
                for c in 0..channels {
                    for y in 0..patch {
                        let row = &img[c * res * res + (py * patch + y) * res + px * patch..][..patch];
                        out.extend(row.iter().map(|&v| T::from_f64(v as f64)));
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![batch * side * side, pd], out)?)
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    pub loss: Option<Var>,
    /// One leaf per region of the view, in the same order.
    pub leaves: Vec<Var>,
}

/// Runs `view` on patchified input and, when `labels` are given, the mean
/// cross-entropy loss. Leaves require gradients iff `track` is set.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Real>(
    weights: &SupernetWeights<T>,
    view: &SubnetView,
    tape: &mut Tape<T>,
    patches: &Tensor<T>,
    batch: usize,
    labels: Option<&[usize]>,
    label_smoothing: f64,
    track: bool,
) -> Result<ForwardPass, SupernetError> {
    let leaves: Vec<Var> = view.regions.iter().map(|r| tape.leaf(weights.read_region(r), track)).collect();
    let (logits, loss) = forward_with_leaves(
        &weights.spec,
        &view.arch,
        tape,
        &leaves,
        patches,
        batch,
        labels,
        label_smoothing,
    )?;
    Ok(ForwardPass { logits, loss, leaves })
}

/// Forward pass over caller-provided leaves, one per region of
/// `slice_subnet(spec, arch)` in order.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_leaves<T: Real>(
    spec: &SearchSpaceSpec,
    arch: &ArchConfig,
    tape: &mut Tape<T>,
    leaves: &[Var],
    patches: &Tensor<T>,
    batch: usize,
    labels: Option<&[usize]>,
    label_smoothing: f64,
) -> Result<(Var, Option<Var>), SupernetError> {
    if patches.shape() != [batch * spec.patches(), spec.patch_dim()] {
        return Err(SupernetError::Input(format!(
            "patch tensor {:?} does not match batch {batch} under the space geometry",
            patches.shape()
        )));
    }
    if let Some(labels) = labels {
        if labels.len() != batch {
            return Err(SupernetError::Input(format!("{} labels for a batch of {batch}", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= spec.num_classes) {
            return Err(SupernetError::Input(format!("label {l} out of range")));
        }
    }
    let expected = 8 + arch.blocks.len() * KINDS.len();
    if leaves.len() != expected {
        return Err(SupernetError::Input(format!(
            "{} leaves for an architecture with {expected} regions",
            leaves.len()
        )));
    }
    let mut next = leaves.iter().copied();
    let mut take = || next.next().expect("leaf count checked");
    let (patch_w, patch_b, cls, pos) = (take(), take(), take(), take());

    let x = tape.constant(patches.clone());
    let emb = tape.matmul(x, patch_w)?;
    let emb = tape.add_bias(emb, patch_b)?;
    let mut h = tape.assemble_tokens(emb, cls, pos, batch)?;
    let tokens = spec.tokens();
    for block in &arch.blocks {
        let p: Vec<Var> = (0..KINDS.len()).map(|_| take()).collect();
        let n1 = tape.layer_norm(h, p[0], p[1])?;
        let q = tape.matmul(n1, p[2])?;
        let q = tape.add_bias(q, p[3])?;
        let k = tape.matmul(n1, p[4])?;
        let k = tape.add_bias(k, p[5])?;
        let v = tape.matmul(n1, p[6])?;
        let v = tape.add_bias(v, p[7])?;
        let a = tape.attention(q, k, v, batch, tokens, &block.head_ranges())?;
        let a = tape.matmul(a, p[8])?;
        let a = tape.add_bias(a, p[9])?;
        h = tape.add(h, a)?;
        let n2 = tape.layer_norm(h, p[10], p[11])?;
        let f = tape.matmul(n2, p[12])?;
        let f = tape.add_bias(f, p[13])?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, p[14])?;
        let f = tape.add_bias(f, p[15])?;
        h = tape.add(h, f)?;
    }
    let (norm_g, norm_b, head_w, head_b) = (take(), take(), take(), take());
    let cls_rows: Vec<usize> = (0..batch).map(|b| b * tokens).collect();
    let c = tape.gather_rows(h, &cls_rows)?;
    let c = tape.layer_norm(c, norm_g, norm_b)?;
    let logits = tape.matmul(c, head_w)?;
    let logits = tape.add_bias(logits, head_b)?;
    let loss = match labels {
        Some(labels) => Some(tape.cross_entropy(logits, labels, label_smoothing)?),
        None => None,
    };
    Ok((logits, loss))
}
