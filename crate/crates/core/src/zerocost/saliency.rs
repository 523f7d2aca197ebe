use crate::archspace::{ArchConfig, BlockConfig, SearchSpaceSpec};
use crate::autodiff::{Real, Tape, Tensor};
use crate::supernet::{block_regions, forward, slice_subnet, ParamRole, Region, SubnetView, SupernetWeights};

use super::ZeroCostError;

/// Inclusive-exclusive 2-D prefix sums of one saliency tensor.
///
/// Built row-cumulatively so that every lookup is monotone in both extents,
/// even in floating point.
#[derive(Debug, Clone, PartialEq)]
struct Prefix {
    cols: usize,
    sums: Vec<f64>,
}

impl Prefix {
    fn build(values: &[f64], rows: usize, cols: usize) -> Self {
        let stride = cols + 1;
        let mut sums = vec![0.0; (rows + 1) * stride];
        let mut row_cum = vec![0.0; stride];
        for r in 0..rows {
            row_cum[0] = 0.0;
            for c in 0..cols {
                row_cum[c + 1] = row_cum[c] + values[r * cols + c];
            }
            for c in 0..=cols {
                sums[(r + 1) * stride + c] = sums[r * stride + c] + row_cum[c];
            }
        }
        Self { cols, sums }
    }

    fn leading(&self, rows: usize, cols: usize) -> f64 {
        self.sums[rows * (self.cols + 1) + cols]
    }
}

/// Which per-block factor a query concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Qkv,
    Mlp,
    Heads,
}

impl std::str::FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qkv" | "qkv_dim" => Ok(Factor::Qkv),
            "mlp" | "mlp_ratio" => Ok(Factor::Mlp),
            "heads" => Ok(Factor::Heads),
            other => Err(format!("unknown factor `{other}`")),
        }
    }
}

/// Per-parameter `|dL/dθ * θ|` of the maximal supernet at one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTable {
    spec: SearchSpaceSpec,
    seed: u64,
    batch: usize,
    names: Vec<String>,
    raw: Vec<Tensor<f64>>,
    prefix: Vec<Prefix>,
    layer_totals: Vec<f64>,
}

impl SaliencyTable {
    /// Builds a table from per-tensor saliencies laid out like the supernet.
    pub fn from_raw(
        spec: &SearchSpaceSpec,
        seed: u64,
        batch: usize,
        tensors: Vec<(String, Tensor<f64>)>,
    ) -> Result<Self, ZeroCostError> {
        let reference = SupernetWeights::<f64>::from_parts(
            spec,
            seed,
            tensors.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect(),
        )?;
        drop(reference);
        let mut names = Vec::with_capacity(tensors.len());
        let mut raw = Vec::with_capacity(tensors.len());
        let mut prefix = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            if let Some(v) = t.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(ZeroCostError::Contract(format!(
                    "saliency of {name} contains {v}; entries must be finite and nonnegative"
                )));
            }
            prefix.push(Prefix::build(t.data(), t.rows(), t.cols()));
            names.push(name);
            raw.push(t);
        }
        let mut table =
            Self { spec: spec.clone(), seed, batch, names, raw, prefix, layer_totals: Vec::new() };
        let max = ArchConfig::maximal(spec);
        let view = slice_subnet(spec, &max)?;
        table.layer_totals = (0..spec.max_depth()).map(|l| table.layer_sum(&view, l)).collect();
        Ok(table)
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.raw)
    }

    /// Supernet saliency of block `layer`, the normalizing denominator.
    pub fn layer_total(&self, layer: usize) -> f64 {
        self.layer_totals[layer]
    }

    pub fn total(&self) -> f64 {
        self.raw.iter().map(|t| t.data().iter().sum::<f64>()).sum()
    }

    fn region_sum(&self, r: &Region) -> f64 {
        self.prefix[r.param].leading(r.rows, r.cols)
    }

    fn layer_sum(&self, view: &SubnetView, layer: usize) -> f64 {
        let start = 4 + layer * 16;
        view.regions[start..start + 16].iter().map(|r| self.region_sum(r)).sum()
    }

    fn view(&self, arch: &ArchConfig) -> Result<SubnetView, ZeroCostError> {
        slice_subnet(&self.spec, arch).map_err(|e| ZeroCostError::Arch(e.to_string()))
    }

    /// Raw SNIP: saliency summed over every parameter `arch` inherits.
    pub fn snip_score(&self, arch: &ArchConfig) -> Result<f64, ZeroCostError> {
        let view = self.view(arch)?;
        Ok(view.regions.iter().map(|r| self.region_sum(r)).sum())
    }

    /// Layer-normalized SNIP: sum over blocks of the inherited fraction of
    /// that block's supernet saliency. Blocks with zero total contribute 0.
    pub fn snip_norm_score(&self, arch: &ArchConfig) -> Result<f64, ZeroCostError> {
        let view = self.view(arch)?;
        Ok((0..arch.depth).map(|l| ratio(self.layer_sum(&view, l), self.layer_totals[l])).sum())
    }

    /// Inherited saliency of block `layer` when it is configured as `block`
    /// inside an `embed`-wide subnet.
    pub fn block_saliency(&self, layer: usize, embed: usize, block: &BlockConfig) -> f64 {
        block_regions(layer, embed, block).iter().map(|r| self.region_sum(r)).sum()
    }

    /// Saliency of the first `units` head groups of block `layer`: their
    /// Q/K/V columns and the matching output-projection rows.
    pub fn head_group_saliency(&self, layer: usize, embed: usize, units: usize) -> f64 {
        let width = (units * self.spec.head_unit()).min(self.spec.max_qkv());
        let base = 4 + layer * 16;
        let mut total = 0.0;
        for slot in [2, 4, 6] {
            total += self.prefix[base + slot].leading(embed, width);
            total += self.prefix[base + slot + 1].leading(1, width);
        }
        total + self.prefix[base + 8].leading(width, embed)
    }

    /// Raw-SNIP increment per block from raising one factor of `base` by
    /// `steps` grid steps in that block alone. Heads carry no parameters and
    /// are measured by their head-group columns.
    pub fn layer_sensitivity(
        &self,
        base: &ArchConfig,
        factor: Factor,
        steps: usize,
    ) -> Result<Vec<f64>, ZeroCostError> {
        base.validate(&self.spec).map_err(|e| ZeroCostError::Arch(e.to_string()))?;
        let range = match factor {
            Factor::Qkv => &self.spec.qkv_dim,
            Factor::Mlp => &self.spec.mlp_ratio,
            Factor::Heads => &self.spec.heads,
        };
        let before = self.snip_score(base)?;
        base.blocks
            .iter()
            .enumerate()
            .map(|(l, b)| {
                let current = match factor {
                    Factor::Qkv => b.qkv_dim as f64,
                    Factor::Mlp => b.mlp_ratio,
                    Factor::Heads => b.heads as f64,
                };
                let idx = range.index_of(current).expect("validated");
                if idx + steps >= range.len() {
                    return Err(ZeroCostError::Contract(format!(
                        "block {l}: cannot raise {current} by {steps} step(s)"
                    )));
                }
                let raised = range.value(idx + steps);
                if factor == Factor::Heads {
                    let unit = |h: f64| h.round() as usize;
                    return Ok(self.head_group_saliency(l, base.embed_dim, unit(raised))
                        - self.head_group_saliency(l, base.embed_dim, unit(current)));
                }
                let mut arch = base.clone();
                match factor {
                    Factor::Qkv => arch.blocks[l].qkv_dim = raised.round() as usize,
                    _ => arch.blocks[l].mlp_ratio = raised,
                }
                Ok(self.snip_score(&arch)? - before)
            })
            .collect()
    }
}

pub(crate) fn ratio(part: f64, total: f64) -> f64 {
    if total > 0.0 {
        part / total
    } else {
        0.0
    }
}

/// One forward and one backward pass of the maximal supernet on a single
/// labelled mini-batch.
pub fn compute_saliency<T: Real>(
    weights: &SupernetWeights<T>,
    patches: &Tensor<T>,
    labels: &[usize],
) -> Result<SaliencyTable, ZeroCostError> {
    let spec = weights.spec();
    let view = slice_subnet(spec, &ArchConfig::maximal(spec))?;
    let mut tape = Tape::new();
    let fw = forward(weights, &view, &mut tape, patches, labels.len(), Some(labels), 0.0, true)?;
    tape.backward(fw.loss.expect("labels given"))?;
    let mut tensors = Vec::with_capacity(view.regions.len());
    for (region, leaf) in view.regions.iter().zip(&fw.leaves) {
        let p = &weights.params()[region.param];
        let theta = p.tensor.data();
        let sal: Vec<f64> = match tape.grad(*leaf) {
            Some(g) => g.iter().zip(theta).map(|(g, t)| (g.as_f64() * t.as_f64()).abs()).collect(),
            None => vec![0.0; theta.len()],
        };
        if sal.iter().any(|v| !v.is_finite()) {
            let at = match p.role {
                ParamRole::Block { layer, .. } => format!(" in block {layer}"),
                _ => String::new(),
            };
            return Err(ZeroCostError::NonFinite(format!("{}{at}", p.name)));
        }
        tensors.push((p.name.clone(), Tensor::new(p.tensor.shape().to_vec(), sal)?));
    }
    SaliencyTable::from_raw(spec, weights.seed(), labels.len(), tensors)
}
