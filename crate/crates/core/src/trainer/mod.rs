//! One-shot supernet training, evaluation and Pareto analysis.

mod data;
mod optim;
mod sampler;

#[cfg(feature = "image-folder")]
pub use data::load_image_folder;
pub use data::{make_synthetic, Dataset, DatasetSpec, SyntheticParams};
pub use optim::{cosine_lr, AdamW};
pub use sampler::{Sampler, SamplerKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{resources, ArchConfig, Metric};
use crate::autodiff::{Real, Tape};
use crate::supernet::{forward, patchify, slice_subnet, SupernetError, SupernetWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("diverged at step {step} on {arch}: {reason}")]
    Diverged { step: usize, arch: String, reason: String },
    #[error(transparent)]
    Supernet(#[from] SupernetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
}

fn default_decay() -> f64 {
    0.05
}

fn default_smoothing() -> f64 {
    0.1
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn toy(seed: u64) -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr_init: 1e-3,
            lr_final: 2e-5,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            seed,
            sampler: SamplerKind::BalancedPreferred,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return Err(TrainError::Config("learning-rate endpoints must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || self.weight_decay < 0.0 {
            return Err(TrainError::Config("label_smoothing must be in [0, 1) and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub arch_id: String,
    pub loss: f64,
    pub lr: f64,
}

/// Independent streams so that every sampler sees the same batches.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let data = ChaCha8Rng::seed_from_u64(seed);
    let mut arch = ChaCha8Rng::seed_from_u64(seed);
    arch.set_stream(1);
    (data, arch)
}

/// Cycles through shuffled epochs of the training set.
struct Batches {
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: n }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn check_geometry<T: Real>(w: &SupernetWeights<T>, data: &Dataset) -> Result<(), TrainError> {
    let spec = w.spec();
    if data.resolution != spec.image_resolution
        || data.channels != spec.in_channels
        || data.classes != spec.num_classes
    {
        return Err(TrainError::Data(format!(
            "dataset is {}x{}x{} with {} classes; the space expects {}x{}x{} with {}",
            data.channels,
            data.resolution,
            data.resolution,
            data.classes,
            spec.in_channels,
            spec.image_resolution,
            spec.image_resolution,
            spec.num_classes
        )));
    }
    Ok(())
}

/// Trains the shared weights, one sampled subnet per step, updating only
/// the slices that subnet inherits. `on_step` runs after every update.
pub fn train_one_shot<T: Real>(
    weights: &mut SupernetWeights<T>,
    sampler: &Sampler,
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_step: impl FnMut(usize, &SupernetWeights<T>) -> Result<(), TrainError>,
) -> Result<Vec<StepLog>, TrainError> {
    cfg.validate()?;
    check_geometry(weights, data)?;
    if data.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    let spec = weights.spec().clone();
    let (mut data_rng, mut arch_rng) = streams(cfg.seed);
    let mut batches = Batches::new(data.len());
    let mut opt = AdamW::new(weights, cfg.weight_decay);
    let mut tape = Tape::<T>::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let arch = sampler.sample(&mut arch_rng);
        let idx = batches.next(cfg.batch_size, &mut data_rng);
        let (images, labels) = data.gather(&idx);
        let patches = patchify::<T>(&images, idx.len(), data.channels, data.resolution, spec.patch_size)?;
        let view = slice_subnet(&spec, &arch)?;
        tape.clear();
        let diverged = |reason: String| TrainError::Diverged { step, arch: arch.id(), reason };
        let fw =
            forward(weights, &view, &mut tape, &patches, idx.len(), Some(&labels), cfg.label_smoothing, true)
                .map_err(|e| diverged(e.to_string()))?;
        let loss_var = fw.loss.expect("labels given");
        let loss = tape.value(loss_var).item().as_f64();
        tape.backward(loss_var).map_err(|e| diverged(e.to_string()))?;
        let lr = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_final);
        let grads: Vec<&[T]> =
            fw.leaves.iter().map(|v| tape.grad(*v).expect("leaf reached by the loss")).collect();
        opt.step(weights, &view.regions, &grads, T::from_f64(lr));
        log.push(StepLog { step, arch_id: arch.id(), loss, lr });
        on_step(step, weights)?;
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub arch_id: String,
    pub params: u64,
    pub flops: u64,
    pub top1: f64,
    pub loss: f64,
}

impl EvalResult {
    pub fn resource(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Params => self.params,
            Metric::Flops => self.flops,
        }
    }
}

/// Index of the largest logit; the lowest class wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Logits of `arch` for the whole dataset, `[n, classes]` row-major.
pub fn predict<T: Real>(
    weights: &SupernetWeights<T>,
    arch: &ArchConfig,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    check_geometry(weights, data)?;
    let spec = weights.spec();
    let view = slice_subnet(spec, arch)?;
    let mut tape = Tape::<T>::new();
    let mut out = Vec::with_capacity(data.len() * spec.num_classes);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (images, _) = data.gather(chunk);
        let patches = patchify::<T>(&images, chunk.len(), data.channels, data.resolution, spec.patch_size)?;
        tape.clear();
        let fw = forward(weights, &view, &mut tape, &patches, chunk.len(), None, 0.0, false)?;
        out.extend(tape.value(fw.logits).data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Top-1 accuracy and mean cross-entropy of `arch` with inherited weights.
pub fn evaluate<T: Real>(
    weights: &SupernetWeights<T>,
    arch: &ArchConfig,
    data: &Dataset,
    batch_size: usize,
) -> Result<EvalResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("empty evaluation set".into()));
    }
    let logits = predict(weights, arch, data, batch_size)?;
    let c = data.classes;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (row, &label) in logits.chunks(c).zip(&data.labels) {
        correct += usize::from(argmax(row) == label);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    let r = resources(arch, weights.spec()).map_err(SupernetError::from)?;
    Ok(EvalResult {
        arch_id: arch.id(),
        params: r.params,
        flops: r.flops,
        top1: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
    })
}

/// Non-dominated results (lower resource, higher accuracy), sorted by
/// resource then accuracy.
pub fn pareto_frontier(results: &[EvalResult], metric: Metric) -> Vec<EvalResult> {
    let dominated = |a: &EvalResult| {
        results.iter().any(|b| {
            let (ra, rb) = (a.resource(metric), b.resource(metric));
            rb <= ra && b.top1 >= a.top1 && (rb < ra || b.top1 > a.top1)
        })
    };
    let mut front: Vec<EvalResult> = results.iter().filter(|a| !dominated(a)).cloned().collect();
    front.sort_by(|a, b| {
        a.resource(metric)
            .cmp(&b.resource(metric))
            .then(a.top1.total_cmp(&b.top1))
            .then_with(|| a.arch_id.cmp(&b.arch_id))
    });
    front
}
