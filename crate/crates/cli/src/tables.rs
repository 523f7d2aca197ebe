use std::path::Path;

use anyhow::Context;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use zcnas::selector::PreferredSpace;
use zcnas::trainer::{EvalResult, StepLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub arch_id: String,
    pub params: u64,
    pub flops: u64,
    pub top1: f64,
}

impl From<&EvalResult> for EvalRow {
    fn from(r: &EvalResult) -> Self {
        Self { arch_id: r.arch_id.clone(), params: r.params, flops: r.flops, top1: r.top1 }
    }
}

impl EvalRow {
    pub fn to_result(&self) -> EvalResult {
        EvalResult {
            arch_id: self.arch_id.clone(),
            params: self.params,
            flops: self.flops,
            top1: self.top1,
            loss: 0.0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IsomerRow {
    pub embed_dim: usize,
    pub depth: usize,
    pub total_qkv_dim: usize,
    pub total_mlp_ratio: f64,
    pub total_heads: usize,
    pub count: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Serialize)]
struct PreferredRow<'a> {
    bucket_c: f64,
    rank: usize,
    arch_id: &'a str,
    params: u64,
    flops: u64,
    snip: f64,
    snip_norm: f64,
}

#[derive(Debug, Deserialize)]
pub struct ScoreRow {
    pub arch_id: String,
    pub score: f64,
}

pub fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

pub fn steps_csv(log: &[StepLog]) -> anyhow::Result<Vec<u8>> {
    to_csv(log)
}

/// One row per bucket slot, buckets in grid order.
pub fn preferred_csv(ps: &PreferredSpace) -> anyhow::Result<Vec<u8>> {
    to_csv(ps.buckets.iter().flat_map(|b| {
        b.members.iter().enumerate().map(|(rank, m)| PreferredRow {
            bucket_c: b.c,
            rank,
            arch_id: &m.id,
            params: m.params,
            flops: m.flops,
            snip: m.snip,
            snip_norm: m.snip_norm,
        })
    }))
}
