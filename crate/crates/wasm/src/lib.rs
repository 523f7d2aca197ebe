//! Browser bindings: resource accounting, isomer counting and rank correlation.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use zcnas::archspace::{
    enumerate_isomer_groups, isomer_key, resources, space_cardinality, ArchConfig, SearchSpaceSpec,
};
use zcnas::zerocost::kendall_tau;

fn space(text: &str) -> Result<SearchSpaceSpec, JsError> {
    let t = text.trim();
    if let Some(spec) = SearchSpaceSpec::preset(t) {
        return Ok(spec);
    }
    SearchSpaceSpec::from_toml_str(t).map_err(|e| JsError::new(&e.to_string()))
}

fn json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct Resources {
    id: String,
    params: u64,
    flops: u64,
    total_qkv_dim: usize,
    total_mlp_ratio: f64,
    total_heads: usize,
}

/// Parameters, multiply-accumulates and isomer totals of one architecture.
///
/// `space` is a preset name (`tiny`, `small`, `base`, `toy`) or space TOML.
#[wasm_bindgen]
pub fn arch_resources(space_text: &str, arch_id: &str) -> Result<String, JsError> {
    let spec = space(space_text)?;
    let arch = ArchConfig::parse_id(arch_id.trim())
        .ok_or_else(|| JsError::new(&format!("malformed id `{arch_id}`")))?;
    arch.validate(&spec).map_err(|e| JsError::new(&e.to_string()))?;
    let r = resources(&arch, &spec).map_err(|e| JsError::new(&e.to_string()))?;
    let key = isomer_key(&arch);
    json(&Resources {
        id: arch.id(),
        params: r.params,
        flops: r.flops,
        total_qkv_dim: key.total_qkv_dim,
        total_mlp_ratio: key.total_mlp_ratio,
        total_heads: key.total_heads,
    })
}

#[derive(Serialize)]
struct Group {
    total_qkv_dim: usize,
    total_mlp_ratio: f64,
    total_heads: usize,
    count: String,
}

#[derive(Serialize)]
struct Groups {
    space_size: String,
    groups: Vec<Group>,
}

/// Isomer groups of the `(embed, depth)` slice with exact member counts.
#[wasm_bindgen]
pub fn isomer_groups(space_text: &str, embed: usize, depth: usize) -> Result<String, JsError> {
    let spec = space(space_text)?;
    let groups = enumerate_isomer_groups(&spec, embed, depth).map_err(|e| JsError::new(&e.to_string()))?;
    json(&Groups {
        space_size: space_cardinality(&spec).to_string(),
        groups: groups
            .into_iter()
            .map(|(k, c)| Group {
                total_qkv_dim: k.total_qkv_dim,
                total_mlp_ratio: k.total_mlp_ratio,
                total_heads: k.total_heads,
                count: c.to_string(),
            })
            .collect(),
    })
}

/// Kendall tau between two equally long score lists.
#[wasm_bindgen]
pub fn kendall(xs: &[f64], ys: &[f64]) -> Result<f64, JsError> {
    kendall_tau(xs, ys).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deit_tiny_in_the_tiny_space() {
        let s = arch_resources(
            "tiny",
            &ArchConfig::homogeneous(
                192,
                12,
                zcnas::archspace::BlockConfig { qkv_dim: 192, mlp_ratio: 4.0, heads: 3 },
            )
            .id(),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["total_heads"], 36);
        assert!(v["params"].as_u64().unwrap() > 5_000_000);
    }

    #[test]
    fn toml_spaces_and_group_counts() {
        let toml = "embed_dim = [8, 16, 8]\nqkv_dim = [8, 16, 8]\nmlp_ratio = [1.0, 2.0, 1.0]\nheads = [1, 2, 1]\n\
                    depth = [1, 2, 1]\npatch_size = 2\nimage_resolution = 4\nnum_classes = 10\nin_channels = 1\n";
        let v: serde_json::Value = serde_json::from_str(&isomer_groups(toml, 16, 2).unwrap()).unwrap();
        assert_eq!(v["space_size"], "144");
        let total: u64 = v["groups"]
            .as_array()
            .unwrap()
            .iter()
            .map(|g| g["count"].as_str().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 64);
    }

    #[test]
    fn kendall_of_reversed_ranks() {
        assert_eq!(kendall(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }
}
