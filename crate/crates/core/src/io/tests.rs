use super::*;
use crate::archspace::FactorRange;
use crate::autodiff::Tensor;
use crate::selector::{default_grid, select_preferred};
use crate::supernet::SupernetWeights;
use crate::trainer::DatasetSpec;
use crate::zerocost::SaliencyTable;

fn spec() -> SearchSpaceSpec {
    SearchSpaceSpec {
        embed_dim: FactorRange::new(8.0, 16.0, 8.0).unwrap(),
        qkv_dim: FactorRange::new(8.0, 16.0, 8.0).unwrap(),
        mlp_ratio: FactorRange::new(1.0, 2.0, 1.0).unwrap(),
        heads: FactorRange::new(1.0, 2.0, 1.0).unwrap(),
        depth: FactorRange::new(1.0, 2.0, 1.0).unwrap(),
        patch_size: 2,
        image_resolution: 4,
        num_classes: 3,
        in_channels: 1,
    }
}

fn table(spec: &SearchSpaceSpec) -> SaliencyTable {
    let w = SupernetWeights::<f64>::init(spec, 7).unwrap();
    let parts = w
        .params()
        .iter()
        .map(|p| {
            let t = p.tensor.data().iter().map(|v| v.abs()).collect();
            (p.name.clone(), Tensor::new(p.tensor.shape().to_vec(), t).unwrap())
        })
        .collect();
    SaliencyTable::from_raw(spec, 7, 16, parts).unwrap()
}

#[test]
fn weights_round_trip_bytes() {
    let s = spec();
    let w = SupernetWeights::<f32>::init(&s, 3).unwrap();
    let bytes = Checkpoint::from_weights(&w, 42).to_bytes();
    let (back, step) = Checkpoint::from_bytes(&bytes).unwrap().into_weights::<f32>(&s).unwrap();
    assert_eq!(step, 42);
    assert_eq!(back.seed(), 3);
    for (a, b) in w.params().iter().zip(back.params()) {
        assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(Checkpoint::from_weights(&back, 42).to_bytes(), bytes);
    // precision is never reinterpreted
    assert!(Checkpoint::from_bytes(&bytes).unwrap().into_weights::<f64>(&s).is_err());
}

#[test]
fn header_layout_is_pinned() {
    let s = spec();
    let w = SupernetWeights::<f64>::init(&s, 1).unwrap();
    let bytes = Checkpoint::from_weights(&w, 0).to_bytes();
    assert_eq!(&bytes[..8], b"ZCNASCKP");
    assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
    assert_eq!(bytes[12], 1);
    assert_eq!(&bytes[16..48], &s.hash().0);
    assert_eq!(&bytes[48..56], &1u64.to_le_bytes());
    assert_eq!(&bytes[64..68], &(w.params().len() as u32).to_le_bytes());
    // first section: "patch.w", f64, [4, 16]
    assert_eq!(&bytes[68..70], &7u16.to_le_bytes());
    assert_eq!(&bytes[70..77], b"patch.w");
    assert_eq!(bytes[77], 8);
    assert_eq!(bytes[78], 2);
    let first = w.params()[0].tensor.data()[0];
    assert_eq!(&bytes[95..103], &first.to_le_bytes());
}

#[test]
fn corruption_and_mismatch_are_rejected() {
    let s = spec();
    let w = SupernetWeights::<f32>::init(&s, 3).unwrap();
    let bytes = Checkpoint::from_weights(&w, 0).to_bytes();
    let mut bad = bytes.clone();
    bad[200] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(IoError::Format(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    assert!(Checkpoint::from_bytes(b"").is_err());
    let mut v2 = bytes.clone();
    v2[8] = 2;
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(IoError::Version { found: 2, .. })));

    let mut other = s.clone();
    other.num_classes = 4;
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert!(matches!(ck.into_weights::<f32>(&other), Err(IoError::SpecMismatch { .. })));
    assert!(ck.into_saliency(&s).is_err());
}

#[test]
fn saliency_round_trip() {
    let s = spec();
    let t = table(&s);
    let bytes = Checkpoint::from_saliency(&t).to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap().into_saliency(&s).unwrap();
    assert_eq!(back.batch(), 16);
    assert_eq!(back.total().to_bits(), t.total().to_bits());
    assert_eq!(Checkpoint::from_saliency(&back).to_bytes(), bytes);
}

#[test]
fn preferred_space_json_round_trip() {
    let s = spec();
    let t = table(&s);
    let ps = select_preferred(
        &t,
        &default_grid(&s, crate::archspace::Metric::Params).unwrap(),
        2,
        Default::default(),
    )
    .unwrap();
    let text = preferred_to_json(&ps);
    let back = preferred_from_json(&text, &s).unwrap();
    assert_eq!(back, ps);
    assert_eq!(preferred_to_json(&back), text);
    let mut other = s.clone();
    other.num_classes = 5;
    assert!(matches!(preferred_from_json(&text, &other), Err(IoError::SpecMismatch { .. })));
    let bumped = text.replacen("\"version\": 1", "\"version\": 9", 1);
    assert!(matches!(preferred_from_json(&bumped, &s), Err(IoError::Version { found: 9, .. })));
}

const RUN: &str = r#"
version = 1
space = "toy"
seed = 3

[dataset]
kind = "synthetic"
classes = 10
train = 100
eval = 20
resolution = 32
margin = 1.0
seed = 0

[train]
steps = 10
batch_size = 8
lr_init = 1e-3
lr_final = 2e-5
"#;

#[test]
fn run_config_parses_with_defaults() {
    let cfg = RunConfig::from_toml_str(RUN, Path::new(".")).unwrap();
    assert_eq!(cfg.space_spec().unwrap(), SearchSpaceSpec::toy());
    assert!(matches!(cfg.dataset, DatasetSpec::Synthetic(ref p) if p.channels == 3));
    assert_eq!(cfg.select.n, 1);
    assert_eq!(cfg.train_config().seed, 3);
    assert_eq!(cfg.train.sampler, crate::trainer::SamplerKind::BalancedPreferred);
    assert_eq!(cfg.grid().unwrap(), default_grid(&SearchSpaceSpec::toy(), Default::default()).unwrap());
}

#[test]
fn run_config_errors_point_at_lines() {
    let typo = RUN.replace("batch_size = 8", "batch_sise = 8");
    let msg = RunConfig::from_toml_str(&typo, Path::new(".")).unwrap_err().to_string();
    assert!(msg.contains("line 17"), "{msg}");
    let partial = format!("{RUN}\n[select]\na = 1.0\n");
    assert!(matches!(RunConfig::from_toml_str(&partial, Path::new(".")), Err(IoError::Config(_))));
    let missing = RUN.replace("\"toy\"", "\"nowhere.toml\"");
    assert!(RunConfig::from_toml_str(&missing, Path::new(".")).is_err());
    let v2 = RUN.replace("version = 1", "version = 2");
    assert!(matches!(RunConfig::from_toml_str(&v2, Path::new(".")), Err(IoError::Version { .. })));
}

#[test]
fn write_file_replaces_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a/b/c.bin");
    write_file(&p, b"one").unwrap();
    write_file(&p, b"two").unwrap();
    assert_eq!(read_file(&p).unwrap(), b"two");
    assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
}
