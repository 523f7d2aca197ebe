use super::*;
use crate::archspace::{ArchConfig, BlockConfig, SearchSpaceSpec};
use crate::autodiff::{Tape, Tensor};
use crate::supernet::{forward, slice_subnet, SupernetWeights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table_from(spec: &SearchSpaceSpec, fill: impl Fn(&str, usize, usize) -> f64) -> SaliencyTable {
    let w = SupernetWeights::<f64>::init(spec, 0).unwrap();
    let tensors = w
        .params()
        .iter()
        .map(|p| {
            let (rows, cols) = (p.tensor.rows(), p.tensor.cols());
            let data = (0..rows * cols).map(|i| fill(&p.name, i / cols, i % cols)).collect();
            (p.name.clone(), Tensor::new(p.tensor.shape().to_vec(), data).unwrap())
        })
        .collect();
    SaliencyTable::from_raw(spec, 0, 0, tensors).unwrap()
}

fn random_table(spec: &SearchSpaceSpec, seed: u64) -> SaliencyTable {
    let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
    table_from(spec, |_, _, _| rng.borrow_mut().random_range(0.0..1.0))
}

fn random_arch(spec: &SearchSpaceSpec, rng: &mut ChaCha8Rng) -> ArchConfig {
    use rand::seq::IndexedRandom;
    let embed = *spec.embed_choices().choose(rng).unwrap();
    let depth = *spec.depth_choices().choose(rng).unwrap();
    let choices = spec.block_choices();
    ArchConfig {
        embed_dim: embed,
        depth,
        blocks: (0..depth).map(|_| *choices.choose(rng).unwrap()).collect(),
    }
}

fn batch(spec: &SearchSpaceSpec, n: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = n * spec.patches();
    let data = (0..rows * spec.patch_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..spec.num_classes)).collect();
    (Tensor::new(vec![rows, spec.patch_dim()], data).unwrap(), labels)
}

/// Independent evaluation: explicit index loops over the raw tensors.
fn brute_layer_sum(t: &SaliencyTable, arch: &ArchConfig, layer: usize) -> f64 {
    let view = slice_subnet(t.spec(), arch).unwrap();
    let raw: Vec<&Tensor<f64>> = t.tensors().map(|(_, x)| x).collect();
    let mut s = 0.0;
    for r in &view.regions[4 + layer * 16..4 + (layer + 1) * 16] {
        let x = raw[r.param];
        for i in 0..r.rows {
            for j in 0..r.cols {
                s += x.data()[i * x.cols() + j];
            }
        }
    }
    s
}

#[test]
fn zero_parameters_have_zero_saliency() {
    let spec = SearchSpaceSpec::toy();
    let mut w = SupernetWeights::<f64>::init(&spec, 0).unwrap();
    for i in 0..w.params().len() {
        w.tensor_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (x, y) = batch(&spec, 4, 1);
    let t = compute_saliency(&w, &x, &y).unwrap();
    assert_eq!(t.total(), 0.0);
    // every layer total is zero, so every block contributes 0
    assert_eq!(t.snip_norm_score(&ArchConfig::maximal(&spec)).unwrap(), 0.0);
}

#[test]
fn classifier_bias_saliency_matches_hand_gradient() {
    let spec = SearchSpaceSpec::toy();
    let mut w = SupernetWeights::<f64>::init(&spec, 3).unwrap();
    let hb = w.index_of("head.b").unwrap();
    for (j, v) in w.tensor_mut(hb).data_mut().iter_mut().enumerate() {
        *v = 0.1 * (j as f64 + 1.0);
    }
    let (x, y) = batch(&spec, 5, 2);
    let t = compute_saliency(&w, &x, &y).unwrap();
    // dL/db_j = mean_i (softmax_ij - [y_i == j])
    let view = slice_subnet(&spec, &ArchConfig::maximal(&spec)).unwrap();
    let mut tape = Tape::new();
    let fw = forward(&w, &view, &mut tape, &x, 5, None, 0.0, false).unwrap();
    let logits = tape.value(fw.logits).data().to_vec();
    let c = spec.num_classes;
    let mut grad = vec![0.0; c];
    for (i, row) in logits.chunks(c).enumerate() {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for (j, g) in grad.iter_mut().enumerate() {
            *g += ((row[j] - m).exp() / z - f64::from(y[i] == j)) / 5.0;
        }
    }
    let (_, got) = t.tensors().find(|(n, _)| *n == "head.b").unwrap();
    for (j, g) in grad.iter().enumerate() {
        let want = (g * 0.1 * (j as f64 + 1.0)).abs();
        assert!((got.data()[j] - want).abs() < 1e-12, "{j}: {} vs {want}", got.data()[j]);
    }
}

#[test]
fn saliency_is_deterministic() {
    let spec = SearchSpaceSpec::toy();
    let w = SupernetWeights::<f64>::init(&spec, 4).unwrap();
    let (x, y) = batch(&spec, 3, 5);
    assert_eq!(compute_saliency(&w, &x, &y).unwrap(), compute_saliency(&w, &x, &y).unwrap());
}

#[test]
fn maximal_snip_is_table_total() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 1);
    let max = ArchConfig::maximal(&spec);
    let s = t.snip_score(&max).unwrap();
    assert!((s - t.total()).abs() <= 1e-12 * t.total());
    assert_eq!(t.snip_norm_score(&max).unwrap(), spec.max_depth() as f64);
    let min = ArchConfig::minimal(&spec);
    assert!(t.snip_score(&min).unwrap() <= s);
}

#[test]
fn unit_table_counts_parameters() {
    let spec = SearchSpaceSpec::toy();
    let t = table_from(&spec, |_, _, _| 1.0);
    let arch = ArchConfig {
        embed_dim: 48,
        depth: 2,
        blocks: vec![
            BlockConfig { qkv_dim: 32, mlp_ratio: 4.0, heads: 2 },
            BlockConfig { qkv_dim: 64, mlp_ratio: 3.5, heads: 4 },
        ],
    };
    let p = crate::archspace::count_params(&arch, &spec).unwrap();
    assert_eq!(t.snip_score(&arch).unwrap(), p as f64);
}

#[test]
fn half_of_each_layer_scores_half_depth() {
    let spec = SearchSpaceSpec::toy();
    // all mass in the Q weights, spread evenly over columns
    let t = table_from(&spec, |name, _, _| if name.ends_with(".q.w") { 1.0 } else { 0.0 });
    let mut arch = ArchConfig::maximal(&spec);
    for b in &mut arch.blocks {
        b.qkv_dim = 32;
    }
    assert_eq!(t.snip_norm_score(&arch).unwrap(), spec.max_depth() as f64 / 2.0);
}

#[test]
fn norm_score_matches_independent_evaluation() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let arch = random_arch(&spec, &mut rng);
        let max = ArchConfig::maximal(&spec);
        let want: f64 =
            (0..arch.depth).map(|l| brute_layer_sum(&t, &arch, l) / brute_layer_sum(&t, &max, l)).sum();
        let got = t.snip_norm_score(&arch).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert!((0.0..=arch.depth as f64).contains(&got));
    }
}

#[test]
fn zero_layer_total_contributes_nothing() {
    let spec = SearchSpaceSpec::toy();
    let t = table_from(&spec, |name, _, _| if name.starts_with("blocks.1.") { 0.0 } else { 1.0 });
    let max = ArchConfig::maximal(&spec);
    assert_eq!(t.layer_total(1), 0.0);
    assert_eq!(t.snip_norm_score(&max).unwrap(), spec.max_depth() as f64 - 1.0);
}

#[test]
fn sensitivity_profiles() {
    let spec = SearchSpaceSpec::toy();
    let base = ArchConfig::minimal(&spec);
    let base = ArchConfig::homogeneous(base.embed_dim, 3, base.blocks[0]);
    let zero = table_from(&spec, |_, _, _| 0.0);
    for f in [Factor::Mlp, Factor::Heads, Factor::Qkv] {
        assert!(zero.layer_sensitivity(&base, f, 1).unwrap().iter().all(|&v| v == 0.0));
    }
    let skewed = table_from(&spec, |name, _, _| if name.starts_with("blocks.0.") { 2.0 } else { 1.0 });
    let inc = skewed.layer_sensitivity(&base, Factor::Mlp, 1).unwrap();
    assert!(inc[0] > inc[1] && inc[0] > inc[2], "{inc:?}");
    let heads = skewed.layer_sensitivity(&base, Factor::Heads, 1).unwrap();
    assert!(heads[0] > heads[1] && heads[1] > 0.0, "{heads:?}");
    assert!(skewed.layer_sensitivity(&base, Factor::Mlp, 2).is_err());
}

#[test]
fn foreign_arch_is_rejected() {
    let t = random_table(&SearchSpaceSpec::toy(), 0);
    let mut arch = ArchConfig::maximal(t.spec());
    arch.embed_dim = 96;
    assert!(matches!(t.snip_score(&arch), Err(ZeroCostError::Arch(_))));
}

/// Shrinks `arch` factor by factor to a random sub-architecture.
fn random_sub(spec: &SearchSpaceSpec, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> ArchConfig {
    use rand::seq::IndexedRandom;
    let embeds: Vec<usize> = spec.embed_choices().into_iter().filter(|&e| e <= arch.embed_dim).collect();
    let depths: Vec<usize> = spec.depth_choices().into_iter().filter(|&d| d <= arch.depth).collect();
    let depth = *depths.choose(rng).unwrap();
    let blocks = arch.blocks[..depth]
        .iter()
        .map(|b| {
            let q: Vec<usize> = spec.qkv_dim.int_values().into_iter().filter(|&q| q <= b.qkv_dim).collect();
            let r: Vec<f64> = spec.mlp_ratio.values().into_iter().filter(|&r| r <= b.mlp_ratio).collect();
            BlockConfig {
                qkv_dim: *q.choose(rng).unwrap(),
                mlp_ratio: *r.choose(rng).unwrap(),
                heads: b.heads,
            }
        })
        .collect();
    ArchConfig { embed_dim: *embeds.choose(rng).unwrap(), depth, blocks }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_subnets_score_lower(seed in any::<u64>()) {
        let spec = SearchSpaceSpec::toy();
        let t = random_table(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let big = random_arch(&spec, &mut rng);
        let small = random_sub(&spec, &big, &mut rng);
        prop_assert!(t.snip_score(&small).unwrap() <= t.snip_score(&big).unwrap());
    }
}
