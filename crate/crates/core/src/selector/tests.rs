use super::*;
use crate::archspace::{enumerate_isomers, enumerate_space, isomer_key, FactorRange};
use crate::autodiff::Tensor;
use crate::supernet::SupernetWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn random_table(spec: &SearchSpaceSpec, seed: u64) -> SaliencyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = SupernetWeights::<f64>::init(spec, 0).unwrap();
    let tensors = w
        .params()
        .iter()
        .map(|p| {
            let data = (0..p.tensor.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            (p.name.clone(), Tensor::new(p.tensor.shape().to_vec(), data).unwrap())
        })
        .collect();
    SaliencyTable::from_raw(spec, seed, 0, tensors).unwrap()
}

#[test]
fn greedy_fixtures() {
    assert_eq!(greedy_allocate(|_, _| 1.0, 3, 12, 4, 4).unwrap(), vec![4, 4, 4]);
    let m = [0.2, 0.7];
    assert_eq!(greedy_allocate(|l, _| m[l], 2, 7, 3, 4).unwrap(), vec![3, 4]);
    // equal marginals: extra units land in the lowest layers
    assert_eq!(greedy_allocate(|_, _| 0.5, 4, 2, 0, 1).unwrap(), vec![1, 1, 0, 0]);
    assert!(greedy_allocate(|_, _| 0.0, 3, 13, 4, 4).is_err());
    assert!(greedy_allocate(|_, _| 0.0, 3, 2, 1, 2).is_err());
}

/// Best binary allocation by exhaustive search over subsets of size `k`.
fn brute_binary(base: &[f64], gain: &[f64], k: usize) -> f64 {
    let n = base.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).map(|l| base[l] + if mask >> l & 1 == 1 { gain[l] } else { 0.0 }).sum();
        best = best.max(s);
    }
    best
}

#[test]
fn greedy_is_exact_for_binary_choices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(0..=n);
        // dyadic values keep every sum exact
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0..1024) as f64 / 1024.0).collect();
        let gain: Vec<f64> = (0..n).map(|_| rng.random_range(0..1024) as f64 / 1024.0).collect();
        let alloc = greedy_allocate(|l, _| gain[l], n, k, 0, 1).unwrap();
        let s: f64 = (0..n).map(|l| base[l] + alloc[l] as f64 * gain[l]).sum();
        assert_eq!(s, brute_binary(&base, &gain, k));
    }
}

#[test]
fn forced_key_gives_minimal_blocks() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 1);
    let min = ArchConfig::minimal(&spec);
    let rep = build_isomer_representative(&t, &isomer_key(&min)).unwrap();
    assert_eq!(rep, min);
    let max = ArchConfig::maximal(&spec);
    assert_eq!(build_isomer_representative(&t, &isomer_key(&max)).unwrap(), max);
}

fn binary_spec(max_depth: usize) -> SearchSpaceSpec {
    SearchSpaceSpec {
        embed_dim: FactorRange::new(8.0, 16.0, 8.0).unwrap(),
        qkv_dim: FactorRange::new(8.0, 16.0, 8.0).unwrap(),
        mlp_ratio: FactorRange::new(1.0, 2.0, 1.0).unwrap(),
        heads: FactorRange::new(1.0, 2.0, 1.0).unwrap(),
        depth: FactorRange::new(1.0, max_depth as f64, 1.0).unwrap(),
        patch_size: 2,
        image_resolution: 4,
        num_classes: 3,
        in_channels: 1,
    }
}

#[test]
fn representative_is_best_isomer() {
    let spec = binary_spec(5);
    let t = random_table(&spec, 2);
    for key in crate::archspace::all_isomer_keys(&spec).unwrap() {
        let rep = build_isomer_representative(&t, &key).unwrap();
        assert_eq!(isomer_key(&rep), key);
        let best = enumerate_isomers(&spec, &key, 1_000_000)
            .unwrap()
            .iter()
            .map(|a| t.snip_norm_score(a).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let got = t.snip_norm_score(&rep).unwrap();
        assert!((got - best).abs() <= 1e-12, "{key:?}: {got} vs {best}");
    }
}

#[test]
fn grid_fixtures() {
    let g = ConstraintGrid::new(6e6, 1.0e7, 1e6).unwrap();
    assert_eq!(g.buckets(), &[6e6, 7e6, 8e6, 9e6, 1e7]);
    assert_eq!(ConstraintGrid::new(5e6, 5e6, 1e6).unwrap().buckets(), &[5e6]);
    assert_eq!(ConstraintGrid::new(0.0, 2.5, 1.0).unwrap().buckets(), &[0.0, 1.0, 2.0, 2.5]);
    assert!(ConstraintGrid::new(0.0, 1.0, 0.0).is_err());
    assert!(ConstraintGrid::new(2.0, 1.0, 1.0).is_err());
}

#[test]
fn single_arch_space() {
    let mut spec = SearchSpaceSpec::toy();
    for r in [&mut spec.embed_dim, &mut spec.qkv_dim, &mut spec.mlp_ratio, &mut spec.heads, &mut spec.depth] {
        *r = FactorRange::fixed(r.lo());
    }
    let t = random_table(&spec, 3);
    let only = ArchConfig::minimal(&spec);
    let p = crate::archspace::count_params(&only, &spec).unwrap() as f64;
    let grid = ConstraintGrid::new(p - 1.0, p + 1.0, 2.0).unwrap();
    let ps = select_preferred(&t, &grid, 1, Metric::Params).unwrap();
    assert!(ps.buckets[0].empty);
    assert_eq!(ps.buckets[1].members[0].arch, only);
}

/// Full-enumeration oracle: best normalized member per key, then raw SNIP.
#[test]
fn toy_selection_matches_brute_force() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 4);
    let grid = default_grid(&spec, Metric::Params).unwrap();
    let ps = select_preferred(&t, &grid, 2, Metric::Params).unwrap();

    let mut best: BTreeMap<IsomerKey, (f64, ArchConfig)> = BTreeMap::new();
    for a in enumerate_space(&spec, 1_000_000).unwrap() {
        let s = t.snip_norm_score(&a).unwrap();
        let e = best.entry(isomer_key(&a)).or_insert((f64::NEG_INFINITY, a.clone()));
        if s > e.0 {
            *e = (s, a);
        }
    }
    let mut oracle: Vec<(f64, u64, IsomerKey)> = best
        .iter()
        .map(|(k, (_, a))| (t.snip_score(a).unwrap(), crate::archspace::count_params(a, &spec).unwrap(), *k))
        .collect();
    oracle.sort_by(|a, b| b.0.total_cmp(&a.0));
    for bucket in &ps.buckets {
        let want: Vec<IsomerKey> =
            oracle.iter().filter(|o| (o.1 as f64) < bucket.c).take(2).map(|o| o.2).collect();
        let got: Vec<IsomerKey> = bucket.members.iter().map(|m| isomer_key(&m.arch)).collect();
        assert_eq!(got, want, "bucket {}", bucket.c);
        for m in &bucket.members {
            assert!((m.params as f64) < bucket.c);
            assert!((m.snip_norm - best[&isomer_key(&m.arch)].0).abs() <= 1e-12);
        }
    }
    assert!(!ps.is_empty());
    // representatives are unique per key
    let reps = representatives(&t).unwrap();
    let keys: std::collections::HashSet<IsomerKey> = reps.iter().map(|m| isomer_key(&m.arch)).collect();
    assert_eq!(keys.len(), reps.len());
}

#[test]
fn low_bucket_is_flagged_empty() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 5);
    let grid = ConstraintGrid::new(10.0, 20.0, 10.0).unwrap();
    let ps = select_preferred(&t, &grid, 1, Metric::Params).unwrap();
    assert!(ps.buckets.iter().all(|b| b.empty && b.members.is_empty()));
    assert!(matches!(ps.specialize(1e9), Err(SelectorError::NoFit(_))));
}

#[test]
fn specialize_floor_and_fine_modes() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 6);
    let grid = default_grid(&spec, Metric::Params).unwrap();
    let ps = select_preferred(&t, &grid, 3, Metric::Params).unwrap();
    let cs = grid.buckets();
    let last = *cs.last().unwrap();
    assert_eq!(ps.specialize(last).unwrap(), &ps.buckets.last().unwrap().members[0]);
    let mid = (cs[4] + cs[5]) / 2.0;
    assert_eq!(ps.specialize(mid).unwrap(), &ps.buckets[4].members[0]);
    assert!(ps.specialize(cs[0] - 1.0).is_err());
    let mut prev = f64::NEG_INFINITY;
    for &c in cs {
        if let Ok(m) = ps.specialize(c) {
            assert!(m.snip >= prev);
            prev = m.snip;
        }
        let fine = ps.specialize_fine(c);
        let scan = ps.members().into_iter().filter(|m| (m.params as f64) < c).fold(
            None,
            |best: Option<&Member>, m| match best {
                Some(b) if b.snip >= m.snip => Some(b),
                _ => Some(m),
            },
        );
        assert_eq!(fine.ok(), scan);
    }
}

#[test]
fn selection_is_deterministic_and_flops_metric_works() {
    let spec = SearchSpaceSpec::toy();
    let t = random_table(&spec, 7);
    let grid = default_grid(&spec, Metric::Flops).unwrap();
    let a = select_preferred(&t, &grid, 1, Metric::Flops).unwrap();
    let b = select_preferred(&t, &grid, 1, Metric::Flops).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for bucket in &a.buckets {
        for m in &bucket.members {
            assert!((m.flops as f64) < bucket.c);
        }
    }
}
