mod common;

use common::{erdos_renyi, floyd_warshall, UNREACHABLE};
use hopembed::sampler::sample_batch;
use hopembed::{ContextIndex, Graph, MergePolicy, PairSampler, Parallelism, SamplerConfig};

fn category(policy: &MergePolicy, d: u32) -> u8 {
    policy.boundaries().iter().position(|&b| d <= b).unwrap_or(policy.boundaries().len()) as u8
}

fn cfg(targets: usize, quota: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { targets_per_batch: targets, pairs_per_category_per_target: quota, seed, far_includes_unreachable: false }
}

#[test]
fn every_label_agrees_with_oracle_distance() {
    for seed in 0..6 {
        let g = erdos_renyi(90, 0.035, seed);
        let d = floyd_warshall(&g);
        for policy in MergePolicy::ablation_family().into_iter().chain([MergePolicy::default_four()]) {
            let index = ContextIndex::for_policy(&g, &policy, Parallelism::Sequential).unwrap();
            let comps = g.components();
            let sampler = PairSampler::new(&index, &comps, &policy, cfg(40, 3, seed)).unwrap();
            for b in 0..3 {
                let batch = sampler.batch(b).unwrap();
                for p in 0..batch.len() {
                    let (t, c) = (batch.targets[p] as usize, batch.contexts[p] as usize);
                    assert_ne!(t, c);
                    assert_ne!(d[t][c], UNREACHABLE, "unreachable context sampled");
                    assert_eq!(batch.labels[p], category(&policy, d[t][c]), "pair ({t}, {c}) at distance {}", d[t][c]);
                }
            }
        }
    }
}

#[test]
fn unreachable_nodes_join_the_far_category_when_requested() {
    // two disjoint paths of 3
    let g = Graph::from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
    let d = floyd_warshall(&g);
    let policy = MergePolicy::new(vec![1]).unwrap();
    let index = ContextIndex::for_policy(&g, &policy, Parallelism::Sequential).unwrap();
    let comps = g.components();
    let mut config = cfg(6, 2, 0);
    config.far_includes_unreachable = true;
    let batch = PairSampler::new(&index, &comps, &policy, config).unwrap().batch(0).unwrap();
    assert!((0..batch.len()).any(|p| d[batch.targets[p] as usize][batch.contexts[p] as usize] == UNREACHABLE));
    for p in 0..batch.len() {
        let dist = d[batch.targets[p] as usize][batch.contexts[p] as usize];
        assert_eq!(batch.labels[p], if dist == 1 { 0 } else { 1 });
    }
}

#[test]
fn categories_are_balanced_when_supply_suffices() {
    let g = erdos_renyi(400, 0.02, 1);
    let policy = MergePolicy::default_four();
    let index = ContextIndex::for_policy(&g, &policy, Parallelism::Sequential).unwrap();
    let comps = g.components();
    let sampler = PairSampler::new(&index, &comps, &policy, cfg(64, 4, 2)).unwrap();
    for b in 0..5 {
        let counts = sampler.batch(b).unwrap().category_counts(policy.alpha());
        assert!(counts.iter().all(|&c| c == counts[0]), "batch {b}: {counts:?}");
        assert_eq!(counts[0], 64 * 4);
    }
}

#[test]
fn batches_are_reproducible_and_distinct() {
    let g = erdos_renyi(200, 0.03, 4);
    let policy = MergePolicy::default_four();
    let index = ContextIndex::for_policy(&g, &policy, Parallelism::Sequential).unwrap();
    let comps = g.components();
    let config = cfg(32, 2, 17);
    let mut sampler = PairSampler::new(&index, &comps, &policy, config.clone()).unwrap();
    let first = sampler.next_batch().unwrap();
    let second = sampler.next_batch().unwrap();
    assert_eq!(first, sample_batch(&index, &comps, &policy, &config, 0).unwrap());
    assert_eq!(second, sample_batch(&index, &comps, &policy, &config, 1).unwrap());
    assert_ne!(first, second);
    let other_seed = sample_batch(&index, &comps, &policy, &cfg(32, 2, 18), 0).unwrap();
    assert_ne!(first, other_seed);
}

#[test]
fn targets_within_a_batch_are_distinct() {
    let g = erdos_renyi(150, 0.04, 5);
    let policy = MergePolicy::default_four();
    let index = ContextIndex::for_policy(&g, &policy, Parallelism::Sequential).unwrap();
    let comps = g.components();
    let sampler = PairSampler::new(&index, &comps, &policy, cfg(50, 1, 0)).unwrap();
    let batch = sampler.batch(0).unwrap();
    let mut targets = batch.targets.clone();
    targets.sort_unstable();
    targets.dedup();
    assert_eq!(targets.len(), 50);
}

#[test]
fn mismatched_cap_is_rejected() {
    let g = erdos_renyi(30, 0.1, 0);
    let index = ContextIndex::build(&g, 2, Parallelism::Sequential).unwrap();
    let comps = g.components();
    let policy = MergePolicy::default_four();
    assert!(PairSampler::new(&index, &comps, &policy, cfg(4, 1, 0)).is_err());
}
