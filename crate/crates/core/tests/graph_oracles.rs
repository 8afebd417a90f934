mod common;

use common::{erdos_renyi, floyd_warshall, path, UNREACHABLE};
use hopembed::{ContextIndex, DenseMatrix, Graph, Hop, NormalizedAdjacency, Parallelism};
use proptest::prelude::*;

fn check_against_floyd_warshall(g: &Graph, cap: u32) {
    let d = floyd_warshall(g);
    let index = ContextIndex::build(g, cap, Parallelism::Sequential).unwrap();
    for i in 0..g.num_nodes() {
        for k in 1..=cap {
            let expected: Vec<u32> = (0..g.num_nodes() as u32).filter(|&j| d[i][j as usize] == k).collect();
            assert_eq!(index.bucket(i, k), expected.as_slice(), "node {i}, hop {k}");
        }
        for j in 0..g.num_nodes() {
            let hop = index.hop_between(i, j);
            match d[i][j] {
                0 => assert_eq!(hop, Hop::Source),
                h if h <= cap => assert_eq!(hop, Hop::Within(h)),
                _ => assert_eq!(hop, Hop::BeyondCap),
            }
        }
    }
}

#[test]
fn capped_buckets_match_floyd_warshall_on_random_graphs() {
    for (t, p) in [0.02, 0.05, 0.1].into_iter().cycle().take(30).enumerate() {
        let n = 20 + (t * 37) % 131;
        check_against_floyd_warshall(&erdos_renyi(n, p, t as u64), 1 + (t % 5) as u32);
    }
}

#[test]
fn six_node_path_hops() {
    let g = path(6);
    let index = ContextIndex::build(&g, 4, Parallelism::Sequential).unwrap();
    let hops: Vec<Hop> = (1..6).map(|j| index.hop_between(0, j)).collect();
    assert_eq!(hops, vec![Hop::Within(1), Hop::Within(2), Hop::Within(3), Hop::Within(4), Hop::BeyondCap]);
    // per-hop totals over all sources: a path of 6 has 2·(6-h) ordered pairs at hop h
    assert_eq!(index.hop_totals(), vec![10, 8, 6, 4]);
}

#[test]
fn parallel_context_build_is_identical() {
    let g = erdos_renyi(120, 0.04, 7);
    let a = ContextIndex::build(&g, 4, Parallelism::Sequential).unwrap();
    let b = ContextIndex::build(&g, 4, Parallelism::Rayon).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn average_path_length_matches_floyd_warshall() {
    for seed in 0..5 {
        let g = erdos_renyi(80, 0.03, seed);
        let d = floyd_warshall(&g);
        let comps = g.components();
        let members = comps.members(comps.largest());
        let (mut sum, mut count) = (0u64, 0u64);
        for &i in members {
            for &j in members {
                if i != j {
                    assert_ne!(d[i as usize][j as usize], UNREACHABLE);
                    sum += d[i as usize][j as usize] as u64;
                    count += 1;
                }
            }
        }
        let expected = sum as f64 / count as f64;
        let got = g.avg_shortest_path_largest_component().unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn components_agree_with_reachability() {
    let g = erdos_renyi(100, 0.015, 3);
    let d = floyd_warshall(&g);
    let comps = g.components();
    for i in 0..100 {
        for j in 0..100 {
            assert_eq!(comps.same(i, j), d[i][j] != UNREACHABLE);
        }
    }
}

fn dense_normalized(g: &Graph) -> DenseMatrix<f64> {
    let n = g.num_nodes();
    let mut a = DenseMatrix::identity(n);
    for u in 0..n {
        for &v in g.neighbors(u) {
            a.set(u, v as usize, 1.0);
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i] * deg[j]).sqrt())
}

proptest! {
    #[test]
    fn normalized_adjacency_matches_dense_formula(n in 1usize..40, p in 0.0f64..0.3, seed in 0u64..1000) {
        let g = erdos_renyi(n, p, seed);
        let adj = NormalizedAdjacency::<f64>::new(&g, true);
        let dense = adj.matrix().to_dense();
        prop_assert!(dense.max_abs_diff(&dense_normalized(&g)) < 1e-15);
        prop_assert_eq!(dense.transpose(), dense);
    }

    #[test]
    fn bfs_distances_match_oracle(n in 2usize..60, p in 0.0f64..0.2, seed in 0u64..1000) {
        let g = erdos_renyi(n, p, seed);
        let d = floyd_warshall(&g);
        for s in 0..n {
            prop_assert_eq!(&g.bfs_distances(s), &d[s]);
        }
    }
}
