//! Property tests over random graphs.

use graphseq::graph::{FeatureMatrix, GraphStore};
use graphseq::ho::compute_hops;
use graphseq::nd::{build_tree, NdConfig};
use graphseq::Executor;
use proptest::prelude::*;

fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..max_nodes).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..n * 3)))
}

fn features_for(n: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n * dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_sorted_loop_free((n, edges) in graph_strategy(40)) {
        let g = GraphStore::from_edges(n, edges.clone()).unwrap();
        for v in 0..n {
            let nb = g.neighbors(v).unwrap();
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!nb.contains(&v));
            for &w in nb {
                prop_assert!(g.neighbors(w).unwrap().contains(&v));
            }
        }
        for (u, v) in edges {
            prop_assert_eq!(g.has_edge(u, v), u != v);
        }
        let degree_sum: usize = (0..n).map(|v| g.degree(v).unwrap()).sum();
        prop_assert_eq!(degree_sum, 2 * g.num_edges());
    }

    #[test]
    fn k_hop_sets_match_shortest_path_distances((n, edges) in graph_strategy(30), v_seed in 0usize..1000) {
        let g = GraphStore::from_edges(n, edges).unwrap();
        let v = v_seed % n;
        // Floyd-Warshall distances as the oracle
        let inf = usize::MAX / 2;
        let mut dist = vec![vec![inf; n]; n];
        for u in 0..n {
            dist[u][u] = 0;
            for &w in g.neighbors(u).unwrap() {
                dist[u][w] = 1;
            }
        }
        for m in 0..n {
            for a in 0..n {
                for b in 0..n {
                    dist[a][b] = dist[a][b].min(dist[a][m] + dist[m][b]);
                }
            }
        }
        let one = g.k_hop_set(v, 1).unwrap();
        let expected: std::collections::BTreeSet<_> = g.neighbors(v).unwrap().iter().copied().collect();
        prop_assert_eq!(&one, &expected);
        let mut union = std::collections::BTreeSet::new();
        for k in 1..6 {
            let set = g.k_hop_set(v, k).unwrap();
            let want: std::collections::BTreeSet<_> = (0..n).filter(|&w| dist[v][w] == k).collect();
            prop_assert_eq!(&set, &want);
            prop_assert!(!set.contains(&v));
            prop_assert!(set.is_disjoint(&union));
            union.extend(set);
        }
    }

    #[test]
    fn hops_are_linear_in_features(
        (n, edges) in graph_strategy(25),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let g = GraphStore::from_edges(n, edges).unwrap();
        let dim = 3;
        let x = graphseq::synth::random_features(n, dim, seed).unwrap();
        let y = graphseq::synth::random_features(n, dim, seed + 1).unwrap();
        let combo = FeatureMatrix::new(
            n,
            dim,
            x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let exec = Executor::sequential();
        let hx = compute_hops(&g, &x, 4, &exec).unwrap();
        let hy = compute_hops(&g, &y, 4, &exec).unwrap();
        let hc = compute_hops(&g, &combo, 4, &exec).unwrap();
        for i in 0..4 {
            for (k, c) in hc.hop(i).as_slice().iter().enumerate() {
                let want = a * hx.hop(i).as_slice()[k] + b * hy.hop(i).as_slice()[k];
                prop_assert!((c - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hops_commute_with_relabeling((n, edges) in graph_strategy(25), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let g = GraphStore::from_edges(n, edges.clone()).unwrap();
        let pg = GraphStore::from_edges(n, edges.iter().map(|&(u, v)| (perm[u], perm[v]))).unwrap();
        let dim = 2;
        let x = graphseq::synth::random_features(n, dim, perm_seed).unwrap();
        let mut px = vec![0.0; n * dim];
        for v in 0..n {
            px[perm[v] * dim..perm[v] * dim + dim].copy_from_slice(x.row(v));
        }
        let px = FeatureMatrix::new(n, dim, px).unwrap();
        let exec = Executor::sequential();
        let h = compute_hops(&g, &x, 4, &exec).unwrap();
        let ph = compute_hops(&pg, &px, 4, &exec).unwrap();
        for i in 0..4 {
            for v in 0..n {
                for (p, q) in h.hop(i).row(v).iter().zip(ph.hop(i).row(perm[v])) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hop_rows_stay_within_feature_range((n, edges) in graph_strategy(25), values in features_for(24, 2)) {
        let g = GraphStore::from_edges(n, edges).unwrap();
        let x = FeatureMatrix::new(n, 2, values[..n * 2].to_vec()).unwrap();
        let bound = x.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = compute_hops(&g, &x, 4, &Executor::sequential()).unwrap();
        for i in 0..4 {
            prop_assert!(h.hop(i).as_slice().iter().all(|v| v.abs() <= bound + 1e-12));
        }
    }

    #[test]
    fn tree_slots_follow_edges_and_padding(
        (n, edges) in graph_strategy(30),
        center in 0usize..1000,
        seed in any::<u64>(),
        b1 in 1usize..5,
        b2 in 1usize..5,
    ) {
        let g = GraphStore::from_edges(n, edges).unwrap();
        let cfg = NdConfig::new(vec![b1, b2], seed).unwrap();
        let shape = cfg.shape.clone();
        let v = center % n;
        let seq = build_tree(&g, v, &cfg).unwrap();
        prop_assert_eq!(seq.len(), 1 + b1 + b1 * b2);
        prop_assert_eq!(seq.entries[0], Some(v));
        for p in 1..shape.size() {
            let parent = shape.parent(p).unwrap();
            match (seq.entries[parent], seq.entries[p]) {
                (None, child) => prop_assert_eq!(child, None),
                (Some(u), Some(w)) => prop_assert!(g.has_edge(u, w)),
                (Some(u), None) => {
                    // padding only once the neighbor list is exhausted
                    let level = shape.level_of(parent);
                    let n_children = shape.branching()[level];
                    prop_assert!(g.degree(u).unwrap() < n_children);
                }
            }
        }
        prop_assert_eq!(seq, build_tree(&g, v, &cfg).unwrap());
    }
}
