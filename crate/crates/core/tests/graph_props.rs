mod common;

use common::graph::{check_against_oracle, floyd_warshall};
use proptest::prelude::*;
use skelfall_core::graph::{
    build_adjacency, effective_adjacency, hop_distance_matrix, ntu_joints, ntu_topology, EdgeImportance, Partition,
    SkeletonTopology,
};
use skelfall_core::tensor::Tensor;

fn tree_strategy() -> impl Strategy<Value = SkeletonTopology> {
    (2usize..=12).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|k| 0..k).collect();
        (parents, Just(n).prop_shuffle_perm(n), 0..n).prop_map(move |(parents, perm, center)| {
            let edges = parents
                .iter()
                .enumerate()
                .map(|(k, &p)| (perm[k + 1], perm[p]))
                .collect();
            SkeletonTopology::new(n, edges, center).unwrap()
        })
    })
}

trait PermExt {
    fn prop_shuffle_perm(self, n: usize) -> BoxedStrategy<Vec<usize>>;
}

impl PermExt for Just<usize> {
    fn prop_shuffle_perm(self, n: usize) -> BoxedStrategy<Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle().boxed()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_trees_match_floyd_warshall(t in tree_strategy(), hops in 1usize..5) {
        let d = floyd_warshall(t.joint_count(), t.edges());
        let h = hop_distance_matrix(&t);
        for i in 0..t.joint_count() {
            for j in 0..t.joint_count() {
                prop_assert_eq!(h.get(i, j), d[i][j]);
            }
        }
        check_against_oracle(&t, hops);
    }

    #[test]
    fn support_is_monotone_in_hops(t in tree_strategy(), hops in 1usize..5) {
        let small = build_adjacency(&t, hops).unwrap().support();
        let big = build_adjacency(&t, hops + 1).unwrap().support();
        for (s, b) in small.iter().zip(&big) {
            prop_assert!(!s || *b);
        }
    }
}

#[test]
fn ntu_hop_matrix_matches_oracle() {
    let t = ntu_topology();
    let d = floyd_warshall(25, t.edges());
    let h = hop_distance_matrix(&t);
    for i in 0..25 {
        for j in 0..25 {
            assert_eq!(h.get(i, j), d[i][j]);
            assert_eq!(h.get(i, j), h.get(j, i));
        }
    }
    for hops in 1..=4 {
        check_against_oracle(&t, hops);
    }
}

#[test]
fn ntu_spine_row_three_hops() {
    let t = ntu_topology();
    let a = build_adjacency(&t, 3).unwrap();
    let support = a.support();
    let spine = ntu_joints::SPINE_MID;
    let row: Vec<usize> = (0..25).filter(|&j| support[spine * 25 + j]).collect();
    // spine-mid, its two neighbors, then the rings around spine-base and spine-shoulder
    assert_eq!(row, vec![0, 1, 2, 3, 4, 5, 8, 9, 12, 13, 16, 17, 20]);
}

#[test]
fn effective_adjacency_matches_scalar_loop() {
    let t = ntu_topology();
    let a = build_adjacency(&t, 3).unwrap();
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let theta = EdgeImportance {
        theta: std::array::from_fn(|_| Tensor::from_fn(&[25, 25], |_| next() * 2.0)),
    };
    let eff = effective_adjacency(&a, &theta).unwrap();
    for p in [Partition::Root, Partition::Centripetal, Partition::Centrifugal] {
        let k = p as usize;
        for i in 0..25 {
            for j in 0..25 {
                let expect = a.partitions()[k].get(&[i, j]) * theta.theta[k].get(&[i, j]);
                assert_eq!(eff[k].get(&[i, j]), expect);
            }
        }
    }
}
