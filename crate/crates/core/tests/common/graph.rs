use skelfall_core::graph::{build_adjacency, SkeletonTopology};

/// Floyd–Warshall over the raw edge list, independent of the BFS in the crate.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(i, j) in edges {
        d[i][j] = 1;
        d[j][i] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

pub fn check_against_oracle(t: &SkeletonTopology, hops: usize) {
    let n = t.joint_count();
    let d = floyd_warshall(n, t.edges());
    let c = t.center_joint();
    let a = build_adjacency(t, hops).unwrap();
    let [root, cp, cf] = a.partitions();
    for i in 0..n {
        for j in 0..n {
            let within = d[i][j] <= hops;
            let r = root.get(&[i, j]);
            let p = cp.get(&[i, j]);
            let f = cf.get(&[i, j]);
            for v in [r, p, f] {
                assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            }
            let nonzero = [r, p, f].iter().filter(|&&v| v != 0.0).count();
            assert_eq!(nonzero, usize::from(within), "({i},{j}) support");
            if i == j {
                assert!(r > 0.0);
            } else {
                assert_eq!(r, 0.0);
            }
            if within && i != j {
                let closer = d[j][c] < d[i][c];
                assert_eq!(p != 0.0, closer, "({i},{j}) centripetal");
                assert_eq!(f != 0.0, !closer, "({i},{j}) centrifugal");
            }
        }
    }
    // root partition is diagonal hence symmetric; the support union is symmetric
    for i in 0..n {
        for j in 0..n {
            assert_eq!(root.get(&[i, j]), root.get(&[j, i]));
        }
    }
}


/// Random labelled tree on `n` joints with a random center.
pub fn random_tree(r: &mut impl rand::Rng, n: usize) -> SkeletonTopology {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(r);
    let edges = (1..n).map(|k| (perm[k], perm[r.random_range(0..k)])).collect();
    SkeletonTopology::new(n, edges, r.random_range(0..n)).unwrap()
}
