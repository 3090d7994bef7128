//! Skeleton topology, hop distances and the partitioned H-hop adjacency.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const NUM_PARTITIONS: usize = 3;
pub const DEFAULT_HOPS: usize = 3;

/// Edges of the 25-joint NTU RGB+D body map, 0-based.
const NTU_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];

/// NTU joint indices used elsewhere in the pipeline.
pub mod ntu_joints {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const RIGHT_SHOULDER: usize = 8;
    pub const SPINE_SHOULDER: usize = 20;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    center_joint: usize,
}

impl SkeletonTopology {
    /// Validates that `edges` form a spanning tree over `joint_count` joints.
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, center_joint: usize) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Topology("topology needs at least one joint".into()));
        }
        if center_joint >= joint_count {
            return Err(Error::Topology(format!(
                "center joint {center_joint} outside 0..{joint_count}"
            )));
        }
        let mut seen = HashSet::new();
        for &(i, j) in &edges {
            if i >= joint_count || j >= joint_count {
                return Err(Error::Topology(format!("edge ({i}, {j}) outside 0..{joint_count}")));
            }
            if i == j {
                return Err(Error::Topology(format!("self edge ({i}, {j})")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Topology(format!("duplicate edge ({i}, {j})")));
            }
        }
        if edges.len() + 1 != joint_count {
            return Err(Error::Topology(format!(
                "a tree over {joint_count} joints has {} edges, got {}",
                joint_count - 1,
                edges.len()
            )));
        }
        hop_distances(joint_count, &edges)?;
        Ok(SkeletonTopology {
            joint_count,
            edges,
            center_joint,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center_joint(&self) -> usize {
        self.center_joint
    }

    pub fn degree(&self, joint: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j)| i == joint || j == joint)
            .count()
    }

    /// Renames joint `k` to `perm[k]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.joint_count {
            return Err(dim_err(format!(
                "permutation of length {} for {} joints",
                perm.len(),
                self.joint_count
            )));
        }
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        SkeletonTopology::new(self.joint_count, edges, perm[self.center_joint])
    }

    /// Parses the plain-text edge list: a joint count line, then one `i j`
    /// pair per line. An optional `center k` line picks the center joint;
    /// without it the joint of minimum eccentricity (lowest index on ties)
    /// is used. `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fmt = |line: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut count = None;
        let mut center = None;
        let mut edges = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|e| fmt(no + 1, format!("{s:?}: {e}")));
            match (count, toks.as_slice()) {
                (None, [n]) => count = Some(num(n)?),
                (None, _) => return Err(fmt(no + 1, "expected the joint count".into())),
                (Some(_), ["center", k]) => center = Some(num(k)?),
                (Some(_), [i, j]) => edges.push((num(i)?, num(j)?)),
                (Some(_), _) => return Err(fmt(no + 1, format!("expected `i j`, got {line:?}"))),
            }
        }
        let n = count.ok_or_else(|| fmt(0, "empty topology file".into()))?;
        let center = match center {
            Some(c) => c,
            None => {
                let d = hop_distances(n, &edges)?;
                (0..n)
                    .min_by_key(|&i| (d.row(i).iter().max().copied().unwrap_or(0), i))
                    .unwrap_or(0)
            }
        };
        SkeletonTopology::new(n, edges, center)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\ncenter {}\n", self.joint_count, self.center_joint);
        for (i, j) in &self.edges {
            s.push_str(&format!("{i} {j}\n"));
        }
        s
    }
}

/// The NTU RGB+D 25-joint skeleton, centered on the mid-spine joint.
pub fn ntu_topology() -> SkeletonTopology {
    SkeletonTopology::new(25, NTU_EDGES.to_vec(), ntu_joints::SPINE_MID)
        .expect("NTU edge table is a valid tree")
}

/// Square matrix of shortest-path edge counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    dist: Vec<usize>,
}

impl HopMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.dist[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }
}

/// All-pairs hop distances by one BFS per source.
pub fn hop_distances(n: usize, edges: &[(usize, usize)]) -> Result<HopMatrix> {
    let mut nbrs = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Topology(format!("edge ({i}, {j}) outside 0..{n}")));
        }
        nbrs[i].push(j);
        nbrs[j].push(i);
    }
    let mut dist = vec![usize::MAX; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &w in &nbrs[u] {
                if row[w] == usize::MAX {
                    row[w] = row[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if let Some(j) = row.iter().position(|&d| d == usize::MAX) {
            return Err(Error::Topology(format!(
                "graph is disconnected: joint {j} unreachable from {s}"
            )));
        }
    }
    Ok(HopMatrix { n, dist })
}

pub fn hop_distance_matrix(topology: &SkeletonTopology) -> HopMatrix {
    hop_distances(topology.joint_count, &topology.edges).expect("validated topology is connected")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Root = 0,
    Centripetal = 1,
    Centrifugal = 2,
}

/// Normalized root / centripetal / centrifugal matrices over the H-hop
/// neighborhood. Row `i` lists the joints that node `i` aggregates from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencySet {
    partitions: [Tensor; NUM_PARTITIONS],
    hop_limit: usize,
}

impl AdjacencySet {
    pub fn partitions(&self) -> &[Tensor; NUM_PARTITIONS] {
        &self.partitions
    }

    pub fn partition(&self, p: Partition) -> &Tensor {
        &self.partitions[p as usize]
    }

    pub fn hop_limit(&self) -> usize {
        self.hop_limit
    }

    pub fn joint_count(&self) -> usize {
        self.partitions[0].shape()[0]
    }

    /// Union of the partitions' nonzero entries.
    pub fn support(&self) -> Vec<bool> {
        let n = self.joint_count();
        (0..n * n)
            .map(|k| self.partitions.iter().any(|p| p.data()[k] != 0.0))
            .collect()
    }

    /// Applies the joint relabeling `k → perm[k]` to rows and columns.
    pub fn permuted(&self, perm: &[usize]) -> AdjacencySet {
        let n = self.joint_count();
        let partitions = self.partitions.clone().map(|p| {
            let mut out = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    out.set(&[perm[i], perm[j]], p.get(&[i, j]));
                }
            }
            out
        });
        AdjacencySet {
            partitions,
            hop_limit: self.hop_limit,
        }
    }

    /// Builds a set directly from matrices; used for hand-made graphs.
    pub fn from_partitions(partitions: [Tensor; NUM_PARTITIONS], hop_limit: usize) -> Result<Self> {
        let n = partitions[0].shape().first().copied().unwrap_or(0);
        for p in &partitions {
            if p.shape() != [n, n] {
                return Err(dim_err(format!("partition {:?} is not {n}×{n}", p.shape())));
            }
        }
        Ok(AdjacencySet {
            partitions,
            hop_limit,
        })
    }
}

pub fn build_adjacency(topology: &SkeletonTopology, hops: usize) -> Result<AdjacencySet> {
    if hops < 1 {
        return Err(Error::Parameter(format!("hop limit must be ≥ 1, got {hops}")));
    }
    let n = topology.joint_count;
    let d = hop_distance_matrix(topology);
    let c = topology.center_joint;
    let mut raw = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    let mut degree = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if d.get(i, j) > hops {
                continue;
            }
            degree[i] += 1.0;
            let part = if i == j {
                Partition::Root
            } else if d.get(j, c) < d.get(i, c) {
                Partition::Centripetal
            } else {
                Partition::Centrifugal
            };
            raw[part as usize][i * n + j] = 1.0;
        }
    }
    // degree counts the diagonal, i.e. neighbor count plus identity
    let inv_sqrt: Vec<f64> = degree.iter().map(|&g| if g > 0.0 { g.powf(-0.5) } else { 0.0 }).collect();
    let partitions = raw.map(|mut m| {
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        Tensor::new(vec![n, n], m).expect("n×n")
    });
    Ok(AdjacencySet {
        partitions,
        hop_limit: hops,
    })
}

/// Learnable per-partition reweighting of one layer's adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeImportance {
    pub theta: [Tensor; NUM_PARTITIONS],
}

impl EdgeImportance {
    pub fn ones(joint_count: usize) -> Self {
        EdgeImportance {
            theta: std::array::from_fn(|_| Tensor::full(&[joint_count, joint_count], 1.0)),
        }
    }
}

/// `Â_p = A_p ⊙ θ_p` for each partition.
pub fn effective_adjacency(adj: &AdjacencySet, importance: &EdgeImportance) -> Result<[Tensor; NUM_PARTITIONS]> {
    let mut out = adj.partitions.clone();
    for (a, th) in out.iter_mut().zip(&importance.theta) {
        if a.shape() != th.shape() {
            return Err(dim_err(format!(
                "edge importance {:?} vs adjacency {:?}",
                th.shape(),
                a.shape()
            )));
        }
        a.data_mut().iter_mut().zip(th.data()).for_each(|(x, t)| *x *= t);
    }
    Ok(out)
}
