//! Skeleton graph type, the builtin 25-joint kinematic tree, and the binary
//! adjacency prior.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Undirected joint graph. Edges are stored normalized as `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonGraph {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
}

impl SkeletonGraph {
    pub fn new(num_joints: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Config("graph needs at least one joint".to_string()));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Config(format!(
                    "edge ({a}, {b}) out of range for {num_joints} joints"
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop at joint {a}")));
            }
            let e = (a.min(b), a.max(b));
            if normalized.contains(&e) {
                return Err(Error::Config(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            normalized.push(e);
        }
        Ok(SkeletonGraph {
            num_joints,
            edges: normalized,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, joint: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == joint || b == joint)
            .count()
    }

    /// Parent of every joint in the tree rooted at `root` (BFS order).
    /// Errors unless the graph is a connected tree.
    pub fn tree_parents(&self, root: usize) -> Result<Vec<Option<usize>>> {
        if root >= self.num_joints {
            return Err(Error::Config(format!(
                "root {root} out of range for {} joints",
                self.num_joints
            )));
        }
        if self.edges.len() != self.num_joints - 1 {
            return Err(Error::Config(format!(
                "not a tree: {} edges for {} joints",
                self.edges.len(),
                self.num_joints
            )));
        }
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parents = vec![None; self.num_joints];
        let mut seen = vec![false; self.num_joints];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(j) = queue.pop_front() {
            for &next in &adj[j] {
                if !seen[next] {
                    seen[next] = true;
                    parents[next] = Some(j);
                    queue.push_back(next);
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Config("not a tree: graph is disconnected".to_string()));
        }
        Ok(parents)
    }
}

/// Bone edges of the 25-joint kinematic tree, rooted at the spine base
/// (joint 0). Indices follow the usual depth-camera joint order: spine 0-1,
/// neck/head 2-3, left arm 4-7, right arm 8-11, left leg 12-15, right leg
/// 16-19, spine-shoulder 20, hand tips/thumbs 21-24.
pub const NTU25_JOINTS: usize = 25;
pub const NTU25_EDGES: [(usize, usize); 24] = [
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
    (21, 7),
    (22, 7),
    (23, 11),
    (24, 11),
];

/// The builtin 25-joint skeleton tree.
pub fn ntu_graph() -> SkeletonGraph {
    SkeletonGraph::new(NTU25_JOINTS, NTU25_EDGES.to_vec()).expect("builtin edge list is valid")
}

/// Binary adjacency with self-connections: `A[i][j] = 1` iff joints `i` and
/// `j` share an edge or `i == j`, so every joint attends at least to itself.
pub fn build_adjacency<S: Scalar>(graph: &SkeletonGraph) -> Tensor<S> {
    let v = graph.num_joints();
    let mut data = vec![S::ZERO; v * v];
    for i in 0..v {
        data[i * v + i] = S::ONE;
    }
    for &(a, b) in graph.edges() {
        data[a * v + b] = S::ONE;
        data[b * v + a] = S::ONE;
    }
    Tensor::from_vec(&[v, v], data).expect("square shape matches data")
}
