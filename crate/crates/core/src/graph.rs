//! Skeleton layouts and the partitioned, normalised adjacency matrices.
//!
//! Matrices are indexed `[root][neighbour]`: entry `(i, j)` of subset `k` is set
//! when joint `j` belongs to subset `k` of root joint `i`'s neighbourhood.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of neighbourhood subsets (root, centripetal, centrifugal).
pub const K_V: usize = 3;
pub const EPSILON: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// OpenPose 18-joint layout used by Kinetics-Skeleton.
    Kinetics18,
    /// COCO 17-keypoint layout.
    Coco17,
}

impl Layout {
    pub fn id(self) -> u32 {
        match self {
            Layout::Kinetics18 => 0,
            Layout::Coco17 => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Layout::Kinetics18),
            1 => Ok(Layout::Coco17),
            _ => Err(Error::config(format!("unknown layout id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Kinetics18 => "kinetics18",
            Layout::Coco17 => "coco17",
        }
    }

    pub fn joint_count(self) -> usize {
        self.joint_names().len()
    }

    pub fn joint_names(self) -> &'static [&'static str] {
        match self {
            Layout::Kinetics18 => &KINETICS18_JOINTS,
            Layout::Coco17 => &COCO17_JOINTS,
        }
    }

    /// Left/right joint pairs exchanged by horizontal mirroring.
    pub fn mirror_pairs(self) -> &'static [(usize, usize)] {
        match self {
            Layout::Kinetics18 => &KINETICS18_MIRROR,
            Layout::Coco17 => &COCO17_MIRROR,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinetics18" => Ok(Layout::Kinetics18),
            "coco17" => Ok(Layout::Coco17),
            _ => Err(Error::config(format!("unknown layout '{s}' (expected kinetics18 or coco17)"))),
        }
    }
}

const KINETICS18_JOINTS: [&str; 18] = [
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip",
    "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
];

const KINETICS18_EDGES: [(usize, usize); 17] = [
    (4, 3),
    (3, 2),
    (7, 6),
    (6, 5),
    (13, 12),
    (12, 11),
    (10, 9),
    (9, 8),
    (11, 5),
    (8, 2),
    (5, 1),
    (2, 1),
    (0, 1),
    (15, 0),
    (14, 0),
    (17, 15),
    (16, 14),
];

const KINETICS18_MIRROR: [(usize, usize); 8] =
    [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)];

const COCO17_JOINTS: [&str; 17] = [
    "nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
];

const COCO17_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

const COCO17_MIRROR: [(usize, usize); 8] =
    [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    /// `None` for ad-hoc graphs built in tests.
    pub layout: Option<Layout>,
    pub joint_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub center: usize,
}

pub fn build_skeleton_graph(layout: Layout) -> SkeletonGraph {
    let (edges, center): (&[(usize, usize)], usize) = match layout {
        Layout::Kinetics18 => (&KINETICS18_EDGES, 1),
        Layout::Coco17 => (&COCO17_EDGES, 0),
    };
    SkeletonGraph { layout: Some(layout), joint_count: layout.joint_count(), edges: edges.to_vec(), center }
}

impl SkeletonGraph {
    /// Validated graph over `joint_count` joints.
    pub fn custom(joint_count: usize, edges: &[(usize, usize)], center: usize) -> Result<Self> {
        let g = SkeletonGraph { layout: None, joint_count, edges: edges.to_vec(), center };
        if center >= joint_count {
            return Err(Error::config(format!("center joint {center} out of range")));
        }
        for &(a, b) in edges {
            if a >= joint_count || b >= joint_count {
                return Err(Error::config(format!("edge ({a}, {b}) out of range for {joint_count} joints")));
            }
            if a == b {
                return Err(Error::config(format!("self-edge on joint {a}")));
            }
        }
        if g.hop_distances().iter().any(Option::is_none) {
            return Err(Error::config("skeleton graph is not connected"));
        }
        Ok(g)
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.joint_count];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    /// BFS hop distance of every joint from `from`.
    pub fn hops_from(&self, from: usize) -> Vec<Option<usize>> {
        let nb = self.neighbours();
        let mut dist = vec![None; self.joint_count];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &nb[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn hop_distances(&self) -> Vec<Option<usize>> {
        self.hops_from(self.center)
    }

    /// 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Tensor<f64> {
        let n = self.joint_count;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }
}

/// Root / centripetal / centrifugal 0/1 matrices. Neighbours at the same hop
/// distance as the root go to the centripetal subset.
pub fn spatial_partition(graph: &SkeletonGraph) -> [Tensor<f64>; K_V] {
    let n = graph.joint_count;
    let hops: Vec<usize> = graph.hop_distances().into_iter().map(|d| d.expect("connected graph")).collect();
    let mut subsets = [Tensor::eye(n), Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n])];
    for (i, nb) in graph.neighbours().iter().enumerate() {
        for &j in nb {
            let k = if hops[j] <= hops[i] { 1 } else { 2 };
            subsets[k].set(&[i, j], 1.0);
        }
    }
    subsets
}

/// `Λ^{-1/2} Ā Λ^{-1/2}` with `Λ_ii = Σ_j Ā_ij + ε`.
pub fn normalize_adjacency(a_bar: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let n = a_bar.shape()[0];
    let inv_sqrt: Vec<f64> =
        (0..n).map(|i| 1.0 / ((0..n).map(|j| a_bar.at(&[i, j])).sum::<f64>() + eps).sqrt()).collect();
    Tensor::from_fn(&[n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        a_bar.data()[idx] * inv_sqrt[i] * inv_sqrt[j]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedAdjacency {
    pub subsets: Vec<Tensor<f64>>,
    pub epsilon: f64,
}

impl PartitionedAdjacency {
    pub fn build(graph: &SkeletonGraph) -> Self {
        Self::with_epsilon(graph, EPSILON)
    }

    pub fn with_epsilon(graph: &SkeletonGraph, epsilon: f64) -> Self {
        let subsets = spatial_partition(graph).iter().map(|a| normalize_adjacency(a, epsilon)).collect();
        Self { subsets, epsilon }
    }

    pub fn joint_count(&self) -> usize {
        self.subsets[0].shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes() {
        let k = build_skeleton_graph(Layout::Kinetics18);
        assert_eq!((k.joint_count, k.edges.len(), k.center), (18, 17, 1));
        let c = build_skeleton_graph(Layout::Coco17);
        assert_eq!(c.joint_count, 17);
        for g in [k, c] {
            assert!(g.hops_from(0).iter().all(Option::is_some));
        }
    }

    #[test]
    fn layout_ids_round_trip() {
        for l in [Layout::Kinetics18, Layout::Coco17] {
            assert_eq!(Layout::from_id(l.id()).unwrap(), l);
            assert_eq!(l.name().parse::<Layout>().unwrap(), l);
        }
        assert!(matches!(Layout::from_id(9), Err(Error::Config(_))));
        assert!(matches!("ntu25".parse::<Layout>(), Err(Error::Config(_))));
    }

    #[test]
    fn three_node_path_partition() {
        let g = SkeletonGraph::custom(3, &[(0, 1), (1, 2)], 1).unwrap();
        let [root, cp, cf] = spatial_partition(&g);
        assert_eq!(root, Tensor::eye(3));
        assert_eq!(cp.at(&[0, 1]), 1.0);
        assert_eq!(cf.at(&[1, 0]), 1.0);
        assert_eq!(cp.at(&[1, 0]), 0.0);
        assert_eq!(cf.at(&[0, 1]), 0.0);
    }

    #[test]
    fn equidistant_neighbours_are_centripetal() {
        // triangle with center 0: joints 1 and 2 are both one hop away
        let g = SkeletonGraph::custom(3, &[(0, 1), (1, 2), (0, 2)], 0).unwrap();
        let [_, cp, cf] = spatial_partition(&g);
        assert_eq!(cp.at(&[1, 2]), 1.0);
        assert_eq!(cp.at(&[2, 1]), 1.0);
        assert_eq!(cf.at(&[1, 2]), 0.0);
    }

    #[test]
    fn normalisation_closed_forms() {
        let eps = EPSILON;
        let id = normalize_adjacency(&Tensor::eye(4), eps);
        for i in 0..4 {
            assert!((id.at(&[i, i]) - 1.0 / (1.0 + eps)).abs() < 1e-15);
        }
        assert!(normalize_adjacency(&Tensor::zeros(&[3, 3]), eps).data().iter().all(|&v| v == 0.0));
        let pair = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let a = normalize_adjacency(&pair, eps);
        assert!((a.at(&[0, 1]) - 1.0 / (1.0 + eps)).abs() < 1e-15);
        assert_eq!(a.at(&[0, 0]), 0.0);
    }

    #[test]
    fn custom_graph_validation() {
        assert!(SkeletonGraph::custom(3, &[(0, 1)], 0).is_err());
        assert!(SkeletonGraph::custom(3, &[(0, 0), (0, 1), (1, 2)], 0).is_err());
        assert!(SkeletonGraph::custom(3, &[(0, 3)], 0).is_err());
    }
}
