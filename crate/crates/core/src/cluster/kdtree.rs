//! Exact k-nearest-neighbor search over 3D points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result};

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// KD-tree over a fixed point set. Queries return neighbors sorted by
/// (squared distance, index), so ties always resolve to the lower index.
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    root: Node,
}

#[derive(PartialEq)]
struct Candidate(f64, u32);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize) -> Node {
    if order.len() <= LEAF_SIZE {
        return Node::Leaf { start, end: start + order.len() };
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i as usize][a]);
            hi[a] = hi[a].max(points[i as usize][a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a as usize][axis].total_cmp(&points[b as usize][axis]));
    let value = points[order[mid] as usize][axis];
    let (l, r) = order.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, l, start)),
        right: Box::new(build(points, r, start + mid)),
    }
}

impl KdTree {
    pub fn new(positions: &[[f32; 3]]) -> Self {
        let points: Vec<[f64; 3]> = positions.iter().map(|p| p.map(|v| v as f64)).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let root = build(&points, &mut order, 0);
        KdTree { points, order, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest other points of point `query`, nearest first.
    pub fn knn(&self, query: usize, k: usize) -> Vec<u32> {
        let q = self.points[query];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, &q, query as u32, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.1).collect()
    }

    fn search(&self, node: &Node, q: &[f64; 3], skip: u32, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if k == 0 {
            return;
        }
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if i == skip {
                        continue;
                    }
                    let c = Candidate(dist2(q, &self.points[i as usize]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, k, heap);
                // Equal distance may still hide a lower-index tie, so only prune on strict excess.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.search(far, q, skip, k, heap);
                }
            }
        }
    }
}

/// Builds a KD-tree over Gaussian positions.
pub fn build_kd_index(positions: &[[f32; 3]]) -> KdTree {
    KdTree::new(positions)
}

/// Neighbor lists for `queries`; requires more than `k` points.
pub fn knn(index: &KdTree, queries: &[usize], k: usize) -> Result<Vec<Vec<u32>>> {
    if index.len() < k + 1 {
        return Err(Error::Precondition(format!("{} points cannot supply {k} neighbors", index.len())));
    }
    use rayon::prelude::*;
    Ok(queries.par_iter().map(|&q| index.knn(q, k)).collect())
}
