//! Density-based hierarchical clustering over mutual-reachability distances,
//! with excess-of-mass selection and an epsilon merge threshold.
//!
//! MST edges of equal weight are merged in one step, so the hierarchy (and
//! the result) does not depend on input order even with tied distances.

/// λ assigned to zero distances.
pub const LAMBDA_MAX: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbors (counting the point itself) defining the core distance.
    pub min_samples: usize,
    /// Clusters born below this distance are merged into their ancestors.
    pub epsilon: f64,
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize, epsilon: f64) -> Self {
        HdbscanParams { min_cluster_size, min_samples: min_cluster_size, epsilon }
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lambda(d: f64) -> f64 {
    if d > 0.0 {
        (1.0 / d).min(LAMBDA_MAX)
    } else {
        LAMBDA_MAX
    }
}

/// Distance to the `k`-th nearest point, the point itself counting as first.
pub fn core_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let k = k.clamp(1, n.max(1));
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| euclidean(&points[i], &points[j])).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph.
fn mst(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = euclidean(&points[cur], &points[j]).max(core[cur]).max(core[j]);
                if d < best[j] {
                    best[j] = d;
                    from[j] = cur;
                }
            }
        }
        let next = (0..n).filter(|&j| !in_tree[j]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        edges.push((from[next], next, best[next]));
        in_tree[next] = true;
        cur = next;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Node of the merge hierarchy: a point, or a component formed at `distance`
/// from two or more child components.
#[derive(Debug, Clone)]
pub(crate) enum MergeNode {
    Point(usize),
    Merge { distance: f64, children: Vec<usize>, size: usize },
}

impl MergeNode {
    fn size(&self) -> usize {
        match self {
            MergeNode::Point(_) => 1,
            MergeNode::Merge { size, .. } => *size,
        }
    }
}

/// Builds the merge hierarchy from weighted spanning-tree edges; the root is
/// the last node.
pub(crate) fn merge_hierarchy(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<MergeNode> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut nodes: Vec<MergeNode> = (0..n).map(MergeNode::Point).collect();
    let mut uf = UnionFind::new(n);
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut i = 0;
    while i < edges.len() {
        let d = edges[i].2;
        let mut j = i;
        while j < edges.len() && edges[j].2 == d {
            j += 1;
        }
        let mut touched = Vec::new();
        for &(a, b, _) in &edges[i..j] {
            let (ra, rb) = (uf.find(a), uf.find(b));
            touched.push((ra, node_of[ra]));
            touched.push((rb, node_of[rb]));
        }
        for &(a, b, _) in &edges[i..j] {
            uf.union(a, b);
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (old_root, node) in touched {
            let r = uf.find(old_root);
            match groups.iter_mut().find(|g| g.0 == r) {
                Some(g) => {
                    if !g.1.contains(&node) {
                        g.1.push(node);
                    }
                }
                None => groups.push((r, vec![node])),
            }
        }
        for (r, mut children) in groups {
            children.sort_unstable();
            let size = children.iter().map(|&c| nodes[c].size()).sum();
            nodes.push(MergeNode::Merge { distance: d, children, size });
            node_of[r] = nodes.len() - 1;
        }
        i = j;
    }
    nodes
}

#[derive(Debug, Clone)]
struct CondensedCluster {
    parent: Option<usize>,
    birth: f64,
    children: Vec<usize>,
    /// Points leaving this cluster, with the λ at which they leave.
    fallen: Vec<(usize, f64)>,
    stability: f64,
}

fn collect_points(nodes: &[MergeNode], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(k) = stack.pop() {
        match &nodes[k] {
            MergeNode::Point(p) => out.push(*p),
            MergeNode::Merge { children, .. } => stack.extend(children.iter().copied()),
        }
    }
}

fn condense(nodes: &[MergeNode], min_size: usize) -> Vec<CondensedCluster> {
    let root = nodes.len() - 1;
    let mut clusters =
        vec![CondensedCluster { parent: None, birth: 0.0, children: Vec::new(), fallen: Vec::new(), stability: 0.0 }];
    let mut stack = vec![(root, 0usize)];
    while let Some((node, cid)) = stack.pop() {
        let MergeNode::Merge { distance, children, .. } = &nodes[node] else {
            let MergeNode::Point(p) = nodes[node] else { unreachable!() };
            clusters[cid].fallen.push((p, LAMBDA_MAX));
            continue;
        };
        let lam = lambda(*distance);
        let big: Vec<usize> = children.iter().copied().filter(|&c| nodes[c].size() >= min_size).collect();
        for &c in children.iter().filter(|&&c| nodes[c].size() < min_size) {
            let mut pts = Vec::new();
            collect_points(nodes, c, &mut pts);
            clusters[cid].fallen.extend(pts.into_iter().map(|p| (p, lam)));
        }
        match big.len() {
            0 => {}
            1 => stack.push((big[0], cid)),
            _ => {
                for &c in &big {
                    clusters.push(CondensedCluster {
                        parent: Some(cid),
                        birth: lam,
                        children: Vec::new(),
                        fallen: Vec::new(),
                        stability: 0.0,
                    });
                    let new_id = clusters.len() - 1;
                    clusters[cid].children.push(new_id);
                    stack.push((c, new_id));
                }
            }
        }
    }
    let sizes = subtree_sizes(&clusters);
    for k in 0..clusters.len() {
        let birth = clusters[k].birth;
        let mut s: f64 = clusters[k].fallen.iter().map(|&(_, l)| l - birth).sum();
        for &c in &clusters[k].children {
            s += sizes[c] as f64 * (clusters[c].birth - birth);
        }
        clusters[k].stability = s;
    }
    clusters
}

fn subtree_sizes(clusters: &[CondensedCluster]) -> Vec<usize> {
    let mut sizes: Vec<usize> = clusters.iter().map(|c| c.fallen.len()).collect();
    // Children always have larger ids than their parents.
    for k in (0..clusters.len()).rev() {
        if let Some(p) = clusters[k].parent {
            sizes[p] += sizes[k];
        }
    }
    sizes
}

fn descendants(clusters: &[CondensedCluster], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = clusters[k].children.clone();
    while let Some(c) = stack.pop() {
        out.push(c);
        stack.extend(clusters[c].children.iter().copied());
    }
    out
}

fn birth_distance(c: &CondensedCluster) -> f64 {
    if c.birth > 0.0 {
        1.0 / c.birth
    } else {
        f64::INFINITY
    }
}

/// Cluster label per point (`None` = noise). Labels are dense in order of
/// first appearance over the point indices.
pub fn hdbscan(points: &[Vec<f64>], params: &HdbscanParams) -> Vec<Option<usize>> {
    let n = points.len();
    let m = params.min_cluster_size.max(2);
    if n < m {
        return vec![None; n];
    }
    let core = core_distances(points, params.min_samples);
    let nodes = merge_hierarchy(n, mst(points, &core));
    let clusters = condense(&nodes, m);

    // Excess of mass, bottom-up; the root may be selected on its own.
    let mut selected = vec![false; clusters.len()];
    let mut subtree_stability = vec![0.0; clusters.len()];
    for k in (0..clusters.len()).rev() {
        let child_sum: f64 = clusters[k].children.iter().map(|&c| subtree_stability[c]).sum();
        if clusters[k].children.is_empty() || clusters[k].stability >= child_sum {
            selected[k] = true;
            for d in descendants(&clusters, k) {
                selected[d] = false;
            }
            subtree_stability[k] = clusters[k].stability;
        } else {
            subtree_stability[k] = child_sum;
        }
    }

    if params.epsilon > 0.0 {
        // Each leaf born below epsilon is replaced by its first ancestor born
        // above it (or the root); nested targets keep only the outermost.
        let mut target = vec![false; clusters.len()];
        for leaf in (0..clusters.len()).filter(|&k| selected[k]) {
            let mut node = leaf;
            if birth_distance(&clusters[leaf]) < params.epsilon {
                loop {
                    let parent = clusters[node].parent.expect("non-root cluster has a parent");
                    node = parent;
                    if parent == 0 || birth_distance(&clusters[parent]) > params.epsilon {
                        break;
                    }
                }
            }
            target[node] = true;
        }
        for k in 0..clusters.len() {
            if target[k] {
                for d in descendants(&clusters, k) {
                    target[d] = false;
                }
            }
        }
        selected = target;
    }

    let mut label_of_cluster = vec![None; clusters.len()];
    let mut labels = vec![None; n];
    let mut next = 0;
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    for (k, c) in clusters.iter().enumerate() {
        for &(p, lam) in &c.fallen {
            let mut a = k;
            let owner = loop {
                if selected[a] {
                    break Some(a);
                }
                match clusters[a].parent {
                    Some(p) => a = p,
                    None => break None,
                }
            };
            let keep = match owner {
                Some(0) => {
                    let threshold = if params.epsilon > 0.0 {
                        1.0 / params.epsilon
                    } else {
                        clusters[0].fallen.iter().map(|f| f.1).fold(0.0, f64::max)
                    };
                    lam >= threshold
                }
                Some(_) => true,
                None => false,
            };
            if keep {
                assignment[p] = owner;
            }
        }
    }
    for p in 0..n {
        if let Some(c) = assignment[p] {
            let l = *label_of_cluster[c].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels[p] = Some(l);
        }
    }
    labels
}
