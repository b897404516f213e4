//! Static 3-D k-d tree for k-nearest-neighbour queries over point sets.
//!
//! Built once over an immutable slice; ties on distance resolve to the lower
//! point index so results are deterministic.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vec3>,
    // permutation of point indices; leaves reference contiguous ranges
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// One query hit: index into the original point slice and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the axis of largest extent
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Up to `k` nearest neighbours of `query`, sorted by increasing distance.
    pub fn nearest(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        self.search(0, query, k, &mut best);
        best
    }

    /// Single nearest neighbour.
    pub fn nearest_one(&self, query: &Vec3) -> Option<Neighbor> {
        self.nearest(query, 1).into_iter().next()
    }

    fn search(&self, node: usize, query: &Vec3, k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - query).norm_squared();
                    insert_sorted(best, k, Neighbor { index: i, dist_sq: d });
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, best);
                let worst = if best.len() < k {
                    f64::INFINITY
                } else {
                    best[best.len() - 1].dist_sq
                };
                if diff * diff <= worst {
                    self.search(far, query, k, best);
                }
            }
        }
    }
}

fn insert_sorted(best: &mut Vec<Neighbor>, k: usize, cand: Neighbor) {
    let precedes = |a: &Neighbor, b: &Neighbor| {
        a.dist_sq < b.dist_sq || (a.dist_sq == b.dist_sq && a.index < b.index)
    };
    if best.len() == k && !precedes(&cand, &best[k - 1]) {
        return;
    }
    let pos = best.iter().position(|n| precedes(&cand, n)).unwrap_or(best.len());
    best.insert(pos, cand);
    best.truncate(k);
}
