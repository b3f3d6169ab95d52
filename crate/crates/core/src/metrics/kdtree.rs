//! Exact nearest-neighbor index: an axis-aligned splitting tree over 3-D
//! points with branch-and-bound queries. Distances match a linear scan
//! bit-for-bit (same squared-distance arithmetic).

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

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

pub struct NearestNeighborIndex {
    points: Vec<[f64; 3]>,
    normals: Option<Vec<[f64; 3]>>,
    /// Permutation of point indices referenced by leaf ranges.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

#[inline]
pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl NearestNeighborIndex {
    pub fn new(points: Vec<[f64; 3]>, normals: Option<Vec<[f64; 3]>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("nearest-neighbor index needs points"));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::shape("one normal per point required"));
            }
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let len = order.len();
        let root = build(&points, &mut order, 0, len, &mut nodes);
        Ok(NearestNeighborIndex {
            points,
            normals,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the exact nearest point.
    pub fn nearest(&self, q: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        best
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub fn normal(&self, i: usize) -> Option<[f64; 3]> {
        self.normals.as_ref().map(|n| n[i])
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(self.points[i as usize], q);
                    if d < best.1 {
                        *best = (i as usize, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if delta * delta < best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // Split the widest axis at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        let p = points[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];
    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[placeholder] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    placeholder
}
