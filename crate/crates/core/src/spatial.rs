//! Static 3D kd-tree for radius and filtered k-nearest queries.
//!
//! Queries are exact: every comparison uses the same squared-distance
//! expression as a brute-force scan, so results match a linear search
//! bit for bit. Nearest-neighbor ties resolve toward the lower point id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    coords: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn arr(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Candidate ordered by `(distance², id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: u32,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl KdTree {
    /// Indexes `positions[i]` for each `i` in `ids`.
    pub fn build(positions: &[Point3<f64>], ids: impl IntoIterator<Item = u32>) -> Self {
        let mut items: Vec<([f64; 3], u32)> = ids
            .into_iter()
            .map(|i| (arr(&positions[i as usize]), i))
            .collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let len = items.len();
            Self::build_rec(&mut items, 0, len, &mut nodes);
        }
        let (coords, ids) = items.into_iter().unzip();
        KdTree { coords, ids, nodes }
    }

    /// Indexes every point.
    pub fn build_all(positions: &[Point3<f64>]) -> Self {
        Self::build(positions, 0..positions.len() as u32)
    }

    fn build_rec(items: &mut [([f64; 3], u32)], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
        let slot = nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return slot;
        }
        let slice = &mut items[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (c, _) in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
        let value = slice[mid].0[axis];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = Self::build_rec(items, start, start + mid, nodes);
        let right = Self::build_rec(items, start + mid, end, nodes);
        nodes[slot as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Calls `visit(id, d²)` for every indexed point with `d² <= radius²`.
    pub fn for_each_within(&self, query: &[f64; 3], radius: f64, mut visit: impl FnMut(u32, f64)) {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            match self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for i in start as usize..end as usize {
                        let d2 = dist2(query, &self.coords[i]);
                        if d2 <= r2 {
                            visit(self.ids[i], d2);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = query[axis as usize] - value;
                    let near_enough = diff * diff <= r2;
                    if diff <= 0.0 || near_enough {
                        stack.push(left);
                    }
                    if diff >= 0.0 || near_enough {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Ids within `radius`, ascending.
    pub fn within(&self, query: &[f64; 3], radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |id, _| out.push(id));
        out.sort_unstable();
        out
    }

    /// The `k` nearest points accepted by `keep`, ordered by `(d², id)`.
    pub fn nearest_filtered(&self, query: &[f64; 3], k: usize, keep: impl Fn(u32) -> bool) -> Vec<(u32, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &keep, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.id, c.d2)).collect()
    }

    pub fn nearest(&self, query: &[f64; 3], k: usize) -> Vec<(u32, f64)> {
        self.nearest_filtered(query, k, |_| true)
    }

    fn knn_rec(
        &self,
        node: u32,
        query: &[f64; 3],
        k: usize,
        keep: &impl Fn(u32) -> bool,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let id = self.ids[i];
                    if !keep(id) {
                        continue;
                    }
                    let cand = Candidate {
                        d2: dist2(query, &self.coords[i]),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis as usize] - value;
                let (first, second) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(first, query, k, keep, heap);
                // Points with coordinate equal to the split value may sit on
                // either side, so equal distances must still be explored.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.knn_rec(second, query, k, keep, heap);
                }
            }
        }
    }
}
