//! Exact k-nearest-neighbor and fixed-radius queries over a static point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::types::{dist2, Dim, Point};

const LEAF_SIZE: usize = 8;

/// A query hit: index into the indexed point slice and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    d2: f64,
    index: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree. Results are ordered by ascending distance, ties by index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: Dim,
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn new(points: &[Point], dim: Dim) -> Self {
        let mut index = Self {
            dim,
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest extent
        let n = self.dim.n();
        let mut best_axis = 0;
        let mut best_extent = -1.0;
        for axis in 0..n {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let c = self.points[i][axis];
                (lo.min(c), hi.max(c))
            });
            if hi - lo > best_extent {
                best_extent = hi - lo;
                best_axis = axis;
            }
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][best_axis].total_cmp(&points[b][best_axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][best_axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis: best_axis, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, optionally skipping one index.
    pub fn knn(&self, query: &Point, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        self.knn_within(query, k, f64::INFINITY, exclude)
    }

    /// The `k` nearest points within `radius` (inclusive).
    pub fn knn_within(&self, query: &Point, k: usize, radius: f64, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        let r2 = if radius.is_finite() { radius * radius } else { f64::INFINITY };
        self.knn_rec(0, query, k, r2, exclude, &mut heap);
        let mut out: Vec<HeapEntry> = heap.into_vec();
        out.sort();
        out.into_iter().map(|e| Neighbor { index: e.index, dist: e.d2.sqrt() }).collect()
    }

    fn knn_rec(&self, node: usize, q: &Point, k: usize, r2: f64, exclude: Option<usize>, heap: &mut BinaryHeap<HeapEntry>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d2 = dist2(q, &self.points[i]);
                    if d2 > r2 {
                        continue;
                    }
                    let entry = HeapEntry { d2, index: i };
                    if heap.len() < k {
                        heap.push(entry);
                    } else if entry < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(entry);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, r2, exclude, heap);
                let bound = diff * diff;
                let worst = if heap.len() < k { r2 } else { heap.peek().map_or(r2, |e| e.d2.min(r2)) };
                if bound <= worst {
                    self.knn_rec(far, q, k, r2, exclude, heap);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), sorted by distance.
    pub fn within(&self, query: &Point, radius: f64, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i, d2| {
            if Some(i) != exclude {
                out.push(HeapEntry { d2, index: i });
            }
        });
        out.sort();
        out.into_iter().map(|e| Neighbor { index: e.index, dist: e.d2.sqrt() }).collect()
    }

    /// Visits every point within `radius` in unspecified order with its squared distance.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, query: &Point, radius: f64, mut visit: F) {
        if self.points.is_empty() {
            return;
        }
        if !radius.is_finite() {
            for (i, p) in self.points.iter().enumerate() {
                visit(i, dist2(query, p));
            }
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = dist2(query, &self.points[i]);
                        if d2 <= r2 {
                            visit(i, d2);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = query[axis] - value;
                    if diff - radius <= 0.0 {
                        stack.push(left);
                    }
                    if diff + radius >= 0.0 {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Nearest point, if any.
    pub fn nearest(&self, query: &Point) -> Option<Neighbor> {
        self.knn(query, 1, None).into_iter().next()
    }
}
