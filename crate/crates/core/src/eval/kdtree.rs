//! Exact nearest-neighbour search over 3D points.
//!
//! The tree only prunes a subtree when the squared distance to the splitting
//! plane is strictly greater than the best squared distance found so far.
//! Floating-point subtraction, squaring and addition of non-negative terms
//! are all monotone, so every pruned point's computed squared distance is
//! also strictly greater; the minimum therefore equals the brute-force one
//! bit for bit.

use alloc::vec::Vec;

use super::Point3;

/// Squared Euclidean distance, summed in x, y, z order.
#[inline]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Balanced kd-tree stored implicitly: each sub-slice's middle element is
/// the node, cycling the split axis with depth.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
}

fn build(points: &mut [Point3], depth: usize) {
    if points.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, right) = points.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut right[1..], depth + 1);
}

fn search(points: &[Point3], depth: usize, query: &Point3, best: &mut f64) {
    if points.is_empty() {
        return;
    }
    let mid = points.len() / 2;
    let node = &points[mid];
    let d = squared_distance(query, node);
    if d < *best {
        *best = d;
    }
    let axis = depth % 3;
    let diff = query[axis] - node[axis];
    let (near, far) = if diff < 0.0 { (&points[..mid], &points[mid + 1..]) } else { (&points[mid + 1..], &points[..mid]) };
    search(near, depth + 1, query, best);
    if !(diff * diff > *best) {
        search(far, depth + 1, query, best);
    }
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut points = points.to_vec();
        build(&mut points, 0);
        KdTree { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest squared distance from `query` to the tree (∞ when empty).
    pub fn nearest_squared(&self, query: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        search(&self.points, 0, query, &mut best);
        best
    }

    pub fn nearest_distance(&self, query: &Point3) -> f64 {
        libm::sqrt(self.nearest_squared(query))
    }
}

/// O(n·m) reference: nearest distance from each query to `targets`.
pub fn brute_force_distances(queries: &[Point3], targets: &[Point3]) -> Vec<f64> {
    queries
        .iter()
        .map(|q| libm::sqrt(targets.iter().map(|t| squared_distance(q, t)).fold(f64::INFINITY, f64::min)))
        .collect()
}
