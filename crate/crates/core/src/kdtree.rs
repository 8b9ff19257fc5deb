//! Static 3-D k-d tree used for clustering, predicted-region queries and the
//! local map.

use crate::manifold::Vec3;
use std::cell::Cell;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Permutation of point indices; leaves reference contiguous ranges.
    order: Vec<usize>,
    nodes: Vec<Node>,
    visited: Cell<usize>,
}

impl KdTree {
    pub fn build(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            let n = points.len();
            build_rec(&points, &mut order, 0, n, &mut nodes);
        }
        KdTree { points, order, nodes, visited: Cell::new(0) }
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

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    /// Number of point distance evaluations since the last reset.
    pub fn visited(&self) -> usize {
        self.visited.get()
    }

    pub fn reset_visited(&self) {
        self.visited.set(0);
    }

    /// Indices of all points within `radius` of `q` (unordered).
    pub fn radius_search(&self, q: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        let mut visited = 0;
        while let Some(ni) = stack.pop() {
            match self.nodes[ni] {
                Node::Leaf { start, end } => {
                    for &pi in &self.order[start..end] {
                        visited += 1;
                        if (self.points[pi] - q).norm_squared() <= r2 {
                            out.push(pi);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let d = q[axis] - value;
                    if d <= radius {
                        stack.push(left);
                    }
                    if d >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
        self.visited.set(self.visited.get() + visited);
    }

    /// Up to `k` nearest neighbours within `max_dist`, sorted by distance.
    /// Returns `(index, squared distance)` pairs.
    pub fn knn(&self, q: &Vec3, k: usize, max_dist: f64) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return best;
        }
        let mut bound = max_dist * max_dist;
        self.knn_rec(0, q, k, &mut bound, &mut best);
        best
    }

    fn knn_rec(&self, ni: usize, q: &Vec3, k: usize, bound: &mut f64, best: &mut Vec<(usize, f64)>) {
        match self.nodes[ni] {
            Node::Leaf { start, end } => {
                let mut visited = 0;
                for &pi in &self.order[start..end] {
                    visited += 1;
                    let d2 = (self.points[pi] - q).norm_squared();
                    if d2 <= *bound {
                        let pos = best.partition_point(|&(i, d)| (d, i) < (d2, pi));
                        best.insert(pos, (pi, d2));
                        if best.len() > k {
                            best.pop();
                        }
                        if best.len() == k {
                            *bound = best[k - 1].1;
                        }
                    }
                }
                self.visited.set(self.visited.get() + visited);
            }
            Node::Split { axis, value, left, right } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, bound, best);
                if d * d <= *bound {
                    self.knn_rec(far, q, k, bound, best);
                }
            }
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_rec(points, order, start, start + mid, nodes);
    let right = build_rec(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = cloud(2000, 1);
        let tree = KdTree::build(pts.clone());
        for q in cloud(50, 2) {
            let got = tree.knn(&q, 5, 100.0);
            let mut brute: Vec<(usize, f64)> =
                pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            brute.truncate(5);
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = cloud(1000, 3);
        let tree = KdTree::build(pts.clone());
        let mut out = Vec::new();
        for q in cloud(30, 4) {
            tree.radius_search(&q, 0.7, &mut out);
            out.sort_unstable();
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= 0.7).collect();
            assert_eq!(out, brute);
        }
    }

    #[test]
    fn knn_respects_max_dist_and_empty_tree() {
        let tree = KdTree::build(vec![Vec3::new(10.0, 0.0, 0.0)]);
        assert!(tree.knn(&Vec3::zeros(), 3, 1.0).is_empty());
        assert!(KdTree::build(Vec::new()).knn(&Vec3::zeros(), 3, 1.0).is_empty());
    }

    #[test]
    fn radius_search_visits_few_points() {
        let pts = cloud(20000, 5);
        let tree = KdTree::build(pts);
        tree.reset_visited();
        let mut out = Vec::new();
        tree.radius_search(&Vec3::new(1.0, 1.0, 0.0), 0.3, &mut out);
        assert!(tree.visited() < 2000, "visited {}", tree.visited());
    }
}
