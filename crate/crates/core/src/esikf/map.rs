//! Incremental point map: a voxel hash for de-duplication plus one k-d tree
//! per cubic chunk. New points wait in a short per-chunk list that is
//! searched linearly until the chunk tree is rebuilt.

use std::collections::{BTreeMap, HashSet};

use crate::kdtree::KdTree;
use crate::manifold::Vec3;

const PENDING_LIMIT: usize = 256;

type Key = [i64; 3];

fn key(p: &Vec3, size: f64) -> Key {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

#[derive(Debug, Clone, Default)]
struct Chunk {
    tree: Option<KdTree>,
    pending: Vec<Vec3>,
}

impl Chunk {
    fn len(&self) -> usize {
        self.tree.as_ref().map_or(0, KdTree::len) + self.pending.len()
    }

    fn rebuild(&mut self) {
        let mut pts = self.tree.take().map(|t| t.points().to_vec()).unwrap_or_default();
        pts.append(&mut self.pending);
        self.tree = Some(KdTree::build(pts));
    }
}

#[derive(Debug, Clone)]
pub struct LocalMap {
    leaf: f64,
    chunk: f64,
    voxels: HashSet<Key>,
    chunks: BTreeMap<Key, Chunk>,
    len: usize,
}

impl LocalMap {
    pub fn new(leaf: f64, chunk: f64) -> Self {
        assert!(leaf > 0.0 && chunk >= leaf, "map leaf and chunk sizes must be positive");
        LocalMap { leaf, chunk, voxels: HashSet::new(), chunks: BTreeMap::new(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn leaf(&self) -> f64 {
        self.leaf
    }

    /// Inserts points whose voxel is still empty; returns how many were added.
    pub fn insert(&mut self, points: &[Vec3]) -> usize {
        let mut added = 0;
        for p in points {
            if !p.iter().all(|v| v.is_finite()) || !self.voxels.insert(key(p, self.leaf)) {
                continue;
            }
            let c = self.chunks.entry(key(p, self.chunk)).or_default();
            c.pending.push(*p);
            if c.pending.len() >= PENDING_LIMIT {
                c.rebuild();
            }
            added += 1;
        }
        self.len += added;
        added
    }

    /// Folds all pending points into their chunk trees.
    pub fn flush(&mut self) {
        for c in self.chunks.values_mut() {
            if !c.pending.is_empty() {
                c.rebuild();
            }
        }
    }

    /// Up to `k` nearest map points within `max_dist`, nearest first.
    pub fn knn(&self, q: &Vec3, k: usize, max_dist: f64) -> Vec<(Vec3, f64)> {
        let lo = key(&(q - Vec3::repeat(max_dist)), self.chunk);
        let hi = key(&(q + Vec3::repeat(max_dist)), self.chunk);
        let r2 = max_dist * max_dist;
        let mut best: Vec<(Vec3, f64)> = Vec::with_capacity(k + 1);
        let offer = |p: Vec3, d2: f64, best: &mut Vec<(Vec3, f64)>| {
            if d2 > r2 || (best.len() == k && d2 >= best[k - 1].1) {
                return;
            }
            let pos = best.partition_point(|e| e.1 <= d2);
            best.insert(pos, (p, d2));
            best.truncate(k);
        };
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let Some(c) = self.chunks.get(&[x, y, z]) else { continue };
                    if let Some(t) = &c.tree {
                        for (i, d2) in t.knn(q, k, max_dist) {
                            offer(*t.point(i), d2, &mut best);
                        }
                    }
                    for p in &c.pending {
                        offer(*p, (p - q).norm_squared(), &mut best);
                    }
                }
            }
        }
        best
    }

    /// Point count per chunk, for diagnostics.
    pub fn chunk_sizes(&self) -> Vec<usize> {
        self.chunks.values().map(Chunk::len).collect()
    }
}
