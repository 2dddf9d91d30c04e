//! Incremental k-d tree over world-frame map points plus the projection
//! of registered scan points into the world frame.
//!
//! Inserts descend the tree like a binary search on the node's split
//! dimension; whenever the subtree balance degrades past `ALPHA`, the
//! highest unbalanced subtree is rebuilt around coordinate medians.
//! Queries are exact: ties are broken by lexicographic coordinate so the
//! result is a pure function of the stored point set.

use std::collections::HashSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::manifold::Vec3;
use crate::state::{Extrinsics, FilterState};

/// Rebuild a subtree when one child holds more than this share of it.
const ALPHA: f64 = 0.7;
/// Subtrees smaller than this are never worth rebuilding.
const REBUILD_MIN: u32 = 16;
/// Points closer than this to an existing point are treated as duplicates.
const DEDUP_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
struct Node {
    point: Vec3,
    split_dim: u8,
    left: Option<u32>,
    right: Option<u32>,
    size: u32,
}

/// Incremental k-d tree map index.
#[derive(Clone, Debug, Default)]
pub struct MapIndex {
    nodes: Vec<Node>,
    root: Option<u32>,
}

/// Total order used for distance ties: lexicographic on coordinates.
fn lex_less(a: &Vec3, b: &Vec3) -> bool {
    (a.x, a.y, a.z) < (b.x, b.y, b.z)
}

impl MapIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.root.map_or(0, |r| self.nodes[r as usize].size as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// Insert one point. Returns false when it deduplicated against an
    /// existing point.
    pub fn insert(&mut self, p: Vec3) -> bool {
        let Some(root) = self.root else {
            self.nodes.push(Node {
                point: p,
                split_dim: 0,
                left: None,
                right: None,
                size: 1,
            });
            self.root = Some(0);
            return true;
        };
        // Exact nearest-neighbour check keeps the dedup guarantee
        // independent of tree shape.
        if self.knn(&p, 1).map_or(false, |n| n[0].1 < DEDUP_EPS) {
            return false;
        }
        let mut path: Vec<u32> = Vec::with_capacity(32);
        let mut idx = root;
        loop {
            let node = &self.nodes[idx as usize];
            path.push(idx);
            let dim = node.split_dim as usize;
            let next = if p[dim] < node.point[dim] {
                node.left
            } else {
                node.right
            };
            match next {
                Some(n) => idx = n,
                None => break,
            }
        }
        let parent = *path.last().unwrap();
        let child_dim = (self.nodes[parent as usize].split_dim + 1) % 3;
        let new_idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            point: p,
            split_dim: child_dim,
            left: None,
            right: None,
            size: 1,
        });
        let dim = self.nodes[parent as usize].split_dim as usize;
        if p[dim] < self.nodes[parent as usize].point[dim] {
            self.nodes[parent as usize].left = Some(new_idx);
        } else {
            self.nodes[parent as usize].right = Some(new_idx);
        }
        for &i in &path {
            self.nodes[i as usize].size += 1;
        }
        // Rebuild the highest subtree that violates the balance bound.
        for &i in &path {
            if self.is_unbalanced(i) {
                self.rebuild_subtree(i);
                break;
            }
        }
        true
    }

    pub fn insert_many<I: IntoIterator<Item = Vec3>>(&mut self, points: I) {
        for p in points {
            self.insert(p);
        }
    }

    fn subtree_size(&self, idx: Option<u32>) -> u32 {
        idx.map_or(0, |i| self.nodes[i as usize].size)
    }

    fn is_unbalanced(&self, idx: u32) -> bool {
        let node = &self.nodes[idx as usize];
        if node.size < REBUILD_MIN {
            return false;
        }
        let l = self.subtree_size(node.left) as f64;
        let r = self.subtree_size(node.right) as f64;
        l.max(r) > ALPHA * node.size as f64
    }

    fn collect_points(&self, idx: u32, out: &mut Vec<Vec3>) {
        let node = &self.nodes[idx as usize];
        out.push(node.point);
        if let Some(l) = node.left {
            self.collect_points(l, out);
        }
        if let Some(r) = node.right {
            self.collect_points(r, out);
        }
    }

    fn collect_slots(&self, idx: u32, out: &mut Vec<u32>) {
        let node = &self.nodes[idx as usize];
        let (l, r) = (node.left, node.right);
        out.push(idx);
        if let Some(l) = l {
            self.collect_slots(l, out);
        }
        if let Some(r) = r {
            self.collect_slots(r, out);
        }
    }

    fn rebuild_subtree(&mut self, idx: u32) {
        let mut pts = Vec::with_capacity(self.nodes[idx as usize].size as usize);
        self.collect_points(idx, &mut pts);
        // Reuse the subtree's own node slots so links from the parent
        // stay valid; slot 0 of the list is the subtree root itself.
        let mut slots = Vec::with_capacity(pts.len());
        self.collect_slots(idx, &mut slots);
        debug_assert_eq!(slots.len(), pts.len());
        let mut cursor = 0usize;
        self.build_balanced(&mut pts[..], &slots, &mut cursor, idx);
    }

    /// Build a balanced subtree over `pts`, rooted in `root_slot`, drawing
    /// node storage from `slots`.
    fn build_balanced(&mut self, pts: &mut [Vec3], slots: &[u32], cursor: &mut usize, root_slot: u32) {
        debug_assert!(!pts.is_empty());
        // Split along the widest extent.
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in pts.iter() {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let extent = hi - lo;
        let dim = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by(mid, |a, b| {
            a[dim]
                .partial_cmp(&b[dim])
                .unwrap()
                .then_with(|| (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).unwrap())
        });
        let point = pts[mid];
        let n = pts.len() as u32;
        let (left_half, rest) = pts.split_at_mut(mid);
        let right_half = &mut rest[1..];

        let left = if left_half.is_empty() {
            None
        } else {
            *cursor += 1;
            let slot = slots[*cursor];
            self.build_balanced(left_half, slots, cursor, slot);
            Some(slot)
        };
        let right = if right_half.is_empty() {
            None
        } else {
            *cursor += 1;
            let slot = slots[*cursor];
            self.build_balanced(right_half, slots, cursor, slot);
            Some(slot)
        };
        self.nodes[root_slot as usize] = Node {
            point,
            split_dim: dim as u8,
            left,
            right,
            size: n,
        };
    }

    /// Exact k nearest neighbours by Euclidean distance, ties broken by
    /// lexicographic coordinate. Results come back sorted by distance.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<Vec<(Vec3, f64)>> {
        if self.len() < k {
            return Err(Error::InsufficientPoints {
                have: self.len(),
                need: k,
            });
        }
        let mut best: Vec<(f64, Vec3)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root.unwrap(), query, k, &mut best);
        Ok(best.into_iter().map(|(d2, p)| (p, d2.sqrt())).collect())
    }

    fn knn_rec(&self, idx: u32, query: &Vec3, k: usize, best: &mut Vec<(f64, Vec3)>) {
        let node = &self.nodes[idx as usize];
        let d2 = (node.point - query).norm_squared();
        // Insertion sort on (distance^2, lexicographic point).
        if best.len() < k || d2 < best[k - 1].0 || (d2 == best[k - 1].0 && lex_less(&node.point, &best[k - 1].1))
        {
            let pos = best
                .iter()
                .position(|(bd, bp)| d2 < *bd || (d2 == *bd && lex_less(&node.point, bp)))
                .unwrap_or(best.len());
            best.insert(pos, (d2, node.point));
            best.truncate(k);
        }
        let dim = node.split_dim as usize;
        let diff = query[dim] - node.point[dim];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.knn_rec(n, query, k, best);
        }
        // Ties at exactly the plane distance can still win on the
        // lexicographic key, so only a strictly farther plane prunes.
        let worst = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
        if let Some(f) = far {
            if diff * diff <= worst {
                self.knn_rec(f, query, k, best);
            }
        }
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &Vec3> {
        self.nodes.iter().map(|n| &n.point)
    }
}

/// Map with an insert-dedup grid: at most one stored point per grid cell,
/// mirroring a fixed map resolution.
#[derive(Clone, Debug)]
pub struct WorldMap {
    pub index: MapIndex,
    occupied: HashSet<(i64, i64, i64)>,
    resolution: f64,
}

impl WorldMap {
    pub fn new(resolution: f64) -> Self {
        WorldMap {
            index: MapIndex::new(),
            occupied: HashSet::new(),
            resolution,
        }
    }

    fn cell(&self, p: &Vec3) -> (i64, i64, i64) {
        (
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
            (p.z / self.resolution).floor() as i64,
        )
    }

    /// Insert points, keeping the first point seen per grid cell.
    pub fn insert_filtered(&mut self, points: &[Vec3]) -> usize {
        let mut added = 0;
        for p in points {
            let key = self.cell(p);
            if self.occupied.insert(key) {
                if self.index.insert(*p) {
                    added += 1;
                } else {
                    self.occupied.remove(&key);
                }
            }
        }
        added
    }

    /// ASCII export, one `x y z` line per stored point.
    pub fn export_ascii<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in self.index.iter_points() {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

/// Project a LiDAR point into the world frame:
/// `R_I_E (R_L_I p_L + p_L_I) + p_I_E + p_ez e3`.
/// In inertial mode this reduces to the standard body-to-world transform.
pub fn project_to_world(x: &FilterState, ext: &Extrinsics, p_l: &Vec3) -> Vec3 {
    x.q * ext.to_imu(p_l) + x.p + x.p_ez * Vec3::z()
}

/// Same transform without the transport lift: the point expressed in the
/// elevator-local registration frame.
pub fn project_to_local(x: &FilterState, ext: &Extrinsics, p_l: &Vec3) -> Vec3 {
    x.q * ext.to_imu(p_l) + x.p
}
