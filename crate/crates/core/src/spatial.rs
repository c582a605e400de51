//! Exact nearest-neighbour search over a static point set.
//!
//! Results are bit-identical to a brute-force scan: distances are computed as
//! `dx*dx + dy*dy + dz*dz` with `d = query - point`, and ties go to the
//! smallest point index. Subtrees are pruned only when their splitting-plane
//! distance is strictly greater than the current bound, so a tied point in a
//! far subtree is never missed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::pointcloud::{bounds_of, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpatialError {
    #[error("cannot build a spatial index over zero points")]
    Empty,
    #[error("requested {k} neighbours from an index of {size} points")]
    KTooLarge { k: usize, size: usize },
}

/// Squared Euclidean distance in the canonical summation order.
#[inline]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

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

/// Immutable k-d tree. Safe to query from many threads at once.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    // Point indices, permuted so that every leaf owns a contiguous range.
    perm: Vec<usize>,
    nodes: Vec<Node>,
    bounds: (Point3, Point3),
}

/// A neighbour: index into the indexed point set and its squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

// Max-heap entry for k-NN.
struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Result<Self, SpatialError> {
        let bounds = bounds_of(points).ok_or(SpatialError::Empty)?;
        let mut index = Self {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
            bounds,
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.perm[start..end];
        let (lo, hi) = bounds_of(&slice.iter().map(|&i| self.points[i]).collect::<Vec<_>>())
            .expect("non-empty range");
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap();
        if hi[axis] == lo[axis] {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.perm[start + mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (Point3, Point3) {
        self.bounds
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Closest indexed point; ties broken by smallest index.
    pub fn nearest(&self, query: &Point3) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_in(0, query, &mut best);
        best
    }

    fn nearest_in(&self, node: usize, q: &Point3, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: squared_distance(q, &self.points[i]),
                    };
                    if cand.key_cmp(best) == Ordering::Less {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points, ascending by distance then index.
    pub fn knn(&self, query: &Point3, k: usize) -> Result<Vec<Neighbor>, SpatialError> {
        if k > self.len() {
            return Err(SpatialError::KTooLarge { k, size: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, query, k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|h| h.0).collect();
        out.sort_by(Neighbor::key_cmp);
        Ok(out)
    }

    fn knn_in(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<HeapItem>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: squared_distance(q, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(HeapItem(cand));
                    } else if cand.key_cmp(&heap.peek().unwrap().0) == Ordering::Less {
                        heap.pop();
                        heap.push(HeapItem(cand));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0.dist2 {
                    self.knn_in(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sorted(points: &[Point3], q: &Point3) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist2: squared_distance(q, p),
            })
            .collect();
        all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
        all
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(SpatialIndex::build(&[]).unwrap_err(), SpatialError::Empty);
    }

    #[test]
    fn single_point() {
        let idx = SpatialIndex::build(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.nearest(&[0.0; 3]).index, 0);
    }

    #[test]
    fn nearest_simple() {
        let idx = SpatialIndex::build(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let n = idx.nearest(&[0.4, 0.0, 0.0]);
        assert_eq!(n.index, 0);
        assert_eq!(n.dist2, 0.4 * 0.4);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let mut pts = vec![[5.0, 5.0, 5.0]; 10];
        pts[2] = [1.0, 0.0, 0.0];
        pts[5] = [-1.0, 0.0, 0.0];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.nearest(&[0.0; 3]).index, 2);
        // Larger cloud so the tie spans different subtrees.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = random_points(&mut rng, 500);
        for p in pts.iter_mut() {
            p[0] += 10.0;
        }
        pts[400] = [1.0, 0.0, 0.0];
        pts[7] = [-1.0, 0.0, 0.0];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.nearest(&[0.0; 3]).index, 7);
    }

    #[test]
    fn duplicates_both_retrievable() {
        let idx = SpatialIndex::build(&[[1.0; 3], [0.0; 3], [1.0; 3]]).unwrap();
        let nn = idx.knn(&[1.0; 3], 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn bounding_box_matches_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 10_000);
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.len(), 10_000);
        let (lo, hi) = idx.bounds();
        for a in 0..3 {
            assert_eq!(lo[a], pts.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
            assert_eq!(hi[a], pts.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn knn_errors_and_edges() {
        let idx = SpatialIndex::build(&[[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        assert_eq!(
            idx.knn(&[0.0; 3], 4).unwrap_err(),
            SpatialError::KTooLarge { k: 4, size: 3 }
        );
        let all = idx.knn(&[2.0; 3], 3).unwrap();
        assert_eq!(all.iter().map(|n| n.index).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(idx.knn(&[0.9; 3], 1).unwrap()[0], idx.nearest(&[0.9; 3]));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = random_points(&mut rng, 200);
        let idx = SpatialIndex::build(&pts).unwrap();
        for _ in 0..50 {
            let q = random_points(&mut rng, 1)[0];
            let brute = brute_sorted(&pts, &q);
            assert_eq!(idx.nearest(&q), brute[0]);
            for k in [1, 5, 17, 200] {
                assert_eq!(idx.knn(&q, k).unwrap(), brute[..k].to_vec());
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Coarse lattice coordinates force plenty of exact ties.
        fn lattice() -> impl Strategy<Value = Vec<Point3>> {
            prop::collection::vec(prop::array::uniform3((-4i32..4).prop_map(|v| v as f64 * 0.5)), 1..1000)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn oracle_equivalence(points in lattice(), queries in prop::collection::vec(prop::array::uniform3(-2.5f64..2.5), 1..20), k in 1usize..12) {
                let idx = SpatialIndex::build(&points).unwrap();
                for q in &queries {
                    let brute = brute_sorted(&points, q);
                    prop_assert_eq!(idx.nearest(q), brute[0]);
                    let k = k.min(points.len());
                    prop_assert_eq!(idx.knn(q, k).unwrap(), brute[..k].to_vec());
                }
            }
        }
    }
}
