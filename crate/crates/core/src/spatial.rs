//! Exact k-nearest-neighbor queries over 3D point sets.
//!
//! A leaves-only kd-tree with deterministic construction and a documented
//! tie-break: candidates are ordered by squared Euclidean distance, then by
//! ascending point index. Queries are read-only and safe to run from many
//! threads at once.

use crate::math::V3;
use crate::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("cannot build an index over zero points")]
    EmptyInput,
    #[error("k = {k} exceeds the {available} available points")]
    KTooLarge { k: usize, available: usize },
}

const BUCKET: usize = 16;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf {
        start: usize,
        len: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable exact-kNN index over a snapshot of point positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex<T> {
    points: Vec<V3<T>>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

impl<T: Scalar> SpatialIndex<T> {
    pub fn build(positions: &[V3<T>]) -> Result<Self, SpatialError> {
        if positions.is_empty() {
            return Err(SpatialError::EmptyInput);
        }
        let mut index = SpatialIndex {
            points: positions.to_vec(),
            order: (0..positions.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        let n = positions.len();
        index.root = index.split(0, n);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn split(&mut self, start: usize, len: usize) -> usize {
        if len <= BUCKET {
            self.nodes.push(Node::Leaf { start, len });
            return self.nodes.len() - 1;
        }
        // Widest-extent axis keeps the tree balanced on anisotropic clouds.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..start + len] {
            let p = self.points[i as usize];
            for a in 0..3 {
                let v = p[a].as_f64();
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let points = &self.points;
        let slice = &mut self.order[start..start + len];
        slice.sort_unstable_by(|&a, &b| {
            let ca = points[a as usize][axis].as_f64();
            let cb = points[b as usize][axis].as_f64();
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        let mid = len / 2;
        let value = self.points[self.order[start + mid] as usize][axis].as_f64();
        let left = self.split(start, mid);
        let right = self.split(start + mid, len - mid);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// Exact k nearest neighbors of `query`, optionally excluding one point.
    /// Returned indices are sorted by (distance, index).
    pub fn knn(
        &self,
        query: V3<T>,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<usize>, SpatialError> {
        let available = self.points.len() - usize::from(exclude.is_some());
        if k > available {
            return Err(SpatialError::KTooLarge { k, available });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = [
            query[0].as_f64(),
            query[1].as_f64(),
            query[2].as_f64(),
        ];
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(self.root, q, k, exclude, &mut best);
        Ok(best.into_iter().map(|(_, i)| i as usize).collect())
    }

    fn search(
        &self,
        node: usize,
        q: [f64; 3],
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, u32)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, len } => {
                for &i in &self.order[start..start + len] {
                    if exclude == Some(i as usize) {
                        continue;
                    }
                    let p = self.points[i as usize];
                    let mut d2 = 0.0;
                    for a in 0..3 {
                        let d = p[a].as_f64() - q[a];
                        d2 += d * d;
                    }
                    let cand = (d2, i);
                    if best.len() == k {
                        let worst = *best.last().unwrap();
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                    }
                    let pos = best.partition_point(|&(bd, bi)| {
                        bd < cand.0 || (bd == cand.0 && bi < cand.1)
                    });
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let gap = q[axis] - value;
                let (near, far) = if gap < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, best);
                // Equality must recurse: a tied distance can still win on index.
                if best.len() < k || gap * gap <= best.last().unwrap().0 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_knn(points: &[V3<f64>], q: V3<f64>, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| exclude != Some(*i))
            .map(|(i, p)| {
                let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn singleton_and_k_zero() {
        let idx = SpatialIndex::build(&[[0.0f64, 0.0, 0.0]]).unwrap();
        assert!(idx.knn([1.0, 1.0, 1.0], 0, None).unwrap().is_empty());
        assert!(matches!(
            idx.knn([0.0, 0.0, 0.0], 1, Some(0)),
            Err(SpatialError::KTooLarge { .. })
        ));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            SpatialIndex::<f64>::build(&[]),
            Err(SpatialError::EmptyInput)
        ));
    }

    #[test]
    fn collinear_with_self_exclusion() {
        let pts = [
            [0.0f64, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn(pts[0], 2, Some(0)).unwrap(), vec![1, 2]);
    }

    #[test]
    fn equidistant_ties_break_by_index() {
        let pts = [[1.0f64, 0.0, 0.0], [-1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn([0.0, 0.0, 0.0], 2, None).unwrap(), vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = StdRng::seed_from_u64(99);
        for trial in 0..10 {
            let n = rng.gen_range(2..400);
            let pts: Vec<V3<f64>> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let idx = SpatialIndex::build(&pts).unwrap();
            for _ in 0..20 {
                let q = [
                    rng.gen_range(-1.2..1.2),
                    rng.gen_range(-1.2..1.2),
                    rng.gen_range(-1.2..1.2),
                ];
                let k = rng.gen_range(1..=n.min(12));
                let exclude = if rng.gen_bool(0.5) {
                    Some(rng.gen_range(0..n))
                } else {
                    None
                };
                if k > n - usize::from(exclude.is_some()) {
                    continue;
                }
                let got = idx.knn(q, k, exclude).unwrap();
                let want = brute_knn(&pts, q, k, exclude);
                assert_eq!(got, want, "trial {trial}");
            }
        }
    }

    #[test]
    fn duplicate_points_follow_index_order() {
        let pts = vec![[0.5f64, 0.5, 0.5]; 40];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn([0.5, 0.5, 0.5], 3, None).unwrap(), vec![0, 1, 2]);
        assert_eq!(idx.knn([0.5, 0.5, 0.5], 3, Some(0)).unwrap(), vec![1, 2, 3]);
    }
}
