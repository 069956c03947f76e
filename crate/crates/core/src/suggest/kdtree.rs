//! Exact k-nearest-neighbour search over a static point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::features::squared_distance;
use crate::Scalar;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node<F> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: F, left: usize, right: usize },
}

/// A neighbour of a probe: point index and squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour<F> {
    pub index: usize,
    pub squared_distance: F,
}

/// KD-tree with median splits cycling through the axes.
///
/// Results are ordered by distance, then by the caller-supplied `rank` of
/// each point, so equal-distance neighbours come out in a fixed order.
#[derive(Debug, Clone)]
pub struct KdTree<F> {
    dim: usize,
    coords: Vec<F>,
    rank: Vec<usize>,
    order: Vec<usize>,
    nodes: Vec<Node<F>>,
}

struct Candidate<F> {
    dist: F,
    rank: usize,
    index: usize,
}

impl<F: Scalar> Candidate<F> {
    fn key_cmp(&self, dist: F, rank: usize) -> Ordering {
        self.dist.cmp_total(&dist).then(self.rank.cmp(&rank))
    }
}

impl<F: Scalar> PartialEq for Candidate<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<F: Scalar> Eq for Candidate<F> {}
impl<F: Scalar> PartialOrd for Candidate<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<F: Scalar> Ord for Candidate<F> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other.dist, other.rank)
    }
}

impl<F: Scalar> KdTree<F> {
    /// `coords` is row-major with `dim` values per point; `rank[i]` breaks
    /// distance ties (lower first) and must be distinct per point.
    pub fn build(dim: usize, coords: Vec<F>, rank: Vec<usize>) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(coords.len(), dim * rank.len(), "coordinate count");
        let mut tree = Self {
            dim,
            coords,
            order: (0..rank.len()).collect(),
            rank,
            nodes: Vec::new(),
        };
        if !tree.rank.is_empty() {
            tree.split(0, tree.rank.len(), 0);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[F] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn split(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = depth % self.dim;
        let mid = start + (end - start) / 2;
        let (coords, dim) = (&self.coords, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis]
                .cmp_total(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.coords[self.order[mid] * dim + axis];
        let left = self.split(start, mid, depth + 1);
        let right = self.split(mid, end, depth + 1);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `min(k, len)` nearest points, ascending by (distance, rank).
    pub fn nearest(&self, probe: &[F], k: usize) -> Vec<Neighbour<F>> {
        assert_eq!(probe.len(), self.dim, "probe dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, probe, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Neighbour {
                index: c.index,
                squared_distance: c.dist,
            })
            .collect()
    }

    fn search(&self, node: usize, probe: &[F], k: usize, heap: &mut BinaryHeap<Candidate<F>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let dist = squared_distance(self.point(i), probe);
                    let rank = self.rank[i];
                    if heap.len() < k {
                        heap.push(Candidate { dist, rank, index: i });
                    } else if heap.peek().is_some_and(|w| w.key_cmp(dist, rank) == Ordering::Greater) {
                        heap.pop();
                        heap.push(Candidate { dist, rank, index: i });
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = probe[axis] - value;
                let (near, far) = if diff < F::zero() { (left, right) } else { (right, left) };
                self.search(near, probe, k, heap);
                // Equal plane distance may still hold a lower-ranked tie.
                if heap.len() < k || heap.peek().is_some_and(|w| diff * diff <= w.dist) {
                    self.search(far, probe, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(tree: &KdTree<f64>, probe: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize, usize)> = (0..tree.len())
            .map(|i| (squared_distance(tree.point(i), probe), tree.rank[i], i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.2).collect()
    }

    #[test]
    fn matches_linear_scan_with_many_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for dim in [1, 2, 5] {
            let n = 300;
            let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0..4) as f64).collect();
            let mut rank: Vec<usize> = (0..n).collect();
            rank.reverse();
            let tree = KdTree::build(dim, coords, rank);
            for _ in 0..50 {
                let probe: Vec<f64> = (0..dim).map(|_| rng.random_range(0..4) as f64).collect();
                for k in [1, 3, 10, 64, 400] {
                    let got: Vec<usize> = tree.nearest(&probe, k).iter().map(|x| x.index).collect();
                    assert_eq!(got, brute(&tree, &probe, k));
                }
            }
        }
    }

    #[test]
    fn empty_and_zero_k() {
        let tree = KdTree::<f64>::build(3, Vec::new(), Vec::new());
        assert!(tree.nearest(&[0.0, 0.0, 0.0], 5).is_empty());
        let tree = KdTree::build(1, vec![1.0f32], vec![0]);
        assert!(tree.nearest(&[0.0], 0).is_empty());
        assert_eq!(tree.nearest(&[0.0], 2)[0].squared_distance, 1.0);
    }
}
