use super::{sq_dist, PointSet};
use crate::error::{Error, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// KD-tree over a point set. Splits on the widest axis at the median.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    /// Coordinates reordered so every leaf is contiguous.
    coords: Vec<f64>,
    /// `order[i]` is the original index of the i-th stored point.
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl NeighborIndex {
    pub fn build(points: &PointSet) -> Self {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE).expect("default leaf size is positive")
    }

    pub fn with_leaf_size(points: &PointSet, leaf_size: usize) -> Result<Self> {
        if leaf_size == 0 {
            return Err(Error::Domain("leaf size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_node(points, &mut order, 0, leaf_size, &mut nodes);
        let mut coords = Vec::with_capacity(points.as_slice().len());
        for &i in &order {
            coords.extend_from_slice(points.point(i));
        }
        Ok(Self { dim: points.dim(), coords, order, nodes, leaf_size })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    #[inline]
    fn stored(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Indices of all points with `|p - center| <= radius`, ascending.
    pub fn radius_query(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(original_index, squared_distance)` for every point within
    /// `radius` of `center`, in tree order.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, center: &[f64], radius: f64, mut f: F) {
        debug_assert_eq!(center.len(), self.dim);
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for i in start..end {
                        let d2 = sq_dist(self.stored(i), center);
                        if d2 <= r2 {
                            f(self.order[i], d2);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let c = center[axis];
                    if c - radius <= value {
                        stack.push(left);
                    }
                    if c + radius >= value {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Nearest stored point as `(original_index, squared_distance)`; ties go
    /// to the smallest original index.
    pub fn nearest(&self, center: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, center, &mut best);
        best
    }

    fn nearest_in(&self, id: usize, center: &[f64], best: &mut (usize, f64)) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d2 = sq_dist(self.stored(i), center);
                    let idx = self.order[i];
                    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                        *best = (idx, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = center[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, center, best);
                if diff * diff <= best.1 {
                    self.nearest_in(far, center, best);
                }
            }
        }
    }
}

fn build_node(points: &PointSet, order: &mut [usize], offset: usize, leaf_size: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= leaf_size {
        nodes.push(Node::Leaf { start: offset, end: offset + order.len() });
        return id;
    }
    let dim = points.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &i in order.iter() {
        for (d, &c) in points.point(i).iter().enumerate() {
            lo[d] = lo[d].min(c);
            hi[d] = hi[d].max(c);
        }
    }
    let axis = (0..dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
    if hi[axis] <= lo[axis] {
        // All points coincide; splitting cannot separate them.
        nodes.push(Node::Leaf { start: offset, end: offset + order.len() });
        return id;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points.point(a)[axis].total_cmp(&points.point(b)[axis]));
    let value = points.point(order[mid])[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build_node(points, left_part, offset, leaf_size, nodes);
    let right = build_node(points, right_part, offset + mid, leaf_size, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, d: usize) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn linear_scan(p: &PointSet, c: &[f64], r: f64) -> Vec<usize> {
        (0..p.len()).filter(|&i| sq_dist(p.point(i), c) <= r * r).collect()
    }

    #[test]
    fn containment_and_exclusion() {
        let p = random_set(3, 50, 2);
        let idx = NeighborIndex::build(&p);
        assert_eq!(idx.radius_query(&[0.5, 0.5], 10.0), (0..50).collect::<Vec<_>>());
        let grid = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let gi = NeighborIndex::with_leaf_size(&grid, 1).unwrap();
        assert!(gi.radius_query(&[0.5, 0.5], 0.1).is_empty());
    }

    #[test]
    fn matches_scan_200_points() {
        let p = random_set(11, 200, 3);
        let idx = NeighborIndex::build(&p);
        for c in [[0.5, 0.5, 0.5], [0.1, 0.9, 0.3], [1.2, -0.1, 0.5]] {
            assert_eq!(idx.radius_query(&c, 0.2), linear_scan(&p, &c, 0.2));
        }
    }

    #[test]
    fn coincident_points() {
        let p = PointSet::new(2, vec![1.0; 2 * 40]).unwrap();
        let idx = NeighborIndex::with_leaf_size(&p, 4).unwrap();
        assert_eq!(idx.radius_query(&[1.0, 1.0], 1e-9).len(), 40);
        assert_eq!(idx.nearest(&[0.0, 0.0]).0, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]
        #[test]
        fn radius_query_equals_scan(seed in 0u64..10_000, n in 1usize..300, d in 1usize..4,
                                    r in 0.01f64..0.6, leaf in 1usize..20) {
            let p = random_set(seed, n, d);
            let idx = NeighborIndex::with_leaf_size(&p, leaf).unwrap();
            let c: Vec<f64> = p.point(seed as usize % n).iter().map(|v| v + 0.05).collect();
            prop_assert_eq!(idx.radius_query(&c, r), linear_scan(&p, &c, r));
        }

        #[test]
        fn nearest_equals_scan(seed in 0u64..10_000, n in 1usize..300, d in 1usize..4) {
            let p = random_set(seed, n, d);
            let idx = NeighborIndex::build(&p);
            let q = random_set(seed + 1, 1, d);
            let (best, d2) = idx.nearest(q.point(0));
            let mut expect = (0, f64::INFINITY);
            for i in 0..n {
                let e = sq_dist(p.point(i), q.point(0));
                if e < expect.1 { expect = (i, e); }
            }
            prop_assert_eq!(best, expect.0);
            prop_assert_eq!(d2, expect.1);
        }
    }
}
