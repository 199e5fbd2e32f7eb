//! Exact nearest-neighbor queries over a fixed target cloud.
//!
//! The tree is built once per registration (only the source moves) and is
//! read-only afterwards, so concurrent queries are safe. Construction is
//! deterministic: splits take the median by value with ties broken by the
//! lower original index, and queries break exact distance ties the same way.

use crate::geometry::{Point3, PointCloud};

/// Default leaf bucket size.
pub const DEFAULT_BUCKET_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Split {
        axis: usize,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

/// Balanced k-d tree over point indices with axis-aligned median splits.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
    bucket: usize,
}

/// Traversal counters reported by [`KdTree::nearest_with_stats`].
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryStats {
    /// Tree nodes visited (splits and leaves).
    pub nodes_visited: usize,
    /// Candidate points whose distance was evaluated.
    pub points_examined: usize,
}

impl KdTree {
    /// Builds a tree over a nonempty cloud with the default bucket size.
    pub fn build(cloud: &PointCloud) -> Self {
        Self::build_with_bucket(cloud, DEFAULT_BUCKET_SIZE)
    }

    pub fn build_with_bucket(cloud: &PointCloud, bucket: usize) -> Self {
        assert!(!cloud.is_empty(), "cannot index an empty cloud");
        assert!(bucket >= 1, "bucket size must be at least 1");
        let points: Vec<Point3> = cloud.points().to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let len = order.len();
        let root = build_node(&points, &mut order, &mut nodes, 0, len, bucket);
        KdTree {
            points,
            order,
            nodes,
            root,
            bucket,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket
    }

    /// Number of levels from the root down to the deepest leaf.
    pub fn depth(&self) -> usize {
        fn depth_of(nodes: &[Node], id: u32) -> usize {
            match &nodes[id as usize] {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => {
                    1 + depth_of(nodes, *left).max(depth_of(nodes, *right))
                }
            }
        }
        depth_of(&self.nodes, self.root)
    }

    /// Returns the index of the target point with minimal squared Euclidean
    /// distance to `query`, and that exact squared distance. Exact ties
    /// resolve to the lowest index.
    pub fn nearest(&self, query: Point3) -> (usize, f64) {
        let (idx, d2, _) = self.nearest_with_stats(query);
        (idx, d2)
    }

    /// Same as [`nearest`](Self::nearest), also reporting traversal counters.
    pub fn nearest_with_stats(&self, query: Point3) -> (usize, f64, QueryStats) {
        let mut best_idx = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let mut stats = QueryStats::default();
        self.search(self.root, query, &mut best_idx, &mut best_d2, &mut stats);
        (best_idx, best_d2, stats)
    }

    fn search(
        &self,
        node: u32,
        query: Point3,
        best_idx: &mut usize,
        best_d2: &mut f64,
        stats: &mut QueryStats,
    ) {
        stats.nodes_visited += 1;
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start as usize..*end as usize] {
                    let i = i as usize;
                    stats.points_examined += 1;
                    let d2 = query.dist_sq(self.points[i]);
                    if d2 < *best_d2 || (d2 == *best_d2 && i < *best_idx) {
                        *best_d2 = d2;
                        *best_idx = i;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let q = coord(query, *axis);
                let diff = q - value;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, best_idx, best_d2, stats);
                // The far side can hold an equally distant lower index, so
                // prune only on a strictly larger plane distance.
                if diff * diff <= *best_d2 {
                    self.search(far, query, best_idx, best_d2, stats);
                }
            }
        }
    }
}

fn coord(p: Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

fn build_node(
    points: &[Point3],
    order: &mut [u32],
    nodes: &mut Vec<Node>,
    start: usize,
    end: usize,
    bucket: usize,
) -> u32 {
    let len = end - start;
    if len <= bucket {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }
    // Split along the axis of largest extent; ties pick the lowest axis.
    let slice = &mut order[start..end];
    let mut axis = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for a in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in slice.iter() {
            let c = coord(points[i as usize], a);
            lo = lo.min(c);
            hi = hi.max(c);
        }
        let spread = hi - lo;
        if spread > best_spread {
            best_spread = spread;
            axis = a;
        }
    }
    slice.sort_unstable_by(|&a, &b| {
        coord(points[a as usize], axis)
            .total_cmp(&coord(points[b as usize], axis))
            .then(a.cmp(&b))
    });
    let mid = len / 2;
    let value = coord(points[slice[mid] as usize], axis);
    let left = build_node(points, order, nodes, start, start + mid, bucket);
    let right = build_node(points, order, nodes, start + mid, end, bucket);
    nodes.push(Node::Split {
        axis,
        value,
        left,
        right,
    });
    (nodes.len() - 1) as u32
}
