//! Exact nearest-neighbour kd-tree over dynamic-dimension points.
//!
//! Splits choose the axis of maximum spread at the median, so the tree
//! stays balanced on manifold-structured embedding data. Search is exact:
//! a far branch is skipped only when the squared distance to its boundary
//! strictly exceeds the current best, which keeps equal-distance candidates
//! reachable for the id tie-break.

/// Squared Euclidean distance between a query and a stored point.
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Internal {
        axis: usize,
        split: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable exact kd-tree. Rows are addressed by their position in the
/// coordinate matrix; `ids` supplies the tie-break key.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Row-major coordinate matrix the tree was built over.
    coords: Vec<f64>,
    ids: Vec<u64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    /// Build from a row-major coordinate matrix (`len = rows · dim`) and one
    /// tie-break id per row.
    pub fn build(coords: Vec<f64>, dim: usize, ids: Vec<u64>) -> Self {
        assert!(dim > 0, "kd-tree needs a positive dimension");
        assert_eq!(coords.len(), ids.len() * dim, "coordinate matrix shape");
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let mut nodes = Vec::new();
        let root = if order.is_empty() {
            nodes.push(Node::Leaf { start: 0, end: 0 });
            0
        } else {
            let n = order.len();
            build_recursive(&coords, dim, &mut order, 0, n, &mut nodes)
        };
        Self {
            dim,
            coords,
            ids,
            order,
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    fn point(&self, row: usize) -> &[f64] {
        &self.coords[row * self.dim..(row + 1) * self.dim]
    }

    /// Exact nearest row: minimal squared distance, ties resolved toward the
    /// smallest id. Returns `(row, squared_distance)`.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if self.is_empty() {
            return None;
        }
        let mut best_row = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let mut best_id = u64::MAX;
        self.search(self.root, query, &mut best_row, &mut best_d2, &mut best_id);
        Some((best_row, best_d2))
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        best_row: &mut usize,
        best_d2: &mut f64,
        best_id: &mut u64,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &row in &self.order[start..end] {
                    let d2 = dist_sq(query, self.point(row));
                    let id = self.ids[row];
                    if d2 < *best_d2 || (d2 == *best_d2 && id < *best_id) {
                        *best_d2 = d2;
                        *best_row = row;
                        *best_id = id;
                    }
                }
            }
            Node::Internal {
                axis,
                split,
                left,
                right,
            } => {
                let delta = query[axis] - split;
                let (near, far) = if delta < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best_row, best_d2, best_id);
                // Visit the far side on exact boundary ties too; an
                // equal-distance row with a lower id may live there.
                if delta * delta <= *best_d2 {
                    self.search(far, query, best_row, best_d2, best_id);
                }
            }
        }
    }
}

fn build_recursive(
    coords: &[f64],
    dim: usize,
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let len = end - start;
    if len <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }

    // Axis of maximum spread over this cell.
    let slice = &order[start..end];
    let mut best_axis = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for axis in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &row in slice {
            let v = coords[row * dim + axis];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_axis = axis;
        }
    }

    let mid = start + len / 2;
    order[start..end].sort_unstable_by(|&a, &b| {
        coords[a * dim + best_axis]
            .partial_cmp(&coords[b * dim + best_axis])
            .expect("finite coordinates")
    });
    let split = coords[order[mid] * dim + best_axis];

    // Constant cells cannot be split; keep them as one leaf.
    if best_spread <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }

    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start, end });
    let left = build_recursive(coords, dim, order, start, mid, nodes);
    let right = build_recursive(coords, dim, order, mid, end, nodes);
    nodes[placeholder] = Node::Internal {
        axis: best_axis,
        split,
        left,
        right,
    };
    placeholder
}
