//! Static k-d tree over flat row-major coordinates.

use super::Rows;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// A k-d tree over the rows of a reference set. Duplicate coordinates are
/// allowed in any number.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    rows: Rows<'a>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(rows: Rows<'a>) -> Self {
        let mut tree = KdTree {
            rows,
            order: (0..rows.len()).collect(),
            nodes: Vec::new(),
        };
        if !tree.order.is_empty() {
            tree.build_node(0, rows.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let rows = self.rows;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            rows.row(a)[axis].total_cmp(&rows.row(b)[axis])
        });
        let value = rows.row(self.order[mid])[axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let dim = self.rows.dim();
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.rows.row(i)[axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    /// Index and squared distance of the nearest reference row to `query`.
    /// Returns `None` on an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut offsets = vec![0.0; query.len()];
        self.search(0, query, 0.0, &mut offsets, &mut best);
        Some(best)
    }

    // `cell` is the squared distance from `query` to the node's cell, kept
    // incrementally from the per-axis `offsets`.
    fn search(&self, node: usize, query: &[f64], cell: f64, offsets: &mut [f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(self.rows.row(i), query);
                    // lowest index wins ties, matching the brute-force scan
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, cell, offsets, best);
                let old = offsets[axis];
                let far_cell = cell - old * old + delta * delta;
                if far_cell <= best.1 {
                    offsets[axis] = delta;
                    self.search(far, query, far_cell, offsets, best);
                    offsets[axis] = old;
                }
            }
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
