//! Static k-d tree for exact k-nearest-neighbor queries.
//!
//! Results are ordered by `(squared distance, id)`, so equal distances
//! resolve to the smaller element id and queries are fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::Point;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Indexes `positions`; element ids are their slice indices.
    pub fn build(positions: &[Point]) -> Result<Self> {
        Self::build_with_ids(positions, (0..positions.len() as u32).collect())
    }

    /// Indexes `positions[i]` under the id `ids[i]`.
    pub fn build_with_ids(positions: &[Point], ids: Vec<u32>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Invalid("spatial index needs at least one position".into()));
        }
        if ids.len() != positions.len() {
            return Err(Error::Invalid(format!(
                "{} ids for {} positions",
                ids.len(),
                positions.len()
            )));
        }
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let mut nodes = Vec::new();
        build_rec(&mut nodes, positions, &mut order, 0);
        Ok(Self {
            points: order.iter().map(|&i| positions[i as usize]).collect(),
            ids: order.iter().map(|&i| ids[i as usize]).collect(),
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `min(k, len)` nearest elements to `q`, closest first.
    pub fn nearest(&self, q: &Point, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: u32, q: &Point, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let n = Neighbor {
                        id: self.ids[i],
                        dist2: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(n);
                    } else if n < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(n);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = q[axis as usize] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal distance may still win on id, hence `<=`.
                if heap.len() < k || d * d <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

fn build_rec(nodes: &mut Vec<Node>, pos: &[Point], order: &mut [u32], offset: u32) -> u32 {
    let me = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len() as u32,
        });
        return me;
    }
    let mut lo = pos[order[0] as usize];
    let mut hi = lo;
    for &i in order.iter() {
        lo = lo.inf(&pos[i as usize]);
        hi = hi.sup(&pos[i as usize]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| pos[a as usize][axis].total_cmp(&pos[b as usize][axis]));
    let value = pos[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build_rec(nodes, pos, l, offset);
    let right = build_rec(nodes, pos, r, offset + mid as u32);
    nodes[me as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    me
}
