//! Bounding volume hierarchy over mesh faces for first-hit ray queries.

use crate::geom::{intersect_triangle, Aabb, Point, Ray, Vector};
use crate::mesh::{FaceId, TriangleMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Inner: `left` is the next node, `right` the index stored.
    start: u32,
    count: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<FaceId>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let centroids = mesh.face_centroids();
        let boxes: Vec<Aabb> = (0..mesh.face_count())
            .map(|f| Aabb::from_points(&mesh.tri(f)))
            .collect();
        let mut order: Vec<FaceId> = (0..mesh.face_count() as FaceId).collect();
        let mut nodes = Vec::with_capacity(2 * mesh.face_count() / LEAF_SIZE + 1);
        if !order.is_empty() {
            build_rec(&mut nodes, &mut order, 0, &centroids, &boxes);
        }
        Self { nodes, order }
    }

    /// Nearest hit as `(face, t)`. Equal `t` resolves to the smaller face id
    /// so the result does not depend on traversal order.
    pub fn first_hit(&self, mesh: &TriangleMesh, ray: &Ray) -> Option<(FaceId, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector::new(1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z);
        let mut best: Option<(FaceId, f64)> = None;
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            let t_max = best.map(|b| b.1).unwrap_or(f64::INFINITY);
            if node.bounds.ray_entry(ray, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    let [a, b, c] = mesh.tri(f as usize);
                    if let Some(t) = intersect_triangle(ray, &a, &b, &c) {
                        let better = match best {
                            None => true,
                            Some((bf, bt)) => t < bt || (t == bt && f < bf),
                        };
                        if better {
                            best = Some((f, t));
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(n + 1);
            }
        }
        best
    }
}

fn build_rec(
    nodes: &mut Vec<Node>,
    order: &mut [FaceId],
    offset: u32,
    centroids: &[Point],
    boxes: &[Aabb],
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in order.iter() {
        bounds.merge(&boxes[f as usize]);
        cbounds.grow(&centroids[f as usize]);
    }
    let me = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        start: offset,
        count: order.len() as u32,
        right: 0,
    });
    if order.len() <= LEAF_SIZE {
        return me;
    }
    let ext = cbounds.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (l, r) = order.split_at_mut(mid);
    build_rec(nodes, l, offset, centroids, boxes);
    let right = build_rec(nodes, r, offset + mid as u32, centroids, boxes);
    nodes[me as usize].count = 0;
    nodes[me as usize].right = right;
    me
}
