//! Axis-aligned bounding-volume hierarchy over arbitrary primitives.
//!
//! Nodes are stored flat; leaves reference a contiguous run of the
//! permuted primitive index array. Nearest queries are exact and break
//! distance ties toward the lowest primitive index, so results match a
//! brute-force scan bit for bit.

use super::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb { min: self.min.add_scalar(-margin), max: self.max.add_scalar(margin) }
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    pub fn intersection(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.sup(&o.min), max: self.max.inf(&o.max) }
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start+count` into `order`. Inner nodes have `count == 0`.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    /// Builds a hierarchy from per-primitive bounds.
    pub fn build(bounds: &[Aabb]) -> Self {
        let mut order: Vec<u32> = (0..bounds.len() as u32).collect();
        let centers: Vec<Vec3> = bounds.iter().map(|b| b.center()).collect();
        let mut nodes = Vec::with_capacity(2 * bounds.len() / LEAF_SIZE + 1);
        if !bounds.is_empty() {
            build_node(&mut nodes, &mut order, 0, bounds.len(), bounds, &centers);
        }
        Self { nodes, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Exact nearest primitive. `dist2(i)` returns the squared distance from
    /// the query to primitive `i`. Returns `(index, squared distance)` with
    /// ties resolved to the lowest index.
    pub fn nearest<F>(&self, query: &Vec3, mut dist2: F) -> Option<(usize, f64)>
    where
        F: FnMut(usize) -> f64,
    {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds.distance_squared(query)));
        while let Some((ni, bd)) = stack.pop() {
            if bd > best.1 {
                continue;
            }
            let node = &self.nodes[ni as usize];
            if node.count > 0 {
                for &prim in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let d = dist2(prim as usize);
                    if d < best.1 || (d == best.1 && (prim as usize) < best.0) {
                        best = (prim as usize, d);
                    }
                }
            } else {
                let l = node.left;
                let r = node.right;
                let dl = self.nodes[l as usize].bounds.distance_squared(query);
                let dr = self.nodes[r as usize].bounds.distance_squared(query);
                // push the farther child first so the nearer one is visited next
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        (best.0 != usize::MAX).then_some(best)
    }

    /// Visits every primitive whose bounds overlap `region`.
    pub fn for_each_overlapping<F: FnMut(usize)>(&self, region: &Aabb, mut f: F) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let b = &node.bounds;
            let overlaps = (0..3).all(|k| b.min[k] <= region.max[k] && b.max[k] >= region.min[k]);
            if !overlaps {
                continue;
            }
            if node.count > 0 {
                for &prim in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    f(prim as usize);
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    start: usize,
    end: usize,
    bounds: &[Aabb],
    centers: &[Vec3],
) -> u32 {
    let mut b = Aabb::empty();
    let mut cb = Aabb::empty();
    for &i in &order[start..end] {
        b = b.merge(&bounds[i as usize]);
        cb.grow(&centers[i as usize]);
    }
    let idx = nodes.len() as u32;
    nodes.push(Node { bounds: b, start: start as u32, count: (end - start) as u32, left: 0, right: 0 });
    let n = end - start;
    if n <= LEAF_SIZE {
        return idx;
    }
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return idx;
    }
    let mid = start + n / 2;
    order[start..end].select_nth_unstable_by(n / 2, |&a, &b| {
        centers[a as usize][axis]
            .partial_cmp(&centers[b as usize][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let left = build_node(nodes, order, start, mid, bounds, centers);
    let right = build_node(nodes, order, mid, end, bounds, centers);
    let node = &mut nodes[idx as usize];
    node.count = 0;
    node.left = left;
    node.right = right;
    idx
}
