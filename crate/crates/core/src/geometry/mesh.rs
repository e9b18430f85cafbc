use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aabb, PointCloud, Pose, Vec3, DEGENERATE_AREA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Validates indices and drops faces with area below [`DEGENERATE_AREA`].
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::arg(format!("face {f:?} indexes past {n} vertices")));
        }
        let mut mesh = Self { vertices, faces };
        mesh.faces.retain(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() >= DEGENERATE_AREA
        });
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn transformed(&self, pose: &Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| f.map(|i| i + off)));
    }

    /// Every directed edge has exactly one opposite partner.
    pub fn check_watertight(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::NotWatertight("mesh has no faces".into()));
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::NotWatertight(format!("edge ({a},{b}) is used {count} times in one direction")));
            }
            if directed.get(&(b, a)) != Some(&1) {
                return Err(Error::NotWatertight(format!("edge ({a},{b}) has no opposite half-edge")));
            }
        }
        Ok(())
    }

    pub fn is_watertight(&self) -> bool {
        self.check_watertight().is_ok()
    }

    /// Face indices grouped into vertex-connected components, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            let a = find(&mut parent, f[0] as usize);
            for &v in &f[1..] {
                let b = find(&mut parent, v as usize);
                if a != b {
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            let root = find(&mut parent, f[0] as usize);
            let s = *slot.entry(root).or_insert_with(|| {
                groups.push((root, Vec::new()));
                groups.len() - 1
            });
            groups[s].1.push(fi);
        }
        groups.into_iter().map(|(_, g)| g).collect()
    }

    /// Enclosed volume by the divergence theorem (closed, outward-oriented meshes).
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn area_centroid(&self) -> Vec3 {
        let mut total = 0.0;
        let mut acc = Vec3::zeros();
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let area = self.face_area(f);
            acc += (a + b + c) * (area / 3.0);
            total += area;
        }
        if total > 0.0 {
            acc / total
        } else {
            Vec3::zeros()
        }
    }

    /// Area-weighted uniform surface samples with face normals.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> PointCloud {
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cdf.push(acc);
        }
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random::<f64>() * acc;
            let f = cdf.partition_point(|&c| c < r).min(self.faces.len() - 1);
            let [a, b, c] = self.triangle(f);
            let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push(a + (b - a) * u + (c - a) * v);
            normals.push(self.face_normal(f));
        }
        PointCloud { points, normals: Some(normals) }
    }
}

/// Which feature of a triangle the closest point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleRegion {
    Vertex(u8),
    /// Edge between local corners `(k, (k + 1) % 3)`.
    Edge(u8),
    Face,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection §5.1.5). Returns the point, its barycentric weights and region.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3], TriangleRegion) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0], TriangleRegion::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0], TriangleRegion::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0], TriangleRegion::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0], TriangleRegion::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w], TriangleRegion::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w], TriangleRegion::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w], TriangleRegion::Face)
}

/// Signed solid angle subtended by triangle `abc` at `p` (Van Oosterom & Strackee).
pub fn triangle_solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ra = a - p;
    let rb = b - p;
    let rc = c - p;
    let la = ra.norm();
    let lb = rb.norm();
    let lc = rc.norm();
    let num = ra.dot(&rb.cross(&rc));
    let den = la * lb * lc + ra.dot(&rb) * lc + ra.dot(&rc) * lb + rb.dot(&rc) * la;
    2.0 * num.atan2(den)
}

/// Geodesic sphere built by subdividing an icosahedron.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriMesh { vertices: verts.into_iter().map(|v| v * radius).collect(), faces }
}

/// Flat midpoint subdivision: every triangle becomes four, shared edges get a
/// shared midpoint so closed meshes stay closed.
pub fn subdivide(mesh: &TriMesh) -> TriMesh {
    let mut verts = mesh.vertices.clone();
    let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
    let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            verts.push((verts[a as usize] + verts[b as usize]) * 0.5);
            verts.len() as u32 - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for f in &mesh.faces {
        let ab = midpoint(f[0], f[1], &mut verts);
        let bc = midpoint(f[1], f[2], &mut verts);
        let ca = midpoint(f[2], f[0], &mut verts);
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    TriMesh { vertices: verts, faces }
}

/// Axis-aligned box centered at the origin, 12 outward-facing triangles.
pub fn cuboid(half: Vec3) -> TriMesh {
    let (x, y, z) = (half.x, half.y, half.z);
    let vertices = vec![
        Vec3::new(-x, -y, -z),
        Vec3::new(x, -y, -z),
        Vec3::new(x, y, -z),
        Vec3::new(-x, y, -z),
        Vec3::new(-x, -y, z),
        Vec3::new(x, -y, z),
        Vec3::new(x, y, z),
        Vec3::new(-x, y, z),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriMesh { vertices, faces }
}

/// Closed capsule-like tube along +y from `y = 0` to `y = length`, with
/// `segments` vertices per ring and `rings` rings along the shaft plus
/// hemispherical-ish caps of `cap_rings` rings each. The first ring vertex
/// points along +z.
pub fn capsule(radius: f64, length: f64, segments: u32, rings: u32, cap_rings: u32) -> TriMesh {
    let mut vertices = Vec::new();
    let mut ring_starts = Vec::new();
    let push_ring = |y: f64, r: f64, vertices: &mut Vec<Vec3>| {
        let start = vertices.len() as u32;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(-r * phi.sin(), y, r * phi.cos()));
        }
        start
    };
    // bottom cap rings (excluding the pole), bottom to top
    for k in (1..=cap_rings).rev() {
        let a = std::f64::consts::FRAC_PI_2 * k as f64 / (cap_rings + 1) as f64;
        ring_starts.push(push_ring(-radius * a.sin(), radius * a.cos(), &mut vertices));
    }
    for k in 0..rings {
        let y = if rings > 1 { length * k as f64 / (rings - 1) as f64 } else { 0.0 };
        ring_starts.push(push_ring(y, radius, &mut vertices));
    }
    for k in 1..=cap_rings {
        let a = std::f64::consts::FRAC_PI_2 * k as f64 / (cap_rings + 1) as f64;
        ring_starts.push(push_ring(length + radius * a.sin(), radius * a.cos(), &mut vertices));
    }
    let bottom = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, -radius, 0.0));
    let top = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, length + radius, 0.0));

    let mut faces = Vec::new();
    let seg = segments;
    for w in ring_starts.windows(2) {
        let (r0, r1) = (w[0], w[1]);
        for s in 0..seg {
            let s1 = (s + 1) % seg;
            faces.push([r0 + s, r0 + s1, r1 + s1]);
            faces.push([r0 + s, r1 + s1, r1 + s]);
        }
    }
    let first = ring_starts[0];
    let last = *ring_starts.last().unwrap();
    for s in 0..seg {
        let s1 = (s + 1) % seg;
        faces.push([bottom, first + s1, first + s]);
        faces.push([top, last + s, last + s1]);
    }
    let mut mesh = TriMesh { vertices, faces };
    // make sure triangles face outward
    if mesh.volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_watertight_and_outward() {
        for m in [icosphere(1.0, 2), cuboid(Vec3::new(0.5, 0.2, 0.1)), capsule(0.01, 0.04, 12, 6, 2)] {
            m.check_watertight().unwrap();
            assert!(m.volume() > 0.0);
            assert_eq!(m.components().len(), 1);
        }
        assert!((cuboid(Vec3::new(0.5, 0.5, 0.5)).volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capsule_has_about_one_hundred_vertices() {
        let c = capsule(0.009, 0.04, 12, 6, 1);
        assert_eq!(c.vertices.len(), 12 * 8 + 2);
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let v = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.faces.len(), 1);
        assert!(TriMesh::new(vec![Vec3::zeros()], vec![[0, 0, 4]]).is_err());
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut m = cuboid(Vec3::new(1.0, 1.0, 1.0));
        m.faces.pop();
        assert!(m.check_watertight().is_err());
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let (q, bary, r) = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert_eq!(r, TriangleRegion::Face);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let (_, _, r) = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(r, TriangleRegion::Vertex(0));
        let (q, _, r) = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert_eq!(r, TriangleRegion::Edge(1));
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solid_angles_of_closed_mesh_sum_to_four_pi_inside() {
        let m = icosphere(1.0, 1);
        let inside: f64 = (0..m.faces.len())
            .map(|f| {
                let [a, b, c] = m.triangle(f);
                triangle_solid_angle(&Vec3::new(0.1, 0.0, 0.2), &a, &b, &c)
            })
            .sum();
        assert!((inside - 4.0 * std::f64::consts::PI).abs() < 1e-9);
    }
}
