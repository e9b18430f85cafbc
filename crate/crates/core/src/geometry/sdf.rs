//! Signed-distance queries against meshes and oriented point clouds.

use std::collections::HashMap;

use rayon::prelude::*;

use super::mesh::{closest_point_on_triangle, triangle_solid_angle, TriangleRegion};
use super::{Aabb, Bvh, PointCloud, Pose, TriMesh, Vec3, CLOUD_SIGN_EPS};
use crate::error::{Error, Result};

/// Result of a single signed-distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfHit {
    /// Signed distance, negative inside.
    pub distance: f64,
    /// Closest surface point.
    pub closest: Vec3,
    /// Face (mesh) or point (cloud) index of the closest primitive.
    pub primitive: usize,
    /// Barycentric weights of `closest` within the face; `[1, 0, 0]` for clouds.
    pub bary: [f64; 3],
    /// Unit gradient of the signed distance with respect to the query.
    pub gradient: Vec3,
}

impl SdfHit {
    pub fn inside(&self) -> bool {
        self.distance < 0.0
    }
}

/// How the inside/outside sign of a mesh query is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMethod {
    /// Angle-weighted pseudo-normal at the closest feature. Only valid for a
    /// single closed manifold component.
    PseudoNormal,
    /// Generalized winding number ≥ 0.5, summed over closed components whose
    /// bounding box contains the query.
    Winding,
}

#[derive(Debug, Clone)]
struct Component {
    faces: Vec<usize>,
    bounds: Aabb,
}

#[derive(Debug, Clone)]
struct PseudoNormals {
    vertex: Vec<Vec3>,
    /// Per face, per local edge `(k, k+1)`.
    edge: Vec<[Vec3; 3]>,
}

/// Exact signed distance to a closed triangle mesh, accelerated by a BVH.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriMesh,
    bvh: Bvh,
    face_normals: Vec<Vec3>,
    components: Vec<Component>,
    pseudo: Option<PseudoNormals>,
    method: SignMethod,
}

impl MeshSdf {
    /// Requires a watertight mesh. Single-component meshes use pseudo-normal
    /// signs, multi-component meshes (possibly overlapping) use winding numbers.
    pub fn new(mesh: TriMesh) -> Result<Self> {
        mesh.check_watertight()?;
        let comps = mesh.components();
        let method = if comps.len() == 1 { SignMethod::PseudoNormal } else { SignMethod::Winding };
        Ok(Self::assemble(mesh, comps, method))
    }

    pub fn with_method(mesh: TriMesh, method: SignMethod) -> Result<Self> {
        mesh.check_watertight()?;
        let comps = mesh.components();
        if method == SignMethod::PseudoNormal && comps.len() != 1 {
            return Err(Error::arg("pseudo-normal signs need a single connected component"));
        }
        Ok(Self::assemble(mesh, comps, method))
    }

    fn assemble(mesh: TriMesh, components: Vec<Vec<usize>>, method: SignMethod) -> Self {
        let boxes: Vec<Aabb> = (0..mesh.faces.len())
            .map(|f| Aabb::from_points(mesh.triangle(f).iter()))
            .collect();
        let bvh = Bvh::build(&boxes);
        let face_normals: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
        let components = components
            .into_iter()
            .map(|faces| {
                let mut bounds = Aabb::empty();
                for &f in &faces {
                    bounds = bounds.merge(&boxes[f]);
                }
                Component { faces, bounds }
            })
            .collect();
        let pseudo = (method == SignMethod::PseudoNormal).then(|| pseudo_normals(&mesh, &face_normals));
        Self { mesh, bvh, face_normals, components, pseudo, method }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn method(&self) -> SignMethod {
        self.method
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    /// Unsigned nearest-surface query: `(face, closest point, bary, region, d²)`.
    fn nearest(&self, p: &Vec3) -> (usize, Vec3, [f64; 3], TriangleRegion, f64) {
        let mesh = &self.mesh;
        let (face, d2) = self
            .bvh
            .nearest(p, |f| {
                let [a, b, c] = mesh.triangle(f);
                (closest_point_on_triangle(p, &a, &b, &c).0 - p).norm_squared()
            })
            .expect("mesh has faces");
        let [a, b, c] = mesh.triangle(face);
        let (q, bary, region) = closest_point_on_triangle(p, &a, &b, &c);
        (face, q, bary, region, d2)
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        self.nearest(p).4.sqrt()
    }

    /// Generalized winding number, skipping closed components whose bounds
    /// exclude `p` (their contribution is exactly zero).
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for c in &self.components {
            if !c.bounds.contains(p) {
                continue;
            }
            for &f in &c.faces {
                let [a, b, cc] = self.mesh.triangle(f);
                total += triangle_solid_angle(p, &a, &b, &cc);
            }
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Inside test without a distance query; only meaningful for
    /// [`SignMethod::Winding`] or when the nearest feature is unknown.
    pub fn contains(&self, p: &Vec3) -> bool {
        match self.method {
            SignMethod::Winding => self.winding_number(p) >= 0.5,
            SignMethod::PseudoNormal => self.query(p).inside(),
        }
    }

    pub fn query(&self, p: &Vec3) -> SdfHit {
        let (face, q, bary, region, d2) = self.nearest(p);
        let d = d2.sqrt();
        let inside = match self.method {
            SignMethod::Winding => self.winding_number(p) >= 0.5,
            SignMethod::PseudoNormal => {
                let pn = self.pseudo.as_ref().expect("pseudo-normals built");
                let n = match region {
                    TriangleRegion::Face => self.face_normals[face],
                    TriangleRegion::Edge(k) => pn.edge[face][k as usize],
                    TriangleRegion::Vertex(k) => pn.vertex[self.mesh.faces[face][k as usize] as usize],
                };
                (p - q).dot(&n) < 0.0
            }
        };
        let s = if inside { -1.0 } else { 1.0 };
        let gradient = if d > 0.0 { (p - q) * (s / d) } else { self.face_normals[face] };
        SdfHit { distance: s * d, closest: q, primitive: face, bary, gradient }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.query(p).distance
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_normals[f]
    }
}

fn pseudo_normals(mesh: &TriMesh, face_normals: &[Vec3]) -> PseudoNormals {
    let mut vertex = vec![Vec3::zeros(); mesh.vertices.len()];
    let mut edge_faces: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = mesh.triangle(fi);
        for k in 0..3 {
            let e1 = (tri[(k + 1) % 3] - tri[k]).normalize();
            let e2 = (tri[(k + 2) % 3] - tri[k]).normalize();
            let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
            vertex[f[k] as usize] += face_normals[fi] * angle;
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    for v in &mut vertex {
        let n = v.norm();
        if n > 0.0 {
            *v /= n;
        }
    }
    let edge = mesh
        .faces
        .iter()
        .map(|f| {
            let mut out = [Vec3::zeros(); 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let sum: Vec3 = edge_faces[&(a.min(b), a.max(b))].iter().map(|&g| face_normals[g]).sum();
                *slot = sum.normalize();
            }
            out
        })
        .collect();
    PseudoNormals { vertex, edge }
}

/// Nearest-neighbor signed distance to an oriented point cloud.
#[derive(Debug, Clone)]
pub struct CloudSdf {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    bvh: Bvh,
}

impl CloudSdf {
    pub fn new(cloud: &PointCloud) -> Result<Self> {
        let normals = cloud.normals.clone().ok_or(Error::UnsignedGeometry)?;
        if cloud.is_empty() {
            return Err(Error::arg("empty point cloud"));
        }
        let boxes: Vec<Aabb> = cloud.points.iter().map(|p| Aabb { min: *p, max: *p }).collect();
        Ok(Self { points: cloud.points.clone(), normals, bvh: Bvh::build(&boxes) })
    }

    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let pts = &self.points;
        self.bvh.nearest(p, |i| (pts[i] - p).norm_squared()).expect("cloud nonempty")
    }

    pub fn query(&self, p: &Vec3) -> SdfHit {
        let (i, d2) = self.nearest(p);
        let c = self.points[i];
        let n = self.normals[i];
        let off = p - c;
        let d = d2.sqrt();
        let inside = off.dot(&n) < -CLOUD_SIGN_EPS;
        let s = if inside { -1.0 } else { 1.0 };
        let gradient = if d > 0.0 { off * (s / d) } else { n };
        SdfHit { distance: s * d, closest: c, primitive: i, bary: [1.0, 0.0, 0.0], gradient }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.query(p).distance
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Indices of the points within distance `r` of `c`, ascending.
    pub fn points_within(&self, c: &Vec3, r: f64) -> Vec<usize> {
        let region = Aabb { min: c.add_scalar(-r), max: c.add_scalar(r) };
        let mut out = Vec::new();
        self.bvh.for_each_overlapping(&region, |i| {
            if (self.points[i] - c).norm_squared() <= r * r {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }
}

/// Object geometry: a closed mesh, an oriented cloud, or both. Mesh queries
/// take precedence when a mesh is present.
#[derive(Debug, Clone, Default)]
pub struct SurfaceModel {
    mesh: Option<MeshSdf>,
    cloud: Option<PointCloud>,
    cloud_sdf: Option<CloudSdf>,
}

impl SurfaceModel {
    pub fn from_mesh(mesh: TriMesh) -> Result<Self> {
        Ok(Self { mesh: Some(MeshSdf::new(mesh)?), cloud: None, cloud_sdf: None })
    }

    /// A cloud without normals is accepted but cannot answer signed queries.
    pub fn from_cloud(cloud: PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::arg("empty point cloud"));
        }
        let cloud_sdf = if cloud.has_normals() { Some(CloudSdf::new(&cloud)?) } else { None };
        Ok(Self { mesh: None, cloud: Some(cloud), cloud_sdf })
    }

    pub fn with_cloud(mut self, cloud: PointCloud) -> Result<Self> {
        self.cloud_sdf = if cloud.has_normals() && !cloud.is_empty() { Some(CloudSdf::new(&cloud)?) } else { None };
        self.cloud = Some(cloud);
        Ok(self)
    }

    pub fn mesh_sdf(&self) -> Option<&MeshSdf> {
        self.mesh.as_ref()
    }

    pub fn mesh(&self) -> Option<&TriMesh> {
        self.mesh.as_ref().map(|m| m.mesh())
    }

    pub fn cloud(&self) -> Option<&PointCloud> {
        self.cloud.as_ref()
    }

    pub fn cloud_sdf(&self) -> Option<&CloudSdf> {
        self.cloud_sdf.as_ref()
    }

    pub fn is_signed(&self) -> bool {
        self.mesh.is_some() || self.cloud_sdf.is_some()
    }

    pub fn bounds(&self) -> Aabb {
        match (&self.mesh, &self.cloud) {
            (Some(m), _) => m.bounds(),
            (None, Some(c)) => Aabb::from_points(c.points.iter()),
            _ => Aabb::empty(),
        }
    }

    pub fn query(&self, p: &Vec3) -> Result<SdfHit> {
        if let Some(m) = &self.mesh {
            Ok(m.query(p))
        } else if let Some(c) = &self.cloud_sdf {
            Ok(c.query(p))
        } else {
            Err(Error::UnsignedGeometry)
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> Result<f64> {
        self.query(p).map(|h| h.distance)
    }

    /// Elementwise [`Self::signed_distance`], evaluated in parallel.
    pub fn batch_signed_distance(&self, queries: &PointCloud) -> Result<Vec<f64>> {
        if !self.is_signed() {
            return Err(Error::UnsignedGeometry);
        }
        Ok(queries
            .points
            .par_iter()
            .map(|p| self.signed_distance(p).expect("signed geometry"))
            .collect())
    }

    pub fn transformed(&self, pose: &Pose) -> Result<SurfaceModel> {
        let mut out = match &self.mesh {
            Some(m) => {
                let mesh = m.mesh().transformed(pose);
                SurfaceModel { mesh: Some(MeshSdf::with_method(mesh, m.method())?), cloud: None, cloud_sdf: None }
            }
            None => SurfaceModel::default(),
        };
        if let Some(c) = &self.cloud {
            out = out.with_cloud(super::transform(pose, c))?;
        }
        Ok(out)
    }
}

/// Generalized winding number over every face, no culling.
pub fn winding_number(mesh: &TriMesh, p: &Vec3) -> f64 {
    let total: f64 = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            triangle_solid_angle(p, &a, &b, &c)
        })
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Reference signed distance: exhaustive minimum over all triangles, sign
/// from the full winding number.
pub fn brute_force_signed_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    let d = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (closest_point_on_triangle(p, &a, &b, &c).0 - p).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    if winding_number(mesh, p) >= 0.5 {
        -d
    } else {
        d
    }
}
