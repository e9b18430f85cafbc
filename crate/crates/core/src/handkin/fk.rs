use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::{HandModel, GRASP_DIM, NUM_GRASP_POINTS, NUM_JOINTS, TANGENT_DIM};
use crate::error::{Error, Result};
use crate::geometry::{quat_exp, Pose, Vec3};

/// Wrist pose plus joint angles; flattens to 27 numbers `[t; q(wxyz); θ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub pose: Pose,
    pub joints: Vec<f64>,
}

impl Grasp {
    pub fn new(pose: Pose, joints: Vec<f64>) -> Self {
        Self { pose, joints }
    }

    /// Identity wrist, all joints zero.
    pub fn rest() -> Self {
        Self { pose: Pose::identity(), joints: vec![0.0; NUM_JOINTS] }
    }

    pub fn to_vector(&self) -> [f64; GRASP_DIM] {
        let mut out = [0.0; GRASP_DIM];
        out[..3].copy_from_slice(self.pose.translation.as_slice());
        out[3..7].copy_from_slice(&self.pose.wxyz());
        out[7..].copy_from_slice(&self.joints);
        out
    }

    /// Parses a 27-vector; the quaternion part is normalized.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != GRASP_DIM {
            return Err(Error::arg(format!("grasp vector has {} entries, expected {GRASP_DIM}", v.len())));
        }
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if !(norm >= 1e-6) {
            return Err(Error::DegenerateRotation(norm));
        }
        Ok(Self {
            pose: Pose::from_wxyz(Vec3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]]),
            joints: v[7..].to_vec(),
        })
    }

    /// Applies a 26-dim tangent step `[dt; dω; dθ]` (world-frame rotation
    /// increment, see [`Pose::retract`]).
    pub fn retract(&self, delta: &[f64]) -> Grasp {
        debug_assert_eq!(delta.len(), TANGENT_DIM);
        let pose = self.pose.retract(&[delta[0], delta[1], delta[2], delta[3], delta[4], delta[5]]);
        let joints = self.joints.iter().zip(&delta[6..]).map(|(a, b)| a + b).collect();
        Grasp { pose, joints }
    }

    /// The same grasp seen after moving the whole scene by `t`.
    pub fn transformed(&self, t: &Pose) -> Grasp {
        Grasp { pose: t.compose(&self.pose), joints: self.joints.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Posed hand: world-frame vertices of the concatenated link meshes plus the
/// 50 grasp points.
#[derive(Debug, Clone)]
pub struct HandMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Arc<Vec<[u32; 3]>>,
    pub grasp_points: Vec<Vec3>,
    /// World pose of every link.
    pub link_poses: Vec<Pose>,
}

impl HandMesh {
    /// Vertices followed by grasp points, the layout used by the gradient
    /// routines.
    pub fn points(&self) -> impl Iterator<Item = &Vec3> {
        self.vertices.iter().chain(self.grasp_points.iter())
    }

    pub fn to_trimesh(&self) -> crate::geometry::TriMesh {
        crate::geometry::TriMesh { vertices: self.vertices.clone(), faces: (*self.faces).clone() }
    }
}

/// Elementwise clamp into the joint limits.
pub fn clamp_joints(model: &HandModel, joints: &[f64]) -> Vec<f64> {
    joints
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let jt = model.joint(j);
            x.max(jt.lower).min(jt.upper)
        })
        .collect()
}

impl HandModel {
    /// Uniform random rotation, translation in a cube of half-size `extent`,
    /// joints uniform within limits.
    pub fn random_grasp<R: rand::Rng>(&self, rng: &mut R, extent: f64) -> Grasp {
        let t = Vec3::from_fn(|_, _| rng.random_range(-extent..=extent));
        let q = loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            let n = q.iter().map(|c| c * c).sum::<f64>();
            if n > 1e-4 && n <= 1.0 {
                break q;
            }
        };
        let joints = (0..NUM_JOINTS)
            .map(|j| {
                let jt = self.joint(j);
                rng.random_range(jt.lower..=jt.upper)
            })
            .collect();
        Grasp { pose: Pose::from_wxyz(t, q), joints }
    }

    /// World pose of every link. Joint values are used as given; clamp first
    /// if they may be out of range.
    pub fn link_poses(&self, grasp: &Grasp) -> Result<Vec<Pose>> {
        if grasp.joints.len() != NUM_JOINTS {
            return Err(Error::arg(format!("expected {NUM_JOINTS} joint values, got {}", grasp.joints.len())));
        }
        let mut poses: Vec<Pose> = Vec::with_capacity(self.links.len());
        let mut j = 0;
        for link in &self.links {
            let parent = link.parent.map(|p| poses[p]).unwrap_or(grasp.pose);
            let mut pose = parent.compose(&link.origin);
            if let Some(joint) = &link.joint {
                pose.rotation *= quat_exp(&(joint.axis * grasp.joints[j]));
                j += 1;
            }
            poses.push(pose);
        }
        Ok(poses)
    }

    pub fn forward_kinematics(&self, grasp: &Grasp) -> Result<HandMesh> {
        let link_poses = self.link_poses(grasp)?;
        let mut vertices = Vec::with_capacity(self.num_vertices());
        for (link, pose) in self.links.iter().zip(&link_poses) {
            vertices.extend(link.mesh.vertices.iter().map(|v| pose.transform_point(v)));
        }
        let grasp_points = self
            .grasp_points
            .iter()
            .map(|gp| link_poses[gp.link].transform_point(&gp.position))
            .collect();
        Ok(HandMesh { vertices, faces: self.faces.clone(), grasp_points, link_poses })
    }

    /// Link owning each row of the `points()` layout.
    pub(crate) fn point_links(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_vertices() + NUM_GRASP_POINTS);
        for l in 0..self.links.len() {
            out.extend(std::iter::repeat_n(l, self.vertex_offsets[l + 1] - self.vertex_offsets[l]));
        }
        out.extend(self.grasp_points.iter().map(|g| g.link));
        out
    }

    /// World axis and origin of every joint for a posed hand.
    pub fn joint_frames(&self, hand: &HandMesh) -> Vec<(Vec3, Vec3)> {
        self.joint_links
            .iter()
            .map(|&l| {
                let pose = &hand.link_poses[l];
                let axis = self.links[l].joint.as_ref().unwrap().axis;
                (pose.transform_vector(&axis), pose.translation)
            })
            .collect()
    }

    /// Jacobian of all world vertices and grasp points (3 rows each, in the
    /// `points()` order) w.r.t. the 26 tangent parameters: translation,
    /// world-frame rotation increment about the wrist, joints.
    pub fn fk_jacobian(&self, grasp: &Grasp) -> Result<DMatrix<f64>> {
        let hand = self.forward_kinematics(grasp)?;
        let frames = self.joint_frames(&hand);
        let owners = self.point_links();
        let t = grasp.pose.translation;
        let n = owners.len();
        let mut jac = DMatrix::zeros(3 * n, TANGENT_DIM);
        for (i, (x, &l)) in hand.points().zip(&owners).enumerate() {
            let r = 3 * i;
            for k in 0..3 {
                jac[(r + k, k)] = 1.0;
            }
            let rel = x - t;
            for k in 0..3 {
                let col = Vec3::ith(k, 1.0).cross(&rel);
                for c in 0..3 {
                    jac[(r + c, 3 + k)] = col[c];
                }
            }
            for &j in &self.ancestors[l] {
                let (a, o) = frames[j];
                let col = a.cross(&(x - o));
                for c in 0..3 {
                    jac[(r + c, 6 + j)] = col[c];
                }
            }
        }
        Ok(jac)
    }

    /// Per-link sums `(Σ A_i, Σ x_i × A_i)` of point adjoints.
    fn link_moments(&self, hand: &HandMesh, adjoint: &[Vec3]) -> Vec<(Vec3, Vec3)> {
        let mut acc = vec![(Vec3::zeros(), Vec3::zeros()); self.links.len()];
        let owners = self.point_links();
        for ((x, a), &l) in hand.points().zip(adjoint).zip(&owners) {
            if *a == Vec3::zeros() {
                continue;
            }
            acc[l].0 += a;
            acc[l].1 += x.cross(a);
        }
        acc
    }

    fn joint_gradient(&self, hand: &HandMesh, moments: &[(Vec3, Vec3)]) -> [f64; NUM_JOINTS] {
        let frames = self.joint_frames(hand);
        let mut out = [0.0; NUM_JOINTS];
        for (l, (s, m)) in moments.iter().enumerate() {
            for &j in &self.ancestors[l] {
                let (a, o) = frames[j];
                // Σ a·((x - o) × A) = a·(M - o × S)
                out[j] += a.dot(&(m - o.cross(s)));
            }
        }
        out
    }

    /// Pulls point adjoints (in `points()` order) back to the 26 tangent
    /// parameters. Equals `Jᵀ·A` for [`Self::fk_jacobian`].
    pub fn tangent_gradient(&self, grasp: &Grasp, hand: &HandMesh, adjoint: &[Vec3]) -> [f64; TANGENT_DIM] {
        let moments = self.link_moments(hand, adjoint);
        let (s, m) = moments.iter().fold((Vec3::zeros(), Vec3::zeros()), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        let t = grasp.pose.translation;
        let rot = m - t.cross(&s);
        let mut out = [0.0; TANGENT_DIM];
        out[..3].copy_from_slice(s.as_slice());
        out[3..6].copy_from_slice(rot.as_slice());
        out[6..].copy_from_slice(&self.joint_gradient(hand, &moments));
        out
    }

    /// Pulls point adjoints back to the raw 27-vector `[t; q; θ]`, including
    /// the quaternion normalization.
    pub fn grasp_gradient(&self, raw: &[f64], hand: &HandMesh, adjoint: &[Vec3]) -> [f64; GRASP_DIM] {
        let moments = self.link_moments(hand, adjoint);
        let t = Vec3::new(raw[0], raw[1], raw[2]);
        let q = [raw[3], raw[4], raw[5], raw[6]];
        let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let qh = q.map(|c| c / qn);
        let (w, v) = (qh[0], Vec3::new(qh[1], qh[2], qh[3]));
        let rot = rotation_matrix(w, &v);

        // G = Σ A_i y_iᵀ with y_i the wrist-frame position of point i
        let mut s = Vec3::zeros();
        let mut g = Matrix3::zeros();
        let owners = self.point_links();
        for ((x, a), _) in hand.points().zip(adjoint).zip(&owners) {
            if *a == Vec3::zeros() {
                continue;
            }
            s += a;
            let y = rot.transpose() * (x - t);
            g += a * y.transpose();
        }
        let inner = |d: &Matrix3<f64>| d.component_mul(&g).sum();
        let mut dqh = [0.0; 4];
        dqh[0] = inner(&(Matrix3::identity() * (2.0 * w) + skew(&v) * 2.0));
        for k in 0..3 {
            let e = Vec3::ith(k, 1.0);
            let d = Matrix3::identity() * (-2.0 * v[k]) + (e * v.transpose() + v * e.transpose()) * 2.0 + skew(&e) * (2.0 * w);
            dqh[k + 1] = inner(&d);
        }
        let dot: f64 = (0..4).map(|k| dqh[k] * qh[k]).sum();

        let mut out = [0.0; GRASP_DIM];
        out[..3].copy_from_slice(s.as_slice());
        for k in 0..4 {
            out[3 + k] = (dqh[k] - qh[k] * dot) / qn;
        }
        out[7..].copy_from_slice(&self.joint_gradient(hand, &moments));
        out
    }
}

/// Converts a gradient w.r.t. the raw 27-vector into the 26-dim tangent
/// gradient at `grasp` (world-frame rotation increments).
pub fn raw_to_tangent_gradient(grasp: &Grasp, raw_grad: &[f64]) -> [f64; TANGENT_DIM] {
    let q = grasp.pose.wxyz();
    let mut out = [0.0; TANGENT_DIM];
    out[..3].copy_from_slice(&raw_grad[..3]);
    // d/dω exp(ω)·q at 0 = ½ (0, e_k) ⊗ q
    for k in 0..3 {
        let e = Vec3::ith(k, 1.0);
        let (w, v) = (q[0], Vec3::new(q[1], q[2], q[3]));
        let dw = -0.5 * e.dot(&v);
        let dv = (e * w + e.cross(&v)) * 0.5;
        out[3 + k] = raw_grad[3] * dw + raw_grad[4] * dv.x + raw_grad[5] * dv.y + raw_grad[6] * dv.z;
    }
    out[6..].copy_from_slice(&raw_grad[7..]);
    out
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn rotation_matrix(w: f64, v: &Vec3) -> Matrix3<f64> {
    Matrix3::identity() * (w * w - v.dot(v)) + v * v.transpose() * 2.0 + skew(v) * (2.0 * w)
}
