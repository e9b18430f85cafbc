use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{NUM_GRASP_POINTS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::geometry::{capsule, cuboid, io::read_obj, subdivide, Aabb, MeshSdf, Pose, TriMesh, Vec3};

/// Grasp points must sit this close to their link surface.
const GRASP_POINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    /// Unit rotation axis in the link frame.
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    /// Fixed transform from the parent frame, applied before the joint rotation.
    pub origin: Pose,
    pub joint: Option<Joint>,
    /// Geometry in the link frame; may be empty for virtual links.
    pub mesh: TriMesh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPointLabel {
    pub link: usize,
    pub position: Vec3,
}

/// Per-link collision data built once at load time.
#[derive(Debug, Clone)]
pub(crate) struct LinkShape {
    pub sdf: MeshSdf,
    /// Bounding sphere in the link frame.
    pub center: Vec3,
    pub radius: f64,
    pub bounds: Aabb,
}

/// Articulated hand: a tree of links, 20 revolute joints and 50 labeled
/// grasp points. Links are stored parents-first.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub name: String,
    pub links: Vec<Link>,
    pub grasp_points: Vec<GraspPointLabel>,
    /// `joint_links[j]` is the link driven by joint `j`.
    pub joint_links: Vec<usize>,
    /// Vertex range of link `l` in the concatenated hand mesh.
    pub vertex_offsets: Vec<usize>,
    pub faces: Arc<Vec<[u32; 3]>>,
    /// First global face index of every link.
    pub face_offsets: Vec<usize>,
    /// For every link, the joints on its path to the root.
    pub(crate) ancestors: Vec<Vec<usize>>,
    /// Top-level chain (child of the root) each joint belongs to.
    pub(crate) joint_chain: Vec<usize>,
    pub(crate) shapes: Vec<Option<LinkShape>>,
}

// --- config file -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandConfig {
    pub name: String,
    pub links: Vec<LinkConfig>,
    pub grasp_points: Vec<GraspPointConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default = "zero3")]
    pub translation: [f64; 3],
    /// `(w, x, y, z)`.
    #[serde(default = "unit_quat")]
    pub rotation: [f64; 4],
    #[serde(default)]
    pub joint: Option<JointConfig>,
    #[serde(default)]
    pub mesh: Option<MeshConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshConfig {
    Box {
        half_extents: [f64; 3],
        #[serde(default = "zero3")]
        center: [f64; 3],
        #[serde(default)]
        subdivisions: u32,
    },
    /// Tube along +y from the link origin, see [`capsule`].
    Capsule { radius: f64, length: f64, segments: u32, rings: u32, cap_rings: u32 },
    /// OBJ file, relative paths resolved against the config's directory.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspPointConfig {
    pub link: String,
    pub position: [f64; 3],
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

fn unit_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn bad(msg: impl Into<String>) -> Error {
    Error::HandModel(msg.into())
}

impl MeshConfig {
    fn build(&self, base: &Path) -> Result<TriMesh> {
        Ok(match self {
            MeshConfig::Box { half_extents, center, subdivisions } => {
                let mut m = cuboid(v3(*half_extents));
                for _ in 0..*subdivisions {
                    m = subdivide(&m);
                }
                m.transformed(&Pose::from_translation(v3(*center)))
            }
            MeshConfig::Capsule { radius, length, segments, rings, cap_rings } => {
                if *segments < 3 || *rings < 2 || *radius <= 0.0 || *length < 0.0 {
                    return Err(bad("capsule needs segments ≥ 3, rings ≥ 2, radius > 0, length ≥ 0"));
                }
                capsule(*radius, *length, *segments, *rings, *cap_rings)
            }
            MeshConfig::File { path } => read_obj(&base.join(path))?,
        })
    }
}

impl HandModel {
    /// Loads and validates a JSON hand description.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: HandConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_config(&cfg, path.parent().unwrap_or(Path::new(".")))
    }

    /// The shipped five-finger hand.
    pub fn generic() -> Self {
        Self::from_config(&generic_config(), Path::new(".")).expect("built-in hand config is valid")
    }

    pub fn from_config(cfg: &HandConfig, base: &Path) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut links = Vec::with_capacity(cfg.links.len());
        for (i, lc) in cfg.links.iter().enumerate() {
            if index.insert(lc.name.as_str(), i).is_some() {
                return Err(bad(format!("duplicate link name `{}`", lc.name)));
            }
            let parent = match &lc.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    bad(format!("link `{}` names parent `{p}`, which is not declared before it", lc.name))
                })?),
            };
            if parent.is_none() && i != 0 {
                return Err(bad(format!("link `{}` has no parent; only the first link may be the root", lc.name)));
            }
            let joint = match &lc.joint {
                None => None,
                Some(j) => {
                    let axis = v3(j.axis);
                    if axis.norm() < 1e-9 {
                        return Err(bad(format!("joint of link `{}` has a zero axis", lc.name)));
                    }
                    if !(j.lower < j.upper) {
                        return Err(bad(format!(
                            "joint of link `{}` has limits [{}, {}]; need lower < upper",
                            lc.name, j.lower, j.upper
                        )));
                    }
                    Some(Joint { axis: axis.normalize(), lower: j.lower, upper: j.upper })
                }
            };
            let mesh = match &lc.mesh {
                None => TriMesh::empty(),
                Some(m) => m.build(base)?,
            };
            links.push(Link {
                name: lc.name.clone(),
                parent,
                origin: Pose::from_wxyz(v3(lc.translation), lc.rotation),
                joint,
                mesh,
            });
        }
        if links.is_empty() {
            return Err(bad("hand has no links"));
        }
        let mut grasp_points = Vec::with_capacity(cfg.grasp_points.len());
        for gp in &cfg.grasp_points {
            let link = *index
                .get(gp.link.as_str())
                .ok_or_else(|| bad(format!("grasp point on unknown link `{}`", gp.link)))?;
            grasp_points.push(GraspPointLabel { link, position: v3(gp.position) });
        }
        Self::assemble(cfg.name.clone(), links, grasp_points)
    }

    fn assemble(name: String, links: Vec<Link>, grasp_points: Vec<GraspPointLabel>) -> Result<Self> {
        let joint_links: Vec<usize> = (0..links.len()).filter(|&l| links[l].joint.is_some()).collect();
        if joint_links.len() != NUM_JOINTS {
            return Err(bad(format!("expected {NUM_JOINTS} actuated joints, found {}", joint_links.len())));
        }
        if grasp_points.len() != NUM_GRASP_POINTS {
            return Err(bad(format!("expected {NUM_GRASP_POINTS} grasp points, found {}", grasp_points.len())));
        }

        let mut joint_of_link = vec![None; links.len()];
        for (j, &l) in joint_links.iter().enumerate() {
            joint_of_link[l] = Some(j);
        }
        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(links.len());
        let mut chain_of_link = vec![0usize; links.len()];
        for (l, link) in links.iter().enumerate() {
            let mut a = link.parent.map(|p| ancestors[p].clone()).unwrap_or_default();
            if let Some(j) = joint_of_link[l] {
                a.push(j);
            }
            ancestors.push(a);
            chain_of_link[l] = match link.parent {
                None => l,
                Some(p) if links[p].parent.is_none() => l,
                Some(p) => chain_of_link[p],
            };
        }
        let joint_chain = joint_links.iter().map(|&l| chain_of_link[l]).collect();

        let mut shapes = Vec::with_capacity(links.len());
        for link in &links {
            if link.mesh.is_empty() {
                shapes.push(None);
                continue;
            }
            let sdf = MeshSdf::new(link.mesh.clone())
                .map_err(|e| bad(format!("mesh of link `{}`: {e}", link.name)))?;
            let bounds = link.mesh.bounds();
            let center = bounds.center();
            let radius = link.mesh.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
            shapes.push(Some(LinkShape { sdf, center, radius, bounds }));
        }

        for (i, gp) in grasp_points.iter().enumerate() {
            let shape = shapes[gp.link]
                .as_ref()
                .ok_or_else(|| bad(format!("grasp point {i} lies on link `{}`, which has no mesh", links[gp.link].name)))?;
            let d = shape.sdf.unsigned_distance(&gp.position);
            if d > GRASP_POINT_TOLERANCE {
                return Err(bad(format!(
                    "grasp point {i} is {d:.3e} m from the surface of link `{}`",
                    links[gp.link].name
                )));
            }
        }

        let mut vertex_offsets = Vec::with_capacity(links.len() + 1);
        let mut face_offsets = Vec::with_capacity(links.len());
        let mut faces = Vec::new();
        let mut n = 0usize;
        for link in &links {
            vertex_offsets.push(n);
            face_offsets.push(faces.len());
            faces.extend(link.mesh.faces.iter().map(|f| f.map(|i| i + n as u32)));
            n += link.mesh.vertices.len();
        }
        vertex_offsets.push(n);

        Ok(Self {
            name,
            links,
            grasp_points,
            joint_links,
            vertex_offsets,
            faces: Arc::new(faces),
            face_offsets,
            ancestors,
            joint_chain,
            shapes,
        })
    }

    pub fn num_vertices(&self) -> usize {
        *self.vertex_offsets.last().unwrap()
    }

    pub fn joint(&self, j: usize) -> &Joint {
        self.links[self.joint_links[j]].joint.as_ref().expect("joint link has a joint")
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        (0..NUM_JOINTS).map(|j| self.joint(j).lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        (0..NUM_JOINTS).map(|j| self.joint(j).upper).collect()
    }

    /// Joints grouped by the top-level chain (finger) they belong to, in
    /// order of first appearance.
    pub fn chains(&self) -> Vec<Vec<usize>> {
        let mut roots: Vec<usize> = Vec::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (j, &c) in self.joint_chain.iter().enumerate() {
            match roots.iter().position(|&r| r == c) {
                Some(k) => out[k].push(j),
                None => {
                    roots.push(c);
                    out.push(vec![j]);
                }
            }
        }
        out
    }

    /// Links whose pose depends on joint `j`.
    pub fn links_moved_by(&self, j: usize) -> Vec<usize> {
        (0..self.links.len()).filter(|&l| self.ancestors[l].contains(&j)).collect()
    }

    /// Whether joint `j` lies on the path from link `l` to the root.
    pub fn moves(&self, j: usize, l: usize) -> bool {
        self.ancestors[l].contains(&j)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn root(&self) -> usize {
        0
    }
}

// --- the shipped hand --------------------------------------------------------

const FINGER_RADIUS: f64 = 0.009;
const SEGMENTS: u32 = 12;
const RINGS: u32 = 6;
const CAP_RINGS: u32 = 1;

/// Palmar-side (+z) shaft vertex of ring `k` on a finger capsule.
fn palmar_point(length: f64, k: u32) -> [f64; 3] {
    let m = capsule(FINGER_RADIUS, length, SEGMENTS, RINGS, CAP_RINGS);
    let v = m.vertices[((CAP_RINGS + k) * SEGMENTS) as usize];
    [v.x, v.y, v.z]
}

struct FingerSpec {
    name: &'static str,
    base: [f64; 3],
    base_rotation: [f64; 4],
    first_axis: [f64; 3],
    first_limits: (f64, f64),
    /// Rotation from the first (virtual) link to the proximal link.
    proximal_rotation: [f64; 4],
    lengths: [f64; 3],
    flex_limits: [(f64, f64); 3],
}

/// Five fingers of four joints: one abduction (opposition for the thumb) plus
/// three flexions about +x. Palm inner face is the `z = 0` plane, fingers
/// point along +y, the thumb sits on the +x side. Rest pose is all joints at
/// their lower limits (zero).
pub fn generic_config() -> HandConfig {
    let capsule_mesh = |length: f64| MeshConfig::Capsule {
        radius: FINGER_RADIUS,
        length,
        segments: SEGMENTS,
        rings: RINGS,
        cap_rings: CAP_RINGS,
    };
    let id = unit_quat();
    let z = -FINGER_RADIUS;
    let flex = [(0.0, 1.6), (0.0, 1.75), (0.0, 1.4)];
    // the thumb lies flat pointing out along +x; its flexion curls it toward
    // the fingers and the palm, so once opposed it closes against them
    let thumb_frame = {
        let curl = Vec3::new(0.0, 0.87, 0.5).normalize();
        let along = Vec3::x();
        let m = nalgebra::Matrix3::from_columns(&[along.cross(&curl), along, curl]);
        let q = nalgebra::UnitQuaternion::from_matrix(&m);
        [q.w, q.i, q.j, q.k]
    };
    let fingers = [
        FingerSpec {
            name: "thumb",
            base: [0.040, 0.020, z],
            base_rotation: id,
            first_axis: [0.0, -1.0, 0.0],
            first_limits: (0.0, 1.3),
            proximal_rotation: thumb_frame,
            lengths: [0.040, 0.032, 0.028],
            flex_limits: [(0.0, 1.0), (0.0, 1.3), (0.0, 1.3)],
        },
        FingerSpec {
            name: "index",
            base: [0.0315, 0.090, z],
            base_rotation: id,
            first_axis: [0.0, 0.0, -1.0],
            first_limits: (0.0, 0.3),
            proximal_rotation: id,
            lengths: [0.045, 0.028, 0.022],
            flex_limits: flex,
        },
        FingerSpec {
            name: "middle",
            base: [0.0105, 0.090, z],
            base_rotation: id,
            first_axis: [0.0, 0.0, -1.0],
            first_limits: (0.0, 0.15),
            proximal_rotation: id,
            lengths: [0.048, 0.030, 0.024],
            flex_limits: flex,
        },
        FingerSpec {
            name: "ring",
            base: [-0.0105, 0.090, z],
            base_rotation: id,
            first_axis: [0.0, 0.0, 1.0],
            first_limits: (0.0, 0.15),
            proximal_rotation: id,
            lengths: [0.045, 0.028, 0.022],
            flex_limits: flex,
        },
        FingerSpec {
            name: "little",
            base: [-0.0315, 0.090, z],
            base_rotation: id,
            first_axis: [0.0, 0.0, 1.0],
            first_limits: (0.0, 0.3),
            proximal_rotation: id,
            lengths: [0.038, 0.022, 0.020],
            flex_limits: flex,
        },
    ];

    let mut links = vec![LinkConfig {
        name: "palm".into(),
        parent: None,
        translation: zero3(),
        rotation: id,
        joint: None,
        mesh: Some(MeshConfig::Box { half_extents: [0.045, 0.045, 0.0125], center: [0.0, 0.045, -0.0125], subdivisions: 2 }),
    }];
    let mut grasp_points = Vec::new();
    let segment_names = ["proximal", "medial", "distal"];
    let point_rings: [&[u32]; 3] = [&[1, 2, 3, 4], &[1, 2, 4], &[1, 3, 5]];
    for f in &fingers {
        let base_name = format!("{}_base", f.name);
        links.push(LinkConfig {
            name: base_name.clone(),
            parent: Some("palm".into()),
            translation: f.base,
            rotation: f.base_rotation,
            joint: Some(JointConfig { axis: f.first_axis, lower: f.first_limits.0, upper: f.first_limits.1 }),
            mesh: None,
        });
        let mut parent = base_name;
        for s in 0..3 {
            let name = format!("{}_{}", f.name, segment_names[s]);
            let (translation, rotation) =
                if s == 0 { (zero3(), f.proximal_rotation) } else { ([0.0, f.lengths[s - 1], 0.0], id) };
            links.push(LinkConfig {
                name: name.clone(),
                parent: Some(parent.clone()),
                translation,
                rotation,
                joint: Some(JointConfig { axis: [1.0, 0.0, 0.0], lower: f.flex_limits[s].0, upper: f.flex_limits[s].1 }),
                mesh: Some(capsule_mesh(f.lengths[s])),
            });
            for &k in point_rings[s] {
                grasp_points.push(GraspPointConfig { link: name.clone(), position: palmar_point(f.lengths[s], k) });
            }
            parent = name;
        }
    }
    HandConfig { name: "generic-five-finger".into(), links, grasp_points }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_hand_counts() {
        let h = HandModel::generic();
        assert_eq!(h.joint_links.len(), 20);
        assert_eq!(h.grasp_points.len(), 50);
        assert_eq!(h.chains().len(), 5);
        assert!(h.chains().iter().all(|c| c.len() == 4));
        for j in 0..20 {
            assert_eq!(h.joint(j).lower, 0.0);
        }
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = generic_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: HandConfig = serde_json::from_str(&text).unwrap();
        let h = HandModel::from_config(&back, Path::new(".")).unwrap();
        assert_eq!(h.num_vertices(), HandModel::generic().num_vertices());
    }

    #[test]
    fn loader_rejects_wrong_counts_and_limits() {
        let mut cfg = generic_config();
        cfg.grasp_points.pop();
        assert!(matches!(HandModel::from_config(&cfg, Path::new(".")), Err(Error::HandModel(_))));

        let mut cfg = generic_config();
        cfg.links[1].joint = None;
        let err = HandModel::from_config(&cfg, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("20 actuated joints"), "{err}");

        let mut cfg = generic_config();
        let j = cfg.links[2].joint.as_mut().unwrap();
        j.upper = j.lower;
        assert!(HandModel::from_config(&cfg, Path::new(".")).is_err());

        let mut cfg = generic_config();
        cfg.grasp_points[0].position[2] += 0.01;
        let err = HandModel::from_config(&cfg, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("from the surface"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"name":"x","links":[],"grasp_points":[],"extra":1}"#;
        assert!(serde_json::from_str::<HandConfig>(text).is_err());
    }
}
