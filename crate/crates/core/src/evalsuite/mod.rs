//! Grasp quality metrics, a quasi-static stability evaluator and the
//! labelled-grasp dataset generator.
//!
//! A grasp is stable when, after closing the fingers along its taxonomy,
//! the contact friction cones achieve force closure (ε > 0) and the contact
//! forces needed to hold the object against gravity and against six shake
//! wrenches stay within the force budget.

mod closure;
mod dataset;
mod metrics;
mod taxonomy;
mod wrench;

use serde::{Deserialize, Serialize};

pub use closure::{close_fingers, Closure, ObjectProbe};
pub use dataset::{
    approach_pose, generate_dataset, read_contact_cache, read_records, write_contact_cache, write_records, DatasetConfig,
    GraspRecord, Label,
};
pub use metrics::{coverage_rate, intersection_volume, penetration_metrics, success_rate, COVERAGE_RADIUS};
pub use taxonomy::{load_taxonomies, Taxonomy};
pub use wrench::{
    balancing_force, contact_wrenches, force_closure_epsilon, origin_in_interior, wrench_directions, Wrench,
    CONE_EDGES, NUM_DIRECTIONS, PATCH_RADIUS,
};

use crate::error::{Error, Result};
use crate::geometry::{Pose, SurfaceModel, Vec3};
use crate::handkin::{Grasp, HandModel};

pub const DEFAULT_FRICTION: f64 = 0.25;

/// A point contact with Coulomb friction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub position: Vec3,
    /// Unit normal pointing into the object.
    pub normal: Vec3,
    pub friction: f64,
}

impl Contact {
    /// Normalizes `normal`; fails if it is zero or non-finite.
    pub fn new(position: Vec3, normal: Vec3, friction: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0 && len.is_finite()) || !position.iter().all(|x| x.is_finite()) {
            return Err(Error::arg(format!("invalid contact at {position:?} with normal {normal:?}")));
        }
        if !(friction >= 0.0) {
            return Err(Error::arg(format!("friction must be nonnegative, got {friction}")));
        }
        Ok(Self { position, normal: normal / len, friction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Closing increment per step (degrees).
    pub step_deg: f64,
    /// A link touches the object at this signed distance or less (m).
    pub contact_tolerance: f64,
    /// Palm penetration beyond this depth is an invalid start (m).
    pub palm_tolerance: f64,
    pub friction: f64,
    /// Object density (kg/m³).
    pub density: f64,
    pub gravity: f64,
    /// Shake wrench magnitude as a multiple of the object weight.
    pub shake_factor: f64,
    /// Largest total normal contact force the hand can apply (N).
    pub max_force: f64,
    /// Orientation (w, x, y, z) of the frame whose −z is gravity and whose
    /// axes are the shake directions.
    pub frame: [f64; 4],
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            step_deg: 0.5,
            contact_tolerance: 5e-4,
            palm_tolerance: 5e-3,
            friction: DEFAULT_FRICTION,
            density: 1500.0,
            gravity: 9.81,
            shake_factor: 2.0,
            max_force: 100.0,
            frame: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_deg", self.step_deg),
            ("contact_tolerance", self.contact_tolerance),
            ("density", self.density),
            ("max_force", self.max_force),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("palm_tolerance", self.palm_tolerance),
            ("friction", self.friction),
            ("gravity", self.gravity),
            ("shake_factor", self.shake_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        let q = self.frame;
        if !(q.iter().map(|x| x * x).sum::<f64>() > 1e-12) {
            return Err(Error::Config("frame quaternion must be nonzero".into()));
        }
        Ok(())
    }

    pub fn frame_pose(&self) -> Pose {
        Pose::from_wxyz(Vec3::zeros(), self.frame)
    }
}

/// Mass properties used for the gravity and shake tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectProps {
    pub mass: f64,
    pub center: Vec3,
    /// Largest distance from `center` to the surface; torque normalizer.
    pub radius: f64,
}

impl ObjectProps {
    /// Solid of uniform density from the mesh; clouds fall back to the
    /// bounding-box volume and the point centroid.
    pub fn of(object: &SurfaceModel, density: f64) -> Result<Self> {
        let (volume, center, pts): (f64, Vec3, &[Vec3]) = if let Some(m) = object.mesh() {
            let v = m.volume();
            let c = volume_centroid(&m.vertices, &m.faces).unwrap_or_else(|| m.area_centroid());
            (v.abs(), c, &m.vertices)
        } else if let Some(c) = object.cloud() {
            let b = object.bounds();
            let e = b.extent();
            (e.x * e.y * e.z, crate::geometry::centroid(&c.points), &c.points)
        } else {
            return Err(Error::arg("object has no geometry"));
        };
        let radius = pts.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        Ok(Self { mass: volume * density, center, radius })
    }
}

fn volume_centroid(vertices: &[Vec3], faces: &[[u32; 3]]) -> Option<Vec3> {
    let mut vol = 0.0;
    let mut acc = Vec3::zeros();
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let v = a.dot(&b.cross(&c)) / 6.0;
        vol += v;
        acc += (a + b + c) * (v / 4.0);
    }
    (vol.abs() > 1e-15).then(|| acc / vol)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub stable: bool,
    pub closure: Closure,
    pub epsilon: f64,
    /// Total contact force needed against gravity; `None` if unbalanceable.
    pub gravity_force: Option<f64>,
    /// Same for each shake wrench (+x, −x, +y, −y, +z, −z of the frame).
    pub shake_forces: [Option<f64>; 6],
}

/// Closes the hand, then requires force closure, a gravity hold and a hold
/// against every shake wrench within `cfg.max_force`.
pub fn evaluate_grasp(
    model: &HandModel,
    g: &Grasp,
    taxonomy: &Taxonomy,
    object: &SurfaceModel,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let probe = ObjectProbe::new(object)?;
    let props = ObjectProps::of(object, cfg.density)?;
    evaluate_with(model, g, taxonomy, &probe, &props, cfg)
}

pub(crate) fn evaluate_with(
    model: &HandModel,
    g: &Grasp,
    taxonomy: &Taxonomy,
    probe: &ObjectProbe,
    props: &ObjectProps,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let closure = closure::close_with_probe(model, g, taxonomy, probe, cfg, true)?;
    // wrench space is expressed in the evaluation frame so that results do
    // not depend on how the scene is placed in the world
    let to_frame = cfg.frame_pose().inverse();
    let local: Vec<Contact> = closure
        .contacts
        .iter()
        .map(|c| Contact {
            position: to_frame.transform_point(&c.position),
            normal: to_frame.transform_vector(&c.normal),
            friction: c.friction,
        })
        .collect();
    let center = to_frame.transform_point(&props.center);
    let epsilon = force_closure_epsilon(&local, &center, props.radius);
    let weight = props.mass * cfg.gravity;
    let hold = |force: Vec3| -> Option<f64> {
        if epsilon <= 0.0 {
            return None;
        }
        let w = Wrench::new(force.x, force.y, force.z, 0.0, 0.0, 0.0);
        balancing_force(&local, &center, props.radius, &w)
    };
    let gravity_force = hold(Vec3::new(0.0, 0.0, -weight));
    let shake = weight * cfg.shake_factor;
    let mut shake_forces = [None; 6];
    for (k, slot) in shake_forces.iter_mut().enumerate() {
        let mut axis = Vec3::zeros();
        axis[k / 2] = if k % 2 == 0 { shake } else { -shake };
        *slot = hold(axis);
    }
    let within = |f: &Option<f64>| f.is_some_and(|v| v <= cfg.max_force);
    let stable = epsilon > 0.0 && within(&gravity_force) && shake_forces.iter().all(within);
    Ok(Evaluation { stable, closure, epsilon, gravity_force, shake_forces })
}
