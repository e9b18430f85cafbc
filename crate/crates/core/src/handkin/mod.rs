//! Articulated 20-joint hand: kinematic tree, forward kinematics producing
//! the posed hand mesh and grasp points, analytic Jacobians and
//! hand-surface distance queries.

mod fk;
mod model;
mod surface;

pub use fk::{clamp_joints, raw_to_tangent_gradient, Grasp, HandMesh};
pub use model::{
    generic_config, GraspPointConfig, GraspPointLabel, HandConfig, HandModel, Joint, JointConfig, Link, LinkConfig,
    MeshConfig,
};
pub use surface::HandHit;

pub const NUM_JOINTS: usize = 20;
pub const NUM_GRASP_POINTS: usize = 50;
/// Flattened grasp: translation, quaternion (w, x, y, z), joints.
pub const GRASP_DIM: usize = 27;
/// Translation, rotation increment, joints.
pub const TANGENT_DIM: usize = 26;

#[cfg(test)]
mod tests;
