//! Rigid-body math, point clouds, triangle meshes, spatial indexing and
//! signed-distance queries.
//!
//! Sign convention everywhere: negative inside, positive outside.

mod bvh;
mod cloud;
mod fps;
pub mod io;
mod mesh;
mod pose;
mod sdf;

pub use bvh::{Aabb, Bvh};
pub use cloud::{centroid, transform, PointCloud};
pub use fps::{farthest_point_indices, farthest_point_sample};
pub use mesh::{capsule, closest_point_on_triangle, cuboid, icosphere, subdivide, triangle_solid_angle, TriMesh, TriangleRegion};
pub use pose::{quat_exp, quat_log, Pose};
pub use sdf::{
    brute_force_signed_distance, winding_number, CloudSdf, MeshSdf, SdfHit, SignMethod, SurfaceModel,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;

/// Area below which a face counts as degenerate and is dropped on load.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Offset-along-normal band inside which a cloud query is reported as outside.
pub const CLOUD_SIGN_EPS: f64 = 1e-6;
