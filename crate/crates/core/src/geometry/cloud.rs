use serde::{Deserialize, Serialize};

use super::{Pose, Vec3};
use crate::error::{Error, Result};

/// Points in meters with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::arg(format!(
                    "point cloud has {} points but {} normals",
                    points.len(),
                    n.len()
                )));
            }
            if let Some((i, bad)) = n.iter().enumerate().find(|(_, v)| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::arg(format!("normal {i} has norm {}", bad.norm())));
            }
        }
        Ok(Self { points, normals })
    }

    /// Builds a cloud, renormalizing the supplied normals.
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let normals = normals.into_iter().map(|n| n.normalize()).collect();
        Self::new(points, Some(normals))
    }

    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Translates the cloud so its centroid sits at the origin and returns
    /// the offset that was removed.
    pub fn center(&mut self) -> Vec3 {
        let c = centroid(&self.points);
        for p in &mut self.points {
            *p -= c;
        }
        c
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Rigidly moves points; normals are only rotated.
pub fn transform(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.transform_point(p)).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|n| n.iter().map(|v| pose.transform_vector(v)).collect()),
    }
}
