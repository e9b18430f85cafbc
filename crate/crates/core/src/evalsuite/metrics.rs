use crate::error::{Error, Result};
use crate::geometry::{Aabb, SurfaceModel, TriMesh};
use crate::handkin::{Grasp, HandMesh, HandModel};

use super::GraspRecord;

/// Generated grasps within this translation distance cover a positive (m).
pub const COVERAGE_RADIUS: f64 = 0.02;

/// Default voxel edge for [`penetration_metrics`] (m).
pub const VOXEL_SIZE: f64 = 2e-3;

/// Penetration depth (cm) and intersection volume (cm³) between a posed
/// hand and a watertight object mesh.
///
/// Depth is the largest |signed distance| over hand vertices inside the
/// object. Volume counts voxel centers of a `VOXEL_SIZE` grid that lie
/// inside both the object and at least one hand link.
pub fn penetration_metrics(model: &HandModel, hand: &HandMesh, object: &SurfaceModel) -> Result<(f64, f64)> {
    let sdf = object.mesh_sdf().ok_or_else(|| Error::NotWatertight("object has no mesh".into()))?;
    sdf.mesh().check_watertight()?;
    let depth = hand
        .vertices
        .iter()
        .map(|v| sdf.signed_distance(v))
        .filter(|&d| d < 0.0)
        .fold(0.0, |m: f64, d| m.max(-d));
    let links: Vec<TriMesh> = model
        .links
        .iter()
        .zip(&hand.link_poses)
        .filter(|(l, _)| !l.mesh.faces.is_empty())
        .map(|(l, p)| l.mesh.transformed(p))
        .collect();
    let volume = intersection_volume(sdf.mesh(), &links, VOXEL_SIZE);
    Ok((depth * 100.0, volume * 1e6))
}

/// Volume (m³) of `a ∩ (b₀ ∪ b₁ ∪ …)` by counting centers of a grid of
/// cubes with edge `h` (aligned at the origin). Each grid column is
/// classified exactly by casting a ray along +z through every mesh.
pub fn intersection_volume(a: &TriMesh, b: &[TriMesh], h: f64) -> f64 {
    let bb = b.iter().fold(Aabb::empty(), |acc, m| acc.merge(&m.bounds()));
    let region = a.bounds().intersection(&bb);
    if region.is_empty() || b.is_empty() {
        return 0.0;
    }
    let cells = |lo: f64, hi: f64| ((lo / h - 0.5).ceil() as i64, (hi / h - 0.5).floor() as i64);
    let (i0, i1) = cells(region.min.x, region.max.x);
    let (j0, j1) = cells(region.min.y, region.max.y);
    let mut count: i64 = 0;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let x = (i as f64 + 0.5) * h;
            let y = (j as f64 + 0.5) * h;
            let ia = ray_intervals(a, x, y);
            if ia.is_empty() {
                continue;
            }
            let ib = union(b.iter().flat_map(|m| ray_intervals(m, x, y)).collect());
            for (lo, hi) in intersect(&ia, &ib) {
                let (k0, k1) = cells(lo, hi);
                count += (k1 - k0 + 1).max(0);
            }
        }
    }
    count as f64 * h * h * h
}

/// Inside intervals of a closed mesh along the vertical line through
/// `(x, y)`, from signed crossings (winding count > 0 is inside).
fn ray_intervals(m: &TriMesh, x: f64, y: f64) -> Vec<(f64, f64)> {
    // nudge off the grid so the line never passes exactly through an edge
    let (x, y) = (x + 1.234_567e-9, y + 2.345_678e-9);
    let mut hits: Vec<(f64, i32)> = Vec::new();
    for f in &m.faces {
        let [a, b, c] = f.map(|i| m.vertices[i as usize]);
        if x < a.x.min(b.x).min(c.x) || x > a.x.max(b.x).max(c.x) || y < a.y.min(b.y).min(c.y) || y > a.y.max(b.y).max(c.y) {
            continue;
        }
        let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        if det == 0.0 {
            continue;
        }
        let u = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
        let v = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
        if u < 0.0 || v < 0.0 || u + v > 1.0 {
            continue;
        }
        let z = a.z + u * (b.z - a.z) + v * (c.z - a.z);
        // det > 0 means the face normal points up: the line leaves the solid
        hits.push((z, if det > 0.0 { -1 } else { 1 }));
    }
    hits.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut out = Vec::new();
    let mut wind = 0;
    let mut start = 0.0;
    for (z, s) in hits {
        let before = wind;
        wind += s;
        if before <= 0 && wind > 0 {
            start = z;
        } else if before > 0 && wind <= 0 {
            out.push((start, z));
        }
    }
    out
}

fn union(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (lo, hi) in iv {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Fraction of `positives` with some generated grasp whose translation is
/// within [`COVERAGE_RADIUS`].
pub fn coverage_rate(generated: &[Grasp], positives: &[Grasp]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::arg("coverage needs at least one positive grasp"));
    }
    let r2 = COVERAGE_RADIUS * COVERAGE_RADIUS;
    let covered = positives
        .iter()
        .filter(|p| {
            generated
                .iter()
                .any(|g| (g.pose.translation - p.pose.translation).norm_squared() <= r2)
        })
        .count();
    Ok(covered as f64 / positives.len() as f64)
}

/// Fraction of records labelled stable; 0 for an empty list.
pub fn success_rate(records: &[GraspRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label.is_stable()).count() as f64 / records.len() as f64
}
