//! Differentiable geometric operations recorded on a [`Tape`] with
//! analytic backward passes.

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{SurfaceModel, Vec3};
use crate::handkin::{Grasp, HandMesh, HandModel, GRASP_DIM};

fn rows_to_vec3(t: &Tensor) -> Vec<Vec3> {
    (0..t.rows()).map(|r| Vec3::new(t.get(r, 0), t.get(r, 1), t.get(r, 2))).collect()
}

fn vec3_rows(points: &[Vec3]) -> Tensor {
    Tensor::from_fn(points.len(), 3, |r, c| points[r][c])
}

/// Hand layer: raw grasp row `1×27` → posed points `(V + 50)×3` (vertices,
/// then grasp points). Also returns the posed hand for non-differentiable
/// queries.
pub fn hand_layer(tape: &Tape, model: &Arc<HandModel>, grasp: Var) -> Result<(Var, HandMesh)> {
    let raw = tape.value(grasp);
    if raw.shape() != (1, GRASP_DIM) {
        return Err(Error::Shape { op: "hand_layer", detail: format!("grasp tensor {:?}", raw.shape()) });
    }
    let raw = raw.data().to_vec();
    let g = Grasp::from_slice(&raw)?;
    let hand = model.forward_kinematics(&g)?;
    let points: Vec<Vec3> = hand.points().copied().collect();
    let value = vec3_rows(&points);
    let model = model.clone();
    let posed = hand.clone();
    let var = tape.custom("hand_layer", &[grasp], value, move |adj| {
        let a = rows_to_vec3(adj);
        vec![Tensor::row(&model.grasp_gradient(&raw, &posed, &a))]
    });
    Ok((var, hand))
}

/// Signed distances from fixed world points to the posed hand surface
/// (`k×1`), differentiable w.r.t. the hand-layer output `hand_points`.
pub fn hand_surface_distance(
    tape: &Tape,
    model: &HandModel,
    hand: &HandMesh,
    hand_points: Var,
    queries: &[Vec3],
) -> Var {
    let hits: Vec<_> = queries.par_iter().map(|p| model.surface_query(hand, p)).collect();
    let rows = tape.value(hand_points).rows();
    let value = Tensor::from_fn(queries.len(), 1, |r, _| hits[r].distance);
    // ∂f/∂v_k = s · b_k (c − p) / d for the vertices of the closest face
    let partials: Vec<([usize; 3], [f64; 3], Vec3)> = hits
        .iter()
        .zip(queries)
        .map(|(h, p)| {
            let d = h.distance.abs();
            let dir = if d > 0.0 { (h.closest - p) * (h.distance.signum() / d) } else { Vec3::zeros() };
            (h.face_vertices(model), h.bary, dir)
        })
        .collect();
    tape.custom("hand_surface_distance", &[hand_points], value, move |adj| {
        let mut out = Tensor::zeros(rows, 3);
        for (r, (verts, bary, dir)) in partials.iter().enumerate() {
            let g = adj.get(r, 0);
            if g == 0.0 {
                continue;
            }
            for k in 0..3 {
                for c in 0..3 {
                    let cur = out.get(verts[k], c);
                    out.set(verts[k], c, cur + g * bary[k] * dir[c]);
                }
            }
        }
        vec![out]
    })
}

/// Signed distances of moving points (`m×3`) to a fixed object (`m×1`).
pub fn object_distance(tape: &Tape, object: &SurfaceModel, points: Var) -> Result<Var> {
    let pts = rows_to_vec3(&tape.value(points));
    let hits = pts.par_iter().map(|p| object.query(p)).collect::<Result<Vec<_>>>()?;
    let value = Tensor::from_fn(pts.len(), 1, |r, _| hits[r].distance);
    let grads: Vec<Vec3> = hits.iter().map(|h| h.gradient).collect();
    Ok(tape.custom("object_distance", &[points], value, move |adj| {
        vec![Tensor::from_fn(grads.len(), 3, |r, c| adj.get(r, 0) * grads[r][c])]
    }))
}

/// `Σ max(−f(p), 0)` over fixed object points against the posed hand:
/// total depth of the points that sit inside the hand.
pub fn penetration_depth_sum(
    tape: &Tape,
    model: &HandModel,
    hand: &HandMesh,
    hand_points: Var,
    object_points: &[Vec3],
) -> Var {
    let inside: Vec<Vec3> = object_points
        .par_iter()
        .filter(|p| model.surface_contains(hand, p))
        .copied()
        .collect();
    if inside.is_empty() {
        let rows = tape.value(hand_points).rows();
        return tape.custom("penetration", &[hand_points], Tensor::scalar(0.0), move |_| {
            vec![Tensor::zeros(rows, 3)]
        });
    }
    let f = hand_surface_distance(tape, model, hand, hand_points, &inside);
    let neg = tape.scale(f, -1.0);
    tape.sum(tape.relu(neg))
}

/// Squared geodesic angle between the rotation of `q` (`1×4`, normalized
/// internally) and a fixed unit quaternion, insensitive to sign.
pub fn geodesic_angle_sq(tape: &Tape, q: Var, reference: [f64; 4]) -> Result<Var> {
    let v = tape.value(q);
    if v.shape() != (1, 4) {
        return Err(Error::Shape { op: "geodesic_angle_sq", detail: format!("{:?}", v.shape()) });
    }
    let raw: Vec<f64> = v.data().to_vec();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qh: Vec<f64> = raw.iter().map(|x| x / n).collect();
    let dot: f64 = qh.iter().zip(&reference).map(|(a, b)| a * b).sum();
    let c = dot.abs().min(1.0);
    let theta = 2.0 * c.acos();
    // d(4 acos(c)²)/dc = −8 acos(c)/√(1−c²) → −8 as c → 1
    let s2 = 1.0 - c * c;
    let dfdc = if s2 > 1e-20 { -8.0 * c.acos() / s2.sqrt() } else { -8.0 };
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    Ok(tape.custom("geodesic_angle_sq", &[q], Tensor::scalar(theta * theta), move |adj| {
        let g = adj.item() * dfdc * sign;
        // dot = q̂·r, q̂ = q/|q|
        let qr: f64 = qh.iter().zip(&reference).map(|(a, b)| a * b).sum();
        vec![Tensor::row(&[0, 1, 2, 3].map(|k| g * (reference[k] - qh[k] * qr) / n))]
    }))
}
