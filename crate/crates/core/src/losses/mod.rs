//! Training and refinement objectives: KL, reconstruction, hand-object
//! contact, interpenetration, contact energy and the grasp distance term,
//! each recorded on an autodiff tape.
//!
//! Signed distances `f` are negative inside. Against the hand, `f` is the
//! distance to the posed hand *surface*; against the object it is the
//! object's [`SurfaceModel`] (exact mesh when present, else its oriented
//! cloud).

mod layers;

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use layers::{geodesic_angle_sq, hand_layer, hand_surface_distance, object_distance, penetration_depth_sum};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Bvh, PointCloud, SurfaceModel, Vec3};
use crate::handkin::{Grasp, HandMesh, HandModel, GRASP_DIM, NUM_JOINTS};

/// Default contact threshold for contact-map derivation (meters).
pub const CONTACT_THRESHOLD: f64 = 0.005;
/// Default contact-energy distance `T` (meters).
pub const CONTACT_ENERGY_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub kl: f64,
    pub theta: f64,
    pub v: f64,
    pub o: f64,
    pub h: f64,
    pub p: f64,
    pub d: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kl: 0.1, theta: 0.5, v: 30.0, o: 30.0, h: 30.0, p: 1.0, d: 1.0, ce: 20.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { kl: 0.0, theta: 0.0, v: 0.0, o: 0.0, h: 0.0, p: 0.0, d: 0.0, ce: 0.0 }
    }
}

/// Unweighted loss terms and their weighted total. Terms that do not
/// apply to an objective are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub v: f64,
    pub theta: f64,
    pub o: f64,
    pub h: f64,
    pub p: f64,
    pub ce: f64,
    pub d: f64,
    pub total: f64,
    /// Set when a contact set was empty and its term fell back to 0.
    #[serde(default)]
    pub empty_contacts: bool,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "kl,v,theta,o,h,p,ce,d,total";

    /// Weighted sum of the terms.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.kl * self.kl
            + w.v * self.v
            + w.theta * self.theta
            + w.o * self.o
            + w.h * self.h
            + w.p * self.p
            + w.ce * self.ce
            + w.d * self.d
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.kl, self.v, self.theta, self.o, self.h, self.p, self.ce, self.d, self.total
        )
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("kl", self.kl),
            ("v", self.v),
            ("theta", self.theta),
            ("o", self.o),
            ("h", self.h),
            ("p", self.p),
            ("ce", self.ce),
            ("d", self.d),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.kl += b.kl / n;
            out.v += b.v / n;
            out.theta += b.theta / n;
            out.o += b.o / n;
            out.h += b.h / n;
            out.p += b.p / n;
            out.ce += b.ce / n;
            out.d += b.d / n;
            out.total += b.total / n;
            out.empty_contacts |= b.empty_contacts;
        }
        out
    }
}

/// Object affordance points `O^c` and hand contact vertices `H^c` of a
/// ground-truth grasp.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactMap {
    /// Indices into the object cloud.
    pub object_contacts: Vec<usize>,
    /// Indices into the hand vertices.
    pub hand_contacts: Vec<usize>,
    pub threshold: f64,
}

/// `O^c`: object points with signed distance to the hand surface ≤
/// `threshold`; `H^c`: hand vertices within `threshold` of the nearest
/// object point.
pub fn derive_contact_map(
    model: &HandModel,
    object: &PointCloud,
    gt_hand: &HandMesh,
    threshold: f64,
) -> Result<ContactMap> {
    if object.is_empty() {
        return Err(Error::arg("contact map needs a nonempty object cloud"));
    }
    if !(threshold > 0.0) {
        return Err(Error::arg(format!("contact threshold must be positive, got {threshold}")));
    }
    let hand_bounds = Aabb::from_points(gt_hand.vertices.iter());
    let object_contacts = object
        .points
        .par_iter()
        .enumerate()
        .filter(|(_, p)| {
            // points farther than the threshold from the hand's box are out
            hand_bounds.distance_squared(p) <= threshold * threshold
                && model.surface_signed_distance(gt_hand, p) <= threshold
        })
        .map(|(i, _)| i)
        .collect();
    let cloud_index = Bvh::build(
        &object.points.iter().map(|p| Aabb { min: *p, max: *p }).collect::<Vec<_>>(),
    );
    let hand_contacts = gt_hand
        .vertices
        .par_iter()
        .enumerate()
        .filter(|(_, v)| {
            let (_, d2) = cloud_index.nearest(v, |i| (object.points[i] - *v).norm_squared()).unwrap();
            d2.sqrt() <= threshold
        })
        .map(|(i, _)| i)
        .collect();
    Ok(ContactMap { object_contacts, hand_contacts, threshold })
}

/// Everything the generator loss needs about one ground-truth grasp.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub grasp: Grasp,
    pub hand: HandMesh,
    pub contacts: ContactMap,
    /// `f(p | gt hand)` for `p ∈ O^c`.
    pub object_gt_distance: Vec<f64>,
    /// `f(v* | object)` for `v* ∈ H^c`.
    pub hand_gt_distance: Vec<f64>,
}

impl GroundTruth {
    pub fn new(model: &HandModel, grasp: Grasp, object: &SurfaceModel, threshold: f64) -> Result<Self> {
        let cloud = object_cloud(object)?;
        let hand = model.forward_kinematics(&grasp)?;
        let contacts = derive_contact_map(model, cloud, &hand, threshold)?;
        Self::with_contacts(model, grasp, object, contacts)
    }

    /// Uses a precomputed contact map (e.g. from the dataset cache).
    pub fn with_contacts(model: &HandModel, grasp: Grasp, object: &SurfaceModel, contacts: ContactMap) -> Result<Self> {
        let cloud = object_cloud(object)?;
        let hand = model.forward_kinematics(&grasp)?;
        if contacts.object_contacts.iter().any(|&i| i >= cloud.len())
            || contacts.hand_contacts.iter().any(|&i| i >= hand.vertices.len())
        {
            return Err(Error::arg("contact map indices out of range for this object/hand"));
        }
        let object_gt_distance = contacts
            .object_contacts
            .iter()
            .map(|&i| model.surface_signed_distance(&hand, &cloud.points[i]))
            .collect();
        let hand_gt_distance = contacts
            .hand_contacts
            .iter()
            .map(|&i| object.signed_distance(&hand.vertices[i]))
            .collect::<Result<_>>()?;
        Ok(Self { grasp, hand, contacts, object_gt_distance, hand_gt_distance })
    }
}

fn object_cloud(object: &SurfaceModel) -> Result<&PointCloud> {
    object.cloud().ok_or_else(|| Error::arg("object needs a point cloud for this loss"))
}

// --- tape-level terms ------------------------------------------------------

/// `½ Σ (μ² + e^{logvar} − 1 − logvar)`.
pub fn kl_loss(tape: &Tape, mu: Var, logvar: Var) -> Result<Var> {
    let e = tape.exp(logvar);
    let s = tape.add(tape.square(mu), e)?;
    let s = tape.sub(s, logvar)?;
    let total = tape.sum(s);
    let n = tape.value(mu).len() as f64;
    Ok(tape.scale(tape.add_scalar(total, -n), 0.5))
}

/// Mean squared vertex displacement and mean absolute joint error,
/// unweighted.
pub fn reconstruction_terms(
    tape: &Tape,
    pred_points: Var,
    pred_grasp: Var,
    gt: &GroundTruth,
) -> Result<(Var, Var)> {
    let n = gt.hand.vertices.len();
    let pv = tape.value(pred_points);
    if pv.rows() < n {
        return Err(Error::arg(format!("prediction has {} points, ground truth {n} vertices", pv.rows())));
    }
    let idx: Vec<usize> = (0..n).collect();
    let verts = tape.gather_rows(pred_points, &idx)?;
    let target = tape.leaf(Tensor::from_fn(n, 3, |r, c| gt.hand.vertices[r][c]));
    let diff = tape.sub(verts, target)?;
    let v = tape.scale(tape.sum(tape.square(diff)), 1.0 / n as f64);
    let joints = tape.slice_cols(pred_grasp, 7, GRASP_DIM)?;
    let gtj = tape.leaf(Tensor::row(&gt.grasp.joints));
    let theta = tape.mean(tape.abs(tape.sub(joints, gtj)?));
    Ok((v, theta))
}

/// `(L_O, L_H, empty)`; an empty contact set contributes 0 and sets `empty`.
pub fn contact_terms(
    tape: &Tape,
    model: &HandModel,
    pred_hand: &HandMesh,
    pred_points: Var,
    object: &SurfaceModel,
    gt: &GroundTruth,
) -> Result<(Var, Var, bool)> {
    let cloud = object_cloud(object)?;
    let mut empty = false;
    let lo = if gt.contacts.object_contacts.is_empty() {
        empty = true;
        tape.constant(0.0)
    } else {
        let q: Vec<Vec3> = gt.contacts.object_contacts.iter().map(|&i| cloud.points[i]).collect();
        let f = hand_surface_distance(tape, model, pred_hand, pred_points, &q);
        let base = tape.leaf(Tensor::new(q.len(), 1, gt.object_gt_distance.clone())?);
        tape.mean(tape.sub(f, base)?)
    };
    let lh = if gt.contacts.hand_contacts.is_empty() {
        empty = true;
        tape.constant(0.0)
    } else {
        let rows = tape.gather_rows(pred_points, &gt.contacts.hand_contacts)?;
        let f = object_distance(tape, object, rows)?;
        let base = tape.leaf(Tensor::new(gt.hand_gt_distance.len(), 1, gt.hand_gt_distance.clone())?);
        tape.mean(tape.sub(f, base)?)
    };
    if empty {
        warn!("empty contact set; contact term contributes 0");
    }
    Ok((lo, lh, empty))
}

/// Rows of the grasp points in the hand-layer output.
pub fn grasp_point_rows(model: &HandModel) -> Vec<usize> {
    let n = model.num_vertices();
    (n..n + model.grasp_points.len()).collect()
}

/// `Σ I(f(p | object))` over the grasp points with `I(x) = x` if `x > T`
/// else 0.
pub fn contact_energy_term(
    tape: &Tape,
    model: &HandModel,
    pred_points: Var,
    object: &SurfaceModel,
    t: f64,
) -> Result<Var> {
    let rows = tape.gather_rows(pred_points, &grasp_point_rows(model))?;
    let f = object_distance(tape, object, rows)?;
    Ok(tape.sum(tape.threshold(f, t)))
}

/// `‖Δt‖² + angle(q, q_ref)² + mean((θ − θ_ref)²)`.
pub fn distance_term(tape: &Tape, grasp: Var, reference: &Grasp) -> Result<Var> {
    let r = reference.to_vector();
    let t = tape.slice_cols(grasp, 0, 3)?;
    let dt = tape.sub(t, tape.leaf(Tensor::row(&r[..3])))?;
    let trans = tape.sum(tape.square(dt));
    let q = tape.slice_cols(grasp, 3, 7)?;
    let rot = geodesic_angle_sq(tape, q, [r[3], r[4], r[5], r[6]])?;
    let j = tape.slice_cols(grasp, 7, GRASP_DIM)?;
    let dj = tape.sub(j, tape.leaf(Tensor::row(&r[7..])))?;
    let joints = tape.mean(tape.square(dj));
    let s = tape.add(trans, rot)?;
    tape.add(s, joints)
}

fn weighted(tape: &Tape, terms: &[(Var, f64)]) -> Result<Var> {
    let mut total = tape.constant(0.0);
    for &(v, w) in terms {
        total = tape.add(total, tape.scale(v, w))?;
    }
    Ok(total)
}

/// Generator objective `λ_KL·KL + λ_V·V + λ_θ·θ + λ_O·O + λ_H·H + λ_P·P`
/// for one predicted grasp row `1×27`.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    tape: &Tape,
    model: &Arc<HandModel>,
    pred_grasp: Var,
    mu: Var,
    logvar: Var,
    object: &SurfaceModel,
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let (points, hand) = hand_layer(tape, model, pred_grasp)?;
    let kl = kl_loss(tape, mu, logvar)?;
    let (v, theta) = reconstruction_terms(tape, points, pred_grasp, gt)?;
    let (o, h, empty) = contact_terms(tape, model, &hand, points, object, gt)?;
    let p = penetration_depth_sum(tape, model, &hand, points, &object_cloud(object)?.points);
    let total = weighted(tape, &[(kl, w.kl), (v, w.v), (theta, w.theta), (o, w.o), (h, w.h), (p, w.p)])?;
    let s = |x: Var| tape.scalar_value(x);
    let b = LossBreakdown {
        kl: s(kl),
        v: s(v),
        theta: s(theta),
        o: s(o),
        h: s(h),
        p: s(p),
        total: s(total),
        empty_contacts: empty,
        ..Default::default()
    };
    if let Some(term) = b.non_finite_term() {
        return Err(Error::NonFinite { term: term.into() });
    }
    Ok((total, b))
}

/// Refinement objective `λ_CE·CE + λ_P·P + λ_D·D(g, g_ref)` for a grasp row.
pub fn refinement_loss(
    tape: &Tape,
    model: &Arc<HandModel>,
    grasp: Var,
    reference: &Grasp,
    object: &SurfaceModel,
    w: &LossWeights,
    t: f64,
) -> Result<(Var, LossBreakdown)> {
    let (points, hand) = hand_layer(tape, model, grasp)?;
    let ce = contact_energy_term(tape, model, points, object, t)?;
    let p = penetration_depth_sum(tape, model, &hand, points, &object_cloud(object)?.points);
    let d = distance_term(tape, grasp, reference)?;
    let total = weighted(tape, &[(ce, w.ce), (p, w.p), (d, w.d)])?;
    let s = |x: Var| tape.scalar_value(x);
    let b = LossBreakdown { ce: s(ce), p: s(p), d: s(d), total: s(total), ..Default::default() };
    if let Some(term) = b.non_finite_term() {
        return Err(Error::NonFinite { term: term.into() });
    }
    Ok((total, b))
}

// --- value-level conveniences -----------------------------------------------

/// Plain evaluation of [`kl_loss`].
pub fn kl_value(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::arg(format!("mu has {} entries, logvar {}", mu.len(), logvar.len())));
    }
    let tape = Tape::new();
    let kl = kl_loss(&tape, tape.leaf(Tensor::row(mu)), tape.leaf(Tensor::row(logvar)))?;
    Ok(tape.scalar_value(kl))
}

/// `λ_V · mean‖v − v*‖² + λ_θ · mean|θ − θ*|`.
pub fn reconstruction_loss(pred: &HandMesh, pred_joints: &[f64], gt: &HandMesh, gt_joints: &[f64], w: &LossWeights) -> Result<f64> {
    if pred.vertices.len() != gt.vertices.len() {
        return Err(Error::arg(format!(
            "vertex count mismatch: {} vs {}",
            pred.vertices.len(),
            gt.vertices.len()
        )));
    }
    if pred_joints.len() != NUM_JOINTS || gt_joints.len() != NUM_JOINTS {
        return Err(Error::arg("joint vectors must have 20 entries"));
    }
    let tape = Tape::new();
    let flat = |m: &HandMesh| Tensor::from_fn(m.vertices.len(), 3, |r, c| m.vertices[r][c]);
    let diff = tape.sub(tape.leaf(flat(pred)), tape.leaf(flat(gt)))?;
    let v = tape.scale(tape.sum(tape.square(diff)), 1.0 / pred.vertices.len().max(1) as f64);
    let dj = tape.sub(tape.leaf(Tensor::row(pred_joints)), tape.leaf(Tensor::row(gt_joints)))?;
    let theta = tape.mean(tape.abs(dj));
    Ok(w.v * tape.scalar_value(v) + w.theta * tape.scalar_value(theta))
}

/// `λ_O·L_O + λ_H·L_H` and the empty-contact flag.
pub fn contact_loss(
    model: &Arc<HandModel>,
    pred: &Grasp,
    object: &SurfaceModel,
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<(f64, bool)> {
    let tape = Tape::new();
    let g = tape.leaf(Tensor::row(&pred.to_vector()));
    let (points, hand) = hand_layer(&tape, model, g)?;
    let (o, h, empty) = contact_terms(&tape, model, &hand, points, object, gt)?;
    Ok((w.o * tape.scalar_value(o) + w.h * tape.scalar_value(h), empty))
}

/// `Σ max(−f(p | hand), 0)` over the object points.
pub fn interpenetration_loss(model: &HandModel, object_points: &[Vec3], hand: &HandMesh) -> f64 {
    object_points
        .par_iter()
        .filter(|p| model.surface_contains(hand, p))
        .map(|p| -model.surface_signed_distance(hand, p))
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// `Σ I(f(p | object))` over world grasp points.
pub fn contact_energy(grasp_points: &[Vec3], object: &SurfaceModel, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::arg(format!("contact-energy threshold must be positive, got {t}")));
    }
    let mut total = 0.0;
    for p in grasp_points {
        let f = object.signed_distance(p)?;
        if f > t {
            total += f;
        }
    }
    Ok(total)
}

/// Value and raw 27-vector gradient of the refinement objective.
pub fn refinement_loss_with_gradient(
    model: &Arc<HandModel>,
    grasp: &Grasp,
    reference: &Grasp,
    object: &SurfaceModel,
    w: &LossWeights,
    t: f64,
) -> Result<(LossBreakdown, [f64; GRASP_DIM])> {
    let tape = Tape::new();
    let g = tape.leaf(Tensor::row(&grasp.to_vector()));
    let (root, b) = refinement_loss(&tape, model, g, reference, object, w, t)?;
    let grads = tape.backward(root)?;
    let mut out = [0.0; GRASP_DIM];
    out.copy_from_slice(grads.wrt(g).data());
    Ok((b, out))
}

/// Evaluates the generator objective for plain inputs.
pub fn evaluate_generator_loss(
    model: &Arc<HandModel>,
    pred: &Grasp,
    mu: &[f64],
    logvar: &[f64],
    object: &SurfaceModel,
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let g = tape.leaf(Tensor::row(&pred.to_vector()));
    let (_, b) = generator_loss(
        &tape,
        model,
        g,
        tape.leaf(Tensor::row(mu)),
        tape.leaf(Tensor::row(logvar)),
        object,
        gt,
        w,
    )?;
    Ok(b)
}

#[cfg(test)]
mod tests;
