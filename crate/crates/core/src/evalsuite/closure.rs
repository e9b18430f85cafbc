//! Quasi-static finger closing.
//!
//! Joint `j` follows `θ_j(n) = min(θ_j(0) + n·δ_j, upper_j)` where `δ_j` is
//! the step angle scaled by the taxonomy synergy (normalized so the fastest
//! joint of each finger moves one full step). Fingers are independent: each
//! stops at the first step where one of its links is within the contact
//! tolerance of the object, or when it can no longer move.
//!
//! Link–object distance is the smaller of (a) the object signed distance at
//! the link's vertices and (b) the link signed distance at the object's
//! probe points (cloud points, else mesh vertices). Both are Lipschitz in
//! the joint angles, so the search jumps over steps that provably cannot
//! reach the tolerance; the result equals stepping one increment at a time.

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Bvh, Pose, SurfaceModel, Vec3};
use crate::handkin::{clamp_joints, Grasp, HandModel};

use super::{Contact, EvalConfig, Taxonomy};

/// Probe points farther than this beyond a link's bounding sphere are not
/// queried exactly; their distance is bounded below by it instead.
const NEAR_MARGIN_FACTOR: f64 = 4.0;

/// Object geometry prepared for repeated link-distance queries.
pub struct ObjectProbe<'a> {
    object: &'a SurfaceModel,
    points: Vec<Vec3>,
    index: Option<Bvh>,
    empty: bool,
}

impl<'a> ObjectProbe<'a> {
    pub fn new(object: &'a SurfaceModel) -> Result<Self> {
        let empty = object.mesh().is_none() && object.cloud().is_none();
        if !empty && !object.is_signed() {
            return Err(Error::UnsignedGeometry);
        }
        let points = match (object.cloud(), object.mesh()) {
            (Some(c), _) => c.points.clone(),
            (None, Some(m)) => m.vertices.clone(),
            _ => Vec::new(),
        };
        let index = (!points.is_empty())
            .then(|| Bvh::build(&points.iter().map(|p| Aabb { min: *p, max: *p }).collect::<Vec<_>>()));
        Ok(Self { object, points, index, empty })
    }

    pub fn object(&self) -> &SurfaceModel {
        self.object
    }

    fn nearest_distance(&self, p: &Vec3) -> f64 {
        match &self.index {
            Some(b) => b.nearest(p, |i| (self.points[i] - p).norm_squared()).map_or(f64::INFINITY, |h| h.1.sqrt()),
            None => f64::INFINITY,
        }
    }

    fn points_within(&self, c: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(b) = &self.index {
            let region = Aabb { min: c.add_scalar(-r), max: c.add_scalar(r) };
            b.for_each_overlapping(&region, |i| {
                if (self.points[i] - c).norm_squared() <= r * r {
                    out.push(i);
                }
            });
        }
        out.sort_unstable();
        out
    }

    fn inward_normal(&self, p: &Vec3) -> Result<Vec3> {
        Ok(-self.object.query(p)?.gradient.normalize())
    }
}

/// Result of one exact link evaluation.
#[derive(Debug, Clone, Copy)]
struct LinkHit {
    /// `min(exact distance, margin)`: a lower bound on the link distance.
    lower: f64,
    distance: f64,
    position: Vec3,
    normal: Vec3,
}

fn sphere_bound(model: &HandModel, probe: &ObjectProbe, l: usize, pose: &Pose) -> Result<f64> {
    let s = model.shapes[l].as_ref().expect("link has geometry");
    let c = pose.transform_point(&s.center);
    let a = probe.object.signed_distance(&c)? - s.radius;
    let b = probe.nearest_distance(&c) - s.radius;
    Ok(a.min(b))
}

fn exact_link(model: &HandModel, probe: &ObjectProbe, l: usize, pose: &Pose, margin: f64) -> Result<LinkHit> {
    let s = model.shapes[l].as_ref().expect("link has geometry");
    let mut best = (f64::INFINITY, Vec3::zeros(), Vec3::zeros());
    for v in &model.links[l].mesh.vertices {
        let hit = probe.object.query(&pose.transform_point(v))?;
        if hit.distance < best.0 {
            best = (hit.distance, hit.closest, -hit.gradient.normalize());
        }
    }
    let c = pose.transform_point(&s.center);
    let mut best_point = None;
    for i in probe.points_within(&c, s.radius + margin) {
        let p = probe.points[i];
        let d = s.sdf.signed_distance(&pose.inverse_transform_point(&p));
        if d < best.0 {
            best.0 = d;
            best_point = Some(p);
        }
    }
    if let Some(p) = best_point {
        best.1 = p;
        best.2 = probe.inward_normal(&p)?;
    }
    Ok(LinkHit { lower: best.0.min(margin), distance: best.0, position: best.1, normal: best.2 })
}

/// Deepest penetration (m, ≥ 0) of any hand link into the object with
/// `g`'s joints clamped to their limits.
pub(crate) fn start_penetration(model: &HandModel, g: &Grasp, probe: &ObjectProbe, margin: f64) -> Result<f64> {
    if probe.empty {
        return Ok(0.0);
    }
    let poses = model.link_poses(&Grasp::new(g.pose, clamp_joints(model, &g.joints)))?;
    let mut depth: f64 = 0.0;
    for l in 0..model.links.len() {
        if model.shapes[l].is_none() || sphere_bound(model, probe, l, &poses[l])? > 0.0 {
            continue;
        }
        depth = depth.max(-exact_link(model, probe, l, &poses[l], margin)?.distance);
    }
    Ok(depth)
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub grasp: Grasp,
    pub contacts: Vec<Contact>,
    /// Link touching each contact.
    pub contact_links: Vec<usize>,
    /// Closing steps taken by each finger.
    pub steps: Vec<usize>,
}

struct Finger {
    joints: Vec<usize>,
    links: Vec<usize>,
    /// Per-step displacement bound of any link point near the object.
    lipschitz: f64,
    /// First step from which the finger no longer moves.
    saturation: usize,
}

fn step_deltas(model: &HandModel, taxonomy: &Taxonomy, cfg: &EvalConfig) -> Vec<f64> {
    let step = cfg.step_deg.to_radians();
    let mut delta = vec![0.0; taxonomy.synergy.len()];
    for chain in model.chains() {
        let peak = chain.iter().map(|&j| taxonomy.synergy[j]).fold(0.0, f64::max);
        if peak > 0.0 {
            for &j in &chain {
                delta[j] = step * taxonomy.synergy[j] / peak;
            }
        }
    }
    delta
}

/// Bound on the distance from joint `j`'s axis origin to any point within
/// `margin` of a link it moves, independent of the configuration.
fn joint_reach(model: &HandModel, j: usize, margin: f64) -> f64 {
    let base = model.joint_links[j];
    let mut reach: f64 = 0.0;
    for m in model.links_moved_by(j) {
        let Some(s) = model.shapes[m].as_ref() else { continue };
        let mut path = 0.0;
        let mut k = m;
        while k != base {
            path += model.links[k].origin.translation.norm();
            k = model.links[k].parent.expect("moved link descends from the joint link");
        }
        reach = reach.max(path + s.center.norm() + s.radius + margin);
    }
    reach
}

fn joints_at(theta0: &[f64], delta: &[f64], upper: &[f64], joints: &[usize], n: usize, out: &mut [f64]) {
    for &j in joints {
        out[j] = (theta0[j] + n as f64 * delta[j]).min(upper[j]);
    }
}

/// Closes the fingers of `g` along `taxonomy`'s synergy until contact or
/// joint limits. `g`'s joints are used as the starting configuration.
///
/// Fails with [`Error::InvalidStart`] when the palm penetrates the object
/// deeper than `cfg.palm_tolerance`.
pub fn close_fingers(
    model: &HandModel,
    g: &Grasp,
    taxonomy: &Taxonomy,
    object: &SurfaceModel,
    cfg: &EvalConfig,
) -> Result<Closure> {
    close_with_probe(model, g, taxonomy, &ObjectProbe::new(object)?, cfg, true)
}

pub(crate) fn close_with_probe(
    model: &HandModel,
    g: &Grasp,
    taxonomy: &Taxonomy,
    probe: &ObjectProbe,
    cfg: &EvalConfig,
    skip_ahead: bool,
) -> Result<Closure> {
    taxonomy.validate()?;
    cfg.validate()?;
    let tol = cfg.contact_tolerance;
    let margin = NEAR_MARGIN_FACTOR * tol;
    let theta0 = clamp_joints(model, &g.joints);
    let upper = model.upper_limits();
    let delta = step_deltas(model, taxonomy, cfg);
    let root = model.root();

    if !probe.empty {
        let poses = model.link_poses(&Grasp::new(g.pose, theta0.clone()))?;
        if model.shapes[root].is_some() {
            let palm = exact_link(model, probe, root, &poses[root], margin)?;
            if -palm.distance > cfg.palm_tolerance {
                return Err(Error::InvalidStart(-palm.distance));
            }
        }
    }

    let fingers: Vec<Finger> = model
        .chains()
        .into_iter()
        .map(|joints| {
            let mut links: Vec<usize> = joints.iter().flat_map(|&j| model.links_moved_by(j)).collect();
            links.sort_unstable();
            links.dedup();
            links.retain(|&l| model.shapes[l].is_some());
            let lipschitz = joints.iter().map(|&j| delta[j] * joint_reach(model, j, margin)).sum();
            let saturation = joints
                .iter()
                .filter(|&&j| delta[j] > 0.0 && theta0[j] < upper[j])
                .map(|&j| ((upper[j] - theta0[j]) / delta[j]).ceil() as usize)
                .max()
                .unwrap_or(0);
            Finger { joints, links, lipschitz, saturation }
        })
        .collect();

    let mut joints = theta0.clone();
    let mut steps = Vec::with_capacity(fingers.len());
    for f in &fingers {
        let mut n = 0usize;
        loop {
            if probe.empty {
                n = f.saturation;
                break;
            }
            joints_at(&theta0, &delta, &upper, &f.joints, n, &mut joints);
            let poses = model.link_poses(&Grasp::new(g.pose, joints.clone()))?;
            let mut lower = f64::INFINITY;
            let mut touching = false;
            for &l in &f.links {
                let s = sphere_bound(model, probe, l, &poses[l])?;
                let lb = if s > tol {
                    s
                } else {
                    let hit = exact_link(model, probe, l, &poses[l], margin)?;
                    touching |= hit.distance <= tol;
                    hit.lower
                };
                lower = lower.min(lb);
            }
            if touching || n >= f.saturation {
                break;
            }
            let jump = if skip_ahead && f.lipschitz > 0.0 {
                ((lower - tol) / f.lipschitz).floor().max(1.0)
            } else {
                1.0
            };
            n = (n as f64 + jump).min(f.saturation as f64) as usize;
        }
        joints_at(&theta0, &delta, &upper, &f.joints, n, &mut joints);
        steps.push(n);
    }

    let grasp = Grasp::new(g.pose, joints);
    let mut contacts = Vec::new();
    let mut contact_links = Vec::new();
    if !probe.empty {
        let poses = model.link_poses(&grasp)?;
        for l in 0..model.links.len() {
            if model.shapes[l].is_none() {
                continue;
            }
            let hit = exact_link(model, probe, l, &poses[l], margin)?;
            if hit.distance <= tol {
                contacts.push(Contact::new(hit.position, hit.normal, cfg.friction)?);
                contact_links.push(l);
            }
        }
    }
    Ok(Closure { grasp, contacts, contact_links, steps })
}
