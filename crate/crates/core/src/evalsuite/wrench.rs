//! Contact wrenches, the ε (largest inscribed ball) quality metric and
//! force-budget feasibility of external wrenches.

use std::sync::OnceLock;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, SVector};

use super::Contact;
use crate::geometry::Vec3;

pub type Wrench = SVector<f64, 6>;

/// Edges per discretized friction cone.
pub const CONE_EDGES: usize = 8;
/// Contact patch radius (m) of the soft-finger model: torsional friction
/// about the normal is bounded by `μ · PATCH_RADIUS · f_n`.
pub const PATCH_RADIUS: f64 = 5e-3;
/// Sampled wrench-space directions for the ε support-function minimum.
pub const NUM_DIRECTIONS: usize = 512;

const INTERIOR_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-9;

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&a).normalize();
    (t1, n.cross(&t1))
}

/// Edge wrenches of every contact's linearized soft-finger cone. Each edge
/// force has unit normal component, `f = n + μ (cos φ t₁ + sin φ t₂)`, and
/// is paired with both extreme torsions `±μ·PATCH_RADIUS·n`; torques about
/// `center` are divided by `radius`.
pub fn contact_wrenches(contacts: &[Contact], center: &Vec3, radius: f64) -> Vec<Wrench> {
    let mut out = Vec::with_capacity(contacts.len() * CONE_EDGES * 2);
    for c in contacts {
        let (t1, t2) = tangent_basis(&c.normal);
        let twist = c.normal * (c.friction * PATCH_RADIUS);
        for k in 0..CONE_EDGES {
            let phi = std::f64::consts::TAU * k as f64 / CONE_EDGES as f64;
            let f = c.normal + (t1 * phi.cos() + t2 * phi.sin()) * c.friction;
            let arm = (c.position - center).cross(&f);
            for s in [1.0, -1.0] {
                let tau = (arm + twist * s) / radius;
                out.push(Wrench::new(f.x, f.y, f.z, tau.x, tau.y, tau.z));
            }
        }
    }
    out
}

fn halton(mut i: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Fixed unit directions in wrench space: a 6-d Halton sequence mapped
/// through Box–Muller pairs to Gaussians and normalized.
pub fn wrench_directions() -> &'static [Wrench] {
    static DIRS: OnceLock<Vec<Wrench>> = OnceLock::new();
    DIRS.get_or_init(|| {
        const BASES: [usize; 6] = [2, 3, 5, 7, 11, 13];
        (1..=NUM_DIRECTIONS)
            .map(|i| {
                let u: Vec<f64> = BASES.iter().map(|&b| halton(i, b)).collect();
                let mut g = [0.0; 6];
                for k in 0..3 {
                    let r = (-2.0 * u[2 * k].max(1e-300).ln()).sqrt();
                    let th = std::f64::consts::TAU * u[2 * k + 1];
                    g[2 * k] = r * th.cos();
                    g[2 * k + 1] = r * th.sin();
                }
                Wrench::from_row_slice(&g).normalize()
            })
            .collect()
    })
}

/// Whether the origin lies strictly inside the convex hull of `w`: the
/// wrenches span all six dimensions and some convex combination with every
/// weight positive sums to zero.
pub fn origin_in_interior(w: &[Wrench]) -> bool {
    if w.len() < 7 {
        return false;
    }
    let m = DMatrix::from_fn(6, w.len(), |r, c| w[c][r]);
    let sv = m.singular_values();
    if sv.min() <= RANK_TOL * sv.max().max(1.0) {
        return false;
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let lambda: Vec<_> = w.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for r in 0..6 {
        let row: Vec<_> = lambda.iter().zip(w).map(|(&v, wk)| (v, wk[r])).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
    }
    let sum: Vec<_> = lambda.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(sum.as_slice(), ComparisonOp::Eq, 1.0);
    for &v in &lambda {
        lp.add_constraint([(v, 1.0), (t, -1.0)].as_slice(), ComparisonOp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(sol) => sol.objective() > INTERIOR_TOL,
        Err(_) => false,
    }
}

/// ε-metric: the minimum over [`wrench_directions`] of the support
/// function `max_k u·w_k` of the contact-wrench hull, or 0 when the origin
/// is not strictly inside the hull. Sampling directions can only miss the
/// minimizing direction, so the value is an upper estimate of the exact
/// inscribed radius that converges as directions are added.
pub fn force_closure_epsilon(contacts: &[Contact], center: &Vec3, radius: f64) -> f64 {
    if contacts.len() < 2 || !(radius > 0.0) {
        return 0.0;
    }
    let w = contact_wrenches(contacts, center, radius);
    if !origin_in_interior(&w) {
        return 0.0;
    }
    wrench_directions()
        .iter()
        .map(|u| w.iter().map(|wk| u.dot(wk)).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Smallest total normal force `Σλ` with `Σ λ_k w_k = −external`, `λ ≥ 0`,
/// i.e. the contact effort needed to balance `external`; `None` if no
/// nonnegative combination balances it.
pub fn balancing_force(contacts: &[Contact], center: &Vec3, radius: f64, external: &Wrench) -> Option<f64> {
    let w = contact_wrenches(contacts, center, radius);
    if w.is_empty() {
        return (external.norm() == 0.0).then_some(0.0);
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let lambda: Vec<_> = w.iter().map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for r in 0..6 {
        let row: Vec<_> = lambda.iter().zip(&w).map(|(&v, wk)| (v, wk[r])).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, -external[r]);
    }
    lp.solve().ok().map(|s| s.objective())
}
