//! Annotated grasp dataset: approach sampling, taxonomy closing and
//! stability labelling, plus the record file format.
//!
//! Record file: `#`-prefixed header lines, then one record per line with
//! whitespace-separated fields
//!
//! ```text
//! object taxonomy tx ty tz qw qx qy qz j0 … j19 label contacts epsilon [px py pz nx ny nz mu]×contacts
//! ```
//!
//! where `label` is `stable` or `unstable`. Floats are written in shortest
//! round-trip form, so reading a file back reproduces the records exactly.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, SurfaceModel, Vec3};
use crate::handkin::{Grasp, HandModel, GRASP_DIM};
use crate::losses::ContactMap;

use super::{closure::{start_penetration, ObjectProbe}, evaluate_with, Contact, EvalConfig, ObjectProps, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Stable,
    Unstable,
}

impl Label {
    pub fn is_stable(self) -> bool {
        self == Label::Stable
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "stable" => Some(Label::Stable),
            "unstable" => Some(Label::Unstable),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_stable() { "stable" } else { "unstable" })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRecord {
    pub object_id: String,
    /// Hand configuration at closure.
    pub grasp: Grasp,
    /// 1–5, or 0 for grasps closed with the universal synergy.
    pub taxonomy: u8,
    pub label: Label,
    pub contacts: Vec<Contact>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Palm distance from the surface before the approach (m).
    pub start_distance: f64,
    /// Approach increment (m).
    pub approach_step: f64,
    /// Number of approach increments to choose from.
    pub approach_steps: usize,
    /// Uniform in-plane rotations about the approach axis.
    pub rotations: usize,
    /// Extra retreats of one `approach_step` when the palm starts inside.
    pub max_backoff: usize,
    /// Point of the wrist frame brought over the sampled surface point; for
    /// the generic hand, just past the finger bases where the fingers close.
    pub anchor: [f64; 3],
    pub eval: EvalConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            start_distance: 0.05,
            approach_step: 0.01,
            approach_steps: 5,
            rotations: 8,
            max_backoff: 5,
            anchor: [0.0, 0.1, 0.0],
            eval: EvalConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.eval.validate()?;
        if self.approach_steps == 0 || self.rotations == 0 {
            return Err(Error::Config("approach_steps and rotations must be at least 1".into()));
        }
        if !(self.approach_step > 0.0) || !(self.start_distance >= 0.0) {
            return Err(Error::Config("approach distances must be positive".into()));
        }
        Ok(())
    }
}

/// Wrist pose placing the wrist-frame point `anchor` at `distance` above
/// `point` along `normal`, with the palm (+z) facing the object, rotated by
/// `angle` about the normal.
pub fn approach_pose(anchor: &Vec3, point: &Vec3, normal: &Vec3, distance: f64, angle: f64) -> Pose {
    let n = normal.normalize();
    let face = UnitQuaternion::rotation_between(&Vec3::z(), &(-n))
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(n), angle) * face;
    Pose::new(point + n * distance - rot * anchor, rot)
}

fn sample_surface_point(object: &SurfaceModel, rng: &mut ChaCha8Rng) -> Result<(Vec3, Vec3)> {
    if let Some(m) = object.mesh() {
        let s = m.sample_surface(1, rng);
        let n = s.normals.as_ref().expect("mesh samples carry normals")[0];
        return Ok((s.points[0], n));
    }
    match object.cloud() {
        Some(c) if c.has_normals() && !c.is_empty() => {
            let i = rng.random_range(0..c.len());
            Ok((c.points[i], c.normals.as_ref().unwrap()[i]))
        }
        _ => Err(Error::UnsignedGeometry),
    }
}

fn sample_record(
    model: &HandModel,
    id: &str,
    probe: &ObjectProbe,
    props: &ObjectProps,
    taxonomies: &[Taxonomy],
    cfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GraspRecord> {
    let (p, n) = sample_surface_point(probe.object(), rng)?;
    let angle = std::f64::consts::TAU * rng.random_range(0..cfg.rotations) as f64 / cfg.rotations as f64;
    let k = rng.random_range(1..=cfg.approach_steps);
    let tax = &taxonomies[rng.random_range(0..taxonomies.len())];
    let mut distance = (cfg.start_distance - k as f64 * cfg.approach_step).max(0.0);
    let mut backoff = 0;
    loop {
        let g = Grasp::new(approach_pose(&Vec3::from(cfg.anchor), &p, &n, distance, angle), tax.pregrasp.clone());
        // the approach stops short of collisions: a pre-grasp hand that
        // already cuts into the object counts as an invalid start
        let depth = start_penetration(model, &g, probe, cfg.eval.contact_tolerance)?;
        let attempt = if depth > cfg.eval.palm_tolerance {
            Err(Error::InvalidStart(depth))
        } else {
            evaluate_with(model, &g, tax, probe, props, &cfg.eval)
        };
        match attempt {
            Ok(e) => {
                return Ok(GraspRecord {
                    object_id: id.to_string(),
                    grasp: e.closure.grasp,
                    taxonomy: tax.id,
                    label: if e.stable { Label::Stable } else { Label::Unstable },
                    contacts: e.closure.contacts,
                    epsilon: e.epsilon,
                })
            }
            Err(Error::InvalidStart(_)) if backoff < cfg.max_backoff => {
                backoff += 1;
                distance += cfg.approach_step;
            }
            Err(Error::InvalidStart(_)) => {
                return Ok(GraspRecord {
                    object_id: id.to_string(),
                    grasp: g,
                    taxonomy: tax.id,
                    label: Label::Unstable,
                    contacts: Vec::new(),
                    epsilon: 0.0,
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// Labels `samples_per_object` approach grasps per object. Sample `s` of
/// object `o` draws from its own random stream, so the output depends only
/// on `seed` and is ordered by (object, sample).
pub fn generate_dataset(
    model: &HandModel,
    objects: &[(String, SurfaceModel)],
    taxonomies: &[Taxonomy],
    samples_per_object: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<Vec<GraspRecord>> {
    cfg.validate()?;
    if taxonomies.is_empty() {
        return Err(Error::arg("at least one taxonomy is required"));
    }
    for t in taxonomies {
        t.validate()?;
    }
    let mut out = Vec::with_capacity(objects.len() * samples_per_object);
    for (o, (id, object)) in objects.iter().enumerate() {
        check_object_id(id)?;
        if samples_per_object == 0 {
            continue;
        }
        let probe = ObjectProbe::new(object)?;
        let props = ObjectProps::of(object, cfg.eval.density)?;
        let records: Vec<Result<GraspRecord>> = (0..samples_per_object)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((o as u64) << 32) | s as u64);
                sample_record(model, id, &probe, &props, taxonomies, cfg, &mut rng)
            })
            .collect();
        for r in records {
            out.push(r?);
        }
    }
    Ok(out)
}

fn check_object_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) || id.starts_with('#') {
        return Err(Error::arg(format!("object id {id:?} must be nonempty, without whitespace or leading '#'")));
    }
    Ok(())
}

pub const RECORD_HEADER: &str = "# grasp records v1\n\
# object taxonomy tx ty tz qw qx qy qz j0..j19 label contacts epsilon [px py pz nx ny nz mu]*contacts\n";

fn format_record(r: &GraspRecord) -> String {
    let mut fields: Vec<String> = vec![r.object_id.clone(), r.taxonomy.to_string()];
    fields.extend(r.grasp.to_vector().iter().map(|v| v.to_string()));
    fields.push(r.label.to_string());
    fields.push(r.contacts.len().to_string());
    fields.push(r.epsilon.to_string());
    for c in &r.contacts {
        fields.extend(c.position.iter().chain(c.normal.iter()).map(|v| v.to_string()));
        fields.push(c.friction.to_string());
    }
    fields.join(" ")
}

pub fn write_records(path: &Path, records: &[GraspRecord]) -> Result<()> {
    let mut text = String::from(RECORD_HEADER);
    for r in records {
        check_object_id(&r.object_id)?;
        text.push_str(&format_record(r));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_record(line: &str) -> std::result::Result<GraspRecord, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    let fixed = 2 + GRASP_DIM + 3;
    if f.len() < fixed {
        return Err(format!("expected at least {fixed} fields, got {}", f.len()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
    let taxonomy: u8 = f[1].parse().map_err(|_| format!("bad taxonomy {:?}", f[1]))?;
    let values = f[2..2 + GRASP_DIM].iter().map(|s| num(s)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut grasp = Grasp::from_slice(&values).map_err(|e| e.to_string())?;
    let q = nalgebra::Quaternion::new(values[3], values[4], values[5], values[6]);
    if (q.norm() - 1.0).abs() < 1e-12 {
        // already unit: keep the stored bits so files round-trip exactly
        grasp.pose.rotation = UnitQuaternion::new_unchecked(q);
    }
    let label = Label::parse(f[2 + GRASP_DIM]).ok_or_else(|| format!("bad label {:?}", f[2 + GRASP_DIM]))?;
    let count: usize = f[3 + GRASP_DIM].parse().map_err(|_| format!("bad contact count {:?}", f[3 + GRASP_DIM]))?;
    let epsilon = num(f[4 + GRASP_DIM])?;
    if f.len() != fixed + 7 * count {
        return Err(format!("expected {} fields for {count} contacts, got {}", fixed + 7 * count, f.len()));
    }
    let mut contacts = Vec::with_capacity(count);
    for c in f[fixed..].chunks(7) {
        let v = c.iter().map(|s| num(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let contact = Contact::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]), v[6]).map_err(|e| e.to_string())?;
        contacts.push(contact);
    }
    Ok(GraspRecord { object_id: f[0].to_string(), grasp, taxonomy, label, contacts, epsilon })
}

pub fn read_records(path: &Path) -> Result<Vec<GraspRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_record(line).map_err(|d| Error::format(path, format!("line {}: {d}", i + 1)))?);
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 4] = b"GGCM";
const CACHE_VERSION: u32 = 1;

/// Binary contact-map cache, one map per dataset record (little endian):
/// magic, version, count, then per map the threshold and the two index
/// lists, each prefixed by its length.
pub fn write_contact_cache(path: &Path, maps: &[ContactMap]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(maps.len() as u64).to_le_bytes());
    for m in maps {
        buf.extend_from_slice(&m.threshold.to_le_bytes());
        for list in [&m.object_contacts, &m.hand_contacts] {
            buf.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for &i in list.iter() {
                buf.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_contact_cache(path: &Path) -> Result<Vec<ContactMap>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated contact cache"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(bad("not a contact cache"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported contact cache version {version}")));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut maps = Vec::new();
    for _ in 0..count {
        let threshold = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut lists = [Vec::new(), Vec::new()];
        for list in &mut lists {
            let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let raw = take(n.checked_mul(4).ok_or_else(|| bad("corrupt length"))?)?;
            *list = raw.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
        }
        let [object_contacts, hand_contacts] = lists;
        maps.push(ContactMap { object_contacts, hand_contacts, threshold });
    }
    if pos != buf.len() {
        return Err(bad("trailing bytes in contact cache"));
    }
    Ok(maps)
}
