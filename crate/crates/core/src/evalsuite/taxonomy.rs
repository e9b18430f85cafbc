//! Grasp taxonomies: a pre-grasp joint configuration plus the direction in
//! which joints flex while the hand closes.
//!
//! Joint layout is per finger (thumb, index, middle, ring, little), four
//! joints each: abduction (opposition for the thumb), proximal, medial,
//! distal flexion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handkin::NUM_JOINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    /// 1–5 for the shipped set, 0 for [`Taxonomy::universal`].
    pub id: u8,
    pub name: String,
    pub pregrasp: Vec<f64>,
    /// Relative joint velocities during closing; normalized per finger.
    pub synergy: Vec<f64>,
}

const CURL: [f64; 4] = [0.0, 1.0, 1.0, 1.0];
const IDLE: [f64; 4] = [0.0; 4];
const TUCKED: [f64; 4] = [0.0, 1.4, 1.6, 1.2];

fn join(fingers: [[f64; 4]; 5]) -> Vec<f64> {
    fingers.concat()
}

impl Taxonomy {
    /// The five shipped taxonomies, ids 1 through 5.
    pub fn shipped() -> Vec<Taxonomy> {
        vec![
            Taxonomy {
                id: 1,
                name: "large_wrap".into(),
                pregrasp: join([[1.0, 0.0, 0.0, 0.0], IDLE, IDLE, IDLE, IDLE]),
                synergy: join([CURL; 5]),
            },
            Taxonomy {
                id: 2,
                name: "medium_wrap".into(),
                pregrasp: join([
                    [1.2, 0.2, 0.2, 0.0],
                    [0.0, 0.4, 0.4, 0.3],
                    [0.0, 0.4, 0.4, 0.3],
                    [0.0, 0.4, 0.4, 0.3],
                    [0.0, 0.4, 0.4, 0.3],
                ]),
                synergy: join([CURL; 5]),
            },
            Taxonomy {
                id: 3,
                name: "precision_sphere".into(),
                pregrasp: join([
                    [1.1, 0.1, 0.1, 0.1],
                    [0.15, 0.2, 0.2, 0.2],
                    [0.05, 0.2, 0.2, 0.2],
                    [0.05, 0.2, 0.2, 0.2],
                    [0.15, 0.2, 0.2, 0.2],
                ]),
                synergy: join([[0.0, 0.6, 1.0, 1.0]; 5]),
            },
            Taxonomy {
                id: 4,
                name: "tripod".into(),
                pregrasp: join([[1.2, 0.2, 0.2, 0.2], [0.0, 0.3, 0.3, 0.3], [0.0, 0.3, 0.3, 0.3], TUCKED, TUCKED]),
                synergy: join([CURL, CURL, CURL, IDLE, IDLE]),
            },
            Taxonomy {
                id: 5,
                name: "lateral_pinch".into(),
                pregrasp: join([[0.3, 0.0, 0.0, 0.0], [0.0, 0.9, 1.0, 0.5], TUCKED, TUCKED, TUCKED]),
                synergy: join([CURL, [0.0, 0.3, 0.3, 0.3], IDLE, IDLE, IDLE]),
            },
        ]
    }

    /// Closing rule for grasps that did not come from a taxonomy: keep the
    /// current joints and curl every flexion joint.
    pub fn universal() -> Taxonomy {
        Taxonomy { id: 0, name: "universal".into(), pregrasp: vec![0.0; NUM_JOINTS], synergy: join([CURL; 5]) }
    }

    pub fn by_id(id: u8) -> Option<Taxonomy> {
        if id == 0 {
            return Some(Self::universal());
        }
        Self::shipped().into_iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pregrasp.len() != NUM_JOINTS || self.synergy.len() != NUM_JOINTS {
            return Err(Error::Config(format!(
                "taxonomy `{}` needs {NUM_JOINTS} pregrasp and synergy values, got {} and {}",
                self.name,
                self.pregrasp.len(),
                self.synergy.len()
            )));
        }
        if self.pregrasp.iter().chain(&self.synergy).any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("taxonomy `{}` has non-finite values", self.name)));
        }
        if self.synergy.iter().any(|&s| s < 0.0) {
            return Err(Error::Config(format!("taxonomy `{}` synergy must be nonnegative", self.name)));
        }
        Ok(())
    }
}

/// Reads a JSON array of exactly five taxonomies with ids 1–5.
pub fn load_taxonomies(path: &Path) -> Result<Vec<Taxonomy>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut set: Vec<Taxonomy> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    set.sort_by_key(|t| t.id);
    let ids: Vec<u8> = set.iter().map(|t| t.id).collect();
    if ids != [1, 2, 3, 4, 5] {
        return Err(Error::format(path, format!("expected taxonomy ids 1..=5, got {ids:?}")));
    }
    for t in &set {
        t.validate()?;
    }
    Ok(set)
}
