use super::{HandMesh, HandModel};
use crate::geometry::Vec3;

/// Nearest point on a posed hand surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandHit {
    /// Signed distance, negative inside any link.
    pub distance: f64,
    pub closest: Vec3,
    pub link: usize,
    /// Global face index into the hand mesh.
    pub face: usize,
    pub bary: [f64; 3],
}

impl HandHit {
    /// Global vertex indices of the closest face.
    pub fn face_vertices(&self, model: &HandModel) -> [usize; 3] {
        model.faces[self.face].map(|i| i as usize)
    }
}

impl HandModel {
    /// Signed distance from `p` to the posed hand: distance to the nearest
    /// triangle of any link, negative when `p` is inside at least one link.
    /// Agrees with a winding-number query on the concatenated mesh.
    pub fn surface_query(&self, hand: &HandMesh, p: &Vec3) -> HandHit {
        let mut order: Vec<(f64, usize, Vec3)> = Vec::with_capacity(self.links.len());
        for (l, shape) in self.shapes.iter().enumerate() {
            if let Some(s) = shape {
                let local = hand.link_poses[l].inverse_transform_point(p);
                order.push((s.bounds.distance_squared(&local), l, local));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best: Option<(f64, usize, usize, [f64; 3], Vec3)> = None;
        let mut inside = false;
        for (lb2, l, local) in order {
            if let Some(b) = &best {
                // outside this link's box, so it can neither contain p nor be nearer
                if lb2 > b.0 * b.0 {
                    break;
                }
            }
            let hit = self.shapes[l].as_ref().unwrap().sdf.query(&local);
            inside |= hit.distance < 0.0;
            let d = hit.distance.abs();
            let better = match &best {
                None => true,
                Some(b) => d < b.0 || (d == b.0 && l < b.1),
            };
            if better {
                best = Some((d, l, hit.primitive, hit.bary, hit.closest));
            }
        }
        let (d, link, face, bary, closest) = best.expect("hand has at least one mesh");
        HandHit {
            distance: if inside { -d } else { d },
            closest: hand.link_poses[link].transform_point(&closest),
            link,
            face: self.face_offsets[link] + face,
            bary,
        }
    }

    pub fn surface_signed_distance(&self, hand: &HandMesh, p: &Vec3) -> f64 {
        self.surface_query(hand, p).distance
    }

    /// Whether `p` is inside any link; cheaper than a full query.
    pub fn surface_contains(&self, hand: &HandMesh, p: &Vec3) -> bool {
        self.shapes.iter().enumerate().any(|(l, shape)| match shape {
            Some(s) => {
                let local = hand.link_poses[l].inverse_transform_point(p);
                s.bounds.contains(&local) && s.sdf.contains(&local)
            }
            None => false,
        })
    }

    /// Queries for the points that lie inside the hand, as `(index, hit)`.
    pub fn penetrating_points(&self, hand: &HandMesh, points: &[Vec3]) -> Vec<(usize, HandHit)> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| self.surface_contains(hand, p))
            .map(|(i, p)| (i, self.surface_query(hand, p)))
            .collect()
    }

    /// Bounding sphere `(world center, radius)` of a link, if it has geometry.
    pub fn link_sphere(&self, hand: &HandMesh, l: usize) -> Option<(Vec3, f64)> {
        self.shapes[l].as_ref().map(|s| (hand.link_poses[l].transform_point(&s.center), s.radius))
    }

    /// Signed distance from `p` to one link's surface.
    pub fn link_signed_distance(&self, hand: &HandMesh, l: usize, p: &Vec3) -> Option<f64> {
        self.shapes[l]
            .as_ref()
            .map(|s| s.sdf.signed_distance(&hand.link_poses[l].inverse_transform_point(p)))
    }
}
