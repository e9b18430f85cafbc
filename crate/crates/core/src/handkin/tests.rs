use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{brute_force_signed_distance, quat_exp, Pose, Vec3};

fn hand() -> HandModel {
    HandModel::generic()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let w = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let t = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    Pose::new(t, quat_exp(&w))
}

#[test]
fn rest_pose_reproduces_rest_vertices() {
    let h = hand();
    let mesh = h.forward_kinematics(&Grasp::rest()).unwrap();
    let mut expected = Vec::new();
    let mut poses: Vec<Pose> = Vec::new();
    for link in &h.links {
        let parent = link.parent.map(|p| poses[p]).unwrap_or_default();
        let pose = parent.compose(&link.origin);
        expected.extend(link.mesh.vertices.iter().map(|v| pose.transform_point(v)));
        poses.push(pose);
    }
    assert_eq!(mesh.vertices, expected);
    assert_eq!(mesh.vertices.len(), h.num_vertices());
}

#[test]
fn wrist_translation_shifts_every_vertex() {
    let h = hand();
    let rest = h.forward_kinematics(&Grasp::rest()).unwrap();
    let mut g = Grasp::rest();
    g.pose.translation = Vec3::new(0.1, 0.0, 0.0);
    let moved = h.forward_kinematics(&g).unwrap();
    for (a, b) in rest.vertices.iter().zip(&moved.vertices) {
        assert!((b - a - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn distal_joint_rotates_only_its_link() {
    let h = hand();
    let distal = h.link_index("index_distal").unwrap();
    let j = h.joint_links.iter().position(|&l| l == distal).unwrap();
    let rest = h.forward_kinematics(&Grasp::rest()).unwrap();
    let mut g = Grasp::rest();
    g.joints[j] = 0.3;
    let bent = h.forward_kinematics(&g).unwrap();
    let (axis, origin) = h.joint_frames(&rest)[j];
    let rot = quat_exp(&(axis * 0.3));
    for l in 0..h.links.len() {
        for v in h.vertex_offsets[l]..h.vertex_offsets[l + 1] {
            let expect = if l == distal { origin + rot * (rest.vertices[v] - origin) } else { rest.vertices[v] };
            assert!((bent.vertices[v] - expect).norm() < 1e-9);
        }
    }
}

#[test]
fn wrong_joint_count_is_an_argument_error() {
    let g = Grasp::new(Pose::identity(), vec![0.0; 19]);
    assert!(matches!(hand().forward_kinematics(&g), Err(crate::Error::Argument(_))));
}

#[test]
fn clamp_matches_scalar_loop() {
    let h = hand();
    assert_eq!(clamp_joints(&h, &[f64::INFINITY; 20]), h.upper_limits());
    let inside: Vec<f64> = (0..20).map(|j| 0.5 * (h.joint(j).lower + h.joint(j).upper)).collect();
    assert_eq!(clamp_joints(&h, &inside), inside);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
    let got = clamp_joints(&h, &x);
    for j in 0..20 {
        let mut e = x[j];
        if e < h.joint(j).lower {
            e = h.joint(j).lower;
        }
        if e > h.joint(j).upper {
            e = h.joint(j).upper;
        }
        assert_eq!(got[j], e);
    }
}

#[test]
fn jacobian_structure_and_finite_differences() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = h.random_grasp(&mut rng, 0.2);
    let jac = h.fk_jacobian(&g).unwrap();
    let owners = h.point_links();
    for i in 0..owners.len() {
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(jac[(3 * i + r, c)], if r == c { 1.0 } else { 0.0 });
            }
        }
        for j in 0..NUM_JOINTS {
            if !h.moves(j, owners[i]) {
                for r in 0..3 {
                    assert_eq!(jac[(3 * i + r, 6 + j)], 0.0);
                }
            }
        }
    }
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for c in 0..TANGENT_DIM {
        let mut d = [0.0; TANGENT_DIM];
        d[c] = eps;
        let plus: Vec<Vec3> = h.forward_kinematics(&g.retract(&d)).unwrap().points().copied().collect();
        d[c] = -eps;
        let minus: Vec<Vec3> = h.forward_kinematics(&g.retract(&d)).unwrap().points().copied().collect();
        for i in 0..plus.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * eps);
            for r in 0..3 {
                let a = jac[(3 * i + r, c)];
                let err = (a - fd[r]).abs();
                if err > 1e-8 {
                    worst = worst.max(err / a.abs().max(fd[r].abs()));
                }
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn tangent_gradient_is_jacobian_transpose() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = h.random_grasp(&mut rng, 0.2);
    let mesh = h.forward_kinematics(&g).unwrap();
    let adj: Vec<Vec3> = mesh.points().map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    let jac = h.fk_jacobian(&g).unwrap();
    let flat = nalgebra::DVector::from_iterator(adj.len() * 3, adj.iter().flat_map(|a| [a.x, a.y, a.z]));
    let expect = jac.transpose() * flat;
    let got = h.tangent_gradient(&g, &mesh, &adj);
    for c in 0..TANGENT_DIM {
        assert!((got[c] - expect[c]).abs() < 1e-9 * (1.0 + expect[c].abs()));
    }
}

#[test]
fn raw_gradient_matches_finite_differences() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = h.random_grasp(&mut rng, 0.2);
    let mut raw = g.to_vector().to_vec();
    // deliberately non-unit quaternion
    for k in 3..7 {
        raw[k] *= 1.3;
    }
    let weights: Vec<Vec3> = (0..h.num_vertices() + NUM_GRASP_POINTS)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let f = |v: &[f64]| -> f64 {
        let m = h.forward_kinematics(&Grasp::from_slice(v).unwrap()).unwrap();
        m.points().zip(&weights).map(|(p, w)| p.dot(w)).sum()
    };
    let mesh = h.forward_kinematics(&Grasp::from_slice(&raw).unwrap()).unwrap();
    let grad = h.grasp_gradient(&raw, &mesh, &weights);
    for c in 0..GRASP_DIM {
        let mut p = raw.clone();
        p[c] += 1e-5;
        let mut m = raw.clone();
        m[c] -= 1e-5;
        let fd = (f(&p) - f(&m)) / 2e-5;
        let err = (fd - grad[c]).abs();
        assert!(err < 1e-8 || err / fd.abs().max(grad[c].abs()) < 1e-4, "component {c}: {fd} vs {}", grad[c]);
    }
    let tg = raw_to_tangent_gradient(&g, &h.grasp_gradient(&g.to_vector(), &h.forward_kinematics(&g).unwrap(), &weights));
    let direct = h.tangent_gradient(&g, &h.forward_kinematics(&g).unwrap(), &weights);
    for c in 0..TANGENT_DIM {
        assert!((tg[c] - direct[c]).abs() < 1e-9 * (1.0 + direct[c].abs()));
    }
}

#[test]
fn fk_is_equivariant_and_double_cover_safe() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let g = h.random_grasp(&mut rng, 0.3);
        let t = random_pose(&mut rng);
        let a = h.forward_kinematics(&g.transformed(&t)).unwrap();
        let b = h.forward_kinematics(&g).unwrap();
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            assert!((x - t.transform_point(y)).norm() < 1e-9);
        }
        let mut flipped = g.to_vector();
        for k in 3..7 {
            flipped[k] = -flipped[k];
        }
        let c = h.forward_kinematics(&Grasp::from_slice(&flipped).unwrap()).unwrap();
        for (x, y) in c.vertices.iter().zip(&b.vertices) {
            assert!((x - y).norm() < 1e-9);
        }
    }
}

#[test]
fn grasp_points_stay_on_their_links() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let g = h.random_grasp(&mut rng, 0.3);
        let m = h.forward_kinematics(&g).unwrap();
        for (gp, p) in h.grasp_points.iter().zip(&m.grasp_points) {
            let d = h.link_signed_distance(&m, gp.link, p).unwrap();
            assert!(d.abs() < 1e-6, "{d}");
        }
    }
}

#[test]
fn surface_query_matches_brute_force() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = h.random_grasp(&mut rng, 0.0);
    let m = h.forward_kinematics(&g).unwrap();
    let tri = m.to_trimesh();
    let bounds = tri.bounds().expanded(0.02);
    for _ in 0..60 {
        let p = Vec3::from_fn(|i, _| rng.random_range(bounds.min[i]..bounds.max[i]));
        let hit = h.surface_query(&m, &p);
        let expect = brute_force_signed_distance(&tri, &p);
        assert!((hit.distance - expect).abs() < 1e-12, "{} vs {expect}", hit.distance);
        let [a, b, c] = hit.face_vertices(&h).map(|i| m.vertices[i]);
        let q = a * hit.bary[0] + b * hit.bary[1] + c * hit.bary[2];
        assert!((q - hit.closest).norm() < 1e-12);
        assert_eq!(h.surface_contains(&m, &p), expect < 0.0);
    }
}

#[test]
fn grasp_vector_roundtrip() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = h.random_grasp(&mut rng, 0.1);
    let back = Grasp::from_slice(&g.to_vector()).unwrap();
    assert!((back.pose.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
    assert_eq!(back.joints, g.joints);
    assert!(matches!(Grasp::from_slice(&[0.0; 27]), Err(crate::Error::DegenerateRotation(_))));
    assert!(Grasp::from_slice(&[0.0; 5]).is_err());
}
