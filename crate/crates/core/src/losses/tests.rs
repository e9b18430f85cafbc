use std::sync::Arc;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check_gradient, locally_smooth};
use crate::geometry::{brute_force_signed_distance, closest_point_on_triangle, icosphere, quat_exp, Pose, TriMesh};
use crate::handkin::Grasp;

fn model() -> Arc<HandModel> {
    Arc::new(HandModel::generic())
}

/// Sphere resting against the palm of a rest-pose hand.
fn sphere_object(seed: u64) -> SurfaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = icosphere(0.04, 3).transformed(&Pose::from_translation(Vec3::new(0.0, 0.07, 0.038)));
    let cloud = mesh.sample_surface(384, &mut rng);
    SurfaceModel::from_mesh(mesh).unwrap().with_cloud(cloud).unwrap()
}

fn perturbed(h: &HandModel, rng: &mut ChaCha8Rng, scale: f64) -> Grasp {
    let t = Vec3::from_fn(|_, _| rng.random_range(-0.01..0.01) * scale);
    let w = Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2) * scale);
    let joints = (0..NUM_JOINTS)
        .map(|j| {
            let jt = h.joint(j);
            jt.lower + rng.random_range(0.05..0.6) * (jt.upper - jt.lower) * scale
        })
        .collect();
    Grasp::new(Pose::new(t, quat_exp(&w)), joints)
}

/// Checks the gradient when the scene is smooth at `x`; returns whether it
/// was checked. Scenes with a distance-field kink within one step are
/// skipped by the callers, which require 20 checked scenes.
fn fd_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], what: &str) -> bool {
    if !locally_smooth(&f, x, None) {
        return false;
    }
    let r = check_gradient(&f, x, analytic, None);
    assert!(r.passed(), "{what}: {r:?}");
    true
}

#[test]
fn default_weights_match_table() {
    let w = LossWeights::default();
    assert_eq!(
        [w.kl, w.theta, w.v, w.o, w.h, w.p, w.d, w.ce],
        [0.1, 0.5, 30.0, 30.0, 30.0, 1.0, 1.0, 20.0]
    );
    let parsed: LossWeights = serde_json::from_str(r#"{"ce": 5.0}"#).unwrap();
    assert_eq!(parsed.ce, 5.0);
    assert_eq!(parsed.kl, 0.1);
    assert!(serde_json::from_str::<LossWeights>(r#"{"lambda": 1.0}"#).is_err());
}

#[test]
fn kl_examples() {
    assert_eq!(kl_value(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    assert_relative_eq!(kl_value(&[1.0], &[0.0]).unwrap(), 0.5, epsilon = 1e-15);
    assert!(kl_value(&[1.0], &[0.0, 1.0]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let direct: f64 = mu.iter().zip(&lv).map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l)).sum();
        let got = kl_value(&mu, &lv).unwrap();
        assert!((got - direct).abs() < 1e-12);
        assert!(got >= 0.0);
    }
}

#[test]
fn reconstruction_examples() {
    let h = model();
    let w = LossWeights::default();
    let gt = h.forward_kinematics(&Grasp::rest()).unwrap();
    let z = vec![0.0; NUM_JOINTS];
    assert_eq!(reconstruction_loss(&gt, &z, &gt, &z, &w).unwrap(), 0.0);

    let mut pred = gt.clone();
    pred.vertices[7].x += 1.0;
    let n = gt.vertices.len() as f64;
    assert_relative_eq!(reconstruction_loss(&pred, &z, &gt, &z, &w).unwrap(), w.v / n, epsilon = 1e-12);

    pred.vertices.pop();
    assert!(matches!(reconstruction_loss(&pred, &z, &gt, &z, &w), Err(Error::Argument(_))));

    // plain-arithmetic oracle on random grasp pairs
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a = h.random_grasp(&mut rng, 0.1);
        let b = h.random_grasp(&mut rng, 0.1);
        let ma = h.forward_kinematics(&a).unwrap();
        let mb = h.forward_kinematics(&b).unwrap();
        let v: f64 = ma.vertices.iter().zip(&mb.vertices).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / n;
        let t: f64 = a.joints.iter().zip(&b.joints).map(|(p, q)| (p - q).abs()).sum::<f64>() / NUM_JOINTS as f64;
        let got = reconstruction_loss(&ma, &a.joints, &mb, &b.joints, &w).unwrap();
        assert!((got - (w.v * v + w.theta * t)).abs() < 1e-12);
    }
}

fn point_triangle_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (closest_point_on_triangle(p, &a, &b, &c).0 - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn contact_map_matches_pairwise_oracle() {
    let h = model();
    let hand = h.forward_kinematics(&Grasp::rest()).unwrap();
    // flat plate just above the palmar side, touching palm and fingers
    let mut pts = Vec::new();
    for i in 0..24 {
        for j in 0..40 {
            pts.push(Vec3::new(-0.06 + 0.005 * i as f64, -0.02 + 0.005 * j as f64, 0.003));
        }
    }
    let n = vec![Vec3::z(); pts.len()];
    let plate = PointCloud::with_normals(pts.clone(), n).unwrap();
    let t = CONTACT_THRESHOLD;
    let map = derive_contact_map(&h, &plate, &hand, t).unwrap();

    let surface = hand.to_trimesh();
    let links: Vec<TriMesh> = (0..h.links.len())
        .filter(|&l| !h.links[l].mesh.is_empty())
        .map(|l| h.links[l].mesh.transformed(&hand.link_poses[l]))
        .collect();
    let expected_o: Vec<usize> = (0..pts.len())
        .filter(|&i| {
            let inside = links.iter().any(|m| brute_force_signed_distance(m, &pts[i]) < 0.0);
            inside || point_triangle_distance(&surface, &pts[i]) <= t
        })
        .collect();
    let expected_h: Vec<usize> = (0..hand.vertices.len())
        .filter(|&v| pts.iter().any(|p| (p - hand.vertices[v]).norm() <= t))
        .collect();
    assert!(!expected_o.is_empty() && !expected_h.is_empty());
    assert_eq!(map.object_contacts, expected_o);
    assert_eq!(map.hand_contacts, expected_h);

    // far away → empty; infinite threshold → every object point
    let far = h.forward_kinematics(&Grasp::new(Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)), vec![0.0; 20])).unwrap();
    let m = derive_contact_map(&h, &plate, &far, t).unwrap();
    assert!(m.object_contacts.is_empty() && m.hand_contacts.is_empty());
    let all = derive_contact_map(&h, &plate, &hand, f64::INFINITY).unwrap();
    assert_eq!(all.object_contacts.len(), pts.len());

    assert!(derive_contact_map(&h, &PointCloud::from_points(vec![]), &hand, t).is_err());
    assert!(derive_contact_map(&h, &plate, &hand, 0.0).is_err());
}

#[test]
fn contact_loss_examples() {
    let h = model();
    let w = LossWeights::default();
    let obj = sphere_object(1);
    let gt = GroundTruth::new(&h, Grasp::rest(), &obj, CONTACT_THRESHOLD).unwrap();
    assert!(!gt.contacts.object_contacts.is_empty());
    let (same, empty) = contact_loss(&h, &Grasp::rest(), &obj, &gt, &w).unwrap();
    assert!(same.abs() < 1e-15 && !empty);

    // hand pulled away from the sphere: both distance terms grow
    let away = Grasp::new(Pose::from_translation(Vec3::new(0.0, 0.0, -0.02)), vec![0.0; 20]);
    let tape = Tape::new();
    let g = tape.leaf(Tensor::row(&away.to_vector()));
    let (pts, hand) = hand_layer(&tape, &h, g).unwrap();
    let (o, hh, _) = contact_terms(&tape, &h, &hand, pts, &obj, &gt).unwrap();
    assert!(tape.scalar_value(o) > 0.0 && tape.scalar_value(hh) > 0.0);

    // per-point brute-force SDF oracle
    let cloud = obj.cloud().unwrap();
    let mesh = obj.mesh().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred = perturbed(&h, &mut rng, 1.0);
    let ph = h.forward_kinematics(&pred).unwrap();
    let links: Vec<TriMesh> = (0..h.links.len())
        .filter(|&l| !h.links[l].mesh.is_empty())
        .map(|l| h.links[l].mesh.transformed(&ph.link_poses[l]))
        .collect();
    let surface = ph.to_trimesh();
    let hand_sdf = |p: &Vec3| {
        let d = point_triangle_distance(&surface, p);
        if links.iter().any(|m| brute_force_signed_distance(m, p) < 0.0) { -d } else { d }
    };
    let lo: f64 = gt
        .contacts
        .object_contacts
        .iter()
        .zip(&gt.object_gt_distance)
        .map(|(&i, g)| hand_sdf(&cloud.points[i]) - g)
        .sum::<f64>()
        / gt.contacts.object_contacts.len() as f64;
    let lh: f64 = gt
        .contacts
        .hand_contacts
        .iter()
        .zip(&gt.hand_gt_distance)
        .map(|(&v, g)| brute_force_signed_distance(mesh, &ph.vertices[v]) - g)
        .sum::<f64>()
        / gt.contacts.hand_contacts.len() as f64;
    let (got, _) = contact_loss(&h, &pred, &obj, &gt, &w).unwrap();
    assert!((got - (w.o * lo + w.h * lh)).abs() < 1e-9, "{got} vs {}", w.o * lo + w.h * lh);
}

#[test]
fn empty_contacts_give_zero_and_flag() {
    let h = model();
    let obj = sphere_object(2).transformed(&Pose::from_translation(Vec3::new(1.0, 0.0, 0.0))).unwrap();
    let gt = GroundTruth::new(&h, Grasp::rest(), &obj, CONTACT_THRESHOLD).unwrap();
    let (v, empty) = contact_loss(&h, &Grasp::rest(), &obj, &gt, &LossWeights::default()).unwrap();
    assert_eq!(v, 0.0);
    assert!(empty);
}

#[test]
fn interpenetration_examples() {
    let h = model();
    let hand = h.forward_kinematics(&Grasp::rest()).unwrap();
    // far away
    assert_eq!(interpenetration_loss(&h, &[Vec3::new(1.0, 1.0, 1.0)], &hand), 0.0);
    // one point 1 cm below the palmar face, well inside the palm box
    let p = Vec3::new(0.0, 0.045, -0.01);
    assert_relative_eq!(interpenetration_loss(&h, &[p], &hand), 0.01, epsilon = 1e-12);
    // touching from outside: palmar face at z = 0
    assert_eq!(interpenetration_loss(&h, &[Vec3::new(0.0, 0.045, 0.0)], &hand), 0.0);
}

#[test]
fn interpenetration_is_continuous_across_the_surface() {
    let h = model();
    let hand = h.forward_kinematics(&Grasp::rest()).unwrap();
    let mut prev = None;
    for k in -40..=40 {
        let z = k as f64 * 1e-5;
        let v = interpenetration_loss(&h, &[Vec3::new(0.01, 0.03, z)], &hand);
        assert!(v >= 0.0);
        if let Some(p) = prev {
            let diff: f64 = v - p;
            assert!(diff.abs() <= 1e-5 + 1e-12);
        }
        prev = Some(v);
    }
}

#[test]
fn contact_energy_examples() {
    let plate = SurfaceModel::from_cloud(PointCloud::with_normals(vec![Vec3::zeros()], vec![Vec3::z()]).unwrap()).unwrap();
    let mut pts = vec![Vec3::new(0.0, 0.0, 0.01); 50];
    assert_eq!(contact_energy(&pts, &plate, CONTACT_ENERGY_THRESHOLD).unwrap(), 0.0);
    pts[3].z = 0.03;
    assert_relative_eq!(contact_energy(&pts, &plate, CONTACT_ENERGY_THRESHOLD).unwrap(), 0.03, epsilon = 1e-15);
    assert!(contact_energy(&pts, &plate, 0.0).is_err());

    // loop oracle on random grasps, and agreement with the tape version
    let h = model();
    let obj = sphere_object(4);
    let mesh = obj.mesh().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let g = perturbed(&h, &mut rng, 3.0);
        let hand = h.forward_kinematics(&g).unwrap();
        let oracle: f64 = hand
            .grasp_points
            .iter()
            .map(|p| brute_force_signed_distance(mesh, p))
            .filter(|&f| f > CONTACT_ENERGY_THRESHOLD)
            .sum();
        let got = contact_energy(&hand.grasp_points, &obj, CONTACT_ENERGY_THRESHOLD).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        let tape = Tape::new();
        let gv = tape.leaf(Tensor::row(&g.to_vector()));
        let (pts, _) = hand_layer(&tape, &h, gv).unwrap();
        let ce = contact_energy_term(&tape, &h, pts, &obj, CONTACT_ENERGY_THRESHOLD).unwrap();
        assert!((tape.scalar_value(ce) - got).abs() < 1e-12);
    }
}

#[test]
fn refinement_examples() {
    let h = model();
    let w = LossWeights::default();
    let tape = Tape::new();
    let mut g = Grasp::rest();
    g.pose.translation.x = 0.1;
    let gv = tape.leaf(Tensor::row(&g.to_vector()));
    let d = distance_term(&tape, gv, &Grasp::rest()).unwrap();
    assert_relative_eq!(tape.scalar_value(d), 0.01, epsilon = 1e-15);
    let same = distance_term(&tape, gv, &g).unwrap();
    assert_eq!(tape.scalar_value(same), 0.0);

    // one object point 1 cm inside the palm and identical grasps
    let obj = SurfaceModel::from_cloud(
        PointCloud::with_normals(vec![Vec3::new(0.0, 0.045, -0.01)], vec![Vec3::z()]).unwrap(),
    )
    .unwrap();
    let (b, _) = refinement_loss_with_gradient(&h, &Grasp::rest(), &Grasp::rest(), &obj, &w, 0.02).unwrap();
    assert_relative_eq!(b.p, 0.01, epsilon = 1e-12);
    assert_eq!(b.d, 0.0);
    assert!((b.total - (w.ce * b.ce + w.p * 0.01)).abs() < 1e-12);
    let only_p = LossWeights { p: 1.0, ..LossWeights::zero() };
    let (b, _) = refinement_loss_with_gradient(&h, &Grasp::rest(), &Grasp::rest(), &obj, &only_p, 0.02).unwrap();
    assert_relative_eq!(b.total, only_p.p * 0.01, epsilon = 1e-12);
}

#[test]
fn generator_loss_examples() {
    let h = model();
    let obj = sphere_object(6);
    let w = LossWeights::default();
    let gt = GroundTruth::new(&h, Grasp::rest(), &obj, CONTACT_THRESHOLD).unwrap();
    let z = [0.0; 8];
    let b = evaluate_generator_loss(&h, &Grasp::rest(), &z, &z, &obj, &gt, &w).unwrap();
    // the rest grasp already presses into the sphere; everything else is 0
    assert_eq!([b.kl, b.v, b.theta, b.o, b.h], [0.0; 5]);
    assert!((b.total - w.p * b.p).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pred = perturbed(&h, &mut rng, 1.0);
    let mu: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lv: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zero = evaluate_generator_loss(&h, &pred, &mu, &lv, &obj, &gt, &LossWeights::zero()).unwrap();
    assert_eq!(zero.total, 0.0);

    let b = evaluate_generator_loss(&h, &pred, &mu, &lv, &obj, &gt, &w).unwrap();
    let ph = h.forward_kinematics(&pred).unwrap();
    let manual = w.kl * kl_value(&mu, &lv).unwrap()
        + reconstruction_loss(&ph, &pred.joints, &gt.hand, &gt.grasp.joints, &w).unwrap()
        + contact_loss(&h, &pred, &obj, &gt, &w).unwrap().0
        + w.p * interpenetration_loss(&h, &obj.cloud().unwrap().points, &ph);
    assert!((b.total - manual).abs() < 1e-12, "{} vs {manual}", b.total);
    assert!((b.total - b.weighted_sum(&w)).abs() < 1e-12);
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let h = model();
    let w = LossWeights::default();
    let mut checked = 0;
    for seed in 0..80u64 {
        if checked == 20 {
            break;
        }
        let obj = sphere_object(100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt_grasp = perturbed(&h, &mut rng, 1.0);
        let gt = GroundTruth::new(&h, gt_grasp, &obj, CONTACT_THRESHOLD).unwrap();
        let mut x = perturbed(&h, &mut rng, 1.0).to_vector().to_vec();
        // slightly non-unit quaternion, as a decoder may emit
        for q in &mut x[3..7] {
            *q *= 1.1;
        }
        x.extend((0..8).map(|_| rng.random_range(-1.0..1.0)));
        let eval = |x: &[f64]| {
            let tape = Tape::new();
            let g = tape.leaf(Tensor::row(&x[..27]));
            let mu = tape.leaf(Tensor::row(&x[27..31]));
            let lv = tape.leaf(Tensor::row(&x[31..35]));
            let (root, _) = generator_loss(&tape, &h, g, mu, lv, &obj, &gt, &w).unwrap();
            let grads = tape.backward(root).unwrap();
            let mut d = grads.wrt(g).data().to_vec();
            d.extend_from_slice(grads.wrt(mu).data());
            d.extend_from_slice(grads.wrt(lv).data());
            (tape.scalar_value(root), d)
        };
        let (_, analytic) = eval(&x);
        checked += fd_check(|x| eval(x).0, &analytic, &x, &format!("generator seed {seed}")) as usize;
    }
    assert_eq!(checked, 20);
}

#[test]
fn refinement_gradient_matches_finite_differences() {
    let h = model();
    let w = LossWeights::default();
    let mut checked = 0;
    for seed in 0..80u64 {
        if checked == 20 {
            break;
        }
        let obj = sphere_object(200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let reference = perturbed(&h, &mut rng, 1.0);
        let g = perturbed(&h, &mut rng, 2.0);
        let x = g.to_vector();
        let f = |x: &[f64]| {
            let tape = Tape::new();
            let v = tape.leaf(Tensor::row(x));
            let (root, _) = refinement_loss(&tape, &h, v, &reference, &obj, &w, CONTACT_ENERGY_THRESHOLD).unwrap();
            tape.scalar_value(root)
        };
        let (b, analytic) =
            refinement_loss_with_gradient(&h, &g, &reference, &obj, &w, CONTACT_ENERGY_THRESHOLD).unwrap();
        assert!(b.ce >= 0.0 && b.p >= 0.0 && b.d >= 0.0);
        checked += fd_check(f, &analytic, &x, &format!("refinement seed {seed}")) as usize;
    }
    assert_eq!(checked, 20);
}

#[test]
fn losses_are_rigidly_invariant() {
    let h = model();
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..5u64 {
        let obj = sphere_object(300 + seed);
        let gt_grasp = perturbed(&h, &mut rng, 1.0);
        let pred = perturbed(&h, &mut rng, 1.0);
        let t = Pose::new(
            Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            quat_exp(&Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0))),
        );
        let eval = |obj: &SurfaceModel, gt_grasp: &Grasp, pred: &Grasp| {
            let gt = GroundTruth::new(&h, gt_grasp.clone(), obj, CONTACT_THRESHOLD).unwrap();
            let ph = h.forward_kinematics(pred).unwrap();
            let rec = reconstruction_loss(&ph, &pred.joints, &gt.hand, &gt.grasp.joints, &w).unwrap();
            let con = contact_loss(&h, pred, obj, &gt, &w).unwrap().0;
            let pen = interpenetration_loss(&h, &obj.cloud().unwrap().points, &ph);
            let ce = contact_energy(&ph.grasp_points, obj, CONTACT_ENERGY_THRESHOLD).unwrap();
            (gt.contacts.clone(), [rec, con, pen, ce])
        };
        let (m0, a) = eval(&obj, &gt_grasp, &pred);
        let (m1, b) = eval(&obj.transformed(&t).unwrap(), &gt_grasp.transformed(&t), &pred.transformed(&t));
        assert_eq!(m0, m1);
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-9, "term {k}: {} vs {}", a[k], b[k]);
        }
    }
}

#[test]
fn breakdown_helpers() {
    let b = LossBreakdown { kl: 1.0, v: 2.0, total: f64::NAN, ..Default::default() };
    assert_eq!(b.non_finite_term(), Some("total"));
    assert_eq!(LossBreakdown::CSV_HEADER.split(',').count(), b.csv_row().split(',').count());
    let m = LossBreakdown::mean(&[b, LossBreakdown { kl: 3.0, ..Default::default() }]);
    assert_eq!(m.kl, 2.0);
}

