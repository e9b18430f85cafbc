use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_gradient;
use crate::evalsuite::approach_pose;
use crate::geometry::{cuboid, icosphere, SurfaceModel, Vec3};
use crate::handkin::NUM_JOINTS;
use crate::losses::{interpenetration_loss, kl_loss, CONTACT_THRESHOLD};

fn model() -> Arc<HandModel> {
    Arc::new(HandModel::generic())
}

fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        point_layers: vec![16, 32],
        grasp_layers: vec![32],
        encoder_hidden: vec![32],
        decoder_hidden: vec![64],
        latent_dim: 4,
    }
}

fn sphere_object() -> GenObject {
    prepare_object(&SurfaceModel::from_mesh(icosphere(0.04, 3)).unwrap(), 1).unwrap()
}

fn box_object() -> GenObject {
    prepare_object(&SurfaceModel::from_mesh(cuboid(Vec3::new(0.03, 0.03, 0.05))).unwrap(), 2).unwrap()
}

/// Grasps with the palm facing random surface points, joints half closed.
fn grasps_around(h: &HandModel, o: &GenObject, n: usize, seed: u64) -> Vec<Grasp> {
    grasps_at(h, o, n, seed, 0.01, 0.2..0.6)
}

fn grasps_at(h: &HandModel, o: &GenObject, n: usize, seed: u64, distance: f64, closing: std::ops::Range<f64>) -> Vec<Grasp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = o.cloud();
    let (lo, hi) = (h.lower_limits(), h.upper_limits());
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..c.len());
            let n = c.normals.as_ref().unwrap()[i];
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let pose = approach_pose(&Vec3::new(0.0, 0.1, 0.0), &c.points[i], &n, distance, angle);
            let joints = (0..NUM_JOINTS).map(|j| lo[j] + (hi[j] - lo[j]) * rng.random_range(closing.clone())).collect();
            Grasp::new(pose, joints)
        })
        .collect()
}

fn samples_for(h: &Arc<HandModel>, objects: &[GenObject], per_object: usize, seed: u64) -> Vec<GenSample> {
    objects
        .iter()
        .enumerate()
        .flat_map(|(k, o)| {
            grasps_around(h, o, per_object, seed + k as u64)
                .into_iter()
                .map(move |g| (k, g))
        })
        .map(|(k, g)| {
            let gt = GroundTruth::new(h, g, &objects[k].surface, CONTACT_THRESHOLD).unwrap();
            GenSample { object: k, gt: Arc::new(gt) }
        })
        .collect()
}

#[test]
fn defaults() {
    let g = GeneratorConfig::default();
    assert_eq!(g.point_layers, vec![64, 128, 256]);
    assert_eq!(g.latent_dim, 4);
    let t = TrainConfig::default();
    assert_eq!((t.epochs, t.batch_size, t.lr), (250, 512, 0.002));
    assert!(GeneratorConfig { latent_dim: 0, ..g.clone() }.validate().is_err());
    assert!(TrainConfig { lr: 0.0, ..t.clone() }.validate().is_err());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    let nets = GeneratorNets::new(g, 0).unwrap();
    assert!(nets.params.num_scalars() < 1_000_000, "{}", nets.params.num_scalars());
}

#[test]
fn prepared_object_is_centered_with_exact_point_count() {
    let mesh = icosphere(0.04, 3).transformed(&Pose::from_translation(Vec3::new(0.3, -0.2, 0.1)));
    let o = prepare_object(&SurfaceModel::from_mesh(mesh).unwrap(), 5).unwrap();
    assert_eq!(o.cloud().len(), NUM_POINTS);
    assert!(crate::geometry::centroid(&o.cloud().points).norm() < 1e-12);
    assert!((o.offset - Vec3::new(0.3, -0.2, 0.1)).norm() < 2e-3);
    // the centered mesh agrees with the centered cloud
    assert!(o.surface.signed_distance(&Vec3::zeros()).unwrap() < -0.039);
    let g = Grasp::rest();
    assert!(o.to_world(&o.to_local(&g)).pose.translation.relative_eq(&g.pose.translation, 1e-15, 1e-15));
    // a small cloud is padded by repetition
    let small = o.cloud().select(&(0..100).collect::<Vec<_>>());
    let p = prepare_object(&SurfaceModel::from_cloud(small).unwrap(), 0).unwrap();
    assert_eq!(p.cloud().len(), NUM_POINTS);
}

#[test]
fn object_feature_is_permutation_invariant() {
    let nets = GeneratorNets::new(GeneratorConfig::default(), 3).unwrap();
    let o = sphere_object();
    let f = nets.encode_object(o.cloud()).unwrap();
    assert_eq!(f.len(), 256);
    let mut idx: Vec<usize> = (0..NUM_POINTS).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let permuted = o.cloud().select(&idx);
    assert_eq!(nets.encode_object(&permuted).unwrap(), f);
}

#[test]
fn duplicated_points_resampled_give_identical_feature() {
    let nets = GeneratorNets::new(GeneratorConfig::default(), 3).unwrap();
    let o = sphere_object();
    let f = nets.encode_object(o.cloud()).unwrap();
    let mut doubled = o.cloud().clone();
    doubled.points.extend(o.cloud().points[..500].to_vec());
    doubled.normals.as_mut().unwrap().extend(o.cloud().normals.as_ref().unwrap()[..500].to_vec());
    let back = crate::geometry::farthest_point_sample(&doubled, NUM_POINTS, 4).unwrap();
    // same point set: the duplicates are never farthest
    assert_eq!(nets.encode_object(&back).unwrap(), f);
}

#[test]
fn wrong_point_count_is_rejected() {
    let nets = GeneratorNets::new(small_config(), 0).unwrap();
    let c = sphere_object().cloud().select(&[0, 1, 2]);
    assert!(matches!(nets.encode_object(&c), Err(Error::Argument(_))));
}

#[test]
fn sphere_and_box_features_differ() {
    let nets = GeneratorNets::new(GeneratorConfig::default(), 3).unwrap();
    let a = nets.encode_object(sphere_object().cloud()).unwrap();
    let b = nets.encode_object(box_object().cloud()).unwrap();
    let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(d > 0.0);
}

#[test]
fn untrained_encoder_emits_standard_normal() {
    let h = model();
    let nets = GeneratorNets::new(GeneratorConfig::default(), 3).unwrap();
    let o = sphere_object();
    let f = nets.encode_object(o.cloud()).unwrap();
    for g in grasps_around(&h, &o, 3, 0) {
        let (mu, logvar) = nets.encode_grasp(&g, &f).unwrap();
        assert_eq!(mu, vec![0.0; 4]);
        assert_eq!(logvar, vec![0.0; 4]);
    }
}

#[test]
fn encoder_is_deterministic() {
    let h = model();
    let o = box_object();
    let g = &grasps_around(&h, &o, 1, 1)[0];
    let run = || {
        let mut nets = GeneratorNets::new(small_config(), 11).unwrap();
        // give the zeroed output layer some weight so the check is not trivial
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = nets.params.flat_values().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
        nets.params.set_flat_values(&v);
        let f = nets.encode_object(o.cloud()).unwrap();
        nets.encode_grasp(g, &f).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.0.iter().any(|&x| x != 0.0));
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let h = model();
    let o = sphere_object();
    let g = grasps_around(&h, &o, 1, 4).remove(0);
    let mut nets = GeneratorNets::new(small_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v: Vec<f64> = nets.params.flat_values().iter().map(|x| x + rng.random_range(-0.2..0.2)).collect();
    nets.params.set_flat_values(&v);
    let f = nets.encode_object(o.cloud()).unwrap();
    // encoder parameters: the last entries before the decoder block
    let names: Vec<String> = nets.params.params.iter().map(|p| p.name.clone()).collect();
    let enc: Vec<usize> = names.iter().enumerate().filter(|(_, n)| n.starts_with("encoder")).map(|(i, _)| i).collect();
    let kl_of = |nets: &GeneratorNets| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let vars = nets.params.bind(&tape);
        let (mu, lv) = nets.encode_on(&tape, &vars, &g, tape.leaf(Tensor::row(&f))).unwrap();
        let kl = kl_loss(&tape, mu, lv).unwrap();
        let grads = tape.backward(kl).unwrap();
        (tape.scalar_value(kl), enc.iter().map(|&i| grads.wrt(vars[i])).collect())
    };
    let (_, analytic) = kl_of(&nets);
    for (slot, &pi) in enc.iter().enumerate() {
        let base = nets.params.params[pi].value.clone();
        // a spread of entries from each encoder tensor
        let picks: Vec<usize> = (0..base.len()).step_by((base.len() / 7).max(1)).collect();
        let x0: Vec<f64> = picks.iter().map(|&k| base.data()[k]).collect();
        let grad: Vec<f64> = picks.iter().map(|&k| analytic[slot].data()[k]).collect();
        let probe = nets.clone();
        let f = |x: &[f64]| {
            let mut n = probe.clone();
            for (&k, &xi) in picks.iter().zip(x) {
                n.params.params[pi].value.data_mut()[k] = xi;
            }
            kl_of(&n).0
        };
        let r = check_gradient(f, &x0, &grad, None);
        assert!(r.passed(), "{}: {r:?}", names[pi]);
    }
}

#[test]
fn decoded_grasps_are_valid_for_random_latents() {
    let h = model();
    let mut nets = GeneratorNets::new(GeneratorConfig::default(), 8).unwrap();
    // large random weights push the joint outputs into saturation
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v: Vec<f64> = nets.params.flat_values().iter().map(|x| 3.0 * x + rng.random_range(-0.05..0.05)).collect();
    nets.params.set_flat_values(&v);
    let f = nets.encode_object(box_object().cloud()).unwrap();
    let zs = standard_normal_rows(1000, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let gs = nets.decode_batch(&h, &zs, &f).unwrap();
    assert_eq!(gs.len(), 1000);
    let (lo, hi) = (h.lower_limits(), h.upper_limits());
    for g in &gs {
        assert!((g.pose.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        for j in 0..NUM_JOINTS {
            assert!(g.joints[j] >= lo[j] && g.joints[j] <= hi[j]);
        }
    }
    // single decode agrees with the batch, and is repeatable
    let one = nets.decode(&h, &zs[7], &f).unwrap();
    assert_eq!(one, gs[7]);
    assert_eq!(one, nets.decode(&h, &zs[7], &f).unwrap());
}

#[test]
fn degenerate_quaternion_is_reported() {
    let h = model();
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    // decoder output layer: zero weights, bias cancelling the identity offset
    let last = nets.params.params.len() - 1;
    let (wi, bi) = (last - 1, last);
    let (r, c) = nets.params.params[wi].value.shape();
    nets.params.params[wi].value = Tensor::zeros(r, c);
    nets.params.params[bi].value.data_mut()[3] = -1.0;
    let f = nets.encode_object(sphere_object().cloud()).unwrap();
    assert!(matches!(nets.decode(&h, &[0.0; 4], &f), Err(Error::DegenerateRotation(_))));
}

#[test]
fn sampling_is_seeded() {
    let h = model();
    let nets = GeneratorNets::new(small_config(), 1).unwrap();
    let o = sphere_object();
    assert!(nets.sample_grasps(&h, o.cloud(), 0, 0).unwrap().is_empty());
    let a = nets.sample_grasps(&h, o.cloud(), 16, 42).unwrap();
    assert_eq!(a, nets.sample_grasps(&h, o.cloud(), 16, 42).unwrap());
    assert_ne!(a, nets.sample_grasps(&h, o.cloud(), 16, 43).unwrap());
}

#[test]
fn sampling_time_per_grasp() {
    let h = model();
    let nets = GeneratorNets::new(GeneratorConfig::default(), 1).unwrap();
    let o = sphere_object();
    let start = Instant::now();
    let gs = nets.sample_grasps(&h, o.cloud(), 360, 0).unwrap();
    let per = start.elapsed().as_secs_f64() / 360.0;
    assert_eq!(gs.len(), 360);
    eprintln!("mean sampling time per grasp: {:.3} ms", per * 1e3);
}

#[test]
fn latent_interpolation_is_continuous() {
    let h = model();
    let mut nets = GeneratorNets::new(GeneratorConfig::default(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<f64> = nets.params.flat_values().iter().map(|x| x + rng.random_range(-0.02..0.02)).collect();
    nets.params.set_flat_values(&v);
    let f = nets.encode_object(sphere_object().cloud()).unwrap();
    let (a, b) = ([-2.0, 1.0, 0.5, -1.0], [2.0, -1.5, 1.0, 1.5]);
    let zs: Vec<Vec<f64>> = (0..=50)
        .map(|i| {
            let t = i as f64 / 50.0;
            (0..4).map(|k| a[k] + t * (b[k] - a[k])).collect()
        })
        .collect();
    let gs = nets.decode_batch(&h, &zs, &f).unwrap();
    let jumps: Vec<f64> = gs
        .windows(2)
        .map(|w| {
            let (x, y) = (w[0].to_vector(), w[1].to_vector());
            x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let mean = jumps.iter().sum::<f64>() / jumps.len() as f64;
    let max = jumps.iter().copied().fold(0.0, f64::max);
    assert!(mean > 0.0);
    assert!(max < 10.0 * mean, "max {max}, mean {mean}");
}

#[test]
fn checkpoint_round_trip() {
    let nets = GeneratorNets::new(small_config(), 4).unwrap();
    let back = GeneratorNets::from_checkpoint(&Checkpoint::from_bytes(&nets.to_checkpoint().to_bytes()).unwrap()).unwrap();
    assert_eq!(back, nets);
    let wrong = Checkpoint::new(r#"{"kind":"residual-net"}"#, vec![]);
    assert!(matches!(GeneratorNets::from_checkpoint(&wrong), Err(Error::Checkpoint(_))));
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let h = model();
    let objects = vec![sphere_object()];
    let samples = samples_for(&h, &objects, 4, 0);
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    let before = nets.params.flat_values();
    let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
    train(&h, &objects, &samples, &[], &LossWeights::zero(), &cfg, &mut nets, |_, _| Ok(())).unwrap();
    assert_eq!(nets.params.flat_values(), before);
}

#[test]
fn single_sample_overfits() {
    let h = model();
    let objects = vec![box_object()];
    // a hovering, barely closed hand: nothing penetrates, so every term
    // agrees with reconstructing it
    let g = grasps_at(&h, &objects[0], 64, 3, 0.02, 0.0..0.2)
        .into_iter()
        .find(|g| interpenetration_loss(&h, &objects[0].cloud().points, &h.forward_kinematics(g).unwrap()) == 0.0)
        .unwrap();
    let gt = GroundTruth::new(&h, g, &objects[0].surface, 0.02).unwrap();
    assert!(!gt.contacts.object_contacts.is_empty());
    let samples = vec![GenSample { object: 0, gt: Arc::new(gt) }];
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 1, deterministic_latent: true, ..TrainConfig::default() };
    let start = Instant::now();
    // the signed contact terms are unbounded below (sinking into the object
    // lowers them), so they would pull the optimum away from the sample
    let w = LossWeights { o: 0.0, h: 0.0, ..LossWeights::default() };
    let log = train(&h, &objects, &samples, &[], &w, &cfg, &mut nets, |_, _| Ok(())).unwrap();
    let rec = |b: &LossBreakdown| w.v * b.v + w.theta * b.theta;
    let (first, last) = (rec(&log[0].train), rec(&log.last().unwrap().train));
    eprintln!("reconstruction {first} -> {last} in {:?}", start.elapsed());
    assert!(last <= 0.1 * first, "{first} -> {last}");
}

#[test]
fn toy_training_lowers_loss_and_resumes_bit_identically() {
    let h = model();
    let objects = vec![box_object()];
    let samples = samples_for(&h, &objects, 200, 7);
    let cfg = TrainConfig { epochs: 50, batch_size: 32, ..TrainConfig::default() };
    let w = LossWeights::default();
    let start = Instant::now();
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    let mut snapshot = None;
    let log = train(&h, &objects, &samples, &[], &w, &cfg, &mut nets, |e, n| {
        if e.epoch == 24 {
            snapshot = Some(n.to_checkpoint().to_bytes());
        }
        Ok(())
    })
    .unwrap();
    eprintln!("toy: {} -> {} in {:?}", log[0].train.total, log[49].train.total, start.elapsed());
    assert!(log[49].train.total < log[0].train.total);

    let mut resumed = GeneratorNets::from_checkpoint(&Checkpoint::from_bytes(&snapshot.unwrap()).unwrap()).unwrap();
    let tail = train(&h, &objects, &samples, &[], &w, &cfg, &mut resumed, |_, _| Ok(())).unwrap();
    assert_eq!(tail.len(), 25);
    assert_eq!(tail, log[25..].to_vec());
    assert_eq!(resumed.params, nets.params);
}

#[test]
fn plateau_divides_learning_rate() {
    let cfg = TrainConfig::default();
    let mut s = Schedule { lr: 0.002, best: f64::INFINITY, since_best: 0 };
    s.observe(1.0, &cfg);
    for _ in 0..9 {
        s.observe(0.9995, &cfg);
    }
    assert_eq!(s.lr, 0.002);
    s.observe(0.9995, &cfg);
    assert!((s.lr - 0.0002).abs() < 1e-15);
    s.observe(0.5, &cfg);
    assert_eq!((s.best, s.since_best), (0.5, 0));
}

#[test]
fn validation_split_drives_the_schedule() {
    let h = model();
    let objects = vec![sphere_object()];
    let all = samples_for(&h, &objects, 6, 2);
    let (train_set, val) = all.split_at(4);
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let log = train(&h, &objects, train_set, val, &LossWeights::default(), &cfg, &mut nets, |_, _| Ok(())).unwrap();
    let v = log[1].validation.unwrap();
    assert_eq!(nets.schedule.unwrap().best.min(log[0].validation.unwrap().total), nets.schedule.unwrap().best);
    assert!(v.total.is_finite());
}

#[test]
fn bad_sample_index_is_rejected() {
    let h = model();
    let objects = vec![sphere_object()];
    let mut samples = samples_for(&h, &objects, 1, 0);
    samples[0].object = 3;
    let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
    let r = train(&h, &objects, &samples, &[], &LossWeights::default(), &TrainConfig::default(), &mut nets, |_, _| Ok(()));
    assert!(matches!(r, Err(Error::Argument(_))));
}

#[test]
fn poisoned_weight_aborts_training_naming_the_term() {
    let h = model();
    let objects = vec![sphere_object()];
    let samples = samples_for(&h, &objects, 2, 0);
    for name in ["encoder.0.w", "decoder.0.w"] {
        let mut nets = GeneratorNets::new(small_config(), 0).unwrap();
        let i = nets.params.params.iter().position(|p| p.name == name).unwrap();
        nets.params.params[i].value.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let r = train(&h, &objects, &samples, &[], &LossWeights::default(), &cfg, &mut nets, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::NonFinite { .. })), "{name}: {r:?}");
    }
}

#[test]
fn non_finite_checkpoint_is_rejected() {
    let nets = GeneratorNets::new(small_config(), 0).unwrap();
    let mut ck = nets.to_checkpoint();
    let (_, t) = ck.tensors.iter_mut().find(|(n, _)| n == "encoder.0.w").unwrap();
    t.data_mut()[0] = f64::INFINITY;
    assert!(matches!(GeneratorNets::from_checkpoint(&ck), Err(Error::NonFinite { .. })));
}
