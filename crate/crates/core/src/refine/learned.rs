use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Checkpoint, Mlp, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::SurfaceModel;
use crate::handkin::{clamp_joints, Grasp, HandModel, GRASP_DIM, NUM_GRASP_POINTS, NUM_JOINTS, TANGENT_DIM};
use crate::losses::{refinement_loss, LossBreakdown, LossWeights, CONTACT_ENERGY_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualNetConfig {
    pub hidden: Vec<usize>,
    /// Length of the object feature appended to the input.
    pub feature_dim: usize,
}

impl Default for ResidualNetConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 128], feature_dim: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub contact_threshold: f64,
}

impl Default for ResidualTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, lr: 1e-3, seed: 0, contact_threshold: CONTACT_ENERGY_THRESHOLD }
    }
}

/// MLP `(grasp 27 ‖ 50 grasp-point distances ‖ object feature) → Δg (26)`.
/// The output layer starts at zero, so an untrained net is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub config: ResidualNetConfig,
    pub params: ParamSet,
    mlp: Mlp,
    /// Training epochs completed.
    pub epochs_done: usize,
}

/// One coarse grasp to learn a correction for.
#[derive(Debug, Clone)]
pub struct ResidualSample {
    pub grasp: Grasp,
    pub object: Arc<SurfaceModel>,
    pub feature: Vec<f64>,
}

const META_KIND: &str = "residual-net";

impl ResidualNet {
    pub fn new(config: ResidualNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut sizes = vec![GRASP_DIM + NUM_GRASP_POINTS + config.feature_dim];
        sizes.extend(&config.hidden);
        sizes.push(TANGENT_DIM);
        let mlp = Mlp::new(&mut params, "residual", &sizes, &mut rng)?;
        mlp.zero_output(&mut params);
        Ok(Self { config, params, mlp, epochs_done: 0 })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": META_KIND,
            "config": self.config,
            "epochs_done": self.epochs_done,
            "adam_step": self.params.step,
        });
        Checkpoint::new(meta.to_string(), self.params.to_named(true))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: serde_json::Value =
            serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta["kind"] != META_KIND {
            return Err(Error::Checkpoint(format!("expected a {META_KIND} checkpoint, found {}", meta["kind"])));
        }
        let config: ResidualNetConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad residual-net config: {e}")))?;
        let mut net = Self::new(config, 0)?;
        net.params.load_named(&ck.tensors)?;
        net.params.step = meta["adam_step"].as_u64().unwrap_or(0);
        net.epochs_done = meta["epochs_done"].as_u64().unwrap_or(0) as usize;
        Ok(net)
    }

    fn input(&self, grasp: &Grasp, distances: &[f64], feature: &[f64]) -> Result<Tensor> {
        if distances.len() != NUM_GRASP_POINTS || feature.len() != self.config.feature_dim {
            return Err(Error::arg(format!(
                "residual net expects {NUM_GRASP_POINTS} distances and a {}-dim feature, got {} and {}",
                self.config.feature_dim,
                distances.len(),
                feature.len()
            )));
        }
        let mut x = grasp.to_vector().to_vec();
        x.extend_from_slice(distances);
        x.extend_from_slice(feature);
        Ok(Tensor::row(&x))
    }

    /// Records the forward pass; returns `Δg` (`1×26`).
    pub fn forward(&self, tape: &Tape, vars: &[Var], grasp: &Grasp, distances: &[f64], feature: &[f64]) -> Result<Var> {
        let x = tape.leaf(self.input(grasp, distances, feature)?);
        self.mlp.forward(tape, vars, x)
    }

    pub fn predict(&self, grasp: &Grasp, distances: &[f64], feature: &[f64]) -> Result<[f64; TANGENT_DIM]> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let d = self.forward(&tape, &vars, grasp, distances, feature)?;
        let mut out = [0.0; TANGENT_DIM];
        out.copy_from_slice(tape.value(d).data());
        Ok(out)
    }
}

/// Signed object distance at each of the 50 grasp points.
pub fn grasp_point_distances(model: &HandModel, grasp: &Grasp, object: &SurfaceModel) -> Result<Vec<f64>> {
    let hand = model.forward_kinematics(grasp)?;
    hand.grasp_points.iter().map(|p| object.signed_distance(p)).collect()
}

/// `∂(raw grasp)/∂Δ` of the first-order composition: translation and joints
/// add, the rotation becomes `q + ½ (0, ω) ⊗ q` (renormalized downstream).
fn composition_matrix(g: &Grasp) -> Tensor {
    let q = g.pose.rotation.quaternion();
    let (w, v) = (q.w, q.vector());
    let mut m = Tensor::zeros(TANGENT_DIM, GRASP_DIM);
    for i in 0..3 {
        m.set(i, i, 1.0);
        // (0, e_i) ⊗ (w, v) = (−v_i, w e_i + e_i × v)
        let e = crate::geometry::Vec3::ith(i, 1.0);
        let c = e.cross(&v);
        m.set(3 + i, 3, -0.5 * v[i]);
        for k in 0..3 {
            m.set(3 + i, 4 + k, 0.5 * (w * e[k] + c[k]));
        }
    }
    for j in 0..NUM_JOINTS {
        m.set(6 + j, 7 + j, 1.0);
    }
    m
}

/// Applies a tangent update with the same composition the network is
/// trained through; joints are clamped to limits.
pub fn apply_delta(model: &HandModel, grasp: &Grasp, delta: &[f64]) -> Result<Grasp> {
    if delta.len() != TANGENT_DIM {
        return Err(Error::arg(format!("Δg must have {TANGENT_DIM} entries, got {}", delta.len())));
    }
    let m = composition_matrix(grasp);
    let base = grasp.to_vector();
    let raw: Vec<f64> = (0..GRASP_DIM).map(|c| base[c] + (0..TANGENT_DIM).map(|r| delta[r] * m.get(r, c)).sum::<f64>()).collect();
    let g = Grasp::from_slice(&raw)?;
    Ok(Grasp::new(g.pose, clamp_joints(model, &g.joints)))
}

pub(crate) fn compose_on_tape(tape: &Tape, model: &HandModel, grasp: &Grasp, delta: Var) -> Result<Var> {
    let m = tape.leaf(composition_matrix(grasp));
    let b = tape.leaf(Tensor::row(&grasp.to_vector()));
    let raw = tape.linear(delta, m, b)?;
    let lo = model.lower_limits();
    let hi = model.upper_limits();
    let value = (*tape.value(raw)).clone();
    let mut out = value.clone();
    let mut pass = vec![true; GRASP_DIM];
    for j in 0..NUM_JOINTS {
        let x = value.get(0, 7 + j);
        out.set(0, 7 + j, x.max(lo[j]).min(hi[j]));
        pass[7 + j] = x >= lo[j] && x <= hi[j];
    }
    Ok(tape.custom("clamp_joints", &[raw], out, move |adj| {
        vec![Tensor::from_fn(1, GRASP_DIM, |_, c| if pass[c] { adj.get(0, c) } else { 0.0 })]
    }))
}

/// `iterations` network passes, each re-reading the grasp-point distances.
pub fn refine_learned(
    model: &HandModel,
    grasp: &Grasp,
    object: &SurfaceModel,
    net: &ResidualNet,
    feature: &[f64],
    iterations: usize,
) -> Result<Grasp> {
    let mut g = Grasp::new(grasp.pose, clamp_joints(model, &grasp.joints));
    for _ in 0..iterations {
        let d = grasp_point_distances(model, &g, object)?;
        let delta = net.predict(&g, &d, feature)?;
        g = apply_delta(model, &g, &delta)?;
    }
    Ok(g)
}

fn sample_gradient(
    model: &Arc<HandModel>,
    net: &ResidualNet,
    s: &ResidualSample,
    weights: &LossWeights,
    t: f64,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let tape = Tape::new();
    let vars = net.params.bind(&tape);
    let d = grasp_point_distances(model, &s.grasp, &s.object)?;
    let delta = net.forward(&tape, &vars, &s.grasp, &d, &s.feature)?;
    let out = compose_on_tape(&tape, model, &s.grasp, delta)?;
    let (root, b) = refinement_loss(&tape, model, out, &s.grasp, &s.object, weights, t)?;
    let grads = tape.backward(root)?;
    Ok((b, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Trains the residual net to minimize the refinement objective at its
/// output grasp, anchored at the input grasp. Continues from
/// `net.epochs_done` up to `cfg.epochs`; `on_epoch` sees every finished
/// epoch's mean breakdown (e.g. to log or checkpoint). Batches are shuffled
/// by a per-epoch stream of the seed, so resuming is bit-identical to an
/// uninterrupted run.
pub fn train_residual(
    model: &Arc<HandModel>,
    samples: &[ResidualSample],
    weights: &LossWeights,
    cfg: &ResidualTrainConfig,
    net: &mut ResidualNet,
    mut on_epoch: impl FnMut(usize, &LossBreakdown, &ResidualNet) -> Result<()>,
) -> Result<Vec<LossBreakdown>> {
    if samples.is_empty() {
        return Err(Error::arg("residual training needs at least one sample"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch_size and lr must be positive".into()));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut log = Vec::new();
    while net.epochs_done < cfg.epochs {
        let epoch = net.epochs_done;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut seen = Vec::with_capacity(samples.len());
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_gradient(model, net, &samples[i], weights, cfg.contact_threshold))
                .collect::<Result<Vec<_>>>()?;
            net.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for (b, grads) in &results {
                seen.push(*b);
                for (p, g) in net.params.params.iter_mut().zip(grads) {
                    for (a, x) in p.grad.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * x;
                    }
                }
            }
            adam.step(&mut net.params);
            if let Some(name) = net.params.first_non_finite() {
                return Err(Error::NonFinite { term: format!("parameter `{name}`") });
            }
        }
        net.epochs_done += 1;
        let mean = LossBreakdown::mean(&seen);
        on_epoch(epoch, &mean, net)?;
        log.push(mean);
    }
    Ok(log)
}
