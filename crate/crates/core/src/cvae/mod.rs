//! Conditional variational grasp generator.
//!
//! A shared per-point MLP with max-pooling turns a 2048-point object cloud
//! into a feature `F^o`; a grasp MLP turns a grasp into `F^h`. The encoder
//! maps `F^o ‖ F^h` to a Gaussian over the latent space and the decoder maps
//! `F^o ‖ z` back to a grasp. Object clouds and grasps live in the
//! object-centered frame (see [`prepare_object`]).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Checkpoint, Mlp, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_indices, PointCloud, Pose, SurfaceModel, Vec3};
use crate::handkin::{Grasp, HandModel, GRASP_DIM, NUM_JOINTS};
use crate::losses::{generator_loss, GroundTruth, LossBreakdown, LossWeights};

/// Points per object cloud fed to the feature encoder.
pub const NUM_POINTS: usize = 2048;
/// Positions enter the networks in decimeters and the decoder's translation
/// output is read in decimeters, keeping activations near unit scale.
pub const POSITION_SCALE: f64 = 10.0;
/// Dense surface samples drawn from a mesh before farthest-point sampling.
const MESH_SAMPLES: usize = 4 * NUM_POINTS;
const META_KIND: &str = "generator";
/// Samples whose gradients are held in memory at once.
const GRADIENT_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Per-point layer widths after the 3-d input.
    pub point_layers: Vec<usize>,
    /// Grasp feature widths after the 27-d input.
    pub grasp_layers: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            point_layers: vec![64, 128, 256],
            grasp_layers: vec![128, 256],
            encoder_hidden: vec![256],
            decoder_hidden: vec![256, 128],
            latent_dim: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.point_layers.is_empty() || self.grasp_layers.is_empty() {
            return Err(Error::Config("point_layers and grasp_layers need at least one width".into()));
        }
        let all = [&self.point_layers, &self.grasp_layers, &self.encoder_hidden, &self.decoder_hidden];
        if all.iter().any(|l| l.contains(&0)) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn object_dim(&self) -> usize {
        *self.point_layers.last().unwrap()
    }

    fn grasp_dim(&self) -> usize {
        *self.grasp_layers.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without a relative improvement above `plateau_tolerance`
    /// before the learning rate is multiplied by `lr_decay`.
    pub plateau_patience: usize,
    pub plateau_tolerance: f64,
    pub lr_decay: f64,
    /// Use `z = mu` (ε = 0): the model trains as a plain autoencoder.
    pub deterministic_latent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 512,
            lr: 0.002,
            seed: 0,
            plateau_patience: 10,
            plateau_tolerance: 1e-3,
            lr_decay: 0.1,
            deterministic_latent: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.plateau_patience == 0 {
            return Err(Error::Config("batch_size and plateau_patience must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || !(self.plateau_tolerance >= 0.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1] and plateau_tolerance be nonnegative".into()));
        }
        Ok(())
    }
}

/// Learning-rate schedule state carried across checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub best: f64,
    pub since_best: usize,
}

impl Schedule {
    fn observe(&mut self, loss: f64, cfg: &TrainConfig) {
        if loss < self.best - cfg.plateau_tolerance * self.best.abs() || !self.best.is_finite() {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= cfg.plateau_patience {
                self.lr *= cfg.lr_decay;
                self.since_best = 0;
                self.best = self.best.min(loss);
            }
        }
    }
}

/// Object prepared for the generator: centered surface whose cloud has
/// exactly [`NUM_POINTS`] oriented points.
#[derive(Debug, Clone)]
pub struct GenObject {
    pub surface: Arc<SurfaceModel>,
    /// World position of the object frame's origin.
    pub offset: Vec3,
}

impl GenObject {
    pub fn cloud(&self) -> &PointCloud {
        self.surface.cloud().expect("prepared objects carry a cloud")
    }

    /// World → object frame.
    pub fn to_local(&self, g: &Grasp) -> Grasp {
        Grasp::new(Pose::from_translation(-self.offset).compose(&g.pose), g.joints.clone())
    }

    /// Object frame → world.
    pub fn to_world(&self, g: &Grasp) -> Grasp {
        Grasp::new(Pose::from_translation(self.offset).compose(&g.pose), g.joints.clone())
    }
}

/// Centers `object` on its cloud centroid and resamples its cloud to
/// [`NUM_POINTS`] points by farthest-point sampling. Meshes without a
/// cloud are densely surface-sampled first; clouds with fewer points are
/// padded by repeating points, which max-pooling ignores.
pub fn prepare_object(object: &SurfaceModel, seed: u64) -> Result<GenObject> {
    let dense = match (object.cloud(), object.mesh()) {
        (Some(c), _) => c.clone(),
        (None, Some(m)) => m.sample_surface(MESH_SAMPLES, &mut ChaCha8Rng::seed_from_u64(seed)),
        _ => return Err(Error::arg("object has no geometry")),
    };
    if !dense.has_normals() {
        return Err(Error::UnsignedGeometry);
    }
    let mut idx = farthest_point_indices(&dense, NUM_POINTS, seed)?;
    let n = idx.len();
    for k in n..NUM_POINTS {
        idx.push(idx[k % n]);
    }
    let mut cloud = dense.select(&idx);
    let offset = cloud.center();
    let centered = match object.mesh() {
        Some(_) => object.transformed(&Pose::from_translation(-offset))?.with_cloud(cloud)?,
        None => SurfaceModel::from_cloud(cloud)?,
    };
    Ok(GenObject { surface: Arc::new(centered), offset })
}

/// One training pair: an object index and its ground-truth grasp (object
/// frame) with precomputed contact map.
#[derive(Debug, Clone)]
pub struct GenSample {
    pub object: usize,
    pub gt: Arc<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNets {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    point_mlp: Mlp,
    grasp_mlp: Mlp,
    encoder: Mlp,
    decoder: Mlp,
    /// Indices into `params` owned by `point_mlp`.
    point_params: Vec<usize>,
    pub epochs_done: usize,
    pub schedule: Option<Schedule>,
}

impl GeneratorNets {
    /// Fan-in uniform initialization from `seed`; the encoder's output layer
    /// starts at zero so an untrained encoder emits `mu = logvar = 0`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let k = config.latent_dim;
        let chain = |input: usize, rest: &[usize], out: Option<usize>| {
            let mut s = vec![input];
            s.extend_from_slice(rest);
            s.extend(out);
            s
        };
        let point_mlp = Mlp::new(&mut params, "point", &chain(3, &config.point_layers, None), &mut rng)?;
        let point_params: Vec<usize> = (0..params.len()).collect();
        let grasp_mlp = Mlp::new(&mut params, "grasp", &chain(GRASP_DIM, &config.grasp_layers, None), &mut rng)?;
        let enc_in = config.object_dim() + config.grasp_dim();
        let encoder = Mlp::new(&mut params, "encoder", &chain(enc_in, &config.encoder_hidden, Some(2 * k)), &mut rng)?;
        encoder.zero_output(&mut params);
        let dec_in = config.object_dim() + k;
        let decoder = Mlp::new(&mut params, "decoder", &chain(dec_in, &config.decoder_hidden, Some(GRASP_DIM)), &mut rng)?;
        Ok(Self { config, params, point_mlp, grasp_mlp, encoder, decoder, point_params, epochs_done: 0, schedule: None })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": META_KIND,
            "config": self.config,
            "epochs_done": self.epochs_done,
            "adam_step": self.params.step,
            "schedule": self.schedule,
        });
        Checkpoint::new(meta.to_string(), self.params.to_named(true))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: serde_json::Value =
            serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta["kind"] != META_KIND {
            return Err(Error::Checkpoint(format!("expected a {META_KIND} checkpoint, found {}", meta["kind"])));
        }
        let config: GeneratorConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad generator config: {e}")))?;
        let mut nets = Self::new(config, 0)?;
        nets.params.load_named(&ck.tensors)?;
        nets.params.step = meta["adam_step"].as_u64().unwrap_or(0);
        nets.epochs_done = meta["epochs_done"].as_u64().unwrap_or(0) as usize;
        nets.schedule = serde_json::from_value(meta["schedule"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad schedule: {e}")))?;
        Ok(nets)
    }

    // --- tape-level passes ------------------------------------------------

    /// `F^o` (`1×256`) of a cloud with exactly [`NUM_POINTS`] points.
    pub fn object_feature_on(&self, tape: &Tape, vars: &[Var], cloud: &PointCloud) -> Result<Var> {
        if cloud.len() != NUM_POINTS {
            return Err(Error::arg(format!("object cloud must have {NUM_POINTS} points, got {}", cloud.len())));
        }
        let x = Tensor::from_fn(NUM_POINTS, 3, |r, c| cloud.points[r][c] * POSITION_SCALE);
        let h = self.point_mlp.forward(tape, vars, tape.leaf(x))?;
        tape.max_rows(h)
    }

    /// `(mu, logvar)`, each `1×k`.
    pub fn encode_on(&self, tape: &Tape, vars: &[Var], grasp: &Grasp, feature: Var) -> Result<(Var, Var)> {
        let mut x = grasp.to_vector().to_vec();
        for t in &mut x[..3] {
            *t *= POSITION_SCALE;
        }
        let fh = self.grasp_mlp.forward(tape, vars, tape.leaf(Tensor::row(&x)))?;
        let h = tape.concat_cols(&[feature, fh])?;
        let out = self.encoder.forward(tape, vars, h)?;
        let k = self.latent_dim();
        Ok((tape.slice_cols(out, 0, k)?, tape.slice_cols(out, k, 2 * k)?))
    }

    /// Raw grasp rows `n×27` for latent rows `z` (`n×k`) and a `1×256`
    /// feature. Translation is read in decimeters, the quaternion is offset
    /// by the identity (normalized downstream) and joints are squashed into
    /// their limits by `tanh`.
    pub fn decode_on(&self, tape: &Tape, vars: &[Var], model: &HandModel, z: Var, feature: Var) -> Result<Var> {
        let n = tape.value(z).rows();
        let f = tape.gather_rows(feature, &vec![0; n])?;
        let out = self.decoder.forward(tape, vars, tape.concat_cols(&[f, z])?)?;
        let t = tape.scale(tape.slice_cols(out, 0, 3)?, 1.0 / POSITION_SCALE);
        let q = tape.add_row(tape.slice_cols(out, 3, 7)?, tape.leaf(Tensor::row(&[1.0, 0.0, 0.0, 0.0])))?;
        let lo = model.lower_limits();
        let hi = model.upper_limits();
        let half: Vec<f64> = (0..NUM_JOINTS).map(|j| 0.5 * (hi[j] - lo[j])).collect();
        let mid: Vec<f64> = (0..NUM_JOINTS).map(|j| 0.5 * (hi[j] + lo[j])).collect();
        let j = tape.tanh(tape.slice_cols(out, 7, GRASP_DIM)?);
        let j = tape.add_row(tape.mul_row(j, tape.leaf(Tensor::row(&half)))?, tape.leaf(Tensor::row(&mid)))?;
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite { term: "decoder output".into() });
        }
        let qv = tape.value(q);
        for r in 0..n {
            let norm = qv.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                return Err(Error::DegenerateRotation(norm));
            }
        }
        tape.concat_cols(&[t, q, j])
    }

    // --- value-level API ---------------------------------------------------

    pub fn encode_object(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let f = self.object_feature_on(&tape, &vars, cloud)?;
        Ok(tape.value(f).data().to_vec())
    }

    pub fn encode_grasp(&self, grasp: &Grasp, feature: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_feature(feature)?;
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let (mu, logvar) = self.encode_on(&tape, &vars, grasp, tape.leaf(Tensor::row(feature)))?;
        Ok((tape.value(mu).data().to_vec(), tape.value(logvar).data().to_vec()))
    }

    pub fn decode(&self, model: &HandModel, z: &[f64], feature: &[f64]) -> Result<Grasp> {
        Ok(self.decode_batch(model, &[z.to_vec()], feature)?.remove(0))
    }

    pub fn decode_batch(&self, model: &HandModel, zs: &[Vec<f64>], feature: &[f64]) -> Result<Vec<Grasp>> {
        self.check_feature(feature)?;
        let k = self.latent_dim();
        if let Some(bad) = zs.iter().find(|z| z.len() != k) {
            return Err(Error::arg(format!("latent vectors must have {k} entries, got {}", bad.len())));
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let z = tape.leaf(Tensor::from_fn(zs.len(), k, |r, c| zs[r][c]));
        let raw = self.decode_on(&tape, &vars, model, z, tape.leaf(Tensor::row(feature)))?;
        let raw = tape.value(raw);
        (0..zs.len())
            .map(|r| {
                let g = Grasp::from_slice(raw.row_slice(r))?;
                Ok(Grasp::new(g.pose, crate::handkin::clamp_joints(model, &g.joints)))
            })
            .collect()
    }

    /// `n` grasps decoded from independent `z ~ N(0, I)` drawn from `seed`.
    pub fn sample_grasps(&self, model: &HandModel, cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<Grasp>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let feature = self.encode_object(cloud)?;
        let zs = standard_normal_rows(n, self.latent_dim(), &mut ChaCha8Rng::seed_from_u64(seed));
        self.decode_batch(model, &zs, &feature)
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        let d = self.config.object_dim();
        if feature.len() != d {
            return Err(Error::arg(format!("object feature must have {d} entries, got {}", feature.len())));
        }
        Ok(())
    }

    /// Loss and parameter gradients of one sample given its object feature;
    /// also returns the feature's adjoint.
    fn sample_gradient(
        &self,
        model: &Arc<HandModel>,
        object: &SurfaceModel,
        feature: &Tensor,
        gt: &GroundTruth,
        eps: &[f64],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Vec<Tensor>, Tensor)> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let f = tape.leaf(feature.clone());
        let (mu, logvar) = self.encode_on(&tape, &vars, &gt.grasp, f)?;
        if !(tape.value(mu).is_finite() && tape.value(logvar).is_finite()) {
            return Err(Error::NonFinite { term: "kl".into() });
        }
        let std = tape.exp(tape.scale(logvar, 0.5));
        let z = tape.add(mu, tape.mul(tape.leaf(Tensor::row(eps)), std)?)?;
        let raw = self.decode_on(&tape, &vars, model, z, f)?;
        let (root, b) = generator_loss(&tape, model, raw, mu, logvar, object, gt, weights)?;
        let grads = tape.backward(root)?;
        let pg = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.point_params.contains(&i) { Tensor::zeros(0, 0) } else { grads.wrt(v) })
            .collect();
        Ok((b, pg, grads.wrt(f)))
    }

    /// Mean loss over `samples` with `z = mu`.
    pub fn evaluate(
        &self,
        model: &Arc<HandModel>,
        objects: &[GenObject],
        samples: &[GenSample],
        weights: &LossWeights,
    ) -> Result<LossBreakdown> {
        let features = objects.iter().map(|o| self.encode_object(o.cloud())).collect::<Result<Vec<_>>>()?;
        let zero = vec![0.0; self.latent_dim()];
        let items = samples
            .par_iter()
            .map(|s| {
                let o = objects.get(s.object).ok_or_else(|| Error::arg("sample refers to a missing object"))?;
                let f = Tensor::row(&features[s.object]);
                Ok(self.sample_gradient(model, &o.surface, &f, &s.gt, &zero, weights)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossBreakdown::mean(&items))
    }
}

fn standard_normal_rows<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Trains `nets` from `nets.epochs_done` up to `cfg.epochs`. Each epoch
/// shuffles the samples and draws the reparameterization noise from a
/// per-epoch stream of `cfg.seed`, so resuming from a checkpoint is
/// bit-identical to an uninterrupted run. The learning rate drops by
/// `cfg.lr_decay` when the validation loss (training loss if `validation`
/// is empty) plateaus. `on_epoch` sees every finished epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Arc<HandModel>,
    objects: &[GenObject],
    samples: &[GenSample],
    validation: &[GenSample],
    weights: &LossWeights,
    cfg: &TrainConfig,
    nets: &mut GeneratorNets,
    mut on_epoch: impl FnMut(&EpochLog, &GeneratorNets) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("generator training needs at least one sample"));
    }
    if let Some(s) = samples.iter().chain(validation).find(|s| s.object >= objects.len()) {
        return Err(Error::arg(format!("sample refers to object {} of {}", s.object, objects.len())));
    }
    let k = nets.latent_dim();
    let mut schedule = nets.schedule.unwrap_or(Schedule { lr: cfg.lr, best: f64::INFINITY, since_best: 0 });
    let mut log = Vec::new();
    while nets.epochs_done < cfg.epochs {
        let epoch = nets.epochs_done;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let noise = if cfg.deterministic_latent {
            vec![vec![0.0; k]; samples.len()]
        } else {
            standard_normal_rows(samples.len(), k, &mut rng)
        };
        let adam = AdamConfig { lr: schedule.lr, ..AdamConfig::default() };
        let mut seen = Vec::with_capacity(samples.len());
        let mut cursor = 0;
        for batch in order.chunks(cfg.batch_size) {
            let eps = &noise[cursor..cursor + batch.len()];
            cursor += batch.len();
            nets.params.zero_grad();
            train_batch(model, objects, samples, batch, eps, weights, nets, &mut seen)?;
            adam.step(&mut nets.params);
            if let Some(name) = nets.params.first_non_finite() {
                return Err(Error::NonFinite { term: format!("parameter `{name}`") });
            }
        }
        let train = LossBreakdown::mean(&seen);
        let validation = if validation.is_empty() {
            None
        } else {
            Some(nets.evaluate(model, objects, validation, weights)?)
        };
        schedule.observe(validation.as_ref().unwrap_or(&train).total, cfg);
        nets.epochs_done += 1;
        nets.schedule = Some(schedule);
        let entry = EpochLog { epoch, lr: adam.lr, train, validation };
        on_epoch(&entry, nets)?;
        log.push(entry);
    }
    Ok(log)
}

/// Accumulates the mean gradient of one batch into `nets.params`.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &Arc<HandModel>,
    objects: &[GenObject],
    samples: &[GenSample],
    batch: &[usize],
    eps: &[Vec<f64>],
    weights: &LossWeights,
    nets: &mut GeneratorNets,
    seen: &mut Vec<LossBreakdown>,
) -> Result<()> {
    // object features are shared by every sample of the object; their tapes
    // stay alive until the summed feature adjoint is pulled back
    let mut tapes: BTreeMap<usize, (Tape, Vec<Var>, Var, Tensor)> = BTreeMap::new();
    for &i in batch {
        let o = samples[i].object;
        if let std::collections::btree_map::Entry::Vacant(e) = tapes.entry(o) {
            let tape = Tape::new();
            let vars = nets.params.bind(&tape);
            let f = nets.object_feature_on(&tape, &vars, objects[o].cloud())?;
            let zero = Tensor::zeros(1, tape.value(f).cols());
            e.insert((tape, vars, f, zero));
        }
    }
    let features: BTreeMap<usize, Tensor> = tapes.iter().map(|(&o, t)| (o, (*t.0.value(t.2)).clone())).collect();
    let scale = 1.0 / batch.len() as f64;
    let pairs: Vec<(usize, &Vec<f64>)> = batch.iter().copied().zip(eps).collect();
    for chunk in pairs.chunks(GRADIENT_CHUNK) {
        let results = chunk
            .par_iter()
            .map(|&(i, e)| {
                let s = &samples[i];
                nets.sample_gradient(model, &objects[s.object].surface, &features[&s.object], &s.gt, e, weights)
            })
            .collect::<Result<Vec<_>>>()?;
        for ((i, _), (b, grads, adj)) in chunk.iter().zip(results) {
            seen.push(b);
            for (p, g) in nets.params.params.iter_mut().zip(&grads) {
                if !g.is_empty() {
                    for (a, x) in p.grad.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * x;
                    }
                }
            }
            tapes.get_mut(&samples[*i].object).unwrap().3.add_assign(&adj);
        }
    }
    for (tape, vars, f, adj) in tapes.into_values() {
        let root = tape.sum(tape.mul(f, tape.leaf(adj))?);
        let grads = tape.backward(root)?;
        for &p in &nets.point_params {
            let g = grads.wrt(vars[p]);
            for (a, x) in nets.params.params[p].grad.data_mut().iter_mut().zip(g.data()) {
                *a += scale * x;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
