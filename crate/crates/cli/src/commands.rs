use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use graspgen_core::autodiff::Checkpoint;
use graspgen_core::cvae::{self, prepare_object, EpochLog, GenObject, GenSample, GeneratorNets};
use graspgen_core::evalsuite::{
    coverage_rate, evaluate_grasp, generate_dataset, load_taxonomies, penetration_metrics, read_records, success_rate,
    write_records, GraspRecord, Label, Taxonomy,
};
use graspgen_core::geometry::io::write_obj;
use graspgen_core::geometry::SurfaceModel;
use graspgen_core::handkin::{Grasp, HandModel};
use graspgen_core::losses::{GroundTruth, LossBreakdown};
use graspgen_core::refine::{
    refine_direct, refine_learned, train_residual, RefineMode, ResidualNet, ResidualSample,
};
use graspgen_core::Error;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{sub_seed, RunConfig};
use crate::objects::{load_object, load_object_dir, object_files, object_id};
use crate::Failure;

const TRAIN_LOG: &str = "train_log.csv";
const REFINER_LOG: &str = "refiner_log.csv";
/// Grasps timed for the per-grasp sampling time.
const TIMING_SAMPLES: usize = 360;

fn hand_model(cfg: &RunConfig) -> Result<Arc<HandModel>, Failure> {
    Ok(Arc::new(match &cfg.paths.hand {
        Some(p) => HandModel::load(p)?,
        None => HandModel::generic(),
    }))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::missing(what, path))
    }
}

fn load_generator(cfg: &RunConfig) -> Result<GeneratorNets, Failure> {
    let path = cfg.generator_checkpoint();
    require(&path, "generator checkpoint")?;
    Ok(GeneratorNets::from_checkpoint(&Checkpoint::load(&path)?)?)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

// --- gen-dataset ------------------------------------------------------------

#[derive(Serialize)]
struct TaxonomyCount {
    name: String,
    records: usize,
    stable: usize,
}

#[derive(Serialize)]
struct DatasetSummary {
    objects: Vec<String>,
    records: usize,
    stable: usize,
    stable_fraction: f64,
    taxonomies: BTreeMap<u8, TaxonomyCount>,
}

pub fn gen_dataset(cfg: &RunConfig) -> Result<(), Failure> {
    let model = hand_model(cfg)?;
    let taxonomies = match &cfg.paths.taxonomies {
        Some(p) => load_taxonomies(p)?,
        None => Taxonomy::shipped(),
    };
    let objects = load_object_dir(&cfg.paths.objects)?;
    if objects.is_empty() {
        return Err(Failure::input(format!("no readable objects in {}", cfg.paths.objects.display())));
    }
    let records = generate_dataset(
        &model,
        &objects,
        &taxonomies,
        cfg.samples_per_object,
        sub_seed(cfg.seed, "dataset"),
        &cfg.dataset,
    )?;
    if let Some(dir) = cfg.paths.dataset.parent() {
        create_dir(dir)?;
    }
    write_records(&cfg.paths.dataset, &records)?;

    let mut per: BTreeMap<u8, TaxonomyCount> = taxonomies
        .iter()
        .map(|t| (t.id, TaxonomyCount { name: t.name.clone(), records: 0, stable: 0 }))
        .collect();
    for r in &records {
        let c = per.entry(r.taxonomy).or_insert_with(|| TaxonomyCount { name: String::new(), records: 0, stable: 0 });
        c.records += 1;
        c.stable += r.label.is_stable() as usize;
    }
    let stable = records.iter().filter(|r| r.label.is_stable()).count();
    let summary = DatasetSummary {
        objects: objects.iter().map(|(id, _)| id.clone()).collect(),
        records: records.len(),
        stable,
        stable_fraction: success_rate(&records),
        taxonomies: per,
    };
    write_json(&cfg.paths.output.join("dataset_summary.json"), &summary)?;
    println!(
        "{} records on {} objects, {} stable ({:.1}%)",
        summary.records,
        summary.objects.len(),
        stable,
        100.0 * summary.stable_fraction
    );
    for (id, c) in &summary.taxonomies {
        println!("  taxonomy {id} {:<16} {:>6} records {:>6} stable", c.name, c.records, c.stable);
    }
    Ok(())
}

// --- shared loading -----------------------------------------------------------

/// Prepared objects for the ids in `ids` that can be loaded; missing or
/// unreadable ids are reported and left out.
fn prepare_objects(cfg: &RunConfig, ids: &BTreeSet<String>) -> Result<BTreeMap<String, (SurfaceModel, GenObject)>, Failure> {
    let files = object_files(&cfg.paths.objects)?;
    let mut out = BTreeMap::new();
    for id in ids {
        let Some(path) = files.get(id) else {
            warn!("object `{id}` is not in {}; its records are skipped", cfg.paths.objects.display());
            continue;
        };
        match load_object(path).and_then(|o| Ok((prepare_object(&o, sub_seed(cfg.seed, "prepare"))?, o))) {
            Ok((prepared, o)) => {
                out.insert(id.clone(), (o, prepared));
            }
            Err(e) => warn!("skipping object `{id}`: {e}"),
        }
    }
    Ok(out)
}

fn read_dataset(cfg: &RunConfig) -> Result<Vec<GraspRecord>, Failure> {
    require(&cfg.paths.dataset, "dataset")?;
    Ok(read_records(&cfg.paths.dataset)?)
}

/// Keeps the rows of an existing CSV log that precede `epochs_done`.
fn resumed_log(path: &Path, header: &str, epochs_done: usize) -> String {
    let mut text = format!("{header}\n");
    if let Ok(old) = std::fs::read_to_string(path) {
        for line in old.lines().skip(1) {
            let epoch = line.split(',').next().and_then(|f| f.parse::<usize>().ok());
            if epoch.is_some_and(|e| e < epochs_done) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    text
}

// --- train ----------------------------------------------------------------------

pub fn train(cfg: &RunConfig, resume: bool) -> Result<(), Failure> {
    let model = hand_model(cfg)?;
    let records = read_dataset(cfg)?;
    let ids: BTreeSet<String> = records.iter().filter(|r| r.label.is_stable()).map(|r| r.object_id.clone()).collect();
    let prepared = prepare_objects(cfg, &ids)?;
    let index: BTreeMap<&str, usize> = prepared.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let objects: Vec<GenObject> = prepared.values().map(|(_, p)| p.clone()).collect();

    let stable: Vec<(usize, Grasp)> = records
        .iter()
        .filter(|r| r.label.is_stable())
        .filter_map(|r| index.get(r.object_id.as_str()).map(|&i| (i, objects[i].to_local(&r.grasp))))
        .collect();
    if stable.is_empty() {
        return Err(Failure::input("the dataset has no stable records on loadable objects"));
    }
    let mut samples = stable
        .par_iter()
        .map(|(i, g)| {
            let gt = GroundTruth::new(&model, g.clone(), &objects[*i].surface, cfg.contact_threshold)?;
            Ok(GenSample { object: *i, gt: Arc::new(gt) })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let held_out = (samples.len() as f64 * cfg.validation_fraction).floor() as usize;
    let validation = split_off_validation(&mut samples, held_out, sub_seed(cfg.seed, "validation"));

    let ckpt = cfg.generator_checkpoint();
    let mut nets = if resume && ckpt.exists() {
        GeneratorNets::from_checkpoint(&Checkpoint::load(&ckpt)?)?
    } else {
        GeneratorNets::new(cfg.generator.clone(), sub_seed(cfg.seed, "generator-init"))?
    };
    if nets.config != cfg.generator {
        return Err(Failure::input("checkpoint widths differ from the configured generator"));
    }
    let train_cfg = cvae::TrainConfig { seed: sub_seed(cfg.seed, "generator-train"), ..cfg.train.clone() };
    let log_path = cfg.paths.output.join(TRAIN_LOG);
    let header = format!("epoch,lr,{},val_total", LossBreakdown::CSV_HEADER);
    let mut log = resumed_log(&log_path, &header, if resume { nets.epochs_done } else { 0 });
    write_atomic(&log_path, log.as_bytes())?;
    write_atomic(&ckpt, &nets.to_checkpoint().to_bytes())?;
    println!(
        "training on {} samples ({} held out) over {} objects, epochs {}..{}",
        samples.len(),
        validation.len(),
        objects.len(),
        nets.epochs_done,
        train_cfg.epochs
    );
    let mut io_error = None;
    let result = cvae::train(&model, &objects, &samples, &validation, &cfg.weights, &train_cfg, &mut nets, |e: &EpochLog, n| {
        let val = e.validation.map_or(String::new(), |v| v.total.to_string());
        let _ = writeln!(log, "{},{},{},{val}", e.epoch, e.lr, e.train.csv_row());
        info!("epoch {} total {}", e.epoch, e.train.total);
        let saved = write_atomic(&log_path, log.as_bytes()).and_then(|_| write_atomic(&ckpt, &n.to_checkpoint().to_bytes()));
        if let Err(f) = saved {
            io_error = Some(f);
            return Err(Error::Config("aborted: could not write training artifacts".into()));
        }
        Ok(())
    });
    if let Some(f) = io_error {
        return Err(f);
    }
    let entries = result?;
    if let (Some(first), Some(last)) = (entries.first(), entries.last()) {
        println!("loss {} (epoch {}) -> {} (epoch {})", first.train.total, first.epoch, last.train.total, last.epoch);
    }
    Ok(())
}

fn split_off_validation(samples: &mut Vec<GenSample>, n: usize, seed: u64) -> Vec<GenSample> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<usize> = order[..n].iter().copied().collect();
    let all = std::mem::take(samples);
    let mut validation = Vec::with_capacity(n);
    for (i, s) in all.into_iter().enumerate() {
        if held.contains(&i) {
            validation.push(s);
        } else {
            samples.push(s);
        }
    }
    validation
}

// --- train-refiner ----------------------------------------------------------------

pub fn train_refiner(cfg: &RunConfig, resume: bool) -> Result<(), Failure> {
    let model = hand_model(cfg)?;
    let generator = load_generator(cfg)?;
    let records = read_dataset(cfg)?;
    let ids: BTreeSet<String> = records.iter().map(|r| r.object_id.clone()).collect();
    let prepared = prepare_objects(cfg, &ids)?;
    if prepared.is_empty() {
        return Err(Failure::input("no dataset object could be loaded"));
    }
    let mut samples = Vec::new();
    for (id, (_, o)) in &prepared {
        let feature = generator.encode_object(o.cloud())?;
        let seed = sub_seed(cfg.seed, &format!("refiner-samples:{id}"));
        for g in generator.sample_grasps(&model, o.cloud(), cfg.refiner_samples_per_object, seed)? {
            samples.push(ResidualSample { grasp: g, object: o.surface.clone(), feature: feature.clone() });
        }
    }
    if samples.is_empty() {
        return Err(Failure::input("refiner_samples_per_object is 0"));
    }
    let ckpt = cfg.refiner_checkpoint();
    let mut net = if resume && ckpt.exists() {
        ResidualNet::from_checkpoint(&Checkpoint::load(&ckpt)?)?
    } else {
        ResidualNet::new(cfg.refiner.clone(), sub_seed(cfg.seed, "refiner-init"))?
    };
    let train_cfg = graspgen_core::refine::ResidualTrainConfig {
        seed: sub_seed(cfg.seed, "refiner-train"),
        ..cfg.refiner_train.clone()
    };
    let log_path = cfg.paths.output.join(REFINER_LOG);
    let header = format!("epoch,{}", LossBreakdown::CSV_HEADER);
    let mut log = resumed_log(&log_path, &header, if resume { net.epochs_done } else { 0 });
    write_atomic(&log_path, log.as_bytes())?;
    write_atomic(&ckpt, &net.to_checkpoint().to_bytes())?;
    println!("training the refiner on {} generator samples, epochs {}..{}", samples.len(), net.epochs_done, train_cfg.epochs);
    let mut io_error = None;
    let result = train_residual(&model, &samples, &cfg.weights, &train_cfg, &mut net, |epoch, b, n| {
        let _ = writeln!(log, "{epoch},{}", b.csv_row());
        let saved = write_atomic(&log_path, log.as_bytes()).and_then(|_| write_atomic(&ckpt, &n.to_checkpoint().to_bytes()));
        if let Err(f) = saved {
            io_error = Some(f);
            return Err(Error::Config("aborted: could not write training artifacts".into()));
        }
        Ok(())
    });
    if let Some(f) = io_error {
        return Err(f);
    }
    let entries = result?;
    if let (Some(first), Some(last)) = (entries.first(), entries.last()) {
        println!("refinement loss {} -> {}", first.total, last.total);
    }
    Ok(())
}

// --- sample-refine ------------------------------------------------------------------

/// Quasi-static score of a grasp closed with the universal synergy. A
/// grasp whose palm starts inside the object is unstable with no contacts.
fn score(model: &HandModel, object_id: &str, g: &Grasp, object: &SurfaceModel, cfg: &RunConfig) -> graspgen_core::Result<GraspRecord> {
    let universal = Taxonomy::universal();
    let (label, contacts, epsilon) = match evaluate_grasp(model, g, &universal, object, &cfg.dataset.eval) {
        Ok(e) => (if e.stable { Label::Stable } else { Label::Unstable }, e.closure.contacts, e.epsilon),
        Err(Error::InvalidStart(_)) => (Label::Unstable, Vec::new(), 0.0),
        Err(e) => return Err(e),
    };
    Ok(GraspRecord { object_id: object_id.to_string(), grasp: g.clone(), taxonomy: universal.id, label, contacts, epsilon })
}

/// Penetration depth (cm) and volume (cm³); `None` without a mesh.
fn penetration(model: &HandModel, g: &Grasp, object: &SurfaceModel) -> graspgen_core::Result<Option<(f64, f64)>> {
    if object.mesh().is_none() {
        return Ok(None);
    }
    let hand = model.forward_kinematics(g)?;
    penetration_metrics(model, &hand, object).map(Some)
}

#[derive(Serialize)]
struct SampleSummary {
    object: String,
    grasps: usize,
    iterations: usize,
    mode: RefineMode,
    stable: usize,
    success_rate: f64,
    mean_penetration_depth_cm: Option<f64>,
    mean_penetration_volume_cm3: Option<f64>,
    refinement_failures: usize,
}

pub fn sample_refine(
    cfg: &RunConfig,
    object_path: &Path,
    n: usize,
    iterations: Option<usize>,
    export_scenes: bool,
) -> Result<(), Failure> {
    let model = hand_model(cfg)?;
    let generator = load_generator(cfg)?;
    let iterations = iterations.unwrap_or(cfg.refine.iterations);
    let refine_cfg = graspgen_core::refine::RefineConfig { iterations, ..cfg.refine };
    let refiner = if refine_cfg.mode == RefineMode::Learned && iterations > 0 {
        let path = cfg.refiner_checkpoint();
        require(&path, "refiner checkpoint")?;
        Some(ResidualNet::from_checkpoint(&Checkpoint::load(&path)?)?)
    } else {
        None
    };
    require(object_path, "object file")?;
    let id = object_id(object_path)?;
    let object = load_object(object_path)?;
    let prepared = prepare_object(&object, sub_seed(cfg.seed, "prepare"))?;

    let start = Instant::now();
    let coarse = generator.sample_grasps(&model, prepared.cloud(), n, sub_seed(cfg.seed, "sample"))?;
    if n > 0 {
        println!("sampling time {:.3} ms per grasp", 1e3 * start.elapsed().as_secs_f64() / n as f64);
    }
    let feature = match refiner {
        Some(_) => generator.encode_object(prepared.cloud())?,
        None => Vec::new(),
    };

    let results = coarse
        .par_iter()
        .map(|g| -> graspgen_core::Result<(GraspRecord, Option<(f64, f64)>, bool)> {
            let (local, failed) = match &refiner {
                Some(net) => (refine_learned(&model, g, &prepared.surface, net, &feature, iterations)?, false),
                None => {
                    let r = refine_direct(&model, g, &prepared.surface, &cfg.weights, &refine_cfg)?;
                    if let Some(e) = &r.failure {
                        warn!("refinement stopped early: {e}");
                    }
                    (r.grasp, r.failure.is_some())
                }
            };
            let world = prepared.to_world(&local);
            Ok((score(&model, &id, &world, &object, cfg)?, penetration(&model, &world, &object)?, failed))
        })
        .collect::<graspgen_core::Result<Vec<_>>>()?;

    let out = &cfg.paths.output;
    create_dir(out)?;
    let records: Vec<GraspRecord> = results.iter().map(|r| r.0.clone()).collect();
    write_records(&out.join("grasps.txt"), &records)?;
    let mut csv = String::from("index,label,epsilon,contacts,penetration_depth_cm,penetration_volume_cm3\n");
    for (i, (r, p, _)) in results.iter().enumerate() {
        let (d, v) = p.map_or((String::new(), String::new()), |(d, v)| (d.to_string(), v.to_string()));
        let _ = writeln!(csv, "{i},{},{},{},{d},{v}", r.label, r.epsilon, r.contacts.len());
    }
    write_atomic(&out.join("scores.csv"), csv.as_bytes())?;
    let summary = SampleSummary {
        object: id.clone(),
        grasps: records.len(),
        iterations,
        mode: refine_cfg.mode,
        stable: records.iter().filter(|r| r.label.is_stable()).count(),
        success_rate: success_rate(&records),
        mean_penetration_depth_cm: mean(results.iter().filter_map(|r| r.1.map(|p| p.0))),
        mean_penetration_volume_cm3: mean(results.iter().filter_map(|r| r.1.map(|p| p.1))),
        refinement_failures: results.iter().filter(|r| r.2).count(),
    };
    write_json(&out.join("sample_summary.json"), &summary)?;
    if export_scenes {
        export(&model, out, &object, &records)?;
    }
    println!(
        "{}: {} grasps, {} stable ({:.1}%), mean penetration {} cm",
        id,
        summary.grasps,
        summary.stable,
        100.0 * summary.success_rate,
        summary.mean_penetration_depth_cm.map_or("n/a".into(), |d| format!("{d:.4}"))
    );
    Ok(())
}

/// `scenes/object.obj` plus one hand OBJ per grasp, in the same frame.
fn export(model: &HandModel, out: &Path, object: &SurfaceModel, records: &[GraspRecord]) -> Result<(), Failure> {
    let dir = out.join("scenes");
    create_dir(&dir)?;
    if let Some(m) = object.mesh() {
        write_obj(&dir.join("object.obj"), m)?;
    }
    for (i, r) in records.iter().enumerate() {
        let hand = model.forward_kinematics(&r.grasp)?;
        write_obj(&dir.join(format!("grasp_{i:04}.obj")), &hand.to_trimesh())?;
    }
    Ok(())
}

// --- eval -------------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub records: usize,
    pub skipped_records: usize,
    pub skipped_ids: Vec<String>,
    pub success_rate: f64,
    pub coverage_rate: Option<f64>,
    pub positives: usize,
    pub penetration_grasps: usize,
    pub mean_penetration_depth_cm: Option<f64>,
    pub mean_penetration_volume_cm3: Option<f64>,
}

pub fn eval(cfg: &RunConfig, grasps: Option<PathBuf>, positives: Option<PathBuf>) -> Result<(), Failure> {
    let model = hand_model(cfg)?;
    let path = grasps.unwrap_or_else(|| cfg.paths.dataset.clone());
    require(&path, "grasp records")?;
    let all = read_records(&path)?;
    let positives = match positives {
        Some(p) => {
            require(&p, "positives")?;
            Some(read_records(&p)?)
        }
        None => None,
    };

    let files = object_files(&cfg.paths.objects)?;
    let mut wanted: BTreeSet<&str> = all.iter().map(|r| r.object_id.as_str()).collect();
    if let Some(p) = &positives {
        wanted.extend(p.iter().map(|r| r.object_id.as_str()));
    }
    let mut objects: BTreeMap<String, SurfaceModel> = BTreeMap::new();
    let mut skipped_ids = Vec::new();
    for id in wanted {
        match files.get(id).map(|p| load_object(p)) {
            Some(Ok(o)) => {
                objects.insert(id.to_string(), o);
            }
            Some(Err(e)) => {
                warn!("object `{id}` unreadable: {e}");
                skipped_ids.push(id.to_string());
            }
            None => skipped_ids.push(id.to_string()),
        }
    }
    if !skipped_ids.is_empty() {
        warn!("no usable object for ids {skipped_ids:?}; their records are skipped");
    }
    let kept: Vec<GraspRecord> = all.iter().filter(|r| objects.contains_key(&r.object_id)).cloned().collect();

    let pen = kept
        .par_iter()
        .map(|r| penetration(&model, &r.grasp, &objects[&r.object_id]))
        .collect::<graspgen_core::Result<Vec<_>>>()?;
    let pen: Vec<(f64, f64)> = pen.into_iter().flatten().collect();

    let (coverage, positive_count) = match &positives {
        Some(p) => {
            let pos: Vec<&GraspRecord> =
                p.iter().filter(|r| r.label.is_stable() && objects.contains_key(&r.object_id)).collect();
            (coverage(&kept, &pos)?, pos.len())
        }
        None => (None, 0),
    };

    let report = EvalReport {
        records: kept.len(),
        skipped_records: all.len() - kept.len(),
        skipped_ids,
        success_rate: success_rate(&kept),
        coverage_rate: coverage,
        positives: positive_count,
        penetration_grasps: pen.len(),
        mean_penetration_depth_cm: mean(pen.iter().map(|p| p.0)),
        mean_penetration_volume_cm3: mean(pen.iter().map(|p| p.1)),
    };
    write_json(&cfg.paths.output.join("eval_report.json"), &report)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("records            {} ({} skipped)", report.records, report.skipped_records);
    println!("success rate       {:.4}", report.success_rate);
    println!("coverage rate      {}", opt(report.coverage_rate));
    println!("penetration depth  {} cm", opt(report.mean_penetration_depth_cm));
    println!("penetration volume {} cm3", opt(report.mean_penetration_volume_cm3));
    if let Some(t) = sampling_time(cfg, &model, objects.values().next())? {
        println!("sampling time      {:.3} ms per grasp", 1e3 * t);
    }
    Ok(())
}

/// Covered positives over all positives, grouped by object; `None` when
/// there are no positives.
fn coverage(generated: &[GraspRecord], positives: &[&GraspRecord]) -> Result<Option<f64>, Failure> {
    if positives.is_empty() {
        warn!("no stable positives; coverage is undefined");
        return Ok(None);
    }
    let mut by_object: BTreeMap<&str, (Vec<Grasp>, Vec<Grasp>)> = BTreeMap::new();
    for r in generated {
        by_object.entry(&r.object_id).or_default().0.push(r.grasp.clone());
    }
    for r in positives {
        by_object.entry(&r.object_id).or_default().1.push(r.grasp.clone());
    }
    let mut covered = 0.0;
    for (gen, pos) in by_object.values() {
        if !pos.is_empty() {
            covered += coverage_rate(gen, pos)? * pos.len() as f64;
        }
    }
    Ok(Some(covered / positives.len() as f64))
}

/// Mean wall time of one generator sample on `object`, when a generator
/// checkpoint exists. Printed only, so reports stay reproducible.
fn sampling_time(cfg: &RunConfig, model: &HandModel, object: Option<&SurfaceModel>) -> Result<Option<f64>, Failure> {
    let (Some(object), true) = (object, cfg.generator_checkpoint().exists()) else {
        return Ok(None);
    };
    let generator = load_generator(cfg)?;
    let prepared = prepare_object(object, sub_seed(cfg.seed, "prepare"))?;
    let start = Instant::now();
    generator.sample_grasps(model, prepared.cloud(), TIMING_SAMPLES, sub_seed(cfg.seed, "timing"))?;
    Ok(Some(start.elapsed().as_secs_f64() / TIMING_SAMPLES as f64))
}
