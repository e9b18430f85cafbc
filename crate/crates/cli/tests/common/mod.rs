#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graspgen_core::geometry::io::write_obj;
use graspgen_core::geometry::{cuboid, icosphere, Vec3};

/// A scratch run directory with objects and a small, fast config.
pub struct Run {
    pub dir: tempfile::TempDir,
}

/// Generator and refiner small enough for debug-speed CLI runs.
pub const SMALL: &str = r#"
  "generator": {"point_layers": [16, 32], "grasp_layers": [32], "encoder_hidden": [32], "decoder_hidden": [32], "latent_dim": 4},
  "refiner": {"hidden": [32], "feature_dim": 32},
  "refiner_train": {"epochs": 2, "batch_size": 16},
  "refiner_samples_per_object": 8,
  "train": {"epochs": 3, "batch_size": 32}"#;

impl Run {
    /// `objects` are written as OBJ files named by their id.
    pub fn new(objects: &[&str], extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("objects")).unwrap();
        for id in objects {
            write_object(&dir.path().join("objects"), id);
        }
        let mut cfg: serde_json::Value = serde_json::from_str(&format!(
            r#"{{"paths": {{"objects": "objects", "dataset": "data/dataset.txt", "checkpoints": "ck", "output": "out"}},
  "samples_per_object": 100,{SMALL}}}"#
        ))
        .unwrap();
        let extra: serde_json::Value = serde_json::from_str(&format!("{{{extra}}}")).unwrap();
        for (k, v) in extra.as_object().unwrap() {
            cfg[k] = v.clone();
        }
        std::fs::write(dir.path().join("run.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Run { dir }
    }

    /// Replaces one top-level config entry.
    pub fn set(&self, key: &str, value: serde_json::Value) {
        let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(self.config()).unwrap()).unwrap();
        cfg[key] = value;
        std::fs::write(self.config(), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("run.json")
    }

    /// Runs `graspgen <args> --config run.json`.
    pub fn cmd(&self, args: &[&str]) -> Output {
        let mut all: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        all.push("--config".into());
        all.push(self.config().display().to_string());
        graspgen(&all)
    }

    pub fn ok(&self, args: &[&str]) -> Output {
        let out = self.cmd(args);
        assert!(
            out.status.success(),
            "graspgen {args:?} failed ({:?}):\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Every file under the run directory except the config, by relative path.
    pub fn artifacts(&self) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        collect(self.dir.path(), self.dir.path(), &mut out);
        out.remove("run.json");
        out
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            out.insert(rel, std::fs::read(&p).unwrap());
        }
    }
}

pub fn graspgen(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspgen")).args(args).output().unwrap()
}

/// `sphere…` ids give a 4 cm sphere, `box…` a 6 cm cube, `plate…` a 1 cm
/// thick plate.
pub fn write_object(dir: &Path, id: &str) {
    let mesh = if id.starts_with("sphere") {
        icosphere(0.04, 3)
    } else if id.starts_with("box") {
        cuboid(Vec3::new(0.03, 0.03, 0.03))
    } else if id.starts_with("plate") {
        cuboid(Vec3::new(0.08, 0.06, 0.005))
    } else {
        panic!("unknown test object {id}")
    };
    write_obj(&dir.join(format!("{id}.obj")), &mesh).unwrap();
}

pub fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}
