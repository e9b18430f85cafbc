use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graspgen_core::geometry::io::{read_obj, read_ply};
use graspgen_core::geometry::SurfaceModel;
use graspgen_core::{Error, Result};
use log::warn;

/// Object id of a file: its stem.
pub fn object_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::arg(format!("cannot derive an object id from {}", path.display())))
}

/// Loads a closed `.obj` mesh, or a `.ply` mesh or oriented cloud.
pub fn load_object(path: &Path) -> Result<SurfaceModel> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => SurfaceModel::from_mesh(read_obj(path)?),
        Some("ply") => match read_ply(path)? {
            (_, Some(mesh)) => SurfaceModel::from_mesh(mesh),
            (cloud, None) if cloud.has_normals() => SurfaceModel::from_cloud(cloud),
            _ => Err(Error::UnsignedGeometry),
        },
        _ => Err(Error::arg(format!("{}: expected an .obj or .ply file", path.display()))),
    }
}

/// Object files of `dir` by id, in id order.
pub fn object_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("obj" | "ply")) {
            continue;
        }
        let id = object_id(&path)?;
        if let Some(prev) = out.insert(id.clone(), path.clone()) {
            warn!("object id `{id}` appears twice ({} and {}); using the latter", prev.display(), path.display());
        }
    }
    Ok(out)
}

/// Loads every object in `dir`, skipping unreadable files with a warning.
pub fn load_object_dir(dir: &Path) -> Result<Vec<(String, SurfaceModel)>> {
    let mut out = Vec::new();
    for (id, path) in object_files(dir)? {
        match load_object(&path) {
            Ok(o) => out.push((id, o)),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}
