//! PLY (points, normals, optional faces) and OBJ (meshes) readers/writers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType, ScalarType,
};
use ply_rs::writer::Writer;

use super::{PointCloud, TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    Binary,
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<u32>> {
    Some(match p {
        Property::ListUChar(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListChar(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListShort(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListUShort(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListInt(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListUInt(v) => v.clone(),
        _ => return None,
    })
}

/// Reads a PLY file. Returns the vertex cloud (normals when `nx ny nz` are
/// present) and, if the file has a face element, a mesh (polygons fanned).
pub fn read_ply(path: &Path) -> Result<(PointCloud, Option<TriMesh>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut reader)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let verts = ply
        .payload
        .get("vertex")
        .ok_or_else(|| Error::format(path, "no vertex element"))?;
    let get = |e: &DefaultElement, k: &str| e.get(k).and_then(scalar);
    let mut points = Vec::with_capacity(verts.len());
    let mut normals = Vec::with_capacity(verts.len());
    let mut has_normals = true;
    for (i, e) in verts.iter().enumerate() {
        match (get(e, "x"), get(e, "y"), get(e, "z")) {
            (Some(x), Some(y), Some(z)) => points.push(Vec3::new(x, y, z)),
            _ => return Err(Error::format(path, format!("vertex {i} lacks x/y/z"))),
        }
        match (get(e, "nx"), get(e, "ny"), get(e, "nz")) {
            (Some(x), Some(y), Some(z)) if has_normals => normals.push(Vec3::new(x, y, z)),
            _ => has_normals = false,
        }
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::format(path, "non-finite vertex coordinate"));
    }
    let cloud = if has_normals {
        PointCloud::with_normals(points.clone(), normals).map_err(|e| Error::format(path, e.to_string()))?
    } else {
        PointCloud::from_points(points.clone())
    };
    let mesh = match ply.payload.get("face") {
        Some(faces) => {
            let mut tris = Vec::new();
            for (i, e) in faces.iter().enumerate() {
                let idx = e
                    .get("vertex_indices")
                    .or_else(|| e.get("vertex_index"))
                    .and_then(index_list)
                    .ok_or_else(|| Error::format(path, format!("face {i} lacks vertex_indices")))?;
                for k in 1..idx.len().saturating_sub(1) {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Some(TriMesh::new(points, tris).map_err(|e| Error::format(path, e.to_string()))?)
        }
        None => None,
    };
    Ok((cloud, mesh))
}

/// Writes points (and normals if present) as double-precision PLY.
pub fn write_ply(path: &Path, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = match encoding {
        PlyEncoding::Ascii => Encoding::Ascii,
        PlyEncoding::Binary => Encoding::BinaryLittleEndian,
    };
    let mut vertex = ElementDef::new("vertex".to_string());
    let names: &[&str] = if cloud.has_normals() { &["x", "y", "z", "nx", "ny", "nz"] } else { &["x", "y", "z"] };
    for n in names {
        vertex.properties.add(PropertyDef::new(n.to_string(), PropertyType::Scalar(ScalarType::Double)));
    }
    ply.header.elements.add(vertex);
    let rows = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = DefaultElement::new();
            e.insert("x".into(), Property::Double(p.x));
            e.insert("y".into(), Property::Double(p.y));
            e.insert("z".into(), Property::Double(p.z));
            if let Some(n) = &cloud.normals {
                e.insert("nx".into(), Property::Double(n[i].x));
                e.insert("ny".into(), Property::Double(n[i].y));
                e.insert("nz".into(), Property::Double(n[i].z));
            }
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), rows);
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    Writer::new()
        .write_ply(&mut w, &mut ply)
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads all shapes of an OBJ file into one triangle mesh.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let opts = tobj::LoadOptions { triangulate: true, single_index: false, ..Default::default() };
    let (models, _) = tobj::load_obj(path, &opts).map_err(|e| Error::format(path, e.to_string()))?;
    let mut mesh = TriMesh::empty();
    for m in models {
        let pos = &m.mesh.positions;
        let vertices: Vec<Vec3> = pos
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let faces: Vec<[u32; 3]> = m.mesh.indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let part = TriMesh::new(vertices, faces).map_err(|e| Error::format(path, e.to_string()))?;
        mesh.append(&part);
    }
    if mesh.vertices.is_empty() {
        return Err(Error::format(path, "no geometry"));
    }
    if mesh.vertices.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::format(path, "non-finite vertex coordinate"));
    }
    Ok(mesh)
}

/// Writes an OBJ with full-precision vertex coordinates.
pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_obj_to(&mut w, mesh).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_obj_to<W: Write>(w: &mut W, mesh: &TriMesh) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
