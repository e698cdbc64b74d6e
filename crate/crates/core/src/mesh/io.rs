use super::{CellId, Mesh, MeshCell, MeshError, MeshParams};
use crate::sphere::UnitVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const MESH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MeshFile {
    format_version: u32,
    params: MeshParams,
    vertices: Vec<[f64; 3]>,
    cells: Vec<MeshCell>,
    active_index: Vec<CellId>,
    checksum: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn checksum(file: &MeshFile) -> Result<String, MeshError> {
    let body = serde_json::to_vec(file).map_err(|e| MeshError::Malformed(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&body)))
}

fn to_file(mesh: &Mesh) -> Result<MeshFile, MeshError> {
    let mut file = MeshFile {
        format_version: MESH_FORMAT_VERSION,
        params: mesh.params,
        vertices: mesh.vertices.iter().map(UnitVector::as_array).collect(),
        cells: mesh.cells.clone(),
        active_index: mesh.active_index.clone(),
        checksum: String::new(),
    };
    file.checksum = checksum(&file)?;
    Ok(file)
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let file = to_file(mesh)?;
    let bytes = serde_json::to_vec(&file).map_err(|e| MeshError::Malformed(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let bytes = fs::read(path)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Mesh, MeshError> {
    let classify = |e: serde_json::Error| {
        if e.is_eof() {
            MeshError::Truncated
        } else {
            MeshError::Malformed(e.to_string())
        }
    };
    // Check the version first so newer layouts report a version error.
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(classify)?;
    if probe.format_version != MESH_FORMAT_VERSION {
        return Err(MeshError::VersionMismatch {
            found: probe.format_version,
            expected: MESH_FORMAT_VERSION,
        });
    }
    let mut file: MeshFile = serde_json::from_slice(bytes).map_err(classify)?;
    let stored = std::mem::take(&mut file.checksum);
    let computed = checksum(&file)?;
    if stored != computed {
        return Err(MeshError::ChecksumMismatch { stored, computed });
    }
    let vertices = file
        .vertices
        .iter()
        .map(|v| UnitVector::from_raw(v[0], v[1], v[2]))
        .collect();
    Mesh::from_parts(file.params, vertices, file.cells, file.active_index)
}
