//! On-disk formats: voxel grids (`VXG1`), depth and float grids (`DPM1`),
//! float blobs (`WTS1`), subspace and model directories, and JSON-lines
//! dataset manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthImage;
use crate::mdn::{LayerShape, NetworkConfig, NetworkWeights, TrainOptions, TrainedModel};
use crate::shapespace::{SubspaceModel, VoxelGrid};

const VOXEL_MAGIC: &[u8; 4] = b"VXG1";
const DEPTH_MAGIC: &[u8; 4] = b"DPM1";
const BLOB_MAGIC: &[u8; 4] = b"WTS1";

pub const SUBSPACE_MANIFEST: &str = "subspace.json";
pub const SUBSPACE_BLOB: &str = "subspace.wts";
pub const MODEL_MANIFEST: &str = "manifest.json";
pub const MODEL_BLOB: &str = "weights.wts";
pub const SIGN_CONVENTION: &str = "first-nonzero-positive";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::Format(format!("{what}: bad magic")));
        }
        Ok(Self { bytes, pos: 4, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("{}: truncated", self.what)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Format(format!("{}: size overflow", self.what)))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{}: trailing bytes", self.what)));
        }
        Ok(())
    }
}

fn dim_u32(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::invalid(format!("dimension {v} exceeds u32")))
}

pub fn encode_voxels(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + grid.len());
    out.extend_from_slice(VOXEL_MAGIC);
    for d in grid.dims() {
        out.extend_from_slice(&dim_u32(d)?);
    }
    out.extend_from_slice(grid.occupancy());
    Ok(out)
}

pub fn decode_voxels(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut c = Cursor::new(bytes, VOXEL_MAGIC, "voxel file")?;
    let dims = [c.u32()?, c.u32()?, c.u32()?];
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let n = n.ok_or_else(|| Error::Format("voxel file: size overflow".into()))?;
    let occ = c.take(n)?.to_vec();
    c.finish()?;
    VoxelGrid::new(dims, occ).map_err(|e| Error::Format(format!("voxel file: {e}")))
}

pub fn write_voxels(path: &Path, grid: &VoxelGrid) -> Result<()> {
    write_file(path, &encode_voxels(grid)?)
}

pub fn read_voxels(path: &Path) -> Result<VoxelGrid> {
    decode_voxels(&fs::read(path)?)
}

/// `DPM1` bytes for an arbitrary row-major float grid.
pub fn encode_float_grid(width: usize, height: usize, values: &[f32]) -> Result<Vec<u8>> {
    Error::check_len(width * height, values.len())?;
    let mut out = Vec::with_capacity(12 + 4 * values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&dim_u32(width)?);
    out.extend_from_slice(&dim_u32(height)?);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_float_grid(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut c = Cursor::new(bytes, DEPTH_MAGIC, "depth file")?;
    let (w, h) = (c.u32()?, c.u32()?);
    let n = w.checked_mul(h).ok_or_else(|| Error::Format("depth file: size overflow".into()))?;
    let values = c.f32s(n)?;
    c.finish()?;
    Ok((w, h, values))
}

pub fn write_float_grid(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    write_file(path, &encode_float_grid(width, height, values)?)
}

pub fn read_float_grid(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode_float_grid(&fs::read(path)?)
}

pub fn write_depth(path: &Path, image: &DepthImage) -> Result<()> {
    write_float_grid(path, image.width(), image.height(), image.depth())
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let (w, h, values) = read_float_grid(path)?;
    DepthImage::new(w, h, values).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn encode_blob(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * values.len());
    out.extend_from_slice(BLOB_MAGIC);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<Vec<f32>> {
    let mut c = Cursor::new(bytes, BLOB_MAGIC, "weight blob")?;
    if !(bytes.len() - 4).is_multiple_of(4) {
        return Err(Error::Format("weight blob: length not a multiple of 4".into()));
    }
    c.f32s((bytes.len() - 4) / 4)
}

fn read_blob(path: &Path) -> Result<Vec<f32>> {
    decode_blob(&fs::read(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceManifest {
    pub d: usize,
    pub k: usize,
    pub dims: [usize; 3],
    pub category_ids: Vec<u32>,
    pub sign_convention: String,
}

/// Writes `subspace.json` and `subspace.wts` into `dir`, creating it.
pub fn save_subspace(dir: &Path, model: &SubspaceModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = SubspaceManifest {
        d: model.dim(),
        k: model.retained_dim(),
        dims: model.grid_dims(),
        category_ids: model.category_ids().to_vec(),
        sign_convention: SIGN_CONVENTION.into(),
    };
    let mut values: Vec<f32> = model.basis().iter().map(|&v| v as f32).collect();
    for m in model.category_means() {
        values.extend(m.iter().map(|&v| v as f32));
    }
    write_json(&dir.join(SUBSPACE_MANIFEST), &manifest)?;
    write_file(&dir.join(SUBSPACE_BLOB), &encode_blob(&values))
}

pub fn load_subspace(dir: &Path) -> Result<SubspaceModel> {
    let m: SubspaceManifest = read_json(&dir.join(SUBSPACE_MANIFEST))?;
    if m.sign_convention != SIGN_CONVENTION {
        return Err(Error::Format(format!("unsupported sign convention '{}'", m.sign_convention)));
    }
    let values = read_blob(&dir.join(SUBSPACE_BLOB))?;
    let n_means = m.category_ids.len();
    if values.len() != m.d * (m.k + n_means) {
        return Err(Error::Format(format!(
            "subspace blob holds {} floats, manifest implies {}",
            values.len(),
            m.d * (m.k + n_means)
        )));
    }
    let as_f64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let basis = DMatrix::from_column_slice(m.d, m.k, &as_f64(&values[..m.d * m.k]));
    let means = (0..n_means)
        .map(|i| {
            let start = m.d * (m.k + i);
            DVector::from_vec(as_f64(&values[start..start + m.d]))
        })
        .collect();
    SubspaceModel::from_parts(basis, means, m.category_ids, m.dims)
        .map_err(|e| Error::Format(format!("subspace manifest: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: NetworkConfig,
    pub options: TrainOptions,
    pub layers: Vec<LayerShape>,
    pub seed: u64,
    pub epochs: usize,
    pub loss_trace: Vec<f64>,
}

/// Writes `manifest.json` and `weights.wts` into `dir`, creating it.
pub fn save_model(dir: &Path, model: &TrainedModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ModelManifest {
        config: model.config.clone(),
        options: model.options.clone(),
        layers: model.weights.layers().to_vec(),
        seed: model.seed,
        epochs: model.epochs,
        loss_trace: model.loss_trace.clone(),
    };
    let values: Vec<f32> = model.weights.params().iter().map(|&v| v as f32).collect();
    write_json(&dir.join(MODEL_MANIFEST), &manifest)?;
    write_file(&dir.join(MODEL_BLOB), &encode_blob(&values))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let m: ModelManifest = read_json(&dir.join(MODEL_MANIFEST))?;
    let values = read_blob(&dir.join(MODEL_BLOB))?;
    let weights = NetworkWeights::from_params(&m.config, values.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::Format(format!("model weights: {e}")))?;
    if weights.layers() != m.layers.as_slice() {
        return Err(Error::Format("manifest layer shapes disagree with the config".into()));
    }
    Ok(TrainedModel {
        config: m.config,
        weights,
        loss_trace: m.loss_trace,
        seed: m.seed,
        epochs: m.epochs,
        options: m.options,
    })
}

/// One labeled view in a dataset manifest. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub depth_path: String,
    pub pose: [f64; 3],
    pub shape_coeffs: Vec<f64>,
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_path: Option<String>,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest: &Path, relative: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(relative)
}
