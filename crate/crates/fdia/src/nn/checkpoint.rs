//! Binary model checkpoints: magic `CGCN`, format version, a JSON header
//! describing the architecture, then the flat parameter vector as f32
//! little-endian. CGCN checkpoints store `lambda_max` so the scaled
//! Laplacian rebuilt from the grid at load time matches training exactly.

use super::model::{CgcnArch, CgcnModel, FcnArch, FcnModel, Model};
use crate::grid::{build_weighted_adjacency, Grid};
use crate::spectral::{normalized_laplacian, scale_laplacian};
use crate::{FdiaError, Result};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    /// "cgcn" or "fcn".
    pub model: String,
    pub n: usize,
    pub layers: usize,
    /// Channels per graph-conv layer (cgcn) or hidden units (fcn).
    pub width: usize,
    /// Chebyshev filter order K; 0 for fcn.
    pub order: usize,
    pub num_params: usize,
    /// lambda_max the scaled Laplacian was built with; 0 for fcn.
    pub lambda_max: f64,
    /// SHA-256 of the feature scaler the model was trained with.
    pub scaler_digest: String,
}

pub fn save_model(path: &Path, model: &Model, scaler_digest: &str) -> Result<()> {
    let header = match model {
        Model::Cgcn(m) => CheckpointHeader {
            model: "cgcn".into(),
            n: m.arch.n,
            layers: m.arch.layers,
            width: m.arch.channels,
            order: m.arch.order,
            num_params: model.num_params(),
            lambda_max: m.laplacian.lambda_max,
            scaler_digest: scaler_digest.into(),
        },
        Model::Fcn(m) => CheckpointHeader {
            model: "fcn".into(),
            n: m.arch.n,
            layers: m.arch.layers,
            width: m.arch.units,
            order: 0,
            num_params: model.num_params(),
            lambda_max: 0.0,
            scaler_digest: scaler_digest.into(),
        },
    };
    let json = serde_json::to_vec(&header)?;
    let mut f = File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    f.write_all(&(json.len() as u32).to_le_bytes())?;
    f.write_all(&json)?;
    for p in model.params() {
        f.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read a checkpoint. CGCN checkpoints need the grid the model was trained
/// on so the scaled Laplacian can be reassembled; FCN checkpoints ignore it.
pub fn load_model(path: &Path, grid: Option<&Grid>) -> Result<(Model, CheckpointHeader)> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FdiaError::Format(format!(
            "bad checkpoint magic {magic:?} in {}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(FdiaError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    f.read_exact(&mut u32buf)?;
    let json_len = u32::from_le_bytes(u32buf) as usize;
    let mut json = vec![0u8; json_len];
    f.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;

    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != header.num_params * 4 {
        return Err(FdiaError::Format(format!(
            "checkpoint holds {} parameter bytes, header declares {} parameters",
            raw.len(),
            header.num_params
        )));
    }
    let params: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut model = match header.model.as_str() {
        "cgcn" => {
            let grid = grid.ok_or_else(|| {
                FdiaError::Format("cgcn checkpoint requires the originating grid".into())
            })?;
            let graph = build_weighted_adjacency(grid)?;
            if graph.n != header.n {
                return Err(FdiaError::Dimension(format!(
                    "grid has {} buses, checkpoint expects {}",
                    graph.n, header.n
                )));
            }
            let l = normalized_laplacian(&graph)?;
            let lap = Arc::new(scale_laplacian(&l, header.lambda_max)?);
            let arch = CgcnArch {
                n: header.n,
                layers: header.layers,
                channels: header.width,
                order: header.order,
            };
            Model::Cgcn(CgcnModel::init(arch, lap, 0, true)?)
        }
        "fcn" => {
            let arch = FcnArch {
                n: header.n,
                layers: header.layers,
                units: header.width,
            };
            Model::Fcn(FcnModel::init(arch, 0, true)?)
        }
        other => {
            return Err(FdiaError::Format(format!("unknown model kind '{other}'")));
        }
    };
    if model.num_params() != header.num_params {
        return Err(FdiaError::Format(format!(
            "architecture implies {} parameters, header declares {}",
            model.num_params(),
            header.num_params
        )));
    }
    model.set_params(&params);
    Ok((model, header))
}
