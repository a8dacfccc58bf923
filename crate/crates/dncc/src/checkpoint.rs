//! Checkpoint container: a JSON header followed by raw little-endian f64
//! parameter blocks in declaration order, then optional optimizer velocity
//! blocks in the same order. Round-trips bitwise.
//!
//! Layout: `[u64 LE header length][header JSON][param blocks][velocity blocks]`.
//! The header records the model spec and config, epochs completed, and the
//! training seed; batch order is a pure function of (seed, epoch), so these
//! are the whole RNG state and a resumed run replays exactly.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::model::{BackboneSpec, EnsembleConfig, EnsembleModel};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: BackboneSpec,
    cfg: EnsembleConfig,
    /// Epochs completed when the checkpoint was written.
    epoch: usize,
    /// Training stream seed.
    seed: u64,
    /// Element count per parameter block, declaration order.
    param_sizes: Vec<usize>,
    has_velocity: bool,
}

/// A restored model plus trainer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EnsembleModel,
    pub epoch: usize,
    pub seed: u64,
    pub velocities: Option<Vec<Vec<f64>>>,
}

/// Write a checkpoint. `velocities`, when present, must align with the
/// model's parameter blocks.
pub fn save_checkpoint(
    path: &Path,
    model: &EnsembleModel,
    epoch: usize,
    seed: u64,
    velocities: Option<&[Vec<f64>]>,
) -> Result<()> {
    if let Some(vel) = velocities {
        if vel.len() != model.params().len()
            || vel.iter().zip(model.params()).any(|(v, p)| v.len() != p.data.len())
        {
            return Err(Error::Contract(
                "velocity blocks do not align with parameter blocks".into(),
            ));
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        spec: model.spec().clone(),
        cfg: model.cfg().clone(),
        epoch,
        seed,
        param_sizes: model.params().iter().map(|p| p.data.len()).collect(),
        has_velocity: velocities.is_some(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    let mut write_block = |block: &[f64]| -> Result<()> {
        let mut buf = Vec::with_capacity(block.len() * 8);
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    };
    for p in model.params() {
        write_block(&p.data)?;
    }
    if let Some(vel) = velocities {
        for v in vel {
            write_block(v)?;
        }
    }
    Ok(())
}

/// Read a checkpoint back; nothing is returned on any malformation.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "checkpoint too short ({} bytes) for a header length",
            bytes.len()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if 8 + header_len > bytes.len() {
        return Err(Error::Format(format!(
            "declared header length {header_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("malformed checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} does not match supported version {CHECKPOINT_VERSION}",
            header.version
        )));
    }

    let mut model = EnsembleModel::init(header.spec.clone(), header.cfg.clone())?;
    if header.param_sizes.len() != model.params().len() {
        return Err(Error::Format(format!(
            "{} parameter blocks in header, model has {}",
            header.param_sizes.len(),
            model.params().len()
        )));
    }
    for (size, p) in header.param_sizes.iter().zip(model.params()) {
        if *size != p.data.len() {
            return Err(Error::Format(format!(
                "block size {size} does not match parameter {} ({})",
                p.name,
                p.data.len()
            )));
        }
    }

    let total: usize = header.param_sizes.iter().sum();
    let blocks = if header.has_velocity { 2 * total } else { total };
    let expected_len = 8 + header_len + blocks * 8;
    if bytes.len() != expected_len {
        return Err(Error::Format(format!(
            "checkpoint is {} bytes, expected {expected_len}",
            bytes.len()
        )));
    }

    let mut offset = 8 + header_len;
    let read_block = |len: usize, offset: &mut usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(bytes[*offset..*offset + 8].try_into().unwrap()));
            *offset += 8;
        }
        out
    };
    for i in 0..model.params().len() {
        let len = model.params()[i].data.len();
        model.params_mut()[i].data = read_block(len, &mut offset);
    }
    let velocities = if header.has_velocity {
        Some(
            header
                .param_sizes
                .iter()
                .map(|&len| read_block(len, &mut offset))
                .collect(),
        )
    } else {
        None
    };
    Ok(Checkpoint { model, epoch: header.epoch, seed: header.seed, velocities })
}
