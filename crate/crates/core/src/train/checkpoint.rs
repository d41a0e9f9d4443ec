//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` version, little-endian `u64`
//! header length, a UTF-8 JSON header, then every parameter tensor followed
//! by the Adam first and second moments as little-endian `f64`, in the
//! header's tensor order.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, EpochAccumulator, EpochMetrics, TrainConfig, TrainState};
use crate::data::ConditionStats;
use crate::error::{Error, Result};
use crate::losses::BetaController;
use crate::model::{Model, ModelConfig, ParamStore};
use crate::tape::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDVAECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
    adam: Adam,
    controller: BetaController,
    stats: ConditionStats,
    step: u64,
    epoch: usize,
    cursor: usize,
    perm: Vec<usize>,
    data_rng: ChaCha8Rng,
    latent_rng: ChaCha8Rng,
    acc: EpochAccumulator,
    history: Vec<EpochMetrics>,
}

/// Serialized checkpoint bytes.
pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let params = state.model.params();
    let header = Header {
        config: state.config.clone(),
        model: state.model.config().clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
        adam: state.adam.clone(),
        controller: state.controller.clone(),
        stats: state.stats.clone(),
        step: state.step,
        epoch: state.epoch,
        cursor: state.cursor,
        perm: state.perm.clone(),
        data_rng: state.data_rng.clone(),
        latent_rng: state.latent_rng.clone(),
        acc: state.acc.clone(),
        history: state.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 24 + 24 * params.scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let blocks = params
        .tensors
        .iter()
        .map(|t| t.data.as_slice())
        .chain(state.adam.m.iter().map(Vec::as_slice))
        .chain(state.adam.v.iter().map(Vec::as_slice));
    for block in blocks {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes through a temporary sibling and renames into place.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn read_f64s(bytes: &[u8], at: &mut usize, n: usize) -> Result<Vec<f64>> {
    let raw = take(bytes, at, n * 8)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut at = 0;
    if take(bytes, &mut at, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(bytes, &mut at, len)?)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        tensors.push(Tensor::from_vec(e.rows, e.cols, read_f64s(bytes, &mut at, e.rows * e.cols)?));
    }
    let mut adam = header.adam;
    adam.m = Vec::with_capacity(tensors.len());
    adam.v = Vec::with_capacity(tensors.len());
    for t in &tensors {
        adam.m.push(read_f64s(bytes, &mut at, t.len())?);
    }
    for t in &tensors {
        adam.v.push(read_f64s(bytes, &mut at, t.len())?);
    }
    if at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - at)));
    }
    let params = ParamStore {
        names: header.tensors.into_iter().map(|e| e.name).collect(),
        tensors,
    };
    let model = Model::from_params(header.model, params)?;
    Ok(TrainState {
        config: header.config,
        model,
        adam,
        controller: header.controller,
        stats: header.stats,
        step: header.step,
        epoch: header.epoch,
        cursor: header.cursor,
        perm: header.perm,
        data_rng: header.data_rng,
        latent_rng: header.latent_rng,
        acc: header.acc,
        history: header.history,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
