//! Binary model checkpoints.
//!
//! Layout, all integers u32 little-endian and all reals f64 little-endian:
//!
//! ```text
//! "HOTC" version header_len header_json
//! per cell (encoder layers, then decoder layers):
//!     kind_tag:u8 gates bias_flag:u8 block(w_hx) [block(bias)]
//!     transition_kind:u8 (0 matrix, 1 dense, 2 tensor trains)
//!     matrix/dense: block(weights)
//!     trains: count, then each train in its own TTW1 format
//! block(head_w) block(head_b)
//! ```
//!
//! A block is `rank, dims…, data…` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, CellParams, Transition};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::seq2seq::{ModelConfig, Seq2SeqModel};
use crate::tensor::Tensor;
use crate::tt::{read_f64, read_u32, TTWeight};

const MAGIC: &[u8; 4] = b"HOTC";
const VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 24;

/// JSON header stored ahead of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
    /// Training step the weights come from.
    #[serde(default)]
    pub step: usize,
    #[serde(default)]
    pub seed: u64,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn write_block<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_u32(w, t.rank())?;
    for &d in t.shape() {
        write_u32(w, d)?;
    }
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_block<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(Error::Checkpoint(format!("implausible block rank {rank}")));
    }
    let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::Checkpoint(format!("implausible block shape {shape:?}")))?;
    let data = (0..len).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::new(shape, data)?)
}

fn write_cell<W: Write>(w: &mut W, cell: &CellParams) -> Result<()> {
    let spec = cell.spec();
    w.write_all(&[spec.kind.tag()])?;
    write_u32(w, spec.kind.gates())?;
    w.write_all(&[u8::from(cell.bias.is_some())])?;
    write_block(w, &cell.w_hx)?;
    if let Some(b) = &cell.bias {
        write_block(w, b)?;
    }
    match &cell.transition {
        Transition::Matrix(m) => {
            w.write_all(&[0])?;
            write_block(w, m)?;
        }
        Transition::Dense(d) => {
            w.write_all(&[1])?;
            write_block(w, d)?;
        }
        Transition::Train(trains) => {
            w.write_all(&[2])?;
            write_u32(w, trains.len())?;
            for t in trains {
                t.write_to(w)?;
            }
        }
    }
    Ok(())
}

fn read_cell<R: Read>(r: &mut R, config: &ModelConfig, layer: usize) -> Result<CellParams> {
    let spec = config.layer_spec(layer);
    let tag = read_u8(r)?;
    let kind = CellKind::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown cell tag {tag}")))?;
    if kind != spec.kind {
        return Err(Error::Checkpoint(format!("cell {kind} where header says {}", spec.kind)));
    }
    let gates = read_u32(r)? as usize;
    if gates != kind.gates() {
        return Err(Error::Checkpoint(format!("{gates} gates for a {kind} cell")));
    }
    let has_bias = match read_u8(r)? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad bias flag {b}"))),
    };
    let w_hx = read_block(r)?;
    let bias = if has_bias { Some(read_block(r)?) } else { None };
    let transition = match read_u8(r)? {
        0 => Transition::Matrix(read_block(r)?),
        1 => Transition::Dense(read_block(r)?),
        2 => {
            let n = read_u32(r)? as usize;
            if n > 64 {
                return Err(Error::Checkpoint(format!("implausible train count {n}")));
            }
            Transition::Train((0..n).map(|_| TTWeight::read_from(r)).collect::<Result<Vec<_>>>()?)
        }
        k => return Err(Error::Checkpoint(format!("unknown transition kind {k}"))),
    };
    CellParams::from_parts(spec, w_hx, bias, transition).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Seq2SeqModel, header: &CheckpointHeader) -> Result<()> {
    if header.model != *model.config() {
        return Err(Error::Checkpoint("header config does not describe the model".into()));
    }
    w.write_all(MAGIC)?;
    write_u32(w, VERSION as usize)?;
    let json = serde_json::to_vec(header)?;
    write_u32(w, json.len())?;
    w.write_all(&json)?;
    for cell in model.encoder.iter().chain(&model.decoder) {
        write_cell(w, cell)?;
    }
    write_block(w, &model.head_w)?;
    write_block(w, &model.head_b)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Seq2SeqModel, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(r)? as usize;
    if len > MAX_HEADER {
        return Err(Error::Checkpoint(format!("header of {len} bytes")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let config = header.model.clone();
    config.validate()?;
    let encoder = (0..config.layers).map(|l| read_cell(r, &config, l)).collect::<Result<Vec<_>>>()?;
    let decoder = (0..config.layers).map(|l| read_cell(r, &config, l)).collect::<Result<Vec<_>>>()?;
    let head_w = read_block(r)?;
    let head_b = read_block(r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    let model = Seq2SeqModel::from_parts(config, encoder, decoder, head_w, head_b)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((model, header))
}

pub fn save(path: &Path, model: &Seq2SeqModel, header: &CheckpointHeader) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, header)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Seq2SeqModel, CheckpointHeader)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
