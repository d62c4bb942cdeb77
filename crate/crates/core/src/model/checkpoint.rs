//! Binary checkpoint: magic, little-endian u64 header length, JSON header,
//! then every tensor as little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamStore, Tensor, TrainedModel};
use crate::error::{Error, Result};
use crate::views::ViewAxis;

const MAGIC: &[u8; 8] = b"CLSEGCK1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    view: ViewAxis,
    param_count: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        view: model.view,
        param_count: model.param_count,
        tensors: model
            .weights
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for t in &model.weights.tensors {
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        write(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut read_exact = |buf: &mut [u8]| {
        r.read_exact(buf)
            .map_err(|_| Error::format(path, "truncated checkpoint"))
    };
    let mut magic = [0u8; 8];
    read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(Error::format(path, "implausible header length"));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after tensors"));
    }
    let model = TrainedModel::from_parts(header.config, ParamStore { tensors }, header.view)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if model.param_count != header.param_count {
        return Err(Error::format(
            path,
            format!(
                "header claims {} parameters, architecture has {}",
                header.param_count, model.param_count
            ),
        ));
    }
    Ok(model)
}
