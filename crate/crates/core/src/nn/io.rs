//! `RVLM` model files.
//!
//! ```text
//! "RVLM" | u16 version | u32 header_len | JSON header
//! u32 tensor_count | tensor*
//! tensor = u16 name_len | name (utf-8) | u8 ndim | u32 dim* | f32 LE data
//! ```
//!
//! All integers little-endian. Tensors are trainable parameters, then
//! batch-norm running statistics, then (optionally) Adam moments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{Model, ModelMeta};
use super::network::Network;
use super::ModelError;

pub const RVLM_MAGIC: &[u8; 4] = b"RVLM";
pub const RVLM_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: ModelMeta,
    optimizer_step: Option<u64>,
}

fn fmt_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serializes `model` to any writer.
pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<(), ModelError> {
    let header = Header {
        meta: model.meta.clone(),
        optimizer_step: model.optimizer.as_ref().map(|s| s.step),
    };
    let json = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
    w.write_all(RVLM_MAGIC)?;
    w.write_all(&RVLM_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;

    let params = model.net.params();
    let buffers = model.net.buffers();
    let mut count = params.len() + buffers.len();
    if model.optimizer.is_some() {
        count += 2 * params.len();
    }
    w.write_all(&(count as u32).to_le_bytes())?;
    for p in &params {
        write_tensor(&mut w, &p.name, &p.shape, &p.value)?;
    }
    for b in &buffers {
        write_tensor(&mut w, &b.name, &[b.value.len()], &b.value)?;
    }
    if let Some(opt) = &model.optimizer {
        for (p, m) in params.iter().zip(&opt.m) {
            write_tensor(&mut w, &format!("adam.m.{}", p.name), &p.shape, m)?;
        }
        for (p, v) in params.iter().zip(&opt.v) {
            write_tensor(&mut w, &format!("adam.v.{}", p.name), &p.shape, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelError> {
    write_model(model, BufWriter::new(File::create(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<f32>), ModelError> {
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| fmt_err("tensor name is not utf-8"))?;
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let shape = (0..nd[0]).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let len: usize = shape.iter().product();
    let mut raw = vec![0u8; len * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((name, shape, data))
}

/// Reads a model, rebuilding the network from the header and checking every
/// tensor against it.
pub fn read_model<R: Read>(mut r: R) -> Result<Model, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RVLM_MAGIC {
        return Err(fmt_err("not an RVLM model file"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != RVLM_VERSION {
        return Err(fmt_err(format!("unsupported model version {version}")));
    }
    let mut json = vec![0u8; read_u32(&mut r)? as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| fmt_err(format!("bad header: {e}")))?;
    let meta = header.meta;
    let [frames, coeffs, _] = meta.input_shape;
    let mut net = Network::<f32>::build(&meta.spec, frames, coeffs, 0)?;
    if net.parameter_count() != meta.parameter_count {
        return Err(fmt_err(format!(
            "header records {} parameters, the spec builds {}",
            meta.parameter_count,
            net.parameter_count()
        )));
    }

    let count = read_u32(&mut r)? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, shape, data) = read_tensor(&mut r)?;
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(fmt_err(format!("duplicate tensor {name}")));
        }
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>, ModelError> {
        let (s, d) = tensors
            .remove(name)
            .ok_or_else(|| fmt_err(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(fmt_err(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        Ok(d)
    };
    for p in net.params_mut() {
        p.value = take(&p.name, &p.shape)?;
    }
    for (name, b) in net.buffers_mut() {
        *b = take(&name, &[b.len()])?;
    }
    let optimizer = match header.optimizer_step {
        None => None,
        Some(step) => {
            let params = net.params();
            let m = params
                .iter()
                .map(|p| take(&format!("adam.m.{}", p.name), &p.shape))
                .collect::<Result<_, _>>()?;
            let v = params
                .iter()
                .map(|p| take(&format!("adam.v.{}", p.name), &p.shape))
                .collect::<Result<_, _>>()?;
            Some(AdamState { step, m, v })
        }
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(fmt_err(format!("unexpected tensor {extra}")));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(fmt_err("trailing bytes after last tensor"));
    }
    Ok(Model { meta, net, optimizer })
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    read_model(BufReader::new(File::open(path)?))
}
