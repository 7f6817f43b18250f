//! `GCNM` model checkpoints.
//!
//! Layout (little-endian): magic `"GCNM"`, `u32` version, `u8` aggregator
//! tag, `u32` layer count, then every tensor as `u32` rank, `rank × u64`
//! dims and an `f32` payload. Tensors follow [`GcnModel::params`] order:
//! per layer the weight (plus the attention hidden and output matrices when
//! present), then the head weight and head bias. Parameters are rounded to
//! 32 bits on save.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::aggregate::AttentionMlp;
use super::model::{Aggregator, ConvLayer, GcnModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GCNM";
const VERSION: u32 = 1;

pub fn save_model(model: &GcnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[model.aggregator.tag()])?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        write_matrix(&mut w, &layer.weight)?;
        if let Some(att) = &layer.attention {
            write_matrix(&mut w, &att.hidden)?;
            write_matrix(&mut w, &att.output)?;
        }
    }
    write_matrix(&mut w, &model.head_weight)?;
    write_tensor(&mut w, &[model.head_bias.len()], model.head_bias.iter())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GcnModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("magic", "file too short"))?;
    if &magic != MAGIC {
        return Err(Error::format("magic", "not a GCNM checkpoint"));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::format("aggregator", "truncated header"))?;
    let aggregator = Aggregator::from_tag(tag[0])
        .ok_or_else(|| Error::format("aggregator", format!("unknown tag {}", tag[0])))?;
    let layer_count = read_u32(&mut r, "layers")? as usize;
    if layer_count == 0 {
        return Err(Error::format("layers", "model has no layers"));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let weight = read_matrix(&mut r)?;
        let attention = if aggregator == Aggregator::Attention {
            Some(AttentionMlp {
                hidden: read_matrix(&mut r)?,
                output: read_matrix(&mut r)?,
            })
        } else {
            None
        };
        layers.push(ConvLayer { weight, attention });
    }
    let head_weight = read_matrix(&mut r)?;
    let (dims, bias) = read_tensor(&mut r)?;
    if dims != [2] {
        return Err(Error::format("tensor", "head bias must have shape [2]"));
    }
    let model = GcnModel {
        aggregator,
        layers,
        head_weight,
        head_bias: Array1::from(bias),
    };
    check_shapes(&model)?;
    Ok(model)
}

fn check_shapes(model: &GcnModel) -> Result<()> {
    let mut d_in = model.layers[0].weight.nrows();
    if d_in % 2 != 0 {
        return Err(Error::format("tensor", "first layer weight has odd row count"));
    }
    d_in /= 2;
    for (l, layer) in model.layers.iter().enumerate() {
        if layer.weight.nrows() != 2 * d_in {
            return Err(Error::format("tensor", format!("layer {l} weight has wrong input width")));
        }
        if let Some(att) = &layer.attention {
            if att.hidden.nrows() != 2 * d_in || att.output.dim() != (att.hidden.ncols(), 1) {
                return Err(Error::format("tensor", format!("layer {l} attention shapes")));
            }
        }
        d_in = layer.weight.ncols();
    }
    if model.head_weight.dim() != (d_in, 2) {
        return Err(Error::format("tensor", "head weight shape"));
    }
    Ok(())
}

fn write_matrix(w: &mut impl Write, m: &Array2<f64>) -> Result<()> {
    write_tensor(w, &[m.nrows(), m.ncols()], m.iter())
}

fn write_tensor<'a>(
    w: &mut impl Write,
    dims: &[usize],
    values: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> Result<Array2<f64>> {
    let (dims, values) = read_tensor(r)?;
    if dims.len() != 2 {
        return Err(Error::format("tensor", format!("expected rank 2, found {}", dims.len())));
    }
    Array2::from_shape_vec((dims[0], dims[1]), values).map_err(|e| Error::format("tensor", e.to_string()))
}

fn read_tensor(r: &mut impl Read) -> Result<(Vec<usize>, Vec<f64>)> {
    let rank = read_u32(r, "tensor")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format("tensor", format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::format("tensor", "truncated dims"))?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c < (1 << 31))
        .ok_or_else(|| Error::format("tensor", "tensor too large"))?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format("tensor", "truncated payload"))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok((dims, values))
}

fn read_u32(r: &mut impl Read, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(field, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}
