//! 32-bit fixed-point weight export and import.
//!
//! File layout (all fields little-endian): magic `CEQN`, version `u32`,
//! architecture id `u32`, tensor count `u32`; then per tensor its rank
//! `u32`, dims `u32[rank]`, fraction bits `u32` and the `i32` values.

use std::io::{Read, Write};

use crate::model::{ArchKind, EqArch, EqModel};
use crate::tensor::Tensor;
use crate::train::{evaluate_q_db, PolDataset};
use crate::{NnError, Result};

pub const DEFAULT_FRACTION_BITS: u32 = 24;
const MAGIC: &[u8; 4] = b"CEQN";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub fraction_bits: u32,
    pub values: Vec<i32>,
}

/// A weight that did not fit in 32 bits and was saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipWarning {
    pub tensor: usize,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModelBlob {
    pub arch_kind: ArchKind,
    pub tensors: Vec<QuantizedTensor>,
    /// Saturated weights; empty for a faithful export.
    pub clipped: Vec<ClipWarning>,
}

pub fn quantize_value(w: f64, fraction_bits: u32) -> std::result::Result<i32, i32> {
    let scaled = (w * (fraction_bits as f64).exp2()).round_ties_even();
    if scaled > i32::MAX as f64 {
        Err(i32::MAX)
    } else if scaled < i32::MIN as f64 {
        Err(i32::MIN)
    } else {
        Ok(scaled as i32)
    }
}

pub fn quantize_weights(model: &EqModel, fraction_bits: u32) -> Result<QuantizedModelBlob> {
    if fraction_bits > 62 {
        return Err(NnError::Config(format!("{fraction_bits} fraction bits")));
    }
    let mut clipped = Vec::new();
    let mut tensors = Vec::new();
    for (ti, t) in model.params().into_iter().enumerate() {
        let mut values = Vec::with_capacity(t.len());
        for (i, &w) in t.data.iter().enumerate() {
            if !w.is_finite() {
                return Err(NnError::NonFinite("weight"));
            }
            values.push(quantize_value(w, fraction_bits).unwrap_or_else(|sat| {
                clipped.push(ClipWarning { tensor: ti, index: i, value: w });
                sat
            }));
        }
        tensors.push(QuantizedTensor { shape: t.shape().to_vec(), fraction_bits, values });
    }
    Ok(QuantizedModelBlob { arch_kind: model.arch().kind, tensors, clipped })
}

/// Layer geometry implied by the tensor shapes of a blob.
fn infer_arch(blob: &QuantizedModelBlob) -> Result<EqArch> {
    let dims = |i: usize| -> Result<&[usize]> {
        blob.tensors
            .get(i)
            .map(|t| t.shape.as_slice())
            .ok_or_else(|| NnError::Format(format!("tensor {i} missing")))
    };
    let base = EqArch::of_kind(blob.arch_kind);
    let out = dims(blob.tensors.len().saturating_sub(2))?;
    if out.len() != 3 {
        return Err(NnError::Format("output layer is not a convolution".into()));
    }
    let mut arch = EqArch { out_filters: out[0], out_kernel: out[1], ..base };
    match blob.arch_kind {
        ArchKind::Bilstm => {
            let w = dims(0)?;
            if w.len() != 2 || w[0] % 4 != 0 {
                return Err(NnError::Format("malformed LSTM input weights".into()));
            }
            arch.n_hidden = w[0] / 4;
            arch.in_channels = w[1];
        }
        ArchKind::DeepCnn => {
            let (c1, c2) = (dims(0)?, dims(2)?);
            if c1.len() != 3 || c2.len() != 3 {
                return Err(NnError::Format("malformed hidden convolution".into()));
            }
            arch.hidden_filters = [c1[0], c2[0]];
            arch.hidden_kernel = c1[1];
            arch.in_channels = c1[2];
        }
    }
    if arch.out_kernel == 0 || arch.out_kernel > arch.n_in_symbols {
        return Err(NnError::Format(format!("output kernel {}", arch.out_kernel)));
    }
    arch.n_out_symbols = arch.n_in_symbols - arch.out_kernel + 1;
    Ok(arch)
}

pub fn dequantize(blob: &QuantizedModelBlob) -> Result<EqModel> {
    let arch = infer_arch(blob)?;
    let tensors = blob
        .tensors
        .iter()
        .map(|q| {
            if q.fraction_bits > 62 {
                return Err(NnError::Format(format!("{} fraction bits", q.fraction_bits)));
            }
            let scale = (-(q.fraction_bits as f64)).exp2();
            Tensor::from_vec(&q.shape, q.values.iter().map(|&v| v as f64 * scale).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    EqModel::from_params(arch, tensors).map_err(|e| NnError::Format(e.to_string()))
}

/// Q of the floating-point model minus Q of its fixed-point image.
pub fn quantization_penalty(model: &EqModel, blob: &QuantizedModelBlob, eval: &PolDataset) -> Result<f64> {
    let restored = dequantize(blob)?;
    if restored.arch().kind != model.arch().kind {
        return Err(NnError::Arch("blob holds a different architecture".into()));
    }
    Ok(evaluate_q_db(model, eval)? - evaluate_q_db(&restored, eval)?)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NnError::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_ceqn<W: Write>(blob: &QuantizedModelBlob, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize)?;
    put_u32(&mut buf, blob.arch_kind.id() as usize)?;
    put_u32(&mut buf, blob.tensors.len())?;
    for t in &blob.tensors {
        if t.values.len() != t.shape.iter().product::<usize>() {
            return Err(NnError::Format("tensor values disagree with its shape".into()));
        }
        put_u32(&mut buf, t.shape.len())?;
        for &d in &t.shape {
            put_u32(&mut buf, d)?;
        }
        put_u32(&mut buf, t.fraction_bits as usize)?;
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_ceqn<R: Read>(mut r: R) -> Result<QuantizedModelBlob> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a CEQN weight file".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported CEQN version {version}")));
    }
    let id = get_u32(&mut r)?;
    let arch_kind = ArchKind::from_id(id).ok_or_else(|| NnError::Format(format!("unknown architecture id {id}")))?;
    let count = get_u32(&mut r)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let rank = get_u32(&mut r)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(NnError::Format(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let fraction_bits = get_u32(&mut r)?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| NnError::Format("tensor too large".into()))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let values = raw.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(QuantizedTensor { shape, fraction_bits, values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Format("trailing bytes after last tensor".into()));
    }
    Ok(QuantizedModelBlob { arch_kind, tensors, clipped: Vec::new() })
}
