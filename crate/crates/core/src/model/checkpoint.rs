//! Binary checkpoint codec.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "GEBW"              magic
//! u32                 version (1)
//! u32                 stage count K
//! u32 × K             stage dims
//! u32 × 5             branches, decoder_blocks, d_out, d_head, neighbor_radius
//! u32 × 4             residual, depthwise, fusion_input (0 distances, 1 representations), conv_bias
//! f64 × 2             layer_norm_eps, normalize_eps
//! u32                 tensor count N
//! N × { u32 rows, u32 cols, f32 × rows·cols }
//! ```
//!
//! Tensors follow [`ModelParams::names`] order: for each stage, each branch's
//! optional depthwise weight/bias, conv weight/bias and norm gamma/beta; then the
//! stage's comprehensive and fusion projections; then the merging projection
//! block, the decoder blocks in dilation order, and the two head layers.
//! Convolution weights are `out × (width · in)` with taps outermost.

use std::fs;
use std::path::Path;

use super::config::{FusionInput, ModelConfig};
use super::params::ModelParams;
use crate::data::bytes::Reader;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::SeqTensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GEBW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<S: Scalar>(p: &ModelParams<S>) -> Vec<u8> {
    let c = &p.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, c.stage_dims.len());
    for &d in &c.stage_dims {
        put_u32(&mut out, d);
    }
    for v in [c.branches, c.decoder_blocks, c.d_out, c.d_head, c.neighbor_radius] {
        put_u32(&mut out, v);
    }
    for flag in [c.residual, c.depthwise] {
        put_u32(&mut out, flag as usize);
    }
    put_u32(&mut out, c.fusion_input.code() as usize);
    put_u32(&mut out, c.conv_bias as usize);
    out.extend_from_slice(&c.layer_norm_eps.to_le_bytes());
    out.extend_from_slice(&c.normalize_eps.to_le_bytes());
    put_u32(&mut out, p.tensors().len());
    for t in p.tensors() {
        put_u32(&mut out, t.rows());
        put_u32(&mut out, t.cols());
        for v in t.data() {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<ModelParams<S>> {
    let mut r = Reader::new(bytes, "checkpoint");
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.error(0, format!("bad magic {magic:?}, expected \"GEBW\"")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let k = r.u32("stage count")? as usize;
    if k == 0 || k > 64 {
        return Err(r.error(8, format!("implausible stage count {k}")));
    }
    let stage_dims = (0..k)
        .map(|_| r.u32("stage dim").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut next = |what| r.u32(what).map(|v| v as usize);
    let branches = next("branches")?;
    let decoder_blocks = next("decoder_blocks")?;
    let d_out = next("d_out")?;
    let d_head = next("d_head")?;
    let neighbor_radius = next("neighbor_radius")?;
    let residual = next("residual")? != 0;
    let depthwise = next("depthwise")? != 0;
    let fusion_offset = r.offset();
    let fusion_code = r.u32("fusion_input")?;
    let fusion_input = FusionInput::from_code(fusion_code)
        .ok_or_else(|| r.error(fusion_offset, format!("unknown fusion_input code {fusion_code}")))?;
    let conv_bias = r.u32("conv_bias")? != 0;
    let layer_norm_eps = f64::from_le_bytes(r.array("layer_norm_eps")?);
    let normalize_eps = f64::from_le_bytes(r.array("normalize_eps")?);
    let config = ModelConfig {
        stage_dims,
        branches,
        decoder_blocks,
        d_out,
        d_head,
        neighbor_radius,
        residual,
        depthwise,
        fusion_input,
        conv_bias,
        layer_norm_eps,
        normalize_eps,
        ..ModelConfig::default()
    };
    config.validate()?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let offset = r.offset();
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(r.error(offset, format!("tensor {i} has empty shape")));
        }
        let mut data = Vec::with_capacity((rows * cols).min(r.remaining() / 4));
        for _ in 0..rows * cols {
            let at = r.offset();
            let v = f32::from_le_bytes(r.array("tensor payload")?);
            if !v.is_finite() {
                return Err(r.error(at, format!("non-finite value in tensor {i}")));
            }
            data.push(S::lit(v as f64));
        }
        tensors.push(SeqTensor::from_raw(rows, cols, data));
    }
    if r.remaining() != 0 {
        return Err(r.error(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    ModelParams::from_tensors(config, tensors)
}

pub fn save_checkpoint<S: Scalar>(path: &Path, p: &ModelParams<S>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(p))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Checks that features with `stage_dims` sampled at `fps` can run through a
/// model built from `config`, naming the first field that disagrees.
pub fn check_compatible(config: &ModelConfig, stage_dims: &[usize], fps: f64) -> Result<()> {
    if config.stage_dims != stage_dims {
        return Err(Error::ConfigMismatch {
            field: "stage_dims",
            found: format!("{stage_dims:?}"),
            expected: format!("{:?}", config.stage_dims),
        });
    }
    let radius = ModelConfig::radius_for_fps(fps);
    if radius != config.neighbor_radius {
        return Err(Error::ConfigMismatch {
            field: "neighbor_radius",
            found: format!("{radius} (from fps {fps})"),
            expected: config.neighbor_radius.to_string(),
        });
    }
    Ok(())
}
