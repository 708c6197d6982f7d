//! Temporal pyramid similarity.
//!
//! Each backbone stage is viewed through `n` dilated convolution branches. Every
//! branch output is added back onto the stage input and row-normalized; a
//! width-1 projection of all branch outputs gives one more "comprehensive"
//! view. For each of the `n + 1` views we measure squared distances from every
//! frame to its `l` neighbours on either side, project the concatenated
//! distances to `d_out` channels, and finally merge all stages with a width-3
//! convolution block.

use crate::error::{Error, Result};
use crate::model::{Bound, ConvBlock, ConvSlot, FusionInput, TpsBranchParams, TpsParams, TpsStageParams};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::{self, SeqTensor};

/// Row-wise `(F + I) / |F + I|`.
pub fn residual_normalize<S: Scalar>(f: &SeqTensor<S>, input: &SeqTensor<S>, eps: S) -> Result<SeqTensor<S>> {
    Ok(tensor::l2_normalize_rows(&tensor::add(f, input)?, eps))
}

/// Neighbour offsets in column order: `-l, …, -1, 1, …, l`.
pub fn neighbor_offsets(radius: usize) -> Vec<isize> {
    let l = radius as isize;
    (-l..0).chain(1..=l).collect()
}

/// `T × 2l` squared distances between each frame and its neighbours.
///
/// Neighbours outside the sequence are clamped to the first/last frame.
pub fn neighbor_distances<S: Scalar>(r: &SeqTensor<S>, radius: usize) -> Result<SeqTensor<S>> {
    if radius == 0 {
        return Err(Error::Invalid("neighbour radius must be at least 1".into()));
    }
    let frames = r.rows();
    let offsets = neighbor_offsets(radius);
    let mut out = SeqTensor::zeros(frames, offsets.len());
    for t in 0..frames {
        let a = r.row(t);
        for (slot, &q) in offsets.iter().enumerate() {
            let u = clamp_frame(t, q, frames);
            let b = r.row(u);
            let d: S = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
            out.set(t, slot, d);
        }
    }
    Ok(out)
}

#[inline]
fn clamp_frame(t: usize, q: isize, frames: usize) -> usize {
    (t as isize + q).clamp(0, frames as isize - 1) as usize
}

pub(crate) fn neighbor_distances_backward<S: Scalar>(r: &SeqTensor<S>, radius: usize, grad: &SeqTensor<S>) -> SeqTensor<S> {
    let (frames, d) = r.shape();
    let offsets = neighbor_offsets(radius);
    let mut gr = SeqTensor::zeros(frames, d);
    let two = S::lit(2.0);
    for t in 0..frames {
        for (slot, &q) in offsets.iter().enumerate() {
            let u = clamp_frame(t, q, frames);
            if u == t {
                continue;
            }
            let g = two * grad.get(t, slot);
            if g == S::zero() {
                continue;
            }
            for c in 0..d {
                let diff = g * (r.get(t, c) - r.get(u, c));
                let data = gr.data_mut();
                data[t * d + c] += diff;
                data[u * d + c] -= diff;
            }
        }
    }
    gr
}

// ---------------------------------------------------------------------------
// Tape forwards

pub(crate) fn conv<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, slot: &ConvSlot, x: Var) -> Result<Var> {
    tape.conv1d(x, p.var(slot.weight), p.opt(slot.bias), slot.geom)
}

/// Convolution → layer norm → GELU.
pub fn conv_block<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, block: &ConvBlock, x: Var) -> Result<Var> {
    let h = conv(tape, p, &block.conv, x)?;
    let eps = S::lit(p.config.layer_norm_eps);
    let h = tape.layer_norm(h, p.var(block.norm.gamma), p.var(block.norm.beta), eps)?;
    Ok(tape.gelu(h))
}

/// `[depthwise] → dilated conv → layer norm → GELU`; shape preserved.
pub fn tps_branch_forward<S: Scalar>(
    tape: &mut GradTape<S>,
    p: &Bound,
    branch: &TpsBranchParams,
    input: Var,
) -> Result<Var> {
    let mut h = input;
    if let Some(dw) = &branch.depthwise {
        h = tape.depthwise_conv1d(h, p.var(dw.weight), p.opt(dw.bias), dw.dilation)?;
    }
    conv_block(tape, p, &branch.block, h)
}

/// Normalized width-1 projection of the concatenated branch outputs.
pub fn comprehensive_rep<S: Scalar>(
    tape: &mut GradTape<S>,
    p: &Bound,
    branch_outputs: &[Var],
    projection: &ConvSlot,
) -> Result<Var> {
    let cat = tape.concat_channels(branch_outputs)?;
    let proj = conv(tape, p, projection, cat)?;
    Ok(tape.l2_normalize_rows(proj, S::lit(p.config.normalize_eps)))
}

/// Intermediate values of one stage, for inspection.
#[derive(Clone, Debug)]
pub struct StageTrace {
    /// Branch outputs `F_1..F_n`.
    pub branch_outputs: Vec<Var>,
    /// Normalized views `R_1..R_{n+1}`; the last is the comprehensive one.
    pub representations: Vec<Var>,
    /// Distance vectors, one per view.
    pub distances: Vec<Var>,
    /// Stage output, `T × d_out`.
    pub output: Var,
}

pub fn tps_stage_forward<S: Scalar>(
    tape: &mut GradTape<S>,
    p: &Bound,
    stage: &TpsStageParams,
    input: Var,
    radius: usize,
) -> Result<StageTrace> {
    let eps = S::lit(p.config.normalize_eps);
    let mut branch_outputs = Vec::with_capacity(stage.branches.len());
    let mut representations = Vec::with_capacity(stage.branches.len() + 1);
    for branch in &stage.branches {
        let f = tps_branch_forward(tape, p, branch, input)?;
        let joined = if p.config.residual { tape.add(f, input)? } else { f };
        representations.push(tape.l2_normalize_rows(joined, eps));
        branch_outputs.push(f);
    }
    representations.push(comprehensive_rep(tape, p, &branch_outputs, &stage.comprehensive)?);

    let distances = representations
        .iter()
        .map(|&r| tape.neighbor_distances(r, radius))
        .collect::<Result<Vec<_>>>()?;
    let fused_inputs = match p.config.fusion_input {
        FusionInput::Distances => &distances,
        FusionInput::Representations => &representations,
    };
    let cat = tape.concat_channels(fused_inputs)?;
    let output = conv(tape, p, &stage.fusion, cat)?;
    Ok(StageTrace {
        branch_outputs,
        representations,
        distances,
        output,
    })
}

#[derive(Clone, Debug)]
pub struct TpsTrace {
    pub stages: Vec<StageTrace>,
    /// Merged output, `T × d_out`.
    pub output: Var,
}

/// Runs every stage on its input and merges them with the projection block.
pub fn tps_forward<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, tps: &TpsParams, inputs: &[Var]) -> Result<TpsTrace> {
    if inputs.len() != tps.stages.len() {
        return Err(Error::shape(
            "tps_forward",
            format!("{} stage inputs for {} stages", inputs.len(), tps.stages.len()),
        ));
    }
    let stages = tps
        .stages
        .iter()
        .zip(inputs)
        .map(|(stage, &x)| tps_stage_forward(tape, p, stage, x, tps.neighbor_radius))
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<Var> = stages.iter().map(|s| s.output).collect();
    let cat = tape.concat_channels(&outs)?;
    let output = conv_block(tape, p, &tps.projection, cat)?;
    Ok(TpsTrace { stages, output })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_have_zero_distance() {
        let r = SeqTensor::<f64>::filled(6, 3, 0.5);
        let d = neighbor_distances(&r, 2).unwrap();
        assert_eq!(d.shape(), (6, 4));
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn basis_rows_hand_computed() {
        let r = SeqTensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let d = neighbor_distances(&r, 1).unwrap();
        assert_eq!(d.data(), &[0.0, 2.0, 2.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn first_frame_backward_slots_are_zero() {
        let r = SeqTensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8], vec![0.8, 0.6]]).unwrap();
        let d = neighbor_distances(&r, 3).unwrap();
        assert_eq!(&d.row(0)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&d.row(3)[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn offsets_order() {
        assert_eq!(neighbor_offsets(2), vec![-2, -1, 1, 2]);
        assert!(neighbor_distances(&SeqTensor::<f64>::zeros(2, 2), 0).is_err());
    }

    #[test]
    fn residual_normalize_cases() {
        let input = SeqTensor::<f64>::from_rows(&[vec![3.0, 4.0], vec![-1.0, 2.0]]).unwrap();
        let zero = SeqTensor::zeros(2, 2);
        let r = residual_normalize(&zero, &input, 1e-12).unwrap();
        assert_eq!(r, tensor::l2_normalize_rows(&input, 1e-12));
        let r2 = residual_normalize(&input, &input, 1e-12).unwrap();
        for (a, b) in r.data().iter().zip(r2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(residual_normalize(&SeqTensor::zeros(2, 3), &input, 1e-12).is_err());
    }
}
