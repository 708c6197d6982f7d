//! Similarity decoder, scoring head and the full forward pass.

use crate::data::VideoFeatures;
use crate::error::{Error, Result};
use crate::model::{Bound, HeadParams, SdParams};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tps::{self, conv, conv_block, TpsTrace};

/// Stacked dilated blocks applied in ascending dilation order.
pub fn sd_forward<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, sd: &SdParams, x: Var) -> Result<Var> {
    sd.blocks.iter().try_fold(x, |h, block| conv_block(tape, p, block, h))
}

/// Two convolutions with a GELU between, then a sigmoid: `T × 1` scores.
pub fn head_forward<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, head: &HeadParams, x: Var) -> Result<Var> {
    let h = conv(tape, p, &head.hidden, x)?;
    let h = tape.gelu(h);
    let logits = conv(tape, p, &head.output, h)?;
    Ok(tape.sigmoid(logits))
}

#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub inputs: Vec<Var>,
    pub tps: TpsTrace,
    pub decoded: Var,
    /// Raw boundary probabilities, `T × 1`.
    pub scores: Var,
}

/// Features → similarity pyramid → decoder → head.
pub fn model_forward<S: Scalar>(tape: &mut GradTape<S>, p: &Bound, v: &VideoFeatures<S>) -> Result<ModelTrace> {
    let dims = v.stage_dims();
    if dims != p.config.stage_dims {
        return Err(Error::ConfigMismatch {
            field: "stage_dims",
            found: format!("{dims:?}"),
            expected: format!("{:?}", p.config.stage_dims),
        });
    }
    let inputs: Vec<Var> = v.stages().iter().map(|s| tape.leaf(s.clone())).collect();
    let tps = tps::tps_forward(tape, p, &p.layout.tps, &inputs)?;
    let decoded = sd_forward(tape, p, &p.layout.decoder, tps.output)?;
    let scores = head_forward(tape, p, &p.layout.head, decoded)?;
    Ok(ModelTrace {
        inputs,
        tps,
        decoded,
        scores,
    })
}
