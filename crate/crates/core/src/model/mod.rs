//! Model configuration, parameters, checkpoints and end-to-end inference.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{
    check_compatible, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{FusionInput, ModelConfig};
pub use params::{
    Bound, ConvBlock, ConvSlot, DepthwiseSlot, HeadParams, ModelLayout, ModelParams, NormSlot, SdParams, Slot,
    TpsBranchParams, TpsParams, TpsStageParams,
};

use crate::data::VideoFeatures;
use crate::decoder::model_forward;
use crate::error::Result;
use crate::postprocess::BoundaryScores;
use crate::scalar::Scalar;
use crate::tape::GradTape;

impl<S: Scalar> ModelParams<S> {
    /// Raw per-frame boundary probabilities for one video.
    pub fn predict(&self, v: &VideoFeatures<S>) -> Result<BoundaryScores> {
        let mut tape = GradTape::new();
        let bound = self.bind(&mut tape);
        let out = model_forward(&mut tape, &bound, v)?;
        let scores = tape.value(out.scores).data().iter().map(|s| s.to_f64_lossy()).collect();
        Ok(BoundaryScores::new(v.video_id.clone(), v.fps, scores))
    }
}
