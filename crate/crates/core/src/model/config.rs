use serde::{Deserialize, Serialize};

use crate::data::default_stage_dims;
use crate::error::{Error, Result};

/// What the per-stage fusion projection consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionInput {
    /// The `n + 1` neighbour-distance vectors, `(n + 1) · 2l` channels.
    Distances,
    /// The `n + 1` normalized representations, `(n + 1) · d_k` channels.
    Representations,
}

impl FusionInput {
    pub(crate) fn code(self) -> u32 {
        match self {
            FusionInput::Distances => 0,
            FusionInput::Representations => 1,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(FusionInput::Distances),
            1 => Some(FusionInput::Representations),
            _ => None,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel count of each backbone stage.
    pub stage_dims: Vec<usize>,
    /// Dilated branches per stage; branch `i` (1-based) uses dilation `2^(i-1)`.
    pub branches: usize,
    /// Decoder blocks; block `i` (1-based) uses dilation `2^i`. Zero disables the decoder.
    pub decoder_blocks: usize,
    pub d_out: usize,
    pub d_head: usize,
    /// Neighbours compared on each side of a frame.
    pub neighbor_radius: usize,
    /// Add each stage input back onto its branch outputs before normalizing.
    pub residual: bool,
    /// Depthwise convolution in front of branches with dilation > 1.
    pub depthwise: bool,
    pub fusion_input: FusionInput,
    pub conv_bias: bool,
    /// Multiplier on the fan-in uniform initialization bound.
    pub init_gain: f64,
    pub layer_norm_eps: f64,
    pub normalize_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_dims: default_stage_dims(),
            branches: 4,
            decoder_blocks: 3,
            d_out: 256,
            d_head: 128,
            neighbor_radius: 5,
            residual: true,
            depthwise: true,
            fusion_input: FusionInput::Distances,
            conv_bias: true,
            init_gain: 1.0,
            layer_norm_eps: 1e-5,
            normalize_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Neighbour radius of one second of frames.
    pub fn radius_for_fps(fps: f64) -> usize {
        (fps.round() as usize).max(1)
    }

    pub fn branch_dilations(&self) -> Vec<usize> {
        (0..self.branches).map(|i| 1 << i).collect()
    }

    pub fn decoder_dilations(&self) -> Vec<usize> {
        (1..=self.decoder_blocks).map(|i| 1 << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Invalid(what));
        if self.stage_dims.is_empty() || self.stage_dims.contains(&0) {
            return bad(format!("stage_dims must be non-empty and positive, got {:?}", self.stage_dims));
        }
        if self.branches == 0 {
            return bad("branches must be at least 1".into());
        }
        if self.branches > 16 || self.decoder_blocks > 16 {
            return bad("dilation pyramid deeper than 16 levels".into());
        }
        if self.d_out == 0 || self.d_head == 0 {
            return bad("d_out and d_head must be positive".into());
        }
        if self.neighbor_radius == 0 {
            return bad("neighbor_radius must be at least 1".into());
        }
        for (name, v) in [
            ("init_gain", self.init_gain),
            ("layer_norm_eps", self.layer_norm_eps),
            ("normalize_eps", self.normalize_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}
