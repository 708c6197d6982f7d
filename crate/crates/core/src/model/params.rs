//! Parameter storage and the slot layout that maps model parts onto it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FusionInput, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::SeqTensor;

/// Index of a tensor inside [`ModelParams::tensors`].
pub type Slot = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSlot {
    pub geom: ConvGeom,
    pub weight: Slot,
    pub bias: Option<Slot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseSlot {
    pub width: usize,
    pub dilation: usize,
    pub weight: Slot,
    pub bias: Option<Slot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormSlot {
    pub gamma: Slot,
    pub beta: Slot,
}

/// Convolution → layer norm → GELU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvSlot,
    pub norm: NormSlot,
}

/// One dilated view of a stage: optional depthwise conv, then a conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsBranchParams {
    pub dilation: usize,
    pub depthwise: Option<DepthwiseSlot>,
    pub block: ConvBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TpsStageParams {
    pub branches: Vec<TpsBranchParams>,
    /// Width-1 projection of all branch outputs back to the stage width.
    pub comprehensive: ConvSlot,
    /// Width-1 projection of the concatenated similarities to `d_out`.
    pub fusion: ConvSlot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TpsParams {
    pub stages: Vec<TpsStageParams>,
    /// Width-3 block merging all stage outputs.
    pub projection: ConvBlock,
    pub neighbor_radius: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdParams {
    pub blocks: Vec<ConvBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub hidden: ConvSlot,
    pub output: ConvSlot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub tps: TpsParams,
    pub decoder: SdParams,
    pub head: HeadParams,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f64),
    Zeros,
    Ones,
}

/// Name, shape and initializer of each tensor, in storage order.
#[derive(Clone, Debug)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> Slot {
        self.specs.push(TensorSpec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, geom: ConvGeom, cfg: &ModelConfig) -> ConvSlot {
        let (r, c) = geom.weight_shape();
        let bound = cfg.init_gain * (1.0 / (geom.in_channels * geom.width) as f64).sqrt();
        let weight = self.push(format!("{name}.weight"), r, c, Init::Uniform(bound));
        let bias = cfg
            .conv_bias
            .then(|| self.push(format!("{name}.bias"), 1, geom.out_channels, Init::Zeros));
        ConvSlot { geom, weight, bias }
    }

    fn block(&mut self, name: &str, geom: ConvGeom, cfg: &ModelConfig) -> ConvBlock {
        let conv = self.conv(&format!("{name}.conv"), geom, cfg);
        let d = geom.out_channels;
        let gamma = self.push(format!("{name}.norm.gamma"), 1, d, Init::Ones);
        let beta = self.push(format!("{name}.norm.beta"), 1, d, Init::Zeros);
        ConvBlock {
            conv,
            norm: NormSlot { gamma, beta },
        }
    }

    fn depthwise(&mut self, name: &str, channels: usize, cfg: &ModelConfig) -> DepthwiseSlot {
        let width = 3;
        let bound = cfg.init_gain * (1.0 / width as f64).sqrt();
        let weight = self.push(format!("{name}.weight"), channels, width, Init::Uniform(bound));
        let bias = cfg
            .conv_bias
            .then(|| self.push(format!("{name}.bias"), 1, channels, Init::Zeros));
        DepthwiseSlot {
            width,
            dilation: 1,
            weight,
            bias,
        }
    }
}

fn geom(i: usize, o: usize, w: usize, r: usize) -> ConvGeom {
    ConvGeom::new(i, o, w, r).expect("layout geometry is valid by construction")
}

pub(crate) fn build_layout(cfg: &ModelConfig) -> Result<(ModelLayout, Vec<TensorSpec>)> {
    cfg.validate()?;
    let mut b = LayoutBuilder::default();
    let n = cfg.branches;
    let l = cfg.neighbor_radius;

    let mut stages = Vec::with_capacity(cfg.stage_dims.len());
    for (k, &d) in cfg.stage_dims.iter().enumerate() {
        let mut branches = Vec::with_capacity(n);
        for (i, r) in cfg.branch_dilations().into_iter().enumerate() {
            let name = format!("tps.stage{k}.branch{i}");
            let depthwise = (cfg.depthwise && r > 1).then(|| b.depthwise(&format!("{name}.depthwise"), d, cfg));
            let block = b.block(&name, geom(d, d, 3, r), cfg);
            branches.push(TpsBranchParams {
                dilation: r,
                depthwise,
                block,
            });
        }
        let comprehensive = b.conv(&format!("tps.stage{k}.comprehensive"), geom(n * d, d, 1, 1), cfg);
        let fused_in = match cfg.fusion_input {
            FusionInput::Distances => (n + 1) * 2 * l,
            FusionInput::Representations => (n + 1) * d,
        };
        let fusion = b.conv(&format!("tps.stage{k}.fusion"), geom(fused_in, cfg.d_out, 1, 1), cfg);
        stages.push(TpsStageParams {
            branches,
            comprehensive,
            fusion,
        });
    }
    let projection = b.block(
        "tps.projection",
        geom(cfg.stage_dims.len() * cfg.d_out, cfg.d_out, 3, 1),
        cfg,
    );
    let blocks = cfg
        .decoder_dilations()
        .into_iter()
        .enumerate()
        .map(|(i, r)| b.block(&format!("decoder.block{i}"), geom(cfg.d_out, cfg.d_out, 3, r), cfg))
        .collect();
    let hidden = b.conv("head.hidden", geom(cfg.d_out, cfg.d_head, 3, 1), cfg);
    let output = b.conv("head.output", geom(cfg.d_head, 1, 1, 1), cfg);

    let layout = ModelLayout {
        tps: TpsParams {
            stages,
            projection,
            neighbor_radius: l,
        },
        decoder: SdParams { blocks },
        head: HeadParams { hidden, output },
    };
    Ok((layout, b.specs))
}

/// All learnable tensors of a model plus the layout locating each part.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    names: Vec<String>,
    tensors: Vec<SeqTensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded initialization: fan-in uniform weights, zero biases, identity norms.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let (layout, specs) = build_layout(&config)?;
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Uniform(bound) => nn::uniform(s.rows, s.cols, bound, rng),
                Init::Zeros => SeqTensor::zeros(s.rows, s.cols),
                Init::Ones => SeqTensor::filled(s.rows, s.cols, S::one()),
            })
            .collect();
        Ok(Self {
            config,
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    /// Assembles parameters from tensors in storage order, checking every shape.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<SeqTensor<S>>) -> Result<Self> {
        let (layout, specs) = build_layout(&config)?;
        if specs.len() != tensors.len() {
            return Err(Error::Invalid(format!(
                "configuration needs {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if t.shape() != (s.rows, s.cols) {
                return Err(Error::shape(
                    "ModelParams",
                    format!("{} is {:?}, expected {:?}", s.name, t.shape(), (s.rows, s.cols)),
                ));
            }
        }
        Ok(Self {
            config,
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn tensors(&self) -> &[SeqTensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [SeqTensor<S>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, slot: Slot) -> &SeqTensor<S> {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut SeqTensor<S> {
        &mut self.tensors[slot]
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(SeqTensor::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(SeqTensor::cast).collect(),
        }
    }

    /// Registers every tensor as a tape leaf.
    pub fn bind<'a>(&'a self, tape: &mut GradTape<S>) -> Bound<'a> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
            config: &self.config,
            layout: &self.layout,
        }
    }
}

/// Parameters registered on a tape, addressed by slot.
pub struct Bound<'a> {
    pub vars: Vec<Var>,
    pub config: &'a ModelConfig,
    pub layout: &'a ModelLayout,
}

impl Bound<'_> {
    pub fn var(&self, slot: Slot) -> Var {
        self.vars[slot]
    }

    pub fn opt(&self, slot: Option<Slot>) -> Option<Var> {
        slot.map(|s| self.vars[s])
    }
}
