//! Run configuration: a flat TOML key-value file, `--set key=value`
//! overrides, then explicit flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gebd::data::{BoundaryPlan, SynthSpec};
use gebd::eval::{default_taus, Averaging};
use gebd::model::FusionInput;
use gebd::pipeline::{ClipWindow, InferOptions};
use gebd::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // data
    pub fps: f64,
    pub stage_dims: Vec<usize>,
    pub videos: usize,
    pub frames: usize,
    pub snr: f64,
    pub min_boundaries: usize,
    pub max_boundaries: usize,
    pub min_gap: f64,
    pub margin: f64,
    pub seed: u64,

    // model
    pub branches: usize,
    pub decoder_blocks: usize,
    pub d_out: usize,
    pub d_head: usize,
    pub residual: bool,
    pub depthwise: bool,
    pub fusion_input: FusionInput,
    pub conv_bias: bool,
    pub init_gain: f64,
    pub layer_norm_eps: f64,
    pub normalize_eps: f64,

    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub smooth_targets: bool,
    pub label_radius: usize,

    // inference
    pub smooth_inference: bool,
    pub clip_mode: bool,
    pub clip_seconds: f64,
    pub overlap_seconds: f64,

    // evaluation
    pub taus: Vec<f64>,
    pub averaging: AveragingMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let p = BoundaryPlan::default();
        let w = ClipWindow::default();
        Self {
            fps: 5.0,
            stage_dims: m.stage_dims,
            videos: 10,
            frames: 50,
            snr: 4.0,
            min_boundaries: p.min_count,
            max_boundaries: p.max_count,
            min_gap: p.min_gap,
            margin: p.margin,
            seed: t.seed,
            branches: m.branches,
            decoder_blocks: m.decoder_blocks,
            d_out: m.d_out,
            d_head: m.d_head,
            residual: m.residual,
            depthwise: m.depthwise,
            fusion_input: m.fusion_input,
            conv_bias: m.conv_bias,
            init_gain: m.init_gain,
            layer_norm_eps: m.layer_norm_eps,
            normalize_eps: m.normalize_eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_peak: t.lr_peak,
            lr_final: t.lr_final,
            warmup_epochs: t.warmup_epochs,
            smooth_targets: t.smooth_targets,
            label_radius: t.label_radius,
            smooth_inference: t.smooth_inference,
            clip_mode: false,
            clip_seconds: w.clip_seconds,
            overlap_seconds: w.overlap_seconds,
            taus: default_taus(),
            averaging: AveragingMode::Micro,
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string so that
/// `fusion_input=distances` works without quotes.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

impl RunConfig {
    /// Defaults, overlaid with the file at `path` (if any) and then `sets`.
    pub fn resolve(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).context("serializing defaults")?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let file: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            for (k, v) in file {
                if !table.contains_key(&k) {
                    bail!("unknown config key `{k}` in {}", path.display());
                }
                table.insert(k, v);
            }
        }
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                bail!("--set expects key=value, got `{s}`");
            };
            let k = k.trim();
            if !table.contains_key(k) {
                bail!("unknown config key `{k}`");
            }
            table.insert(k.to_string(), parse_value(v.trim()));
        }
        let cfg: RunConfig = table.try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            stage_dims: self.stage_dims.clone(),
            branches: self.branches,
            decoder_blocks: self.decoder_blocks,
            d_out: self.d_out,
            d_head: self.d_head,
            neighbor_radius: ModelConfig::radius_for_fps(self.fps),
            residual: self.residual,
            depthwise: self.depthwise,
            fusion_input: self.fusion_input,
            conv_bias: self.conv_bias,
            init_gain: self.init_gain,
            layer_norm_eps: self.layer_norm_eps,
            normalize_eps: self.normalize_eps,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_peak: self.lr_peak,
            lr_final: self.lr_final,
            warmup_epochs: self.warmup_epochs,
            smooth_targets: self.smooth_targets,
            smooth_inference: self.smooth_inference,
            label_radius: self.label_radius,
            seed: self.seed,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            frames: self.frames,
            fps: self.fps,
            stage_dims: self.stage_dims.clone(),
            snr: self.snr,
        }
    }

    pub fn plan(&self) -> BoundaryPlan {
        BoundaryPlan {
            min_count: self.min_boundaries,
            max_count: self.max_boundaries,
            min_gap: self.min_gap,
            margin: self.margin,
        }
    }

    pub fn clip_window(&self) -> ClipWindow {
        ClipWindow {
            clip_seconds: self.clip_seconds,
            overlap_seconds: self.overlap_seconds,
        }
    }

    pub fn infer(&self) -> InferOptions {
        InferOptions {
            smooth: self.smooth_inference,
            clips: self.clip_mode.then(|| self.clip_window()),
        }
    }

    pub fn averaging(&self) -> Averaging {
        match self.averaging {
            AveragingMode::Micro => Averaging::Micro,
            AveragingMode::Macro => Averaging::Macro,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved configuration as `config.toml` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        gebd::io::write_atomic(&dir.join("config.toml"), self.to_toml()?.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sets_override_and_unknown_keys_fail() {
        let cfg = RunConfig::resolve(
            None,
            &["epochs=3".into(), "fusion_input=representations".into(), "stage_dims=[4, 4]".into()],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.fusion_input, FusionInput::Representations);
        assert_eq!(cfg.stage_dims, vec![4, 4]);
        assert!(RunConfig::resolve(None, &["bogus=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["epochs".into()]).is_err());
        assert!(RunConfig::resolve(None, &["epochs=-1".into()]).is_err());
    }

    #[test]
    fn file_values_apply_before_sets() {
        let dir = std::env::temp_dir().join(format!("gebd-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.toml");
        std::fs::write(&p, "epochs = 4\nd_out = 16\n").unwrap();
        let cfg = RunConfig::resolve(Some(&p), &["epochs=2".into()]).unwrap();
        assert_eq!((cfg.epochs, cfg.d_out), (2, 16));
        std::fs::write(&p, "nope = 1\n").unwrap();
        assert!(RunConfig::resolve(Some(&p), &[]).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
