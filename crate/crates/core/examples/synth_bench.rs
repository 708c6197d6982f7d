//! Trains on a synthetic corpus and prints held-out F1.
//!
//! `cargo run --release -p gebd-core --example synth_bench -- [seed] [variant] [snr]`
//! `[seed] [variant] [snr]`, where variant is `full`, `no_sd` or `no_residual`.

use std::collections::BTreeMap;
use std::time::Instant;

use gebd::data::{BoundaryPlan, SynthSpec};
use gebd::pipeline::{build_examples, evaluate_model, synth_corpus, InferOptions};
use gebd::train::train;
use gebd::{ModelConfig, TrainConfig};

fn main() -> gebd::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let variant = args.get(2).map_or("full", String::as_str);
    let spec = SynthSpec {
        frames: 50,
        fps: 5.0,
        stage_dims: vec![32; 4],
        snr: args.get(3).map_or(4.0, |s| s.parse().expect("snr")),
    };
    let plan = BoundaryPlan::default();
    let train_set = synth_corpus::<f32>("train", 200, 1000 * seed, &spec, &plan)?;
    let test_set = synth_corpus::<f32>("test", 50, 1000 * seed + 500, &spec, &plan)?;
    let mut model = ModelConfig {
        stage_dims: vec![32; 4],
        d_out: 64,
        d_head: 64,
        ..Default::default()
    };
    match variant {
        "no_sd" => model.decoder_blocks = 0,
        "no_residual" => model.residual = false,
        _ => {}
    }
    let cfg = TrainConfig { seed, ..Default::default() };
    let ann: BTreeMap<_, _> = train_set.iter().map(|(_, a)| (a.video_id.clone(), a.clone())).collect();
    let videos: Vec<_> = train_set.into_iter().map(|(v, _)| v).collect();
    let examples = build_examples(&videos, &ann, cfg.label_radius, None)?;
    let t0 = Instant::now();
    let out = train(&examples, model, &cfg)?;
    let first = out.curve.first().map(|p| p.loss).unwrap_or(0.0);
    let last = out.curve.last().map(|p| p.loss).unwrap_or(0.0);
    eprintln!("trained in {:.1?}; loss {first:.4} -> {last:.4}", t0.elapsed());
    let test_ann: BTreeMap<_, _> = test_set.iter().map(|(_, a)| (a.video_id.clone(), a.clone())).collect();
    let test_videos: Vec<_> = test_set.into_iter().map(|(v, _)| v).collect();
    let report = evaluate_model(&out.params, &test_videos, &test_ann, InferOptions::default())?;
    print!("{}", report.to_csv());
    Ok(())
}
