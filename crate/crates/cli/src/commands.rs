//! The four subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gebd::data::{load_annotations, save_annotations, Annotation, VideoFeatures};
use gebd::eval::{f1_sweep_with, VideoEval};
use gebd::io::write_json_atomic;
use gebd::model::{check_compatible, load_checkpoint, save_checkpoint};
use gebd::pipeline::{build_examples, detect, synth_corpus};
use gebd::train::{save_curve, train};
use gebd::{DetectionList, ModelParams};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("output directory {} is not empty (use --force to overwrite)", dir.display());
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Files in `dir` whose names end with `suffix`, sorted by name.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

/// A single `.gebf` file, or every `.gebf` file in a directory.
fn load_feature_set(path: &Path, fps: f64) -> Result<Vec<VideoFeatures<f32>>> {
    let files = if path.is_dir() {
        files_with_suffix(path, ".gebf")?
    } else {
        vec![path.to_path_buf()]
    };
    ensure!(!files.is_empty(), "no .gebf feature files in {}", path.display());
    files
        .par_iter()
        .map(|f| VideoFeatures::load(f, fps).with_context(|| format!("loading {}", f.display())))
        .collect()
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    video_id: String,
    seed: u64,
}

pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    ensure!(cfg.videos > 0, "videos must be at least 1");
    let spec = cfg.synth();
    // Validate before touching the output directory.
    gebd::data::synth_random_video::<f32>("probe", cfg.seed, &spec, &cfg.plan())?;
    prepare_out_dir(out, force)?;
    let corpus = synth_corpus::<f32>("vid", cfg.videos, cfg.seed, &spec, &cfg.plan())?;
    let mut manifest = Vec::with_capacity(corpus.len());
    for (i, (v, _)) in corpus.iter().enumerate() {
        let file = format!("{}.gebf", v.video_id);
        v.save(&out.join(&file))?;
        manifest.push(ManifestEntry {
            file,
            video_id: v.video_id.clone(),
            seed: cfg.seed.wrapping_add(i as u64),
        });
    }
    save_annotations(&out.join("annotations.json"), corpus.iter().map(|(_, a)| a))?;
    write_json_atomic(&out.join("manifest.json"), &manifest)?;
    cfg.echo(out)?;
    eprintln!("wrote {} videos to {}", corpus.len(), out.display());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, annotations: Option<&Path>, out: &Path) -> Result<()> {
    let model = cfg.model();
    let tcfg = cfg.train();
    tcfg.validate()?;
    model.validate()?;
    let videos = load_feature_set(data, cfg.fps)?;
    let ann_path = annotations.map_or_else(|| data.join("annotations.json"), Path::to_path_buf);
    let anns = load_annotations(&ann_path).with_context(|| format!("loading {}", ann_path.display()))?;
    for v in &videos {
        check_compatible(&model, &v.stage_dims(), v.fps).with_context(|| format!("video {}", v.video_id))?;
    }
    let lengths: BTreeSet<usize> = videos.iter().map(VideoFeatures::frames).collect();
    let clips = (lengths.len() > 1 || cfg.clip_mode).then(|| cfg.clip_window());
    let examples = build_examples(&videos, &anns, tcfg.label_radius, clips)?;
    let clip_lengths: BTreeSet<usize> = examples.iter().map(|e| e.features.frames()).collect();
    ensure!(
        clip_lengths.len() == 1,
        "training sequences still differ in length after clip splitting: {clip_lengths:?} frames"
    );

    create_dir(out)?;
    cfg.echo(out)?;
    let outcome = train(&examples, model, &tcfg)?;
    save_checkpoint(&out.join("checkpoint.gebw"), &outcome.params)?;
    if tcfg.epochs > 0 {
        save_curve(&out.join("loss.csv"), &outcome.curve)?;
        let last = outcome.curve.last().map_or(f64::NAN, |p| p.loss);
        eprintln!("trained {} steps on {} sequences, final loss {last:.4}", outcome.curve.len(), examples.len());
    } else {
        eprintln!("epochs = 0: wrote the initialized checkpoint only");
    }
    Ok(())
}

pub fn infer(cfg: &RunConfig, checkpoint: &Path, features: &Path, out: &Path) -> Result<()> {
    let params: ModelParams<f32> =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let videos = load_feature_set(features, cfg.fps)?;
    for v in &videos {
        check_compatible(&params.config, &v.stage_dims(), v.fps)
            .with_context(|| format!("checkpoint {} does not fit video {}", checkpoint.display(), v.video_id))?;
    }
    create_dir(out)?;
    cfg.echo(out)?;
    let opts = cfg.infer();
    videos.par_iter().try_for_each(|v| -> Result<()> {
        let (scores, dets) = detect(&params, v, opts)?;
        scores.save(&out.join(format!("{}.scores.json", v.video_id)))?;
        dets.save(&out.join(format!("{}.detections.json", v.video_id)))?;
        Ok(())
    })?;
    eprintln!("scored {} videos into {}", videos.len(), out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, detections: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let anns: BTreeMap<String, Annotation> =
        load_annotations(annotations).with_context(|| format!("loading {}", annotations.display()))?;
    let files = files_with_suffix(detections, ".detections.json")?;
    ensure!(!files.is_empty(), "no .detections.json files in {}", detections.display());
    let dets = files
        .iter()
        .map(|f| DetectionList::load(f).with_context(|| format!("loading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    let det_ids: BTreeSet<&str> = dets.iter().map(|d| d.video_id.as_str()).collect();
    let ann_ids: BTreeSet<&str> = anns.keys().map(String::as_str).collect();
    let no_ann: Vec<&str> = det_ids.difference(&ann_ids).copied().collect();
    let no_det: Vec<&str> = ann_ids.difference(&det_ids).copied().collect();
    if !no_ann.is_empty() || !no_det.is_empty() {
        bail!(
            "video ids differ between detections and annotations; missing annotations: [{}]; missing detections: [{}]",
            no_ann.join(", "),
            no_det.join(", ")
        );
    }
    let corpus: Vec<VideoEval> = dets
        .into_iter()
        .map(|d| {
            let a = &anns[&d.video_id];
            VideoEval {
                video_id: d.video_id,
                detections: d.timestamps,
                ground_truth: a.boundaries.clone(),
                duration: a.duration,
            }
        })
        .collect();
    let report = f1_sweep_with(&corpus, &cfg.taus, cfg.averaging())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
        cfg.echo(parent)?;
    }
    report.save_csv(out)?;
    print!("{}", report.to_csv());
    Ok(())
}
