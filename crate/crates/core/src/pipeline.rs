//! Glue between the model, post-processing and evaluation: scoring whole
//! videos (optionally clip by clip), building training examples, and
//! generating synthetic corpora.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{frame_labels, split_clips, synth_random_video, Annotation, BoundaryPlan, SynthSpec, VideoFeatures};
use crate::error::{Error, Result};
use crate::eval::{f1_sweep, EvalReport, VideoEval};
use crate::model::ModelParams;
use crate::postprocess::{gaussian_smooth, merge_clip_scores, pick_peaks, BoundaryScores, DetectionList};
use crate::scalar::Scalar;
use crate::train::TrainExample;

/// Clip length and overlap used for long videos, seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipWindow {
    pub clip_seconds: f64,
    pub overlap_seconds: f64,
}

impl Default for ClipWindow {
    fn default() -> Self {
        Self {
            clip_seconds: 10.0,
            overlap_seconds: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferOptions {
    pub smooth: bool,
    pub clips: Option<ClipWindow>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { smooth: true, clips: None }
    }
}

/// Per-frame scores for a whole video. In clip mode each clip is scored and
/// smoothed on its own, then overlapping scores are summed.
pub fn score_video<S: Scalar>(params: &ModelParams<S>, v: &VideoFeatures<S>, opts: InferOptions) -> Result<BoundaryScores> {
    let finish = |s: BoundaryScores| if opts.smooth { gaussian_smooth(&s) } else { s };
    match opts.clips {
        None => Ok(finish(params.predict(v)?)),
        Some(w) => {
            let clips = split_clips(v, w.clip_seconds, w.overlap_seconds)?;
            let scored = clips
                .par_iter()
                .map(|c| Ok((c.span, finish(params.predict(&c.features)?))))
                .collect::<Result<Vec<_>>>()?;
            merge_clip_scores(&v.video_id, v.fps, v.frames(), &scored)
        }
    }
}

pub fn detect<S: Scalar>(
    params: &ModelParams<S>,
    v: &VideoFeatures<S>,
    opts: InferOptions,
) -> Result<(BoundaryScores, DetectionList)> {
    let scores = score_video(params, v, opts)?;
    let dets = pick_peaks(&scores);
    Ok((scores, dets))
}

/// Labels each video; with `clips` set, every video is cut into clip examples.
pub fn build_examples<S: Scalar>(
    videos: &[VideoFeatures<S>],
    annotations: &BTreeMap<String, Annotation>,
    label_radius: usize,
    clips: Option<ClipWindow>,
) -> Result<Vec<TrainExample<S>>> {
    let mut out = Vec::new();
    for v in videos {
        let a = annotations
            .get(&v.video_id)
            .ok_or_else(|| Error::Invalid(format!("no annotation for video {}", v.video_id)))?;
        let labels = frame_labels(a, v.frames(), v.fps, label_radius);
        match clips {
            None => out.push(TrainExample {
                features: v.clone(),
                labels,
            }),
            Some(w) => {
                for c in split_clips(v, w.clip_seconds, w.overlap_seconds)? {
                    out.push(TrainExample {
                        labels: labels.slice(c.span),
                        features: c.features,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// `count` synthetic videos named `{prefix}{i:04}` with seeds `seed + i`.
pub fn synth_corpus<S: Scalar>(
    prefix: &str,
    count: usize,
    seed: u64,
    spec: &SynthSpec,
    plan: &BoundaryPlan,
) -> Result<Vec<(VideoFeatures<S>, Annotation)>> {
    (0..count)
        .into_par_iter()
        .map(|i| synth_random_video(&format!("{prefix}{i:04}"), seed.wrapping_add(i as u64), spec, plan))
        .collect()
}

/// Detects boundaries on every video and sweeps F1 over the standard thresholds.
pub fn evaluate_model<S: Scalar>(
    params: &ModelParams<S>,
    videos: &[VideoFeatures<S>],
    annotations: &BTreeMap<String, Annotation>,
    opts: InferOptions,
) -> Result<EvalReport> {
    let corpus = videos
        .par_iter()
        .map(|v| {
            let a = annotations
                .get(&v.video_id)
                .ok_or_else(|| Error::Invalid(format!("no annotation for video {}", v.video_id)))?;
            let (_, dets) = detect(params, v, opts)?;
            Ok(VideoEval {
                video_id: v.video_id.clone(),
                detections: dets.timestamps,
                ground_truth: a.boundaries.clone(),
                duration: a.duration,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    f1_sweep(&corpus)
}
