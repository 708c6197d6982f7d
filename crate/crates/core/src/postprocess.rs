//! Score smoothing, peak picking and clip-score merging.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClipSpan;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json_atomic};
use crate::scalar::Scalar;
use crate::tensor::SeqTensor;

/// Scores below or at this value never produce a boundary.
pub const PEAK_THRESHOLD: f64 = 0.1;

/// Per-frame boundary scores for one video. Serialized as the score-file JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    pub video_id: String,
    pub fps: f64,
    pub scores: Vec<f64>,
    pub smoothed: bool,
}

/// Detected boundary times in seconds, strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionList {
    pub video_id: String,
    pub timestamps: Vec<f64>,
}

impl BoundaryScores {
    pub fn new(video_id: impl Into<String>, fps: f64, scores: Vec<f64>) -> Self {
        Self {
            video_id: video_id.into(),
            fps,
            scores,
            smoothed: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

impl DetectionList {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

/// Unnormalized σ = 1 Gaussian taps `exp(-j²/2)` for `j = -h..=h`, `h = floor(fps / 2)`.
///
/// The window is one second of frames rounded to the nearest odd count at or
/// below it, so it stays centred.
pub fn gaussian_taps(fps: f64) -> Vec<f64> {
    let half = (fps / 2.0).floor().max(0.0) as isize;
    (-half..=half).map(|j| (-(j * j) as f64 / 2.0).exp()).collect()
}

/// Convolves every column with `taps`, dividing by the sum of the taps that
/// land inside the signal.
pub(crate) fn smooth_columns<S: Scalar>(x: &SeqTensor<S>, taps: &[S]) -> SeqTensor<S> {
    let (frames, cols) = x.shape();
    let half = (taps.len() / 2) as isize;
    let mut out = SeqTensor::zeros(frames, cols);
    for t in 0..frames {
        let (lo, hi) = tap_range(t, frames, half);
        let norm: S = (lo..=hi).map(|j| taps[(j + half) as usize]).sum();
        for c in 0..cols {
            let mut acc = S::zero();
            for j in lo..=hi {
                acc += taps[(j + half) as usize] * x.get((t as isize + j) as usize, c);
            }
            out.set(t, c, acc / norm);
        }
    }
    out
}

pub(crate) fn smooth_columns_backward<S: Scalar>(grad: &SeqTensor<S>, taps: &[S]) -> SeqTensor<S> {
    let (frames, cols) = grad.shape();
    let half = (taps.len() / 2) as isize;
    let mut gx = SeqTensor::zeros(frames, cols);
    for t in 0..frames {
        let (lo, hi) = tap_range(t, frames, half);
        let norm: S = (lo..=hi).map(|j| taps[(j + half) as usize]).sum();
        for c in 0..cols {
            let g = grad.get(t, c) / norm;
            for j in lo..=hi {
                let src = (t as isize + j) as usize;
                let v = gx.get(src, c) + g * taps[(j + half) as usize];
                gx.set(src, c, v);
            }
        }
    }
    gx
}

fn tap_range(t: usize, frames: usize, half: isize) -> (isize, isize) {
    let t = t as isize;
    let lo = (-half).max(-t);
    let hi = half.min(frames as isize - 1 - t);
    (lo, hi)
}

pub fn gaussian_smooth(s: &BoundaryScores) -> BoundaryScores {
    let taps = gaussian_taps(s.fps);
    let x = SeqTensor::from_raw(s.scores.len(), 1, s.scores.clone());
    BoundaryScores {
        video_id: s.video_id.clone(),
        fps: s.fps,
        scores: if s.scores.is_empty() {
            Vec::new()
        } else {
            smooth_columns(&x, &taps).into_data()
        },
        smoothed: true,
    }
}

/// Half-width of the local-maximum window in frames: `floor(0.5 · fps)`.
pub fn peak_window(fps: f64) -> usize {
    (0.5 * fps).floor().max(0.0) as usize
}

/// Frames that are the maximum of their ±0.5 s neighbourhood and exceed the
/// threshold. Among equal maxima within a window, the earliest frame wins.
pub fn peak_frames(scores: &[f64], fps: f64) -> Vec<usize> {
    let w = peak_window(fps);
    let n = scores.len();
    (0..n)
        .filter(|&f| {
            let s = scores[f];
            if s <= PEAK_THRESHOLD {
                return false;
            }
            let lo = f.saturating_sub(w);
            let hi = (f + w).min(n - 1);
            (lo..=hi).all(|g| scores[g] <= s) && !(lo..f).any(|g| scores[g] == s)
        })
        .collect()
}

pub fn pick_peaks(s: &BoundaryScores) -> DetectionList {
    DetectionList {
        video_id: s.video_id.clone(),
        timestamps: peak_frames(&s.scores, s.fps)
            .into_iter()
            .map(|f| frame_time(f, s.fps))
            .collect(),
    }
}

/// Time in seconds represented by frame `f` (its centre).
pub fn frame_time(f: usize, fps: f64) -> f64 {
    (f as f64 + 0.5) / fps
}

/// Sums overlapping clip scores into one signal over the parent's `frames`.
///
/// Sums are kept as-is (they can exceed 1); thresholding happens downstream.
pub fn merge_clip_scores(
    video_id: &str,
    fps: f64,
    frames: usize,
    clips: &[(ClipSpan, BoundaryScores)],
) -> Result<BoundaryScores> {
    let mut acc = vec![0.0; frames];
    let mut covered = vec![false; frames];
    for (i, (span, s)) in clips.iter().enumerate() {
        if span.end > frames || span.start >= span.end {
            return Err(Error::Invalid(format!(
                "clip {i} spans {}..{} outside 0..{frames}",
                span.start, span.end
            )));
        }
        if s.scores.len() != span.len() {
            return Err(Error::shape(
                "merge_clip_scores",
                format!("clip {i} has {} scores for {} frames", s.scores.len(), span.len()),
            ));
        }
        for (k, &v) in s.scores.iter().enumerate() {
            acc[span.start + k] += v;
            covered[span.start + k] = true;
        }
    }
    if let Some(gap) = covered.iter().position(|c| !c) {
        return Err(Error::Invalid(format!("clips leave frame {gap} of {video_id} uncovered")));
    }
    Ok(BoundaryScores {
        video_id: video_id.to_string(),
        fps,
        scores: acc,
        smoothed: clips.iter().all(|(_, s)| s.smoothed),
    })
}
